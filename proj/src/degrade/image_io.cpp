#include "endoir/degrade/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace endoir::degrade {

namespace {

unsigned char to_byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

void check_rgb(const Tensor& image, const char* op) {
  if (image.rank() != 3 || image.size(0) != 3) {
    throw ShapeError(std::string(op) + ": expected [3,H,W], got " + shape_str(image.shape()));
  }
}

}  // namespace

Tensor quantize8(const Tensor& image) {
  Tensor out(image.shape());
  auto in = image.data();
  auto d = out.data_mut();
  for (std::size_t i = 0; i < in.size(); ++i) d[i] = to_byte(in[i]) / 255.0;
  return out;
}

void write_png(const std::string& path, const Tensor& image) {
  check_rgb(image, "write_png");
  const auto h = image.size(1), w = image.size(2);
  std::vector<unsigned char> buf(static_cast<std::size_t>(3 * h * w));
  auto d = image.data();
  for (std::int64_t i = 0; i < h * w; ++i)
    for (std::int64_t c = 0; c < 3; ++c) buf[static_cast<std::size_t>(3 * i + c)] = to_byte(d[static_cast<std::size_t>(c * h * w + i)]);
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot write " + path + ": " + msg);
  }
}

Tensor read_png(const std::string& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) throw IoError("cannot read " + path + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode " + path + ": " + msg);
  }
  const std::int64_t h = img.height, w = img.width;
  Tensor out({3, h, w});
  auto d = out.data_mut();
  for (std::int64_t i = 0; i < h * w; ++i)
    for (std::int64_t c = 0; c < 3; ++c) d[static_cast<std::size_t>(c * h * w + i)] = buf[static_cast<std::size_t>(3 * i + c)] / 255.0;
  return out;
}

}  // namespace endoir::degrade
