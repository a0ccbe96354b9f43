#pragma once

#include <stdexcept>
#include <string>

#include "endoir/tensor/tensor.hpp"

namespace endoir::degrade {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit RGB. Values are clamped to [0,1] and rounded to the nearest level.
void write_png(const std::string& path, const Tensor& image);  // [3,H,W]
Tensor read_png(const std::string& path);                      // [3,H,W]

// Rounds to the 8-bit grid exactly as write_png would.
Tensor quantize8(const Tensor& image);

}  // namespace endoir::degrade
