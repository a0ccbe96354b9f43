#include "endoir/model/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>

namespace endoir::model {

namespace {

using Kind = CheckpointError::Kind;
using Bytes = std::vector<unsigned char>;

constexpr unsigned char kMagic[4] = {'E', 'N', 'D', 'R'};

std::uint64_t fnv1a(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

[[noreturn]] void corrupt(const std::string& what) { throw CheckpointError(Kind::Corrupt, "corrupt checkpoint: " + what); }

}  // namespace

Checkpoint capture(const EndoIRModel& model, const AdamState* adam) {
  Checkpoint ck;
  ck.config = model.config();
  for (const auto& [name, t] : model.params().entries()) ck.params.push_back({name, t.clone()});
  if (adam) {
    for (const auto& t : adam->m) ck.adam_m.push_back(t.clone());
    for (const auto& t : adam->v) ck.adam_v.push_back(t.clone());
    ck.step = adam->step;
  }
  const auto& s = model.schedule();
  ck.betas = s.beta;
  ck.scales = s.scales;
  return ck;
}

Bytes encode_checkpoint(const Checkpoint& ck) {
  std::ostringstream man;
  for (const auto& [k, v] : ck.config.fields()) man << "meta config." << k << ' ' << v << '\n';
  man << "meta step " << ck.step << '\n';
  {
    std::string s;
    for (std::size_t i = 0; i < ck.scales.size(); ++i) s += (i ? "," : "") + std::to_string(ck.scales[i]);
    man << "meta schedule.scales " << s << '\n';
  }
  std::vector<const Tensor*> payload;
  auto add = [&](const std::string& name, const Tensor& t) {
    man << "tensor " << name << " f64 " << t.rank();
    for (auto d : t.shape()) man << ' ' << d;
    man << '\n';
    payload.push_back(&t);
  };
  for (const auto& p : ck.params) add(p.name, p.value);
  for (std::size_t i = 0; i < ck.adam_m.size(); ++i) add("adam.m." + ck.params[i].name, ck.adam_m[i]);
  for (std::size_t i = 0; i < ck.adam_v.size(); ++i) add("adam.v." + ck.params[i].name, ck.adam_v[i]);
  Tensor beta({static_cast<std::int64_t>(ck.betas.size())}, ck.betas);
  add("schedule.beta", beta);

  const std::string text = man.str();
  Bytes out(kMagic, kMagic + 4);
  put_u32(out, ck.version);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const Tensor* t : payload)
    for (double v : t->data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  put_u64(out, fnv1a(out.data(), out.size()));
  return out;
}

Checkpoint decode_checkpoint(const Bytes& bytes) {
  if (bytes.size() < 12 || !std::equal(kMagic, kMagic + 4, bytes.begin())) corrupt("missing ENDR magic");
  Checkpoint ck;
  ck.version = get_u32(bytes.data() + 4);
  if (ck.version != kCheckpointVersion) {
    throw CheckpointError(Kind::Version, "checkpoint format version " + std::to_string(ck.version) +
                                             " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < 20) corrupt("truncated header");
  const std::uint32_t man_len = get_u32(bytes.data() + 8);
  if (12 + static_cast<std::size_t>(man_len) + 8 > bytes.size()) corrupt("truncated manifest");
  const std::size_t body_end = bytes.size() - 8;
  if (fnv1a(bytes.data(), body_end) != get_u64(bytes.data() + body_end)) corrupt("checksum mismatch");

  std::istringstream man(std::string(bytes.begin() + 12, bytes.begin() + 12 + man_len));
  std::size_t offset = 12 + man_len;
  std::string line;
  std::vector<NamedTensor> tensors;
  while (std::getline(man, line)) {
    std::istringstream ls(line);
    std::string kind, name;
    ls >> kind >> name;
    if (kind == "meta") {
      std::string value;
      ls >> value;
      if (name.rfind("config.", 0) == 0) {
        if (!ck.config.set(name.substr(7), value)) corrupt("unknown config field " + name);
      } else if (name == "step") {
        ck.step = std::stoll(value);
      } else if (name == "schedule.scales") {
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ',')) ck.scales.push_back(std::stoi(item));
      } else {
        corrupt("unknown meta key " + name);
      }
    } else if (kind == "tensor") {
      std::string dtype;
      int rank = -1;
      ls >> dtype >> rank;
      if (dtype != "f64" || rank < 0 || rank > 8) corrupt("bad tensor record for " + name);
      Shape shape(static_cast<std::size_t>(rank));
      for (auto& d : shape) {
        if (!(ls >> d) || d < 0) corrupt("bad shape for " + name);
      }
      const auto n = static_cast<std::size_t>(shape_numel(shape));
      if (offset + 8 * n > body_end) corrupt("payload for " + name + " truncated");
      std::vector<double> values(n);
      for (std::size_t i = 0; i < n; ++i) values[i] = std::bit_cast<double>(get_u64(bytes.data() + offset + 8 * i));
      offset += 8 * n;
      tensors.push_back({name, Tensor(shape, std::move(values))});
    } else if (!kind.empty()) {
      corrupt("unknown manifest record '" + kind + "'");
    }
  }
  if (offset != body_end) corrupt("trailing bytes after payload");

  for (auto& t : tensors) {
    if (t.name == "schedule.beta") {
      auto d = t.value.data();
      ck.betas.assign(d.begin(), d.end());
    } else if (t.name.rfind("adam.m.", 0) == 0) {
      ck.adam_m.push_back(t.value);
    } else if (t.name.rfind("adam.v.", 0) == 0) {
      ck.adam_v.push_back(t.value);
    } else {
      ck.params.push_back(std::move(t));
    }
  }
  return ck;
}

void save_checkpoint(const std::string& path, const EndoIRModel& model, const AdamState* adam) {
  const Bytes bytes = encode_checkpoint(capture(model, adam));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(Kind::Io, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError(Kind::Io, "write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(Kind::Io, "cannot open " + path);
  Bytes bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void check_compatible(const ModelConfig& stored, const ModelConfig& current) {
  const auto a = stored.fields(), b = current.fields();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!is_architecture_field(a[i].first) || a[i].second == b[i].second) continue;
    CheckpointError err(Kind::Incompatible, "checkpoint incompatible with config: field '" + a[i].first +
                                                "' is " + a[i].second + " in the checkpoint but " + b[i].second +
                                                " in the config");
    err.field = a[i].first;
    throw err;
  }
}

void apply_checkpoint(const Checkpoint& ck, EndoIRModel& model, AdamState* adam) {
  check_compatible(ck.config, model.config());
  auto& entries = model.params().entries();
  if (entries.size() != ck.params.size()) corrupt("parameter count differs from the model layout");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& src = ck.params[i];
    Tensor dst = entries[i].second;
    if (src.name != entries[i].first || src.value.shape() != dst.shape()) {
      corrupt("parameter " + src.name + " " + shape_str(src.value.shape()) + " does not match " + entries[i].first +
              " " + shape_str(dst.shape()));
    }
    auto s = src.value.data();
    std::copy(s.begin(), s.end(), dst.data_mut().begin());
  }
  if (adam) {
    *adam = make_adam_state(model.params());
    if (!ck.adam_m.empty()) {
      if (ck.adam_m.size() != entries.size() || ck.adam_v.size() != entries.size()) corrupt("optimizer state incomplete");
      for (std::size_t i = 0; i < entries.size(); ++i) {
        adam->m[i] = ck.adam_m[i].clone();
        adam->v[i] = ck.adam_v[i].clone();
      }
      adam->step = ck.step;
    }
  }
}

std::unique_ptr<EndoIRModel> model_from_checkpoint(const Checkpoint& ck) {
  auto model = std::make_unique<EndoIRModel>(ck.config);
  if (model->schedule().beta != ck.betas) corrupt("stored schedule disagrees with its config");
  apply_checkpoint(ck, *model);
  return model;
}

}  // namespace endoir::model
