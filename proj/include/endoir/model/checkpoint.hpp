#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "endoir/model/model.hpp"

namespace endoir::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { Io, Corrupt, Version, Incompatible };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }
  // Set for Incompatible: the first architecture field that differs.
  std::string field;

 private:
  Kind kind_;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Decoded file contents, independent of any live model.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig config;
  std::vector<NamedTensor> params;
  std::vector<Tensor> adam_m, adam_v;  // empty when saved without optimizer state
  std::int64_t step = 0;
  std::vector<double> betas;
  std::vector<int> scales;
};

Checkpoint capture(const EndoIRModel& model, const AdamState* adam);
void save_checkpoint(const std::string& path, const EndoIRModel& model, const AdamState* adam = nullptr);
Checkpoint load_checkpoint(const std::string& path);

// Byte-level encoding, exposed for tests.
std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

// Throws Incompatible naming the first architecture field that differs.
void check_compatible(const ModelConfig& stored, const ModelConfig& current);

// Copies parameters (and optimizer state when adam is non-null) into a model
// built from a compatible config.
void apply_checkpoint(const Checkpoint& ck, EndoIRModel& model, AdamState* adam = nullptr);

// Builds a model from the stored config and loads its parameters.
std::unique_ptr<EndoIRModel> model_from_checkpoint(const Checkpoint& ck);

}  // namespace endoir::model
