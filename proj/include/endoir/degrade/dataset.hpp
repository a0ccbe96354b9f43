#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "endoir/degrade/degrade.hpp"

namespace endoir::degrade {

struct ManifestEntry {
  std::string degraded_path;  // relative to the dataset directory
  std::string clean_path;
  Kind kind = Kind::LowLight;
  std::string split;  // "train" | "test"
  ParamList params;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::size_t count(const std::string& split, Kind kind) const;
  std::size_t count(const std::string& split) const;
};

struct DatasetOptions {
  int n_per_kind = 4;
  int split_train = 3;  // train:test ratio
  int split_test = 1;
  std::uint64_t seed = 1;
  std::int64_t size = 32;
  std::vector<Kind> kinds = {Kind::LowLight, Kind::Smoke, Kind::Blood};
};

// Per kind, round(n * train / (train + test)) samples go to train.
int train_count(int n_per_kind, int split_train, int split_test);

// Generates samples in memory (no files), in manifest order.
std::vector<DegradationSample> generate_samples(const DatasetOptions& opt, Manifest* manifest);

// Writes degraded/<kind>_<idx>.png, clean/<kind>_<idx>.png and manifest.tsv
// under out_dir. Throws IoError when the directory is unwritable.
Manifest make_dataset(const DatasetOptions& opt, const std::string& out_dir);

inline constexpr const char* kManifestName = "manifest.tsv";
void write_manifest(const Manifest& m, const std::string& path);
Manifest read_manifest(const std::string& path);

struct LoadedSample {
  Tensor clean, degraded;  // [3,H,W]
  Kind kind;
  std::string name;  // file stem
};
// Loads the entries of one split ("" for all) from a dataset directory.
std::vector<LoadedSample> load_split(const std::string& dir, const std::string& split);

}  // namespace endoir::degrade
