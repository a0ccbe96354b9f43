#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "endoir/tensor/tensor.hpp"

namespace endoir {

// One multiply-accumulate-bearing op observed during a forward pass.
struct OpRecord {
  std::string op;
  std::string region;  // innermost ProfileScope label, "" at top level
  Shape input_shape;
  Shape output_shape;
  std::int64_t macs = 0;
};

// The model-pass descriptor consumed by flop_count().
using PassDescriptor = std::vector<OpRecord>;

// Collects OpRecords and per-region wall time for ops executed on this thread
// while it is alive. Nested profilers shadow outer ones.
class Profiler {
 public:
  Profiler();
  ~Profiler();
  Profiler(const Profiler&) = delete;
  Profiler& operator=(const Profiler&) = delete;

  static Profiler* current();

  void add(OpRecord rec);
  void add_time(const std::string& region, double seconds);

  const PassDescriptor& records() const { return records_; }
  double seconds(const std::string& region) const;
  const std::map<std::string, double>& region_seconds() const { return seconds_; }

 private:
  PassDescriptor records_;
  std::map<std::string, double> seconds_;
  Profiler* previous_ = nullptr;
};

// Labels ops recorded inside it and times the enclosed work when a profiler
// is active. Labels nest as "outer/inner".
class ProfileScope {
 public:
  explicit ProfileScope(const std::string& label);
  ~ProfileScope();
  ProfileScope(const ProfileScope&) = delete;
  ProfileScope& operator=(const ProfileScope&) = delete;

  static const std::string& current_region();

 private:
  std::string previous_region_;
  std::chrono::steady_clock::time_point start_;
  bool timing_ = false;
};

// Sum of MACs in the descriptor; with a non-empty filter only records whose
// region path contains it are counted.
std::int64_t flop_count(const PassDescriptor& pass, const std::string& region_filter = "");

namespace detail {
void record_macs(const char* op, const Shape& in, const Shape& out, std::int64_t macs);
}

}  // namespace endoir
