#include "endoir/tensor/profile.hpp"

namespace endoir {

namespace {
thread_local Profiler* g_profiler = nullptr;
thread_local std::string g_region;
}  // namespace

Profiler::Profiler() : previous_(g_profiler) { g_profiler = this; }
Profiler::~Profiler() { g_profiler = previous_; }
Profiler* Profiler::current() { return g_profiler; }

void Profiler::add(OpRecord rec) { records_.push_back(std::move(rec)); }

void Profiler::add_time(const std::string& region, double seconds) { seconds_[region] += seconds; }

double Profiler::seconds(const std::string& region) const {
  auto it = seconds_.find(region);
  return it == seconds_.end() ? 0.0 : it->second;
}

ProfileScope::ProfileScope(const std::string& label) : previous_region_(g_region) {
  g_region = g_region.empty() ? label : g_region + "/" + label;
  if (g_profiler) {
    timing_ = true;
    start_ = std::chrono::steady_clock::now();
  }
}

ProfileScope::~ProfileScope() {
  if (timing_ && g_profiler) {
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start_;
    g_profiler->add_time(g_region, dt.count());
  }
  g_region = previous_region_;
}

const std::string& ProfileScope::current_region() { return g_region; }

std::int64_t flop_count(const PassDescriptor& pass, const std::string& region_filter) {
  std::int64_t total = 0;
  for (const auto& r : pass) {
    if (region_filter.empty() || r.region.find(region_filter) != std::string::npos) total += r.macs;
  }
  return total;
}

namespace detail {
void record_macs(const char* op, const Shape& in, const Shape& out, std::int64_t macs) {
  if (!g_profiler) return;
  g_profiler->add(OpRecord{op, g_region, in, out, macs});
}
}  // namespace detail

}  // namespace endoir
