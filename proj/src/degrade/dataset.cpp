#include "endoir/degrade/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "endoir/degrade/image_io.hpp"

namespace endoir::degrade {

namespace fs = std::filesystem;

namespace {

std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = seed ^ (a * 0x9E3779B97F4A7C15ull) ^ (b * 0xC2B2AE3D27D4EB4Full);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::string format_params(const ParamList& p) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < p.size(); ++i) os << (i ? ";" : "") << p[i].first << '=' << p[i].second;
  return os.str();
}

ParamList parse_params(const std::string& s) {
  ParamList out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw IoError("manifest: bad parameter '" + item + "'");
    out.emplace_back(item.substr(0, eq), std::stod(item.substr(eq + 1)));
  }
  return out;
}

}  // namespace

std::size_t Manifest::count(const std::string& split, Kind kind) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const auto& e) { return e.split == split && e.kind == kind; }));
}

std::size_t Manifest::count(const std::string& split) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const auto& e) { return e.split == split; }));
}

int train_count(int n, int a, int b) {
  if (n < 1) throw ValueError("n_per_kind must be >= 1");
  if (a < 1 || b < 0) throw ValueError("split ratio must be train >= 1, test >= 0");
  return static_cast<int>(std::lround(static_cast<double>(n) * a / static_cast<double>(a + b)));
}

std::vector<DegradationSample> generate_samples(const DatasetOptions& opt, Manifest* manifest) {
  const int n_train = train_count(opt.n_per_kind, opt.split_train, opt.split_test);
  if (opt.kinds.empty()) throw ValueError("no degradation kinds selected");
  std::vector<DegradationSample> out;
  for (Kind kind : opt.kinds) {
    const auto k = static_cast<std::uint64_t>(kind);
    // Seeded permutation decides which indices are held out.
    std::vector<int> order(static_cast<std::size_t>(opt.n_per_kind));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(derive(opt.seed, 100 + k, 0));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng() % i]);
    std::vector<char> is_train(order.size(), 0);
    for (int i = 0; i < n_train; ++i) is_train[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;

    for (int idx = 0; idx < opt.n_per_kind; ++idx) {
      const auto i = static_cast<std::uint64_t>(idx);
      Tensor clean = gen_clean(derive(opt.seed, k, 2 * i), opt.size, opt.size);
      out.push_back(degrade_random(clean, kind, derive(opt.seed, k, 2 * i + 1)));
      if (manifest) {
        const std::string stem = std::string(kind_name(kind)) + "_" + std::to_string(idx);
        manifest->entries.push_back({"degraded/" + stem + ".png", "clean/" + stem + ".png", kind,
                                     is_train[static_cast<std::size_t>(idx)] ? "train" : "test", out.back().params});
      }
    }
  }
  return out;
}

Manifest make_dataset(const DatasetOptions& opt, const std::string& out_dir) {
  Manifest m;
  auto samples = generate_samples(opt, &m);
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "degraded", ec);
  fs::create_directories(fs::path(out_dir) / "clean", ec);
  if (ec || !fs::is_directory(fs::path(out_dir) / "clean")) throw IoError("cannot create dataset directory " + out_dir);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    write_png((fs::path(out_dir) / m.entries[i].degraded_path).string(), samples[i].degraded);
    write_png((fs::path(out_dir) / m.entries[i].clean_path).string(), samples[i].clean);
  }
  write_manifest(m, (fs::path(out_dir) / kManifestName).string());
  return m;
}

void write_manifest(const Manifest& m, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write manifest " + path);
  f << "# degraded\tclean\tkind\tsplit\tparams\n";
  for (const auto& e : m.entries) {
    f << e.degraded_path << '\t' << e.clean_path << '\t' << kind_name(e.kind) << '\t' << e.split << '\t'
      << format_params(e.params) << '\n';
  }
  if (!f) throw IoError("write failed for manifest " + path);
}

Manifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read manifest " + path);
  Manifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, '\t')) cols.push_back(c);
    if (cols.size() == 4) cols.emplace_back();
    if (cols.size() != 5) throw IoError(path + ":" + std::to_string(lineno) + ": expected 5 tab-separated columns");
    m.entries.push_back({cols[0], cols[1], parse_kind(cols[2]), cols[3], parse_params(cols[4])});
  }
  return m;
}

std::vector<LoadedSample> load_split(const std::string& dir, const std::string& split) {
  const Manifest m = read_manifest((fs::path(dir) / kManifestName).string());
  std::vector<LoadedSample> out;
  for (const auto& e : m.entries) {
    if (!split.empty() && e.split != split) continue;
    out.push_back({read_png((fs::path(dir) / e.clean_path).string()), read_png((fs::path(dir) / e.degraded_path).string()),
                   e.kind, fs::path(e.degraded_path).stem().string()});
  }
  return out;
}

}  // namespace endoir::degrade
