#pragma once

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>

#include "ruinscore/ruinscore.hpp"

namespace ruinscore::testkit {

inline std::filesystem::path fixtures() { return RUINSCORE_FIXTURES_DIR; }
inline std::filesystem::path stubs() { return RUINSCORE_STUBS_DIR; }
inline std::string cli_path() { return RUINSCORE_CLI_PATH; }

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "ruinscore-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

struct RunResult {
  int exit_code = -1;
  std::string out;
};

// Runs a shell command, capturing stdout (stderr folded in when `merge_stderr`).
inline RunResult run(const std::string& cmd, bool merge_stderr = false) {
  RunResult r;
  const std::string full = merge_stderr ? cmd + " 2>&1" : cmd + " 2>/dev/null";
  FILE* p = ::popen(full.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

inline std::string quote(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

inline std::string cli(const std::string& args) { return quote(cli_path()) + " " + args; }

// ---------------------------------------------------------------------------
// Random evidence for property tests

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool coin(double p = 0.5) { return uniform() < p; }

  BoundingBox box(double min_side = 0.005, double max_side = 0.6) {
    BoundingBox b;
    b.w = uniform(min_side, max_side);
    b.h = uniform(min_side, max_side);
    b.cx = uniform(0.0, 1.0);
    b.cy = uniform(0.0, 1.0);
    return b;
  }

  DamageDetection damage() {
    return {static_cast<DamageClass>(integer(0, 2)), box(), uniform(0.0, 1.0)};
  }

  ComponentDetection component() {
    return {static_cast<ComponentClass>(integer(0, 2)), box(0.05, 0.9), uniform(0.0, 1.0)};
  }

  CascadeOutput cascade(int max_damages = 8, int max_components = 3) {
    CascadeOutput out;
    out.image_id = "gen";
    out.scene = {coin() ? SceneClass::Inside : SceneClass::Outside, uniform()};
    const int nc = integer(0, max_components);
    for (int i = 0; i < nc; ++i) out.components.push_back(component());
    const int nd = integer(0, max_damages);
    for (int i = 0; i < nd; ++i) out.damages.push_back(damage());
    return out;
  }

  FusionConfig config() {
    FusionConfig c;
    c.version = coin() ? FusionVersion::V1 : FusionVersion::V2;
    return c;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Meta-model fixtures

struct Fixture {
  FeatureRows X;
  std::vector<DamageLevel> y;
};

inline std::vector<double> noise_row(Gen& gen) {
  std::vector<double> row(kFeatureDim);
  for (auto& v : row) v = gen.uniform(-1.0, 1.0);
  return row;
}

// Zero/Heavy split by feature 16: [0,1) against [2,3), the rest is noise.
inline Fixture separable_fixture(std::uint64_t seed = 1, std::size_t n = 200) {
  Gen gen(seed);
  Fixture f;
  for (std::size_t i = 0; i < n; ++i) {
    const bool heavy = i % 2 == 1;
    auto row = noise_row(gen);
    row[16] = heavy ? gen.uniform(2.0, 3.0) : gen.uniform(0.0, 1.0);
    f.X.push_back(row);
    f.y.push_back(heavy ? DamageLevel::Heavy : DamageLevel::Zero);
  }
  return f;
}

// Four clusters on features 0 and 1; the label is the XOR of the quadrant signs.
inline Fixture xor_fixture(std::uint64_t seed = 2, std::size_t n = 400) {
  Gen gen(seed);
  std::normal_distribution<double> jitter(0.0, 0.15);
  Fixture f;
  for (std::size_t i = 0; i < n; ++i) {
    const int a = static_cast<int>(i % 2);
    const int b = static_cast<int>((i / 2) % 2);
    std::vector<double> row(kFeatureDim, 0.0);
    row[0] = a + jitter(gen.engine());
    row[1] = b + jitter(gen.engine());
    f.X.push_back(row);
    f.y.push_back(a != b ? DamageLevel::Heavy : DamageLevel::Zero);
  }
  return f;
}

}  // namespace ruinscore::testkit
