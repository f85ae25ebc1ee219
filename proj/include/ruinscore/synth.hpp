#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "ruinscore/dataset_io.hpp"
#include "ruinscore/error.hpp"
#include "ruinscore/types.hpp"

namespace ruinscore {

// splitmix64 seeding followed by xorshift64*:
//   x ^= x >> 12; x ^= x << 25; x ^= x >> 27; return x * 0x2545F4914F6CDD1D
// Doubles take the top 53 bits of each output.
class Xorshift64Star {
 public:
  explicit Xorshift64Star(std::uint64_t seed) noexcept : state_(splitmix64(seed)) {
    if (state_ == 0) state_ = 0x9E3779B97F4A7C15ULL;
  }

  std::uint64_t next() noexcept {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1DULL;
  }

  // [0, 1)
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int below(int n) noexcept { return static_cast<int>(uniform() * n); }

  // Box-Muller; consumes exactly two draws.
  double normal() noexcept {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  static std::uint64_t splitmix64(std::uint64_t x) noexcept {
    std::uint64_t z = x + 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

struct SynthNoise {
  double false_positive_rate = 0.0;
  double confidence_jitter_sd = 0.0;
  double drop_rate = 0.0;
};

struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t n_images = 0;
  SynthNoise noise;
  std::array<double, kNumLevels> level_priors = {0.25, 0.25, 0.25, 0.25};
};

inline void validate(const SynthSpec& s) {
  double sum = 0.0;
  for (double p : s.level_priors) {
    if (!std::isfinite(p) || p < 0.0) throw Error(ErrorKind::InvalidConfig, "level_priors");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorKind::InvalidConfig, "level_priors must sum to 1");
  auto rate = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  if (!rate(s.noise.false_positive_rate)) throw Error(ErrorKind::InvalidConfig, "false_positive_rate");
  if (!rate(s.noise.drop_rate)) throw Error(ErrorKind::InvalidConfig, "drop_rate");
  if (!std::isfinite(s.noise.confidence_jitter_sd) || s.noise.confidence_jitter_sd < 0.0)
    throw Error(ErrorKind::InvalidConfig, "confidence_jitter_sd");
}

struct SynthImage {
  ImageEntry entry;  // file references relative to the output directory
  std::vector<DamageDetection> damages;
  std::vector<ComponentDetection> components;
};

namespace detail {

inline BoundingBox random_box(Xorshift64Star& rng, double min_side, double max_side) {
  BoundingBox b;
  b.w = rng.uniform(min_side, max_side);
  b.h = rng.uniform(min_side, max_side);
  b.cx = 0.5 * b.w + rng.uniform() * (1.0 - b.w);
  b.cy = 0.5 * b.h + rng.uniform() * (1.0 - b.h);
  return b;
}

inline DamageDetection random_damage(Xorshift64Star& rng, DamageClass cls) {
  return {cls, random_box(rng, 0.05, 0.3), rng.uniform(0.5, 0.95)};
}

// Detections that the default v1 rules (weights 1/2/3, thresholds 1/4,
// floor 0.25) map to `level`.
inline std::vector<DamageDetection> evidence_for(DamageLevel level, Xorshift64Star& rng) {
  std::vector<DamageDetection> out;
  auto add = [&](DamageClass cls, int n) {
    for (int i = 0; i < n; ++i) out.push_back(random_damage(rng, cls));
  };
  switch (level) {
    case DamageLevel::Zero: break;
    case DamageLevel::Slight: {
      // (cracks, spalls) with score 1..3
      static constexpr std::array<std::array<int, 2>, 5> combos = {{{1, 0}, {2, 0}, {3, 0}, {0, 1}, {1, 1}}};
      const auto& c = combos[static_cast<std::size_t>(rng.below(5))];
      add(DamageClass::Crack, c[0]);
      add(DamageClass::Spalling, c[1]);
      break;
    }
    case DamageLevel::Medium: {
      const int spalls = rng.below(3);
      const int cracks = std::max(0, 4 - 2 * spalls) + rng.below(3);
      add(DamageClass::Crack, cracks);
      add(DamageClass::Spalling, spalls);
      break;
    }
    case DamageLevel::Heavy: {
      // A rebar centred inside a spall at 60% of its size (IoU 0.36).
      DamageDetection spall{DamageClass::Spalling, random_box(rng, 0.15, 0.3), rng.uniform(0.5, 0.95)};
      DamageDetection rebar{DamageClass::ExposedRebar, spall.box, rng.uniform(0.6, 0.95)};
      rebar.box.w *= 0.6;
      rebar.box.h *= 0.6;
      out.push_back(spall);
      out.push_back(rebar);
      add(DamageClass::Crack, rng.below(3));
      break;
    }
  }
  return out;
}

inline DamageLevel draw_level(Xorshift64Star& rng, const std::array<double, kNumLevels>& priors) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k < kNumLevels; ++k) {
    acc += priors[k];
    if (u < acc) return static_cast<DamageLevel>(k);
  }
  for (std::size_t k = kNumLevels; k-- > 0;)
    if (priors[k] > 0.0) return static_cast<DamageLevel>(k);
  return DamageLevel::Zero;
}

}  // namespace detail

// Clean evidence comes from one stream and noise from a second, independently
// seeded stream that always consumes the same number of draws per image, so
// two specs differing only in noise rates share their clean evidence and
// their noise draws.
inline std::vector<SynthImage> synthesize(const SynthSpec& spec) {
  validate(spec);
  Xorshift64Star rng(spec.seed);
  Xorshift64Star noise(spec.seed ^ 0xD1B54A32D192ED03ULL);

  std::vector<SynthImage> images;
  images.reserve(spec.n_images);
  for (std::size_t i = 0; i < spec.n_images; ++i) {
    SynthImage img;
    const std::string id = fmt::format("img_{:05d}", i);
    img.entry.id = id;
    img.entry.damage_file = "damage/" + id + ".txt";
    img.entry.components_file = "components/" + id + ".txt";

    const DamageLevel level = detail::draw_level(rng, spec.level_priors);
    img.entry.ground_truth_level = level;
    img.entry.scene_override = SceneLabel{rng.uniform() < 0.5 ? SceneClass::Inside : SceneClass::Outside, 1.0};

    const int n_components = 1 + rng.below(2);
    for (int c = 0; c < n_components; ++c) {
      const auto cls = static_cast<ComponentClass>(rng.below(3));
      img.components.push_back({cls, detail::random_box(rng, 0.3, 0.8), rng.uniform(0.5, 0.95)});
    }

    for (auto d : detail::evidence_for(level, rng)) {
      const bool dropped = noise.uniform() < spec.noise.drop_rate;
      const double jitter = noise.normal() * spec.noise.confidence_jitter_sd;
      if (dropped) continue;
      d.confidence = std::clamp(d.confidence + jitter, 0.0, 1.0);
      img.damages.push_back(d);
    }

    const bool add_fp = noise.uniform() < spec.noise.false_positive_rate;
    const auto fp_cls = static_cast<DamageClass>(noise.below(3));
    DamageDetection fp{fp_cls, detail::random_box(noise, 0.05, 0.3), noise.uniform(0.3, 0.95)};
    if (add_fp) img.damages.push_back(fp);

    images.push_back(std::move(img));
  }
  return images;
}

// Writes manifest.json, damage/<id>.txt and components/<id>.txt under
// `out_dir` and returns the manifest as load_manifest would read it back.
inline DatasetManifest gen_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  const auto images = synthesize(spec);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "damage", ec);
  if (!ec) std::filesystem::create_directories(out_dir / "components", ec);
  if (ec) throw Error(ErrorKind::IoFailure, out_dir.string() + ": " + ec.message());

  DatasetManifest rel;
  const ClassMaps maps;
  for (const auto& img : images) {
    write_file(out_dir / *img.entry.damage_file, to_box_text(img.damages, maps.damage));
    write_file(out_dir / *img.entry.components_file, to_box_text(img.components, maps.component));
    rel.images.push_back(img.entry);
  }
  const std::string text = manifest_to_json(rel).dump(2) + "\n";
  write_file(out_dir / "manifest.json", text);
  return parse_manifest(text, out_dir);
}

}  // namespace ruinscore
