#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ruinscore {

// Normalized center-format box: (cx, cy) is the center as a fraction of the
// image width/height, (w, h) the extent as fractions of the frame.
struct BoundingBox {
  double cx = 0.5;
  double cy = 0.5;
  double w = 0.0;
  double h = 0.0;

  double area() const noexcept { return w * h; }
  double left() const noexcept { return cx - 0.5 * w; }
  double right() const noexcept { return cx + 0.5 * w; }
  double top() const noexcept { return cy - 0.5 * h; }
  double bottom() const noexcept { return cy + 0.5 * h; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// Returns the violated invariant, or nullopt for a valid box.
inline std::optional<std::string> check_box(const BoundingBox& b) {
  auto unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  if (!unit(b.cx)) return "cx must be in [0,1]";
  if (!unit(b.cy)) return "cy must be in [0,1]";
  if (!std::isfinite(b.w) || b.w <= 0.0) return "w must be > 0";
  if (b.w > 1.0) return "w must be <= 1";
  if (!std::isfinite(b.h) || b.h <= 0.0) return "h must be > 0";
  if (b.h > 1.0) return "h must be <= 1";
  return std::nullopt;
}

inline bool valid_confidence(double c) noexcept {
  return std::isfinite(c) && c >= 0.0 && c <= 1.0;
}

enum class DamageClass { Crack = 0, Spalling = 1, ExposedRebar = 2 };
enum class ComponentClass { Beam = 0, Column = 1, Wall = 2 };
enum class SceneClass { Inside = 0, Outside = 1 };

enum class DamageLevel { Zero = 0, Slight = 1, Medium = 2, Heavy = 3 };

inline constexpr std::size_t kNumLevels = 4;
inline constexpr std::array<DamageLevel, kNumLevels> kAllLevels = {
    DamageLevel::Zero, DamageLevel::Slight, DamageLevel::Medium, DamageLevel::Heavy};

constexpr int ordinal(DamageLevel l) noexcept { return static_cast<int>(l); }
constexpr auto operator<=>(DamageLevel a, DamageLevel b) noexcept {
  return ordinal(a) <=> ordinal(b);
}

// Name tables shared by the parsers, serializers and the CLI. Names are the
// lowercase wire spelling.
template <class Enum>
struct EnumTraits;

template <>
struct EnumTraits<DamageClass> {
  static constexpr std::array<std::string_view, 3> names = {"crack", "spalling", "exposed_rebar"};
  static constexpr std::string_view kind = "damage";
};

template <>
struct EnumTraits<ComponentClass> {
  static constexpr std::array<std::string_view, 3> names = {"beam", "column", "wall"};
  static constexpr std::string_view kind = "component";
};

template <>
struct EnumTraits<SceneClass> {
  static constexpr std::array<std::string_view, 2> names = {"inside", "outside"};
  static constexpr std::string_view kind = "scene";
};

template <>
struct EnumTraits<DamageLevel> {
  static constexpr std::array<std::string_view, 4> names = {"zero", "slight", "medium", "heavy"};
  static constexpr std::string_view kind = "level";
};

template <class Enum>
constexpr std::size_t enum_count() noexcept {
  return EnumTraits<Enum>::names.size();
}

template <class Enum>
constexpr std::string_view name_of(Enum e) noexcept {
  return EnumTraits<Enum>::names[static_cast<std::size_t>(e)];
}

template <class Enum>
constexpr std::optional<Enum> enum_from_name(std::string_view s) noexcept {
  const auto& names = EnumTraits<Enum>::names;
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == s) return static_cast<Enum>(i);
  return std::nullopt;
}

inline std::optional<DamageLevel> level_from_ordinal(long long v) noexcept {
  if (v < 0 || v > 3) return std::nullopt;
  return static_cast<DamageLevel>(v);
}

template <class Class>
struct Detection {
  Class cls{};
  BoundingBox box{};
  double confidence = 1.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

using DamageDetection = Detection<DamageClass>;
using ComponentDetection = Detection<ComponentClass>;

struct SceneLabel {
  SceneClass cls = SceneClass::Outside;
  double confidence = 1.0;

  friend bool operator==(const SceneLabel&, const SceneLabel&) = default;
};

// Everything the cascade produced for one image.
struct CascadeOutput {
  std::string image_id;
  SceneLabel scene;
  std::vector<ComponentDetection> components;
  std::vector<DamageDetection> damages;
};

// Probabilities indexed by DamageLevel ordinal.
using ClassProbs = std::array<double, kNumLevels>;

}  // namespace ruinscore
