#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ruinscore/dataset_io.hpp"
#include "ruinscore/error.hpp"
#include "ruinscore/types.hpp"

namespace ruinscore {

enum class FusionVersion { V1, V2 };
enum class DecisionMode { RuleOnly, MetaOnly, Hybrid };

template <>
struct EnumTraits<FusionVersion> {
  static constexpr std::array<std::string_view, 2> names = {"v1", "v2"};
  static constexpr std::string_view kind = "version";
};

template <>
struct EnumTraits<DecisionMode> {
  static constexpr std::array<std::string_view, 3> names = {"rule_only", "meta_only", "hybrid"};
  static constexpr std::string_view kind = "decision_mode";
};

struct ScoreWeights {
  double w_crack = 1.0;
  double w_spall = 2.0;
  double w_rebar = 3.0;
};

struct ScoreThresholds {
  double t_slight = 1.0;
  double t_medium = 4.0;
};

// Parameters only consulted when version == V2. Each feature is switched off
// by its neutral value: inside_conf_floor = 0 and min_box_area = 0 disable the
// noise filter, no_component_score_factor = 1 disables the ambiguity bias.
struct V2Params {
  double inside_conf_floor = 0.40;
  double min_box_area = 0.0004;
  double rebar_conf_min = 0.5;
  double rebar_iou_min = 0.1;
  double rebar_containment_min = 0.5;
  double component_conf_min = 0.3;
  double no_component_score_factor = 0.5;
};

struct FusionConfig {
  FusionVersion version = FusionVersion::V1;
  ScoreWeights weights;
  ScoreThresholds thresholds;
  double conf_floor = 0.25;
  V2Params v2;
  DecisionMode decision_mode = DecisionMode::RuleOnly;
  // Allowed above 1 so that Hybrid can be forced to always defer to the rules.
  double hybrid_prob_gate = 0.6;
};

inline void validate(const FusionConfig& c) {
  auto fail = [](const char* field) { throw Error(ErrorKind::InvalidConfig, field); };
  auto unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  auto nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!nonneg(c.weights.w_crack)) fail("weights.w_crack");
  if (!nonneg(c.weights.w_spall)) fail("weights.w_spall");
  if (!nonneg(c.weights.w_rebar)) fail("weights.w_rebar");
  if (!nonneg(c.thresholds.t_slight)) fail("thresholds.t_slight");
  if (!std::isfinite(c.thresholds.t_medium) || c.thresholds.t_medium < c.thresholds.t_slight)
    fail("thresholds.t_medium");
  if (!unit(c.conf_floor)) fail("conf_floor");
  if (!unit(c.v2.inside_conf_floor)) fail("v2.inside_conf_floor");
  if (!unit(c.v2.min_box_area)) fail("v2.min_box_area");
  if (!unit(c.v2.rebar_conf_min)) fail("v2.rebar_conf_min");
  if (!unit(c.v2.rebar_iou_min)) fail("v2.rebar_iou_min");
  if (!unit(c.v2.rebar_containment_min)) fail("v2.rebar_containment_min");
  if (!unit(c.v2.component_conf_min)) fail("v2.component_conf_min");
  const double beta = c.v2.no_component_score_factor;
  if (!std::isfinite(beta) || beta <= 0.0 || beta > 1.0) fail("v2.no_component_score_factor");
  if (!nonneg(c.hybrid_prob_gate)) fail("hybrid_prob_gate");
}

// ---------------------------------------------------------------------------
// Config file

namespace detail {

template <class Enum>
Enum enum_at(const json& j, const std::string& path) {
  if (!j.is_string()) schema(path);
  auto e = enum_from_name<Enum>(j.get<std::string>());
  if (!e) schema(path);
  return *e;
}

inline void read_number(const json& obj, const char* key, double& dst, const std::string& prefix) {
  if (obj.contains(key)) dst = number_at(obj[key], prefix.empty() ? key : prefix + "." + key);
}

}  // namespace detail

// Absent keys keep their defaults; unknown keys are rejected. `extra_keys` lists
// top-level keys owned by other consumers of the same file (e.g. "backend").
inline FusionConfig fusion_config_from_json(const json& j, std::initializer_list<std::string_view> extra_keys = {}) {
  if (!j.is_object()) detail::schema("$");
  for (const auto& [key, _] : j.items()) {
    bool ok = key == "version" || key == "weights" || key == "thresholds" || key == "conf_floor" ||
              key == "v2" || key == "decision_mode" || key == "hybrid_prob_gate";
    for (auto e : extra_keys) ok = ok || key == e;
    if (!ok) detail::schema(key);
  }

  FusionConfig c;
  if (j.contains("version")) c.version = detail::enum_at<FusionVersion>(j["version"], "version");
  if (j.contains("decision_mode"))
    c.decision_mode = detail::enum_at<DecisionMode>(j["decision_mode"], "decision_mode");
  detail::read_number(j, "conf_floor", c.conf_floor, "");
  detail::read_number(j, "hybrid_prob_gate", c.hybrid_prob_gate, "");

  if (j.contains("weights")) {
    const auto& w = j["weights"];
    if (!w.is_object()) detail::schema("weights");
    detail::reject_unknown_keys(w, {"w_crack", "w_spall", "w_rebar"}, "weights");
    detail::read_number(w, "w_crack", c.weights.w_crack, "weights");
    detail::read_number(w, "w_spall", c.weights.w_spall, "weights");
    detail::read_number(w, "w_rebar", c.weights.w_rebar, "weights");
  }
  if (j.contains("thresholds")) {
    const auto& t = j["thresholds"];
    if (!t.is_object()) detail::schema("thresholds");
    detail::reject_unknown_keys(t, {"t_slight", "t_medium"}, "thresholds");
    detail::read_number(t, "t_slight", c.thresholds.t_slight, "thresholds");
    detail::read_number(t, "t_medium", c.thresholds.t_medium, "thresholds");
  }
  if (j.contains("v2")) {
    const auto& v = j["v2"];
    if (!v.is_object()) detail::schema("v2");
    detail::reject_unknown_keys(v,
                                {"inside_conf_floor", "min_box_area", "rebar_conf_min", "rebar_iou_min",
                                 "rebar_containment_min", "component_conf_min", "no_component_score_factor"},
                                "v2");
    detail::read_number(v, "inside_conf_floor", c.v2.inside_conf_floor, "v2");
    detail::read_number(v, "min_box_area", c.v2.min_box_area, "v2");
    detail::read_number(v, "rebar_conf_min", c.v2.rebar_conf_min, "v2");
    detail::read_number(v, "rebar_iou_min", c.v2.rebar_iou_min, "v2");
    detail::read_number(v, "rebar_containment_min", c.v2.rebar_containment_min, "v2");
    detail::read_number(v, "component_conf_min", c.v2.component_conf_min, "v2");
    detail::read_number(v, "no_component_score_factor", c.v2.no_component_score_factor, "v2");
  }
  validate(c);
  return c;
}

inline json fusion_config_to_json(const FusionConfig& c) {
  return json{
      {"version", name_of(c.version)},
      {"weights", {{"w_crack", c.weights.w_crack}, {"w_spall", c.weights.w_spall}, {"w_rebar", c.weights.w_rebar}}},
      {"thresholds", {{"t_slight", c.thresholds.t_slight}, {"t_medium", c.thresholds.t_medium}}},
      {"conf_floor", c.conf_floor},
      {"v2",
       {{"inside_conf_floor", c.v2.inside_conf_floor},
        {"min_box_area", c.v2.min_box_area},
        {"rebar_conf_min", c.v2.rebar_conf_min},
        {"rebar_iou_min", c.v2.rebar_iou_min},
        {"rebar_containment_min", c.v2.rebar_containment_min},
        {"component_conf_min", c.v2.component_conf_min},
        {"no_component_score_factor", c.v2.no_component_score_factor}}},
      {"decision_mode", name_of(c.decision_mode)},
      {"hybrid_prob_gate", c.hybrid_prob_gate},
  };
}

// ---------------------------------------------------------------------------
// Geometry

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double ix = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  const double iy = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  return ix * iy;
}

inline double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::min(1.0, inter / uni) : 0.0;
}

// Fraction of `inner` covered by `outer`.
inline double containment(const BoundingBox& inner, const BoundingBox& outer) noexcept {
  const double a = inner.area();
  return a > 0.0 ? std::min(1.0, intersection_area(inner, outer) / a) : 0.0;
}

// ---------------------------------------------------------------------------
// Rules

namespace filter_tag {
inline constexpr std::string_view kConfFloor = "conf-floor";
inline constexpr std::string_view kInsideFloor = "inside-floor";
inline constexpr std::string_view kMinArea = "min-area";
inline constexpr std::string_view kRebarValidation = "rebar-validation";
inline constexpr std::string_view kAmbiguityBias = "ambiguity-bias";
}  // namespace filter_tag

struct DetectionCounts {
  int n_crack = 0;
  int n_spall = 0;
  int n_rebar_raw = 0;
  int n_rebar_valid = 0;

  friend bool operator==(const DetectionCounts&, const DetectionCounts&) = default;
};

struct RuleDecision {
  DamageLevel level = DamageLevel::Zero;
  double score = 0.0;
  DetectionCounts counts;
  bool rebar_forced = false;
  std::vector<std::string> applied_filters;

  bool has_filter(std::string_view tag) const {
    return std::find(applied_filters.begin(), applied_filters.end(), tag) != applied_filters.end();
  }
};

inline double effective_conf_floor(SceneClass scene, const FusionConfig& config) noexcept {
  if (config.version == FusionVersion::V2 && scene == SceneClass::Inside)
    return std::max(config.conf_floor, config.v2.inside_conf_floor);
  return config.conf_floor;
}

inline std::vector<DamageDetection> filter_detections(const std::vector<DamageDetection>& damages,
                                                      const SceneLabel& scene, const FusionConfig& config) {
  const double floor = effective_conf_floor(scene.cls, config);
  const bool v2 = config.version == FusionVersion::V2;
  std::vector<DamageDetection> kept;
  kept.reserve(damages.size());
  for (const auto& d : damages) {
    if (d.confidence < floor) continue;
    if (v2 && d.box.area() < config.v2.min_box_area) continue;
    kept.push_back(d);
  }
  return kept;
}

inline bool validate_rebar(const DamageDetection& rebar, const std::vector<DamageDetection>& spalls,
                           const std::vector<ComponentDetection>& components, const FusionConfig& config) {
  if (config.version == FusionVersion::V1) return rebar.confidence >= config.conf_floor;

  if (rebar.confidence < config.v2.rebar_conf_min) return false;
  for (const auto& s : spalls) {
    if (s.cls == DamageClass::Spalling && iou(rebar.box, s.box) >= config.v2.rebar_iou_min) return true;
  }
  for (const auto& c : components) {
    if (containment(rebar.box, c.box) >= config.v2.rebar_containment_min) return true;
  }
  return false;
}

inline double weighted_score(int n_crack, int n_spall, int n_rebar_unvalidated, const FusionConfig& config) noexcept {
  const auto& w = config.weights;
  return w.w_crack * n_crack + w.w_spall * n_spall + w.w_rebar * n_rebar_unvalidated;
}

inline DamageLevel level_for_score(double score, const FusionConfig& config) noexcept {
  if (score >= config.thresholds.t_medium) return DamageLevel::Medium;
  if (score >= config.thresholds.t_slight) return DamageLevel::Slight;
  return DamageLevel::Zero;
}

inline bool has_confident_component(const std::vector<ComponentDetection>& components, const FusionConfig& config) {
  return std::any_of(components.begin(), components.end(),
                     [&](const ComponentDetection& c) { return c.confidence >= config.v2.component_conf_min; });
}

// Score as it would be recomputed from a decision's own fields. The stored
// score always satisfies `decision.score == explained_score(decision, config)`.
inline double explained_score(const RuleDecision& r, const FusionConfig& config) noexcept {
  const auto& n = r.counts;
  double s = weighted_score(n.n_crack, n.n_spall, n.n_rebar_raw - n.n_rebar_valid, config);
  if (r.has_filter(filter_tag::kAmbiguityBias)) s *= config.v2.no_component_score_factor;
  return s;
}

// The score is recorded even when a validated rebar short-circuits to Heavy,
// so every decision carries the same explanation.
inline RuleDecision rule_fusion(const CascadeOutput& out, const FusionConfig& config) {
  RuleDecision r;
  const bool v2 = config.version == FusionVersion::V2;
  r.applied_filters.emplace_back(filter_tag::kConfFloor);
  if (v2) {
    if (out.scene.cls == SceneClass::Inside) r.applied_filters.emplace_back(filter_tag::kInsideFloor);
    r.applied_filters.emplace_back(filter_tag::kMinArea);
    r.applied_filters.emplace_back(filter_tag::kRebarValidation);
  }

  const auto kept = filter_detections(out.damages, out.scene, config);
  std::vector<DamageDetection> spalls;
  for (const auto& d : kept)
    if (d.cls == DamageClass::Spalling) spalls.push_back(d);

  for (const auto& d : kept) {
    switch (d.cls) {
      case DamageClass::Crack: ++r.counts.n_crack; break;
      case DamageClass::Spalling: ++r.counts.n_spall; break;
      case DamageClass::ExposedRebar:
        ++r.counts.n_rebar_raw;
        if (validate_rebar(d, spalls, out.components, config)) ++r.counts.n_rebar_valid;
        break;
    }
  }

  r.score = weighted_score(r.counts.n_crack, r.counts.n_spall, r.counts.n_rebar_raw - r.counts.n_rebar_valid, config);
  if (v2 && !has_confident_component(out.components, config)) {
    r.score *= config.v2.no_component_score_factor;
    r.applied_filters.emplace_back(filter_tag::kAmbiguityBias);
  }

  if (r.counts.n_rebar_valid > 0) {
    r.rebar_forced = true;
    r.level = DamageLevel::Heavy;
  } else {
    r.level = level_for_score(r.score, config);
  }
  return r;
}

// Ties resolve towards the more severe level.
inline DamageLevel argmax_level(const ClassProbs& p) noexcept {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] >= p[best]) best = i;
  return static_cast<DamageLevel>(best);
}

inline DamageLevel final_decision(const RuleDecision& rule, const std::optional<ClassProbs>& meta,
                                  const FusionConfig& config) {
  if (config.decision_mode == DecisionMode::RuleOnly) return rule.level;
  if (!meta) throw Error(ErrorKind::MissingMeta, std::string(name_of(config.decision_mode)));

  const DamageLevel meta_level = argmax_level(*meta);
  if (config.decision_mode == DecisionMode::MetaOnly) return meta_level;

  const double top = (*meta)[static_cast<std::size_t>(ordinal(meta_level))];
  DamageLevel level = top >= config.hybrid_prob_gate ? meta_level : rule.level;
  if (rule.rebar_forced) level = DamageLevel::Heavy;
  return level;
}

}  // namespace ruinscore
