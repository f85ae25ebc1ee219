#include <gtest/gtest.h>

#include "support.hpp"

using namespace ruinscore;

namespace {

DamageDetection damage(DamageClass cls, double conf, BoundingBox box = {0.5, 0.5, 0.1, 0.1}) {
  return {cls, box, conf};
}

CascadeOutput cascade(std::vector<DamageDetection> damages, SceneClass scene = SceneClass::Outside,
                      std::vector<ComponentDetection> components = {}) {
  CascadeOutput out;
  out.image_id = "t";
  out.scene = {scene, 1.0};
  out.damages = std::move(damages);
  out.components = std::move(components);
  return out;
}

FusionConfig v2_config() {
  FusionConfig c;
  c.version = FusionVersion::V2;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Geometry

TEST(Iou, Identity) {
  const BoundingBox b{0.3, 0.6, 0.2, 0.4};
  EXPECT_DOUBLE_EQ(iou(b, b), 1.0);
}

TEST(Iou, TouchingEdgesIsZero) {
  EXPECT_EQ(iou({0.25, 0.5, 0.5, 0.5}, {0.75, 0.5, 0.5, 0.5}), 0.0);
  EXPECT_EQ(iou({0.1, 0.1, 0.1, 0.1}, {0.9, 0.9, 0.1, 0.1}), 0.0);
}

TEST(Iou, Containment) {
  // 0.0625 / 0.25
  EXPECT_DOUBLE_EQ(iou({0.5, 0.5, 0.5, 0.5}, {0.5, 0.5, 0.25, 0.25}), 0.25);
  EXPECT_DOUBLE_EQ(containment({0.5, 0.5, 0.25, 0.25}, {0.5, 0.5, 0.5, 0.5}), 1.0);
  EXPECT_DOUBLE_EQ(containment({0.5, 0.5, 0.5, 0.5}, {0.5, 0.5, 0.25, 0.25}), 0.25);
}

TEST(Iou, SymmetricAndBoundedProperty) {
  testkit::Gen gen(3);
  for (int i = 0; i < 2000; ++i) {
    const auto a = gen.box();
    const auto b = gen.box();
    const double v = iou(a, b);
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
    ASSERT_DOUBLE_EQ(v, iou(b, a));
  }
}

// ---------------------------------------------------------------------------
// Filtering

TEST(Filter, Empty) {
  EXPECT_TRUE(filter_detections({}, {SceneClass::Inside, 1.0}, FusionConfig{}).empty());
}

TEST(Filter, V1ConfidenceFloor) {
  FusionConfig c;
  c.conf_floor = 0.25;
  const auto kept = filter_detections({damage(DamageClass::Crack, 0.2), damage(DamageClass::Crack, 0.3)},
                                      {SceneClass::Outside, 1.0}, c);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_DOUBLE_EQ(kept[0].confidence, 0.3);
}

TEST(Filter, V2InsideFloor) {
  auto c = v2_config();
  c.v2.inside_conf_floor = 0.40;
  const std::vector<DamageDetection> in = {damage(DamageClass::Spalling, 0.3), damage(DamageClass::Spalling, 0.5)};
  const auto inside = filter_detections(in, {SceneClass::Inside, 1.0}, c);
  ASSERT_EQ(inside.size(), 1u);
  EXPECT_DOUBLE_EQ(inside[0].confidence, 0.5);
  // The indoor floor does not apply outdoors.
  EXPECT_EQ(filter_detections(in, {SceneClass::Outside, 1.0}, c).size(), 2u);
}

TEST(Filter, V2MinBoxArea) {
  auto c = v2_config();
  const auto tiny = damage(DamageClass::Crack, 0.9, {0.5, 0.5, 0.01, 0.01});   // area 1e-4 < 4e-4
  const auto small = damage(DamageClass::Crack, 0.9, {0.5, 0.5, 0.02, 0.02});  // area 4e-4, kept
  const auto kept = filter_detections({tiny, small}, {SceneClass::Outside, 1.0}, c);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].box.w, 0.02);
  c.version = FusionVersion::V1;
  EXPECT_EQ(filter_detections({tiny, small}, {SceneClass::Outside, 1.0}, c).size(), 2u);
}

// ---------------------------------------------------------------------------
// Rebar validation

TEST(RebarValidation, V2OverlappingSpall) {
  const auto rebar = damage(DamageClass::ExposedRebar, 0.9, {0.5, 0.5, 0.2, 0.2});
  // Spall area 0.2 fully covers the rebar (area 0.04): IoU = 0.04 / 0.2 = 0.2.
  const auto spall = damage(DamageClass::Spalling, 0.8, {0.5, 0.5, 0.4, 0.5});
  ASSERT_NEAR(iou(rebar.box, spall.box), 0.2, 1e-12);
  EXPECT_TRUE(validate_rebar(rebar, {spall}, {}, v2_config()));
}

TEST(RebarValidation, V2NoCoEvidence) {
  EXPECT_FALSE(validate_rebar(damage(DamageClass::ExposedRebar, 0.9), {}, {}, v2_config()));
}

TEST(RebarValidation, V2ContainingComponent) {
  const auto rebar = damage(DamageClass::ExposedRebar, 0.9, {0.5, 0.5, 0.2, 0.2});
  const ComponentDetection column{ComponentClass::Column, {0.5, 0.5, 0.3, 0.9}, 0.8};
  EXPECT_TRUE(validate_rebar(rebar, {}, {column}, v2_config()));
  // Only 25% of the rebar lies in this wall: below rebar_containment_min = 0.5.
  const ComponentDetection wall{ComponentClass::Wall, {0.6, 0.6, 0.2, 0.2}, 0.8};
  EXPECT_NEAR(containment(rebar.box, wall.box), 0.25, 1e-12);
  EXPECT_FALSE(validate_rebar(rebar, {}, {wall}, v2_config()));
}

TEST(RebarValidation, V2ConfidenceMinimum) {
  const auto spall = damage(DamageClass::Spalling, 0.8);
  EXPECT_FALSE(validate_rebar(damage(DamageClass::ExposedRebar, 0.45), {spall}, {}, v2_config()));
}

TEST(RebarValidation, V1FloorOnly) {
  FusionConfig c;
  EXPECT_TRUE(validate_rebar(damage(DamageClass::ExposedRebar, 0.3), {}, {}, c));
  EXPECT_FALSE(validate_rebar(damage(DamageClass::ExposedRebar, 0.2), {}, {}, c));
}

// ---------------------------------------------------------------------------
// Scoring

TEST(WeightedScore, Examples) {
  FusionConfig c;
  EXPECT_EQ(weighted_score(0, 0, 0, c), 0.0);
  EXPECT_EQ(weighted_score(2, 1, 0, c), 4.0);
  EXPECT_EQ(weighted_score(0, 0, 1, c), 3.0);
}

TEST(RuleFusion, EmptyIsZero) {
  const auto r = rule_fusion(cascade({}), FusionConfig{});
  EXPECT_EQ(r.level, DamageLevel::Zero);
  EXPECT_EQ(r.score, 0.0);
  EXPECT_FALSE(r.rebar_forced);
}

TEST(RuleFusion, RebarForcesHeavy) {
  const auto r = rule_fusion(cascade({damage(DamageClass::ExposedRebar, 0.9)}), FusionConfig{});
  EXPECT_EQ(r.level, DamageLevel::Heavy);
  EXPECT_TRUE(r.rebar_forced);
  EXPECT_EQ(r.counts.n_rebar_valid, 1);
}

TEST(RuleFusion, V1Examples) {
  FusionConfig c;
  const auto slight = rule_fusion(cascade({damage(DamageClass::Crack, 0.8), damage(DamageClass::Crack, 0.8)}), c);
  EXPECT_EQ(slight.score, 2.0);
  EXPECT_EQ(slight.level, DamageLevel::Slight);

  const auto medium = rule_fusion(cascade({damage(DamageClass::Crack, 0.8), damage(DamageClass::Spalling, 0.8),
                                           damage(DamageClass::Spalling, 0.8)}),
                                  c);
  EXPECT_EQ(medium.score, 5.0);
  EXPECT_EQ(medium.level, DamageLevel::Medium);
}

TEST(RuleFusion, V2DemotedRebarStillScores) {
  // Lone rebar without spall or component: demoted, counts w_rebar = 3, and the
  // missing component halves the score to 1.5.
  const auto r = rule_fusion(cascade({damage(DamageClass::ExposedRebar, 0.9)}), v2_config());
  EXPECT_FALSE(r.rebar_forced);
  EXPECT_EQ(r.counts.n_rebar_raw, 1);
  EXPECT_EQ(r.counts.n_rebar_valid, 0);
  EXPECT_TRUE(r.has_filter(filter_tag::kAmbiguityBias));
  EXPECT_DOUBLE_EQ(r.score, 1.5);
  EXPECT_EQ(r.level, DamageLevel::Slight);
}

TEST(RuleFusion, V2ConfidentComponentRemovesBias) {
  const ComponentDetection beam{ComponentClass::Beam, {0.2, 0.2, 0.1, 0.1}, 0.35};
  const auto r = rule_fusion(cascade({damage(DamageClass::Crack, 0.8), damage(DamageClass::Crack, 0.8)},
                                     SceneClass::Outside, {beam}),
                             v2_config());
  EXPECT_FALSE(r.has_filter(filter_tag::kAmbiguityBias));
  EXPECT_EQ(r.score, 2.0);
}

TEST(RuleFusion, ThresholdBoundaries) {
  FusionConfig c;
  c.thresholds = {1.0, 4.0};
  // S = 1 exactly (one crack) and S = 4 exactly (two spalls).
  EXPECT_EQ(rule_fusion(cascade({damage(DamageClass::Crack, 0.8)}), c).level, DamageLevel::Slight);
  EXPECT_EQ(rule_fusion(cascade({damage(DamageClass::Spalling, 0.8), damage(DamageClass::Spalling, 0.8)}), c).level,
            DamageLevel::Medium);
  EXPECT_EQ(level_for_score(std::nextafter(1.0, 0.0), c), DamageLevel::Zero);
  EXPECT_EQ(level_for_score(std::nextafter(4.0, 0.0), c), DamageLevel::Slight);
}

// Independent piecewise evaluation of the v1 defaults for detections that all
// pass the confidence floor: any rebar is heavy, else 1·c + 2·s against 1 and 4.
DamageLevel reference_v1(int cracks, int spalls, int rebars) {
  if (rebars > 0) return DamageLevel::Heavy;
  const int s = cracks + 2 * spalls;
  if (s >= 4) return DamageLevel::Medium;
  if (s >= 1) return DamageLevel::Slight;
  return DamageLevel::Zero;
}

TEST(RuleFusion, BruteForceOracleV1) {
  int agree = 0;
  for (int c = 0; c <= 5; ++c)
    for (int s = 0; s <= 5; ++s)
      for (int r = 0; r <= 5; ++r) {
        std::vector<DamageDetection> d;
        for (int i = 0; i < c; ++i) d.push_back(damage(DamageClass::Crack, 0.8));
        for (int i = 0; i < s; ++i) d.push_back(damage(DamageClass::Spalling, 0.8));
        for (int i = 0; i < r; ++i) d.push_back(damage(DamageClass::ExposedRebar, 0.8));
        agree += rule_fusion(cascade(d), FusionConfig{}).level == reference_v1(c, s, r);
      }
  EXPECT_EQ(agree, 216);
}

// ---------------------------------------------------------------------------
// Properties over generated cascade outputs

TEST(RuleProperties, RebarDominance) {
  testkit::Gen gen(101);
  int forced = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto out = gen.cascade();
    const auto cfg = gen.config();
    const auto kept = filter_detections(out.damages, out.scene, cfg);
    bool any_valid = false;
    for (const auto& d : kept)
      if (d.cls == DamageClass::ExposedRebar && validate_rebar(d, kept, out.components, cfg)) any_valid = true;
    const auto r = rule_fusion(out, cfg);
    if (any_valid) {
      ++forced;
      ASSERT_EQ(r.level, DamageLevel::Heavy);
      ASSERT_TRUE(r.rebar_forced);
    } else {
      ASSERT_FALSE(r.rebar_forced);
    }
  }
  EXPECT_GT(forced, 100);
}

TEST(RuleProperties, ZeroEvidenceIsZero) {
  testkit::Gen gen(102);
  for (int i = 0; i < 1000; ++i) {
    auto out = gen.cascade();
    out.damages.clear();
    for (auto v : {FusionVersion::V1, FusionVersion::V2}) {
      FusionConfig c;
      c.version = v;
      ASSERT_EQ(rule_fusion(out, c).level, DamageLevel::Zero);
    }
  }
}

TEST(RuleProperties, MonotoneUnderAddition) {
  testkit::Gen gen(103);
  for (int i = 0; i < 2000; ++i) {
    const auto out = gen.cascade();
    const auto cfg = gen.config();
    auto more = out;
    more.damages.insert(more.damages.begin() + gen.integer(0, static_cast<int>(out.damages.size())), gen.damage());
    ASSERT_GE(rule_fusion(more, cfg).level, rule_fusion(out, cfg).level);
  }
}

TEST(RuleProperties, ExplanationConsistency) {
  testkit::Gen gen(104);
  for (int i = 0; i < 2000; ++i) {
    const auto out = gen.cascade();
    auto cfg = gen.config();
    cfg.weights = {gen.uniform(0, 3), gen.uniform(0, 3), gen.uniform(0, 3)};
    const auto r = rule_fusion(out, cfg);
    ASSERT_EQ(r.score, explained_score(r, cfg));
    ASSERT_GE(r.score, 0.0);
    if (r.rebar_forced) {
      ASSERT_EQ(r.level, DamageLevel::Heavy);
    }
  }
}

// ---------------------------------------------------------------------------
// Final decision

TEST(FinalDecision, RuleOnlyPassThrough) {
  RuleDecision rule;
  rule.level = DamageLevel::Medium;
  EXPECT_EQ(final_decision(rule, std::nullopt, FusionConfig{}), DamageLevel::Medium);
}

TEST(FinalDecision, HybridGateSatisfied) {
  FusionConfig c;
  c.decision_mode = DecisionMode::Hybrid;
  c.hybrid_prob_gate = 0.6;
  RuleDecision rule;
  rule.level = DamageLevel::Slight;
  EXPECT_EQ(final_decision(rule, ClassProbs{0.1, 0.1, 0.7, 0.1}, c), DamageLevel::Medium);
  EXPECT_EQ(final_decision(rule, ClassProbs{0.1, 0.1, 0.5, 0.3}, c), DamageLevel::Slight);
}

TEST(FinalDecision, HybridNeverOverridesForcedHeavyDownward) {
  FusionConfig c;
  c.decision_mode = DecisionMode::Hybrid;
  c.hybrid_prob_gate = 0.6;
  RuleDecision rule;
  rule.level = DamageLevel::Heavy;
  rule.rebar_forced = true;
  EXPECT_EQ(final_decision(rule, ClassProbs{0.7, 0.1, 0.1, 0.1}, c), DamageLevel::Heavy);
}

TEST(FinalDecision, MetaOnlyArgmaxTiesGoUp) {
  FusionConfig c;
  c.decision_mode = DecisionMode::MetaOnly;
  EXPECT_EQ(final_decision({}, ClassProbs{0.4, 0.4, 0.1, 0.1}, c), DamageLevel::Slight);
  EXPECT_EQ(final_decision({}, ClassProbs{0.25, 0.25, 0.25, 0.25}, c), DamageLevel::Heavy);
}

TEST(FinalDecision, MissingMeta) {
  FusionConfig c;
  c.decision_mode = DecisionMode::Hybrid;
  try {
    final_decision({}, std::nullopt, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingMeta);
  }
}

TEST(FinalDecision, DegenerateGates) {
  testkit::Gen gen(105);
  for (int i = 0; i < 2000; ++i) {
    RuleDecision rule;
    rule.level = static_cast<DamageLevel>(gen.integer(0, 3));
    rule.rebar_forced = rule.level == DamageLevel::Heavy && gen.coin();
    ClassProbs p{};
    double sum = 0.0;
    for (auto& v : p) sum += (v = gen.uniform());
    for (auto& v : p) v /= sum;

    FusionConfig hybrid, meta_only, rule_only;
    hybrid.decision_mode = DecisionMode::Hybrid;
    meta_only.decision_mode = DecisionMode::MetaOnly;

    hybrid.hybrid_prob_gate = 1.01;
    ASSERT_EQ(final_decision(rule, p, hybrid), final_decision(rule, p, rule_only));

    hybrid.hybrid_prob_gate = 0.0;
    const auto expected = rule.rebar_forced ? DamageLevel::Heavy : final_decision(rule, p, meta_only);
    ASSERT_EQ(final_decision(rule, p, hybrid), expected);
  }
}

// ---------------------------------------------------------------------------
// Config file

TEST(FusionConfigJson, DefaultsWhenAbsent) {
  const auto c = fusion_config_from_json(json::object());
  EXPECT_EQ(c.version, FusionVersion::V1);
  EXPECT_EQ(c.weights.w_spall, 2.0);
  EXPECT_EQ(c.thresholds.t_medium, 4.0);
  EXPECT_EQ(c.conf_floor, 0.25);
  EXPECT_EQ(c.v2.min_box_area, 0.0004);
  EXPECT_EQ(c.v2.no_component_score_factor, 0.5);
  EXPECT_EQ(c.decision_mode, DecisionMode::RuleOnly);
}

TEST(FusionConfigJson, ReadsNestedKeys) {
  const auto c = fusion_config_from_json(json::parse(R"({
    "version": "v2", "decision_mode": "hybrid", "hybrid_prob_gate": 1.01,
    "weights": {"w_rebar": 5}, "thresholds": {"t_slight": 2, "t_medium": 6},
    "v2": {"rebar_iou_min": 0.3}})"));
  EXPECT_EQ(c.version, FusionVersion::V2);
  EXPECT_EQ(c.decision_mode, DecisionMode::Hybrid);
  EXPECT_EQ(c.hybrid_prob_gate, 1.01);
  EXPECT_EQ(c.weights.w_rebar, 5.0);
  EXPECT_EQ(c.weights.w_crack, 1.0);
  EXPECT_EQ(c.thresholds.t_slight, 2.0);
  EXPECT_EQ(c.v2.rebar_iou_min, 0.3);
  EXPECT_EQ(fusion_config_from_json(fusion_config_to_json(c)).v2.rebar_iou_min, 0.3);
}

TEST(FusionConfigJson, Rejections) {
  auto kind_of = [](const char* text) {
    try {
      fusion_config_from_json(json::parse(text));
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::IoFailure;
  };
  EXPECT_EQ(kind_of(R"({"wieghts": {}})"), ErrorKind::SchemaViolation);
  EXPECT_EQ(kind_of(R"({"v2": {"beta": 0.5}})"), ErrorKind::SchemaViolation);
  EXPECT_EQ(kind_of(R"({"version": "v3"})"), ErrorKind::SchemaViolation);
  EXPECT_EQ(kind_of(R"({"thresholds": {"t_slight": 5, "t_medium": 4}})"), ErrorKind::InvalidConfig);
  EXPECT_EQ(kind_of(R"({"weights": {"w_crack": -1}})"), ErrorKind::InvalidConfig);
  EXPECT_EQ(kind_of(R"({"conf_floor": 1.5})"), ErrorKind::InvalidConfig);
  EXPECT_EQ(kind_of(R"({"v2": {"no_component_score_factor": 0}})"), ErrorKind::InvalidConfig);
}
