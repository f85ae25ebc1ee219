#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ruinscore/dataset_io.hpp"
#include "ruinscore/error.hpp"
#include "ruinscore/fusion.hpp"
#include "ruinscore/types.hpp"

namespace ruinscore {

// ---------------------------------------------------------------------------
// Features
//
//  [0] n_crack        [1] n_spall        [2] n_rebar_raw     [3] n_rebar_valid
//  [4..6]  confidence sums   (crack, spall, rebar)
//  [7..9]  max confidence    (crack, spall, rebar), 0 when absent
//  [10] total damage box area, clamped to 1
//  [11] scene is inside
//  [12..14] component present (beam, column, wall)
//  [15] component count
//  [16] rule score      [17] rule level / 3
//
// Damage entries use the detections that survive filter_detections.

inline constexpr std::size_t kFeatureDim = 18;
inline constexpr std::string_view kFeatureLayout = "ruinscore-features-v1";

using FeatureVector = std::array<double, kFeatureDim>;

inline FeatureVector extract_features(const CascadeOutput& out, const RuleDecision& rule, const FusionConfig& config) {
  FeatureVector f{};
  f[0] = rule.counts.n_crack;
  f[1] = rule.counts.n_spall;
  f[2] = rule.counts.n_rebar_raw;
  f[3] = rule.counts.n_rebar_valid;

  double area = 0.0;
  for (const auto& d : filter_detections(out.damages, out.scene, config)) {
    const auto k = static_cast<std::size_t>(d.cls);
    f[4 + k] += d.confidence;
    f[7 + k] = std::max(f[7 + k], d.confidence);
    area += d.box.area();
  }
  f[10] = std::min(area, 1.0);
  f[11] = out.scene.cls == SceneClass::Inside ? 1.0 : 0.0;
  for (const auto& c : out.components) f[12 + static_cast<std::size_t>(c.cls)] = 1.0;
  f[15] = static_cast<double>(out.components.size());
  f[16] = rule.score;
  f[17] = ordinal(rule.level) / 3.0;
  return f;
}

// Row-major design matrix; rows must share one width.
using FeatureRows = std::vector<std::vector<double>>;

inline std::vector<double> to_row(const FeatureVector& f) { return {f.begin(), f.end()}; }

namespace detail {

inline std::size_t check_design(const FeatureRows& X, std::span<const DamageLevel> y) {
  if (X.size() != y.size())
    throw Error(ErrorKind::DimensionMismatch, fmt::format("{} rows vs {} labels", X.size(), y.size()));
  if (X.empty()) throw Error(ErrorKind::DimensionMismatch, "no rows");
  const std::size_t d = X.front().size();
  if (d == 0) throw Error(ErrorKind::DimensionMismatch, "zero-width rows");
  for (std::size_t i = 0; i < X.size(); ++i)
    if (X[i].size() != d) throw Error(ErrorKind::DimensionMismatch, fmt::format("row {} has width {}", i, X[i].size()));
  return d;
}

inline ClassProbs softmax(const std::array<double, kNumLevels>& logits) noexcept {
  const double mx = *std::max_element(logits.begin(), logits.end());
  ClassProbs p{};
  double sum = 0.0;
  for (std::size_t k = 0; k < kNumLevels; ++k) sum += (p[k] = std::exp(logits[k] - mx));
  for (auto& v : p) v /= sum;
  return p;
}

inline std::size_t idx(DamageLevel l) noexcept { return static_cast<std::size_t>(ordinal(l)); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Multinomial logistic regression

struct LogRegHyper {
  double learning_rate = 0.1;
  double l2 = 1e-3;
  int iterations = 500;
  std::array<double, kNumLevels> class_weights = {1.0, 1.0, 1.0, 1.0};
};

struct GbdtHyper {
  int rounds = 50;
  double learning_rate = 0.1;
  int max_depth = 3;
  int min_leaf = 5;
  double lambda = 1.0;
  std::array<double, kNumLevels> class_weights = {1.0, 1.0, 1.0, 1.0};
};

struct TrainHyper {
  LogRegHyper logreg;
  GbdtHyper gbdt;
  // Both trainers are deterministic; the seed is recorded for provenance.
  std::uint64_t seed = 0;
};

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std;

  std::vector<double> apply(std::span<const double> x) const {
    std::vector<double> z(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) z[j] = (x[j] - mean[j]) / std[j];
    return z;
  }
};

// Zero-variance columns keep std = 1 so they standardize to 0.
inline Standardizer fit_standardizer(const FeatureRows& X) {
  const std::size_t n = X.size();
  const std::size_t d = X.front().size();
  Standardizer s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (const auto& row : X)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += row[j];
  for (auto& m : s.mean) m /= static_cast<double>(n);
  for (const auto& row : X)
    for (std::size_t j = 0; j < d; ++j) s.std[j] += (row[j] - s.mean[j]) * (row[j] - s.mean[j]);
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(s.std[j] / static_cast<double>(n));
    s.std[j] = sd > 1e-12 * std::max(1.0, std::abs(s.mean[j])) ? sd : 1.0;
  }
  return s;
}

struct LogRegModel {
  std::size_t dim = 0;
  // kNumLevels rows of (dim + 1) entries, bias last.
  std::vector<double> weights;
  Standardizer standardizer;
  LogRegHyper hyper;
  int iterations = 0;
  double final_loss = 0.0;
  // Objective before each step plus the final value; not serialized.
  std::vector<double> loss_trace;

  std::array<double, kNumLevels> logits_standardized(std::span<const double> z) const {
    std::array<double, kNumLevels> out{};
    for (std::size_t k = 0; k < kNumLevels; ++k) {
      const double* w = &weights[k * (dim + 1)];
      double s = w[dim];
      for (std::size_t j = 0; j < dim; ++j) s += w[j] * z[j];
      out[k] = s;
    }
    return out;
  }
};

// Weighted mean cross-entropy plus (l2/2)·‖W‖² over non-bias weights, on
// standardized rows `Z`. Fills `grad` (same layout as weights) when non-null.
inline double logreg_objective(std::span<const double> weights, std::size_t dim, const FeatureRows& Z,
                               std::span<const DamageLevel> y, double l2,
                               const std::array<double, kNumLevels>& class_weights, std::vector<double>* grad) {
  const std::size_t stride = dim + 1;
  if (grad) grad->assign(weights.size(), 0.0);
  double loss = 0.0;
  double wsum = 0.0;
  for (std::size_t i = 0; i < Z.size(); ++i) {
    const std::size_t yi = detail::idx(y[i]);
    const double wi = class_weights[yi];
    std::array<double, kNumLevels> logits{};
    for (std::size_t k = 0; k < kNumLevels; ++k) {
      double s = weights[k * stride + dim];
      for (std::size_t j = 0; j < dim; ++j) s += weights[k * stride + j] * Z[i][j];
      logits[k] = s;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double lse = 0.0;
    for (double v : logits) lse += std::exp(v - mx);
    lse = mx + std::log(lse);
    loss += wi * (lse - logits[yi]);
    wsum += wi;
    if (grad) {
      for (std::size_t k = 0; k < kNumLevels; ++k) {
        const double r = wi * (std::exp(logits[k] - lse) - (k == yi ? 1.0 : 0.0));
        double* g = &(*grad)[k * stride];
        for (std::size_t j = 0; j < dim; ++j) g[j] += r * Z[i][j];
        g[dim] += r;
      }
    }
  }
  const double norm = wsum > 0.0 ? 1.0 / wsum : 0.0;
  loss *= norm;
  double penalty = 0.0;
  for (std::size_t k = 0; k < kNumLevels; ++k)
    for (std::size_t j = 0; j < dim; ++j) {
      const double w = weights[k * stride + j];
      penalty += w * w;
    }
  loss += 0.5 * l2 * penalty;
  if (grad) {
    for (auto& g : *grad) g *= norm;
    for (std::size_t k = 0; k < kNumLevels; ++k)
      for (std::size_t j = 0; j < dim; ++j) (*grad)[k * stride + j] += l2 * weights[k * stride + j];
  }
  return loss;
}

// Full-batch gradient descent from zero weights for exactly `iterations` steps.
inline LogRegModel train_logreg(const FeatureRows& X, std::span<const DamageLevel> y, const LogRegHyper& hyper = {}) {
  const std::size_t d = detail::check_design(X, y);
  if (hyper.iterations < 0 || !(hyper.learning_rate > 0.0) || !(hyper.l2 >= 0.0))
    throw Error(ErrorKind::InvalidConfig, "logreg hyperparameters");

  LogRegModel m;
  m.dim = d;
  m.hyper = hyper;
  m.standardizer = fit_standardizer(X);
  m.weights.assign(kNumLevels * (d + 1), 0.0);

  FeatureRows Z;
  Z.reserve(X.size());
  for (const auto& row : X) Z.push_back(m.standardizer.apply(row));

  std::vector<double> grad;
  for (int it = 0; it < hyper.iterations; ++it) {
    const double loss = logreg_objective(m.weights, d, Z, y, hyper.l2, hyper.class_weights, &grad);
    if (!std::isfinite(loss)) throw Error(ErrorKind::NonFiniteLoss, std::to_string(it));
    m.loss_trace.push_back(loss);
    for (std::size_t k = 0; k < m.weights.size(); ++k) m.weights[k] -= hyper.learning_rate * grad[k];
  }
  m.final_loss = logreg_objective(m.weights, d, Z, y, hyper.l2, hyper.class_weights, nullptr);
  if (!std::isfinite(m.final_loss)) throw Error(ErrorKind::NonFiniteLoss, std::to_string(hyper.iterations));
  m.loss_trace.push_back(m.final_loss);
  m.iterations = hyper.iterations;
  return m;
}

inline ClassProbs predict_logreg(const LogRegModel& model, std::span<const double> x) {
  if (x.size() != model.dim)
    throw Error(ErrorKind::DimensionMismatch, fmt::format("expected {} features, got {}", model.dim, x.size()));
  return detail::softmax(model.logits_standardized(model.standardizer.apply(x)));
}

// ---------------------------------------------------------------------------
// Gradient-boosted regression trees with a softmax objective

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;

  double eval(std::span<const double> x) const {
    if (nodes.empty()) return 0.0;
    std::size_t i = 0;
    while (nodes[i].feature >= 0) {
      const auto& n = nodes[i];
      i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return nodes[i].value;
  }

  int depth() const { return depth_from(0); }

 private:
  int depth_from(std::size_t i) const {
    if (nodes.empty() || nodes[i].feature < 0) return 0;
    return 1 + std::max(depth_from(static_cast<std::size_t>(nodes[i].left)),
                        depth_from(static_cast<std::size_t>(nodes[i].right)));
  }
};

struct GbdtModel {
  std::size_t dim = 0;
  double learning_rate = 0.1;
  std::array<double, kNumLevels> base_scores{};
  // rounds[r][k] is the tree fitted for class k in round r.
  std::vector<std::array<RegressionTree, kNumLevels>> rounds;
  GbdtHyper hyper;
  // Set when every training label was the same; only the priors are used.
  bool degenerate = false;
  double final_loss = 0.0;
  std::vector<double> loss_trace;

  std::array<double, kNumLevels> raw_scores(std::span<const double> x) const {
    auto s = base_scores;
    for (const auto& round : rounds)
      for (std::size_t k = 0; k < kNumLevels; ++k) s[k] += learning_rate * round[k].eval(x);
    return s;
  }
};

namespace detail {

struct GradPair {
  double g = 0.0;
  double h = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const FeatureRows& X, const std::vector<std::vector<std::size_t>>& sorted, const GbdtHyper& hyper)
      : X_(X), sorted_(sorted), hyper_(hyper) {}

  RegressionTree build(const std::vector<GradPair>& gh) {
    gh_ = &gh;
    tree_ = {};
    node_of_.assign(X_.size(), 0);
    next_tag_ = 1;
    std::vector<std::size_t> all(X_.size());
    std::iota(all.begin(), all.end(), 0);
    grow(0, all, 0);
    return std::move(tree_);
  }

 private:
  double leaf_value(double G, double H) const { return -G / (H + hyper_.lambda); }
  double score(double G, double H) const { return G * G / (H + hyper_.lambda); }

  // Each node has a unique tag; members are tagged right before the split scan
  // so the presorted per-feature orders can be filtered in O(n).
  int grow(int node_tag, const std::vector<std::size_t>& members, int depth) {
    double G = 0.0;
    double H = 0.0;
    for (auto i : members) {
      G += (*gh_)[i].g;
      H += (*gh_)[i].h;
    }
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back({});
    tree_.nodes[static_cast<std::size_t>(id)].value = leaf_value(G, H);

    const auto min_leaf = static_cast<std::size_t>(std::max(1, hyper_.min_leaf));
    if (depth >= hyper_.max_depth || members.size() < 2 * min_leaf) return id;

    for (auto i : members) node_of_[i] = node_tag;
    const double parent = score(G, H);
    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;

    for (std::size_t f = 0; f < sorted_.size(); ++f) {
      double GL = 0.0;
      double HL = 0.0;
      std::size_t nl = 0;
      std::size_t prev = SIZE_MAX;
      for (auto i : sorted_[f]) {
        if (node_of_[i] != node_tag) continue;
        if (prev != SIZE_MAX && X_[i][f] > X_[prev][f] && nl >= min_leaf && members.size() - nl >= min_leaf) {
          const double gain = score(GL, HL) + score(G - GL, H - HL) - parent;
          if (gain > best_gain) {
            best_gain = gain;
            best_feature = static_cast<int>(f);
            best_threshold = X_[prev][f];
          }
        }
        GL += (*gh_)[i].g;
        HL += (*gh_)[i].h;
        ++nl;
        prev = i;
      }
    }
    if (best_feature < 0) return id;

    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (auto i : members) {
      (X_[i][static_cast<std::size_t>(best_feature)] <= best_threshold ? left : right).push_back(i);
    }
    const int l = grow(next_tag_++, left, depth + 1);
    const int r = grow(next_tag_++, right, depth + 1);
    auto& n = tree_.nodes[static_cast<std::size_t>(id)];
    n.feature = best_feature;
    n.threshold = best_threshold;
    n.left = l;
    n.right = r;
    return id;
  }

  const FeatureRows& X_;
  const std::vector<std::vector<std::size_t>>& sorted_;
  const GbdtHyper& hyper_;
  const std::vector<GradPair>* gh_ = nullptr;
  RegressionTree tree_;
  std::vector<int> node_of_;
  int next_tag_ = 1;
};

inline double multiclass_log_loss(const std::vector<std::array<double, kNumLevels>>& scores,
                                  std::span<const DamageLevel> y,
                                  const std::array<double, kNumLevels>& class_weights) {
  double loss = 0.0;
  double wsum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& s = scores[i];
    const double mx = *std::max_element(s.begin(), s.end());
    double lse = 0.0;
    for (double v : s) lse += std::exp(v - mx);
    lse = mx + std::log(lse);
    const std::size_t yi = idx(y[i]);
    loss += class_weights[yi] * (lse - s[yi]);
    wsum += class_weights[yi];
  }
  return wsum > 0.0 ? loss / wsum : 0.0;
}

}  // namespace detail

// Newton boosting: every round fits one tree per class to the softmax
// gradients taken at the start of the round; leaf value is -G/(H + lambda).
// Splits are exact over the sorted unique values of each feature, ties going
// to the lowest feature index and then the lowest threshold.
inline GbdtModel train_gbdt(const FeatureRows& X, std::span<const DamageLevel> y, const GbdtHyper& hyper = {}) {
  const std::size_t d = detail::check_design(X, y);
  if (hyper.rounds < 0 || hyper.max_depth < 0 || hyper.min_leaf < 1 || !(hyper.learning_rate > 0.0) ||
      !(hyper.lambda >= 0.0))
    throw Error(ErrorKind::InvalidConfig, "gbdt hyperparameters");
  const std::size_t n = X.size();
  if (n < 2 * static_cast<std::size_t>(hyper.min_leaf))
    throw Error(ErrorKind::DegenerateData, fmt::format("{} samples < 2*min_leaf", n));

  GbdtModel m;
  m.dim = d;
  m.learning_rate = hyper.learning_rate;
  m.hyper = hyper;

  std::array<double, kNumLevels> counts{};
  for (auto l : y) counts[detail::idx(l)] += 1.0;
  for (std::size_t k = 0; k < kNumLevels; ++k)
    m.base_scores[k] = std::log(std::max(counts[k] / static_cast<double>(n), 1e-12));
  m.degenerate = std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0.0; }) == 1;

  std::vector<std::array<double, kNumLevels>> scores(n, m.base_scores);
  m.loss_trace.push_back(detail::multiclass_log_loss(scores, y, hyper.class_weights));
  if (m.degenerate) {
    m.final_loss = m.loss_trace.back();
    return m;
  }

  std::vector<std::vector<std::size_t>> sorted(d, std::vector<std::size_t>(n));
  for (std::size_t f = 0; f < d; ++f) {
    std::iota(sorted[f].begin(), sorted[f].end(), 0);
    std::stable_sort(sorted[f].begin(), sorted[f].end(),
                     [&](std::size_t a, std::size_t b) { return X[a][f] < X[b][f]; });
  }

  detail::TreeBuilder builder(X, sorted, hyper);
  std::vector<detail::GradPair> gh(n);
  for (int r = 0; r < hyper.rounds; ++r) {
    std::vector<ClassProbs> probs(n);
    for (std::size_t i = 0; i < n; ++i) probs[i] = detail::softmax(scores[i]);

    std::array<RegressionTree, kNumLevels> round;
    for (std::size_t k = 0; k < kNumLevels; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        const double w = hyper.class_weights[detail::idx(y[i])];
        const double p = probs[i][k];
        gh[i].g = w * (p - (detail::idx(y[i]) == k ? 1.0 : 0.0));
        gh[i].h = w * std::max(p * (1.0 - p), 1e-16);
      }
      round[k] = builder.build(gh);
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < kNumLevels; ++k) scores[i][k] += hyper.learning_rate * round[k].eval(X[i]);
    m.rounds.push_back(std::move(round));
    m.loss_trace.push_back(detail::multiclass_log_loss(scores, y, hyper.class_weights));
  }
  m.final_loss = m.loss_trace.back();
  return m;
}

inline ClassProbs predict_gbdt(const GbdtModel& model, std::span<const double> x) {
  if (x.size() != model.dim)
    throw Error(ErrorKind::DimensionMismatch, fmt::format("expected {} features, got {}", model.dim, x.size()));
  return detail::softmax(model.raw_scores(x));
}

// ---------------------------------------------------------------------------
// Either model behind one handle

using MetaModel = std::variant<LogRegModel, GbdtModel>;

inline ClassProbs predict_meta(const MetaModel& model, std::span<const double> x) {
  return std::visit(
      [&](const auto& m) -> ClassProbs {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, LogRegModel>) return predict_logreg(m, x);
        else return predict_gbdt(m, x);
      },
      model);
}

inline std::string_view meta_kind(const MetaModel& model) {
  return std::holds_alternative<LogRegModel>(model) ? "logreg" : "gbdt";
}

template <class Model>
double training_accuracy(const Model& model, const FeatureRows& X, std::span<const DamageLevel> y) {
  if (X.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    ClassProbs p;
    if constexpr (std::is_same_v<Model, LogRegModel>) p = predict_logreg(model, X[i]);
    else if constexpr (std::is_same_v<Model, GbdtModel>) p = predict_gbdt(model, X[i]);
    else p = predict_meta(model, X[i]);
    hit += argmax_level(p) == y[i];
  }
  return static_cast<double>(hit) / static_cast<double>(X.size());
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr std::string_view kLogRegFormat = "ruinscore-logreg-v1";
inline constexpr std::string_view kGbdtFormat = "ruinscore-gbdt-v1";

namespace detail {

inline json weights_json(const std::array<double, kNumLevels>& a) { return json(a); }

inline std::array<double, kNumLevels> level_array(const json& j, const std::string& at) {
  if (!j.is_array() || j.size() != kNumLevels) schema(at);
  std::array<double, kNumLevels> out{};
  for (std::size_t k = 0; k < kNumLevels; ++k) out[k] = number_at(j[k], at);
  return out;
}

inline std::vector<double> number_vector(const json& j, std::size_t expect, const std::string& at) {
  if (!j.is_array() || j.size() != expect) schema(at);
  std::vector<double> out(expect);
  for (std::size_t i = 0; i < expect; ++i) out[i] = number_at(j[i], at);
  return out;
}

inline const json& field(const json& j, const char* key) {
  if (!j.contains(key)) schema(key);
  return j[key];
}

inline void check_header(const json& j, std::string_view format) {
  if (!j.is_object() || !j.contains("format") || !j["format"].is_string()) schema("format");
  if (j["format"].get<std::string>() != format) schema("format");
  if (!j.contains("feature_layout") || !j["feature_layout"].is_string() ||
      j["feature_layout"].get<std::string>() != kFeatureLayout)
    throw Error(ErrorKind::LayoutMismatch,
                j.contains("feature_layout") ? j["feature_layout"].dump() : std::string("missing"));
}

inline std::size_t dim_field(const json& j) {
  const auto& d = field(j, "dim");
  if (!d.is_number_unsigned() || d.get<std::size_t>() == 0) schema("dim");
  return d.get<std::size_t>();
}

}  // namespace detail

inline json to_json(const LogRegModel& m) {
  json rows = json::array();
  for (std::size_t k = 0; k < kNumLevels; ++k)
    rows.push_back(std::vector<double>(m.weights.begin() + static_cast<std::ptrdiff_t>(k * (m.dim + 1)),
                                       m.weights.begin() + static_cast<std::ptrdiff_t>((k + 1) * (m.dim + 1))));
  return json{
      {"format", kLogRegFormat},
      {"feature_layout", kFeatureLayout},
      {"dim", m.dim},
      {"weights", rows},
      {"mean", m.standardizer.mean},
      {"std", m.standardizer.std},
      {"hyper",
       {{"learning_rate", m.hyper.learning_rate},
        {"l2", m.hyper.l2},
        {"iterations", m.hyper.iterations},
        {"class_weights", detail::weights_json(m.hyper.class_weights)}}},
      {"training", {{"iterations", m.iterations}, {"final_loss", m.final_loss}}},
  };
}

namespace detail {

inline json tree_json(const RegressionTree& t) {
  json nodes = json::array();
  for (const auto& n : t.nodes) {
    if (n.feature < 0) nodes.push_back({{"value", n.value}});
    else nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
  }
  return nodes;
}

inline RegressionTree tree_from_json(const json& j, std::size_t dim) {
  if (!j.is_array()) schema("rounds");
  RegressionTree t;
  for (const auto& n : j) {
    TreeNode node;
    if (n.contains("value")) {
      node.value = number_at(n["value"], "rounds.value");
    } else {
      const auto& f = field(n, "feature");
      if (!f.is_number_integer() || f.get<long long>() < 0 || static_cast<std::size_t>(f.get<long long>()) >= dim)
        schema("rounds.feature");
      node.feature = f.get<int>();
      node.threshold = number_at(field(n, "threshold"), "rounds.threshold");
      const auto& l = field(n, "left");
      const auto& r = field(n, "right");
      if (!l.is_number_integer() || !r.is_number_integer()) schema("rounds.child");
      node.left = l.get<int>();
      node.right = r.get<int>();
      if (node.left <= 0 || node.right <= 0 || static_cast<std::size_t>(std::max(node.left, node.right)) >= j.size())
        schema("rounds.child");
    }
    t.nodes.push_back(node);
  }
  // Children always follow their parent, which rules out cycles.
  for (std::size_t i = 0; i < t.nodes.size(); ++i) {
    const auto& n = t.nodes[i];
    if (n.feature >= 0 && (static_cast<std::size_t>(n.left) <= i || static_cast<std::size_t>(n.right) <= i))
      schema("rounds.child");
  }
  return t;
}

}  // namespace detail

inline json to_json(const GbdtModel& m) {
  json rounds = json::array();
  for (const auto& round : m.rounds) {
    json r = json::array();
    for (const auto& t : round) r.push_back(detail::tree_json(t));
    rounds.push_back(std::move(r));
  }
  return json{
      {"format", kGbdtFormat},
      {"feature_layout", kFeatureLayout},
      {"dim", m.dim},
      {"learning_rate", m.learning_rate},
      {"base_scores", detail::weights_json(m.base_scores)},
      {"degenerate", m.degenerate},
      {"rounds", rounds},
      {"hyper",
       {{"rounds", m.hyper.rounds},
        {"learning_rate", m.hyper.learning_rate},
        {"max_depth", m.hyper.max_depth},
        {"min_leaf", m.hyper.min_leaf},
        {"lambda", m.hyper.lambda},
        {"class_weights", detail::weights_json(m.hyper.class_weights)}}},
      {"training", {{"rounds", m.rounds.size()}, {"final_loss", m.final_loss}}},
  };
}

inline LogRegModel logreg_from_json(const json& j) {
  detail::check_header(j, kLogRegFormat);
  LogRegModel m;
  m.dim = detail::dim_field(j);
  const auto& rows = detail::field(j, "weights");
  if (!rows.is_array() || rows.size() != kNumLevels) detail::schema("weights");
  for (const auto& row : rows) {
    auto r = detail::number_vector(row, m.dim + 1, "weights");
    m.weights.insert(m.weights.end(), r.begin(), r.end());
  }
  m.standardizer.mean = detail::number_vector(detail::field(j, "mean"), m.dim, "mean");
  m.standardizer.std = detail::number_vector(detail::field(j, "std"), m.dim, "std");
  for (double s : m.standardizer.std)
    if (!(s > 0.0)) detail::schema("std");
  if (j.contains("hyper")) {
    const auto& h = j["hyper"];
    if (h.contains("learning_rate")) m.hyper.learning_rate = detail::number_at(h["learning_rate"], "hyper");
    if (h.contains("l2")) m.hyper.l2 = detail::number_at(h["l2"], "hyper");
    if (h.contains("iterations")) m.hyper.iterations = static_cast<int>(detail::number_at(h["iterations"], "hyper"));
    if (h.contains("class_weights")) m.hyper.class_weights = detail::level_array(h["class_weights"], "hyper");
  }
  if (j.contains("training")) {
    const auto& t = j["training"];
    if (t.contains("iterations")) m.iterations = static_cast<int>(detail::number_at(t["iterations"], "training"));
    if (t.contains("final_loss")) m.final_loss = detail::number_at(t["final_loss"], "training");
  }
  return m;
}

inline GbdtModel gbdt_from_json(const json& j) {
  detail::check_header(j, kGbdtFormat);
  GbdtModel m;
  m.dim = detail::dim_field(j);
  m.learning_rate = detail::number_at(detail::field(j, "learning_rate"), "learning_rate");
  m.base_scores = detail::level_array(detail::field(j, "base_scores"), "base_scores");
  if (j.contains("degenerate") && j["degenerate"].is_boolean()) m.degenerate = j["degenerate"].get<bool>();
  const auto& rounds = detail::field(j, "rounds");
  if (!rounds.is_array()) detail::schema("rounds");
  for (const auto& r : rounds) {
    if (!r.is_array() || r.size() != kNumLevels) detail::schema("rounds");
    std::array<RegressionTree, kNumLevels> round;
    for (std::size_t k = 0; k < kNumLevels; ++k) round[k] = detail::tree_from_json(r[k], m.dim);
    m.rounds.push_back(std::move(round));
  }
  if (j.contains("hyper")) {
    const auto& h = j["hyper"];
    if (h.contains("rounds")) m.hyper.rounds = static_cast<int>(detail::number_at(h["rounds"], "hyper"));
    if (h.contains("learning_rate")) m.hyper.learning_rate = detail::number_at(h["learning_rate"], "hyper");
    if (h.contains("max_depth")) m.hyper.max_depth = static_cast<int>(detail::number_at(h["max_depth"], "hyper"));
    if (h.contains("min_leaf")) m.hyper.min_leaf = static_cast<int>(detail::number_at(h["min_leaf"], "hyper"));
    if (h.contains("lambda")) m.hyper.lambda = detail::number_at(h["lambda"], "hyper");
    if (h.contains("class_weights")) m.hyper.class_weights = detail::level_array(h["class_weights"], "hyper");
  }
  if (j.contains("training") && j["training"].contains("final_loss"))
    m.final_loss = detail::number_at(j["training"]["final_loss"], "training");
  return m;
}

inline std::string serialize_model(const MetaModel& model) {
  return std::visit([](const auto& m) { return to_json(m).dump(1) + "\n"; }, model);
}

inline MetaModel parse_model(std::string_view text) {
  const json j = detail::parse_json_text(text);
  if (!j.is_object() || !j.contains("format") || !j["format"].is_string()) detail::schema("format");
  const auto format = j["format"].get<std::string>();
  if (format == kLogRegFormat) return logreg_from_json(j);
  if (format == kGbdtFormat) return gbdt_from_json(j);
  detail::schema("format");
}

inline MetaModel load_model(const std::filesystem::path& path) { return parse_model(read_file(path)); }

}  // namespace ruinscore
