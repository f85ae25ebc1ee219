#pragma once

#include <array>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <utility>
#include <vector>

#include "ruinscore/dataset_io.hpp"
#include "ruinscore/error.hpp"
#include "ruinscore/types.hpp"

namespace ruinscore {

inline constexpr std::string_view kReportFormat = "ruinscore-report-v1";

// Rows are ground truth, columns are predictions.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumLevels>, kNumLevels> counts{};

  std::uint64_t& at(DamageLevel gt, DamageLevel pred) {
    return counts[static_cast<std::size_t>(ordinal(gt))][static_cast<std::size_t>(ordinal(pred))];
  }
  std::uint64_t at(DamageLevel gt, DamageLevel pred) const {
    return counts[static_cast<std::size_t>(ordinal(gt))][static_cast<std::size_t>(ordinal(pred))];
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts)
      for (auto v : row) t += v;
    return t;
  }
  std::uint64_t row_sum(std::size_t r) const {
    std::uint64_t t = 0;
    for (auto v : counts[r]) t += v;
    return t;
  }
  std::uint64_t col_sum(std::size_t c) const {
    std::uint64_t t = 0;
    for (const auto& row : counts) t += row[c];
    return t;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    for (std::size_t r = 0; r < kNumLevels; ++r)
      for (std::size_t c = 0; c < kNumLevels; ++c) counts[r][c] += o.counts[r][c];
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

using LevelPair = std::pair<DamageLevel, DamageLevel>;  // (ground truth, prediction)

inline ConfusionMatrix confusion_matrix(const std::vector<LevelPair>& pairs) {
  ConfusionMatrix m;
  for (const auto& [gt, pred] : pairs) ++m.at(gt, pred);
  return m;
}

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Some ratio was 0/0 and reported as 0.
  bool undefined = false;

  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

struct EvalReport {
  std::uint64_t n = 0;
  double exact_accuracy = 0.0;
  double plus_minus_one_accuracy = 0.0;
  std::array<ClassMetrics, kNumLevels> per_class{};
  ConfusionMatrix matrix;
  std::string config_tag;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline EvalReport compute_metrics(const ConfusionMatrix& m, std::string config_tag = {}) {
  const std::uint64_t total = m.total();
  if (total == 0) throw Error(ErrorKind::EmptyMatrix, "no scored pairs");

  EvalReport r;
  r.n = total;
  r.matrix = m;
  r.config_tag = std::move(config_tag);

  std::uint64_t diag = 0;
  std::uint64_t near = 0;
  for (std::size_t g = 0; g < kNumLevels; ++g) {
    for (std::size_t p = 0; p < kNumLevels; ++p) {
      const auto v = m.counts[g][p];
      if (g == p) diag += v;
      if ((g > p ? g - p : p - g) <= 1) near += v;
    }
  }
  r.exact_accuracy = static_cast<double>(diag) / static_cast<double>(total);
  r.plus_minus_one_accuracy = static_cast<double>(near) / static_cast<double>(total);

  for (std::size_t c = 0; c < kNumLevels; ++c) {
    auto& cm = r.per_class[c];
    const auto tp = static_cast<double>(m.counts[c][c]);
    const auto col = static_cast<double>(m.col_sum(c));
    const auto row = static_cast<double>(m.row_sum(c));
    if (col > 0) cm.precision = tp / col;
    else cm.undefined = true;
    if (row > 0) cm.recall = tp / row;
    else cm.undefined = true;
    if (cm.precision + cm.recall > 0) cm.f1 = 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall);
    else cm.undefined = true;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Rendering

// Table headings: Method / Model type / Accuracy (%) / ± 1 Accuracy, and the
// per-class F1 row. The config tag is `<mode>/<version>[/<meta kind>]`.
inline std::pair<std::string, std::string> describe_config_tag(std::string_view tag) {
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  while (pos <= tag.size()) {
    auto slash = tag.find('/', pos);
    if (slash == std::string_view::npos) slash = tag.size();
    parts.push_back(tag.substr(pos, slash - pos));
    pos = slash + 1;
  }
  const std::string_view mode = parts.size() > 0 ? parts[0] : "";
  const std::string version = parts.size() > 1 ? std::string(parts[1]) : "v1";
  const std::string_view kind = parts.size() > 2 ? parts[2] : "";

  const std::string rule = "Rule Fusion " + version;
  std::string meta = kind == "logreg" ? "Logistic Regression" : kind == "gbdt" ? "Gradient-Boosted Trees" : "";
  if (mode == "meta_only") return {"Meta-Model Decision", meta.empty() ? "Meta-Model" : meta};
  if (mode == "hybrid") return {"Hybrid Decision", meta.empty() ? rule : rule + "+" + meta};
  if (mode == "rule_only") return {"Final Decision", rule};
  return {"Decision", tag.empty() ? "unspecified" : std::string(tag)};
}

inline std::string render_text(const EvalReport& r) {
  const auto [method, model] = describe_config_tag(r.config_tag);
  std::string out;
  out += "Method | Model type | Accuracy (%) | \xC2\xB1 1 Accuracy\n";
  out += fmt::format("{} | {} | {:.2f} | {:.2f}\n", method, model, 100.0 * r.exact_accuracy,
                     100.0 * r.plus_minus_one_accuracy);
  out += "Metrics Zero Slight Medium Heavy\n";
  out += fmt::format("F1 Score {:.3f} {:.3f} {:.3f} {:.3f}\n", r.per_class[0].f1, r.per_class[1].f1,
                     r.per_class[2].f1, r.per_class[3].f1);
  std::string undefined;
  for (std::size_t c = 0; c < kNumLevels; ++c)
    if (r.per_class[c].undefined) undefined += fmt::format(" {}", name_of(static_cast<DamageLevel>(c)));
  if (!undefined.empty()) out += "undefined\xE2\x86\x92" "0:" + undefined + "\n";
  out += fmt::format("n = {}\n", r.n);
  return out;
}

inline json report_to_json(const EvalReport& r) {
  json per_class = json::array();
  for (std::size_t c = 0; c < kNumLevels; ++c) {
    const auto& m = r.per_class[c];
    per_class.push_back({{"level", name_of(static_cast<DamageLevel>(c))},
                         {"precision", m.precision},
                         {"recall", m.recall},
                         {"f1", m.f1},
                         {"undefined", m.undefined}});
  }
  return json{{"format", kReportFormat},
              {"config_tag", r.config_tag},
              {"n", r.n},
              {"exact_accuracy", r.exact_accuracy},
              {"plus_minus_one_accuracy", r.plus_minus_one_accuracy},
              {"per_class", per_class},
              {"matrix", r.matrix.counts}};
}

inline EvalReport report_from_json(const json& j) {
  if (!j.is_object() || !j.contains("format") || j["format"] != kReportFormat) detail::schema("format");
  try {
    EvalReport r;
    r.config_tag = j.at("config_tag").get<std::string>();
    r.n = j.at("n").get<std::uint64_t>();
    r.exact_accuracy = j.at("exact_accuracy").get<double>();
    r.plus_minus_one_accuracy = j.at("plus_minus_one_accuracy").get<double>();
    const auto& pc = j.at("per_class");
    if (!pc.is_array() || pc.size() != kNumLevels) detail::schema("per_class");
    for (std::size_t c = 0; c < kNumLevels; ++c) {
      r.per_class[c].precision = pc[c].at("precision").get<double>();
      r.per_class[c].recall = pc[c].at("recall").get<double>();
      r.per_class[c].f1 = pc[c].at("f1").get<double>();
      r.per_class[c].undefined = pc[c].at("undefined").get<bool>();
    }
    r.matrix.counts = j.at("matrix").get<decltype(r.matrix.counts)>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, e.what());
  }
}

enum class ReportFormat { Text, Json };

inline std::string render_report(const EvalReport& r, ReportFormat format) {
  if (format == ReportFormat::Json) return report_to_json(r).dump(2) + "\n";
  return render_text(r);
}

}  // namespace ruinscore
