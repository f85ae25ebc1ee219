#pragma once

#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <variant>
#include <vector>

#include "ruinscore/dataset_io.hpp"
#include "ruinscore/detector_backend.hpp"
#include "ruinscore/error.hpp"
#include "ruinscore/evaluate.hpp"
#include "ruinscore/fusion.hpp"
#include "ruinscore/meta.hpp"
#include "ruinscore/types.hpp"

namespace ruinscore {

// An error raised while processing one image.
class ImageError : public Error {
 public:
  ImageError(std::string image_id, ErrorKind kind, std::string detail)
      : Error(kind, std::move(detail)), image_id_(std::move(image_id)) {}

  const std::string& image_id() const noexcept { return image_id_; }

  json to_json() const { return {{"error", to_string(kind())}, {"detail", detail()}, {"image_id", image_id_}}; }

 private:
  std::string image_id_;
};

struct AssessmentRecord {
  std::string image_id;
  SceneLabel scene;
  RuleDecision rule;
  std::optional<ClassProbs> meta_probs;
  DamageLevel final_level = DamageLevel::Zero;
  std::string config_tag;
};

inline std::string make_config_tag(const FusionConfig& config, const MetaModel* meta) {
  std::string tag = fmt::format("{}/{}", name_of(config.decision_mode), name_of(config.version));
  if (meta) tag += fmt::format("/{}", meta_kind(*meta));
  return tag;
}

inline AssessmentRecord assess_image(const ImageEntry& entry, Backend& backend, const FusionConfig& config,
                                     const MetaModel* meta) {
  const CascadeOutput out = run_cascade(entry, backend, config);
  AssessmentRecord rec;
  rec.image_id = entry.id;
  rec.scene = out.scene;
  rec.rule = rule_fusion(out, config);
  if (meta) rec.meta_probs = predict_meta(*meta, extract_features(out, rec.rule, config));
  rec.final_level = final_decision(rec.rule, rec.meta_probs, config);
  rec.config_tag = make_config_tag(config, meta);
  return rec;
}

// ---------------------------------------------------------------------------
// JSONL records

inline json record_to_json(const AssessmentRecord& r) {
  json j = {
      {"image_id", r.image_id},
      {"scene", {{"class", name_of(r.scene.cls)}, {"confidence", r.scene.confidence}}},
      {"counts",
       {{"crack", r.rule.counts.n_crack},
        {"spall", r.rule.counts.n_spall},
        {"rebar_raw", r.rule.counts.n_rebar_raw},
        {"rebar_valid", r.rule.counts.n_rebar_valid}}},
      {"rule",
       {{"level", name_of(r.rule.level)},
        {"score", r.rule.score},
        {"rebar_forced", r.rule.rebar_forced},
        {"filters", r.rule.applied_filters}}},
      {"final", name_of(r.final_level)},
      {"config_tag", r.config_tag},
  };
  if (r.meta_probs) j["meta"] = {{"probs", *r.meta_probs}, {"level", name_of(argmax_level(*r.meta_probs))}};
  return j;
}

inline AssessmentRecord record_from_json(const json& j) {
  auto level = [](const json& v, const char* at) {
    auto l = v.is_string() ? enum_from_name<DamageLevel>(v.get<std::string>()) : std::nullopt;
    if (!l) detail::schema(at);
    return *l;
  };
  try {
    AssessmentRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    const auto& scene = j.at("scene");
    auto cls = enum_from_name<SceneClass>(scene.at("class").get<std::string>());
    if (!cls) detail::schema("scene.class");
    r.scene = {*cls, scene.at("confidence").get<double>()};
    const auto& c = j.at("counts");
    r.rule.counts = {c.at("crack").get<int>(), c.at("spall").get<int>(), c.at("rebar_raw").get<int>(),
                     c.at("rebar_valid").get<int>()};
    const auto& rule = j.at("rule");
    r.rule.level = level(rule.at("level"), "rule.level");
    r.rule.score = rule.at("score").get<double>();
    r.rule.rebar_forced = rule.at("rebar_forced").get<bool>();
    r.rule.applied_filters = rule.at("filters").get<std::vector<std::string>>();
    r.final_level = level(j.at("final"), "final");
    r.config_tag = j.value("config_tag", std::string{});
    if (j.contains("meta")) r.meta_probs = j["meta"].at("probs").get<ClassProbs>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, e.what());
  }
}

inline std::vector<AssessmentRecord> parse_assessments(std::string_view text) {
  std::vector<AssessmentRecord> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorKind::SchemaViolation, fmt::format("line {}", line_no));
    out.push_back(record_from_json(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Streaming assessment

using BackendFactory = std::function<std::unique_ptr<Backend>()>;

struct AssessOptions {
  FusionConfig config;
  const MetaModel* meta = nullptr;
  int jobs = 1;
  bool keep_going = false;
};

using RecordSink = std::function<void(const AssessmentRecord&)>;
using FailureSink = std::function<void(const ImageError&)>;

namespace detail {

using Outcome = std::variant<AssessmentRecord, ImageError>;

inline Outcome assess_guarded(const ImageEntry& entry, Backend& backend, const AssessOptions& opts) {
  try {
    return assess_image(entry, backend, opts.config, opts.meta);
  } catch (const Error& e) {
    return ImageError(entry.id, e.kind(), e.detail());
  } catch (const std::exception& e) {
    return ImageError(entry.id, ErrorKind::IoFailure, e.what());
  }
}

}  // namespace detail

// Records reach `on_record` in manifest order whatever the worker count. The
// first failure is rethrown (after every earlier record was emitted) unless
// `keep_going` is set, in which case it goes to `on_failure` and the image is
// skipped. Each worker owns one backend from `make_backend`.
inline void assess_stream(const DatasetManifest& manifest, const BackendFactory& make_backend,
                          const AssessOptions& opts, const RecordSink& on_record, const FailureSink& on_failure = {}) {
  const auto& images = manifest.images;
  const std::size_t n = images.size();
  const std::size_t jobs = static_cast<std::size_t>(std::max(1, opts.jobs));

  auto deliver = [&](detail::Outcome&& o) {
    if (auto* rec = std::get_if<AssessmentRecord>(&o)) return on_record(*rec);
    auto& err = std::get<ImageError>(o);
    if (!opts.keep_going) throw err;
    if (on_failure) on_failure(err);
  };

  if (jobs == 1 || n <= 1) {
    auto backend = make_backend();
    for (const auto& entry : images) deliver(detail::assess_guarded(entry, *backend, opts));
    return;
  }

  const std::size_t workers = std::min(jobs, n);
  std::vector<std::unique_ptr<Backend>> backends;
  for (std::size_t w = 0; w < workers; ++w) backends.push_back(make_backend());

  // Workers never run more than `window` images ahead of the writer.
  const std::size_t window = workers * 4;
  std::mutex mu;
  std::condition_variable cv;
  std::map<std::size_t, detail::Outcome> done;
  std::size_t next = 0;
  std::size_t written = 0;
  bool stop = false;

  auto work = [&](Backend& backend) {
    for (;;) {
      std::size_t i;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return stop || next >= n || next < written + window; });
        if (stop || next >= n) return;
        i = next++;
      }
      auto outcome = detail::assess_guarded(images[i], backend, opts);
      {
        std::lock_guard lock(mu);
        done.emplace(i, std::move(outcome));
      }
      cv.notify_all();
    }
  };

  std::vector<std::thread> threads;
  for (auto& b : backends) threads.emplace_back(work, std::ref(*b));
  auto halt = [&] {
    {
      std::lock_guard lock(mu);
      stop = true;
    }
    cv.notify_all();
    for (auto& t : threads) t.join();
  };

  try {
    while (written < n) {
      detail::Outcome outcome;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return done.count(written) > 0; });
        auto node = done.extract(written);
        outcome = std::move(node.mapped());
      }
      deliver(std::move(outcome));
      {
        std::lock_guard lock(mu);
        ++written;
      }
      cv.notify_all();
    }
  } catch (...) {
    halt();
    throw;
  }
  halt();
}

inline std::vector<AssessmentRecord> assess_all(const DatasetManifest& manifest, const BackendFactory& make_backend,
                                                const AssessOptions& opts) {
  std::vector<AssessmentRecord> out;
  assess_stream(manifest, make_backend, opts, [&](const AssessmentRecord& r) { out.push_back(r); });
  return out;
}

// ---------------------------------------------------------------------------
// Scoring and training sets

inline std::vector<LevelPair> pair_with_ground_truth(const std::vector<AssessmentRecord>& records,
                                                     const DatasetManifest& manifest) {
  std::unordered_map<std::string, DamageLevel> truth;
  for (const auto& e : manifest.images)
    if (e.ground_truth_level) truth.emplace(e.id, *e.ground_truth_level);
  std::vector<LevelPair> pairs;
  for (const auto& r : records) {
    auto it = truth.find(r.image_id);
    if (it != truth.end()) pairs.emplace_back(it->second, r.final_level);
  }
  return pairs;
}

inline EvalReport evaluate_records(const std::vector<AssessmentRecord>& records, const DatasetManifest& manifest) {
  const auto pairs = pair_with_ground_truth(records, manifest);
  if (pairs.empty()) throw Error(ErrorKind::NoGroundTruth, "no assessment has a ground-truth level");
  return compute_metrics(confusion_matrix(pairs), records.empty() ? std::string{} : records.front().config_tag);
}

struct TrainingSet {
  FeatureRows X;
  std::vector<DamageLevel> y;
};

// Features for every manifest entry carrying a ground-truth level.
inline TrainingSet build_training_set(const DatasetManifest& manifest, Backend& backend, const FusionConfig& config) {
  TrainingSet ts;
  for (const auto& entry : manifest.images) {
    if (!entry.ground_truth_level) continue;
    try {
      const auto out = run_cascade(entry, backend, config);
      const auto rule = rule_fusion(out, config);
      ts.X.push_back(to_row(extract_features(out, rule, config)));
      ts.y.push_back(*entry.ground_truth_level);
    } catch (const Error& e) {
      throw ImageError(entry.id, e.kind(), e.detail());
    }
  }
  return ts;
}

}  // namespace ruinscore
