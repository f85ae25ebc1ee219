// ruinscore command-line driver.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ruinscore/ruinscore.hpp"

namespace rs = ruinscore;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct LoadedConfig {
  rs::FusionConfig fusion;
  rs::ExternalBackendOptions backend;
};

// Fusion keys plus an optional {"backend": {"command": [...], "timeout_s": s}}.
LoadedConfig load_config(const std::string& cli_path) {
  LoadedConfig out;
  std::string path = cli_path;
  if (path.empty()) {
    if (const char* env = std::getenv("RUINSCORE_CONFIG"); env && *env) path = env;
  }
  if (path.empty()) return out;

  const auto root = rs::detail::parse_json_text(rs::read_file(path));
  out.fusion = rs::fusion_config_from_json(root, {"backend"});
  if (root.contains("backend")) {
    const auto& b = root["backend"];
    if (!b.is_object()) rs::detail::schema("backend");
    rs::detail::reject_unknown_keys(b, {"command", "timeout_s"}, "backend");
    if (b.contains("command")) {
      if (!b["command"].is_array()) rs::detail::schema("backend.command");
      for (const auto& a : b["command"]) {
        if (!a.is_string()) rs::detail::schema("backend.command");
        out.backend.command.push_back(a.get<std::string>());
      }
    }
    if (b.contains("timeout_s")) {
      out.backend.timeout_s = rs::detail::number_at(b["timeout_s"], "backend.timeout_s");
      if (!(out.backend.timeout_s > 0.0)) rs::detail::schema("backend.timeout_s");
    }
  }
  return out;
}

rs::BackendFactory make_factory(const std::string& kind, const LoadedConfig& cfg, const rs::DatasetManifest& m) {
  if (kind == "external") {
    if (cfg.backend.command.empty())
      throw rs::Error(rs::ErrorKind::BackendUnavailable, "backend.command is not configured");
    return [opts = cfg.backend] { return std::make_unique<rs::ExternalBackend>(opts); };
  }
  return [maps = m.class_maps] { return std::make_unique<rs::FileBackend>(maps); };
}

void report_error(const rs::Error& e) {
  rs::json j = {{"error", rs::to_string(e.kind())}, {"detail", e.detail()}};
  if (const auto* ie = dynamic_cast<const rs::ImageError*>(&e)) j["image_id"] = ie->image_id();
  std::cerr << j.dump() << "\n";
}

std::string format_score(double s) {
  if (std::floor(s) == s && std::abs(s) < 1e15) return fmt::format("{:.1f}", s);
  return fmt::format("{}", s);
}

// ---------------------------------------------------------------------------

struct AssessArgs {
  std::string manifest;
  std::string config;
  std::string backend = "file";
  std::string meta_model;
  std::string out;
  int jobs = 1;
  bool keep_going = false;
};

int cmd_assess(const AssessArgs& a) {
  const auto manifest = rs::load_manifest(a.manifest);
  const auto cfg = load_config(a.config);
  std::optional<rs::MetaModel> meta;
  if (!a.meta_model.empty()) meta = rs::load_model(a.meta_model);

  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!a.out.empty()) {
    file.open(a.out, std::ios::binary | std::ios::trunc);
    if (!file) throw rs::Error(rs::ErrorKind::IoFailure, a.out);
    out = &file;
  }

  rs::AssessOptions opts;
  opts.config = cfg.fusion;
  opts.meta = meta ? &*meta : nullptr;
  opts.jobs = a.jobs;
  opts.keep_going = a.keep_going;
  if (opts.config.decision_mode != rs::DecisionMode::RuleOnly && !opts.meta)
    throw rs::Error(rs::ErrorKind::MissingMeta, std::string(rs::name_of(opts.config.decision_mode)));

  std::size_t skipped = 0;
  rs::assess_stream(
      manifest, make_factory(a.backend, cfg, manifest), opts,
      [&](const rs::AssessmentRecord& r) { *out << rs::record_to_json(r).dump() << "\n"; },
      [&](const rs::ImageError& e) {
        ++skipped;
        std::cerr << e.to_json().dump() << "\n";
      });
  out->flush();
  if (!*out) throw rs::Error(rs::ErrorKind::IoFailure, a.out.empty() ? "stdout" : a.out);
  if (skipped > 0) std::cerr << "skipped " << skipped << " image(s)\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& assessments, const std::string& manifest_path, bool as_json) {
  const auto manifest = rs::load_manifest(manifest_path);
  const auto records = rs::parse_assessments(rs::read_file(assessments));
  const auto report = rs::evaluate_records(records, manifest);
  std::cout << rs::render_report(report, as_json ? rs::ReportFormat::Json : rs::ReportFormat::Text);
  return kExitOk;
}

struct TrainArgs {
  std::string manifest;
  std::string config;
  std::string backend = "file";
  std::string kind;
  std::string out;
  rs::TrainHyper hyper;
};

int cmd_train_meta(const TrainArgs& a) {
  const auto manifest = rs::load_manifest(a.manifest);
  const auto cfg = load_config(a.config);
  auto backend = make_factory(a.backend, cfg, manifest)();
  const auto ts = rs::build_training_set(manifest, *backend, cfg.fusion);
  if (ts.y.empty()) throw rs::Error(rs::ErrorKind::NoGroundTruth, "no manifest entry has a ground-truth level");
  if (std::all_of(ts.y.begin(), ts.y.end(), [&](rs::DamageLevel l) { return l == ts.y.front(); }))
    throw rs::Error(rs::ErrorKind::DegenerateData,
                    fmt::format("all {} labels are {}", ts.y.size(), rs::name_of(ts.y.front())));

  rs::MetaModel model;
  double loss = 0.0;
  if (a.kind == "logreg") {
    auto m = rs::train_logreg(ts.X, ts.y, a.hyper.logreg);
    loss = m.final_loss;
    model = std::move(m);
  } else {
    auto m = rs::train_gbdt(ts.X, ts.y, a.hyper.gbdt);
    loss = m.final_loss;
    model = std::move(m);
  }
  rs::write_file(a.out, rs::serialize_model(model));
  const double acc = rs::training_accuracy(model, ts.X, ts.y);
  std::cout << fmt::format("kind={} n={} training_accuracy={:.4f} final_loss={:.6f}\n", a.kind, ts.y.size(), acc, loss);
  return kExitOk;
}

struct FuseArgs {
  std::string detections;
  std::string components;
  std::string scene;
  std::string version;
  std::string config;
};

int cmd_fuse(const FuseArgs& a) {
  auto cfg = load_config(a.config);
  if (!a.version.empty()) cfg.fusion.version = *rs::enum_from_name<rs::FusionVersion>(a.version);
  const rs::ClassMaps maps;

  rs::CascadeOutput out;
  out.image_id = a.detections;
  out.scene = a.scene.empty() ? rs::SceneLabel{rs::SceneClass::Outside, 0.0}
                              : rs::SceneLabel{*rs::enum_from_name<rs::SceneClass>(a.scene), 1.0};
  out.damages = rs::load_detections<rs::DamageClass>(a.detections, maps.damage);
  if (!a.components.empty()) out.components = rs::load_detections<rs::ComponentClass>(a.components, maps.component);

  const auto r = rs::rule_fusion(out, cfg.fusion);
  std::string filters;
  for (const auto& f : r.applied_filters) filters += (filters.empty() ? "" : ",") + f;
  const std::string head = r.rebar_forced ? fmt::format("{} (rebar_forced) S={}", rs::name_of(r.level), format_score(r.score))
                                          : fmt::format("{} (S={})", rs::name_of(r.level), format_score(r.score));
  std::cout << fmt::format("{} crack={} spall={} rebar={}/{} filters={}\n", head, r.counts.n_crack, r.counts.n_spall,
                           r.counts.n_rebar_valid, r.counts.n_rebar_raw, filters);
  return kExitOk;
}

struct SynthArgs {
  rs::SynthSpec spec;
  std::string out;
  std::vector<double> priors;
};

int cmd_gen_synthetic(SynthArgs a) {
  if (!a.priors.empty()) {
    if (a.priors.size() != rs::kNumLevels) throw rs::Error(rs::ErrorKind::InvalidConfig, "--priors needs 4 values");
    std::copy(a.priors.begin(), a.priors.end(), a.spec.level_priors.begin());
  }
  const auto m = rs::gen_synthetic(a.spec, a.out);
  std::cout << fmt::format("wrote {} images to {}\n", m.images.size(), a.out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Earthquake damage-level fusion engine"};
  app.require_subcommand(1);

  AssessArgs assess;
  auto* sc_assess = app.add_subcommand("assess", "Assess every image in a manifest (JSONL on stdout)");
  sc_assess->add_option("--manifest", assess.manifest, "Dataset manifest")->required();
  sc_assess->add_option("--config", assess.config, "Fusion config JSON (fallback: $RUINSCORE_CONFIG)");
  sc_assess->add_option("--backend", assess.backend, "Evidence backend")->check(CLI::IsMember({"file", "external"}));
  sc_assess->add_option("--meta-model", assess.meta_model, "Trained meta-model file");
  sc_assess->add_option("--out", assess.out, "Write records here instead of stdout");
  sc_assess->add_option("--jobs", assess.jobs, "Worker count")->check(CLI::PositiveNumber);
  sc_assess->add_flag("--keep-going", assess.keep_going, "Skip failing images instead of stopping");

  std::string ev_assessments, ev_manifest;
  bool ev_json = false;
  auto* sc_eval = app.add_subcommand("evaluate", "Score assessments against manifest ground truth");
  sc_eval->add_option("--assessments", ev_assessments, "JSONL produced by assess")->required();
  sc_eval->add_option("--manifest", ev_manifest, "Dataset manifest")->required();
  sc_eval->add_flag("--json", ev_json, "Emit the report as JSON");

  TrainArgs train;
  auto* sc_train = app.add_subcommand("train-meta", "Train a meta-model on fused features");
  sc_train->add_option("--manifest", train.manifest, "Dataset manifest")->required();
  sc_train->add_option("--config", train.config, "Fusion config JSON (fallback: $RUINSCORE_CONFIG)");
  sc_train->add_option("--backend", train.backend, "Evidence backend")->check(CLI::IsMember({"file", "external"}));
  sc_train->add_option("--kind", train.kind, "Model kind")->required()->check(CLI::IsMember({"logreg", "gbdt"}));
  sc_train->add_option("--out", train.out, "Model output path")->required();
  sc_train->add_option("--lr", train.hyper.logreg.learning_rate, "logreg learning rate");
  sc_train->add_option("--l2", train.hyper.logreg.l2, "logreg L2 penalty");
  sc_train->add_option("--iterations", train.hyper.logreg.iterations, "logreg gradient steps");
  sc_train->add_option("--rounds", train.hyper.gbdt.rounds, "gbdt boosting rounds");
  sc_train->add_option("--gbdt-lr", train.hyper.gbdt.learning_rate, "gbdt shrinkage");
  sc_train->add_option("--max-depth", train.hyper.gbdt.max_depth, "gbdt tree depth");
  sc_train->add_option("--min-leaf", train.hyper.gbdt.min_leaf, "gbdt minimum samples per leaf");
  sc_train->add_option("--lambda", train.hyper.gbdt.lambda, "gbdt leaf L2 penalty");
  sc_train->add_option("--seed", train.hyper.seed, "Recorded seed");

  FuseArgs fuse;
  auto* sc_fuse = app.add_subcommand("fuse", "Explain the rule decision for one detection file");
  sc_fuse->add_option("--detections", fuse.detections, "Damage detection file")->required();
  sc_fuse->add_option("--components", fuse.components, "Component detection file");
  sc_fuse->add_option("--scene", fuse.scene, "Scene label")->check(CLI::IsMember({"inside", "outside"}));
  sc_fuse->add_option("--version", fuse.version, "Rule version")->check(CLI::IsMember({"v1", "v2"}));
  sc_fuse->add_option("--config", fuse.config, "Fusion config JSON (fallback: $RUINSCORE_CONFIG)");

  SynthArgs synth;
  auto* sc_synth = app.add_subcommand("gen-synthetic", "Write a deterministic synthetic dataset");
  sc_synth->add_option("--seed", synth.spec.seed, "Generator seed")->required();
  sc_synth->add_option("--n", synth.spec.n_images, "Image count")->required();
  sc_synth->add_option("--out", synth.out, "Output directory")->required();
  sc_synth->add_option("--fp-rate", synth.spec.noise.false_positive_rate, "Per-image false-positive rate");
  sc_synth->add_option("--jitter-sd", synth.spec.noise.confidence_jitter_sd, "Confidence jitter sd");
  sc_synth->add_option("--drop-rate", synth.spec.noise.drop_rate, "Per-detection drop rate");
  sc_synth->add_option("--priors", synth.priors, "Level priors zero,slight,medium,heavy")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*sc_assess) return cmd_assess(assess);
    if (*sc_eval) return cmd_evaluate(ev_assessments, ev_manifest, ev_json);
    if (*sc_train) return cmd_train_meta(train);
    if (*sc_fuse) return cmd_fuse(fuse);
    if (*sc_synth) return cmd_gen_synthetic(synth);
  } catch (const rs::Error& e) {
    report_error(e);
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << rs::json{{"error", "Internal"}, {"detail", e.what()}}.dump() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
