// covdistill: generate, train, evaluate, ablate, benchmark and verify.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "covdistill/ablation.hpp"
#include "covdistill/config_json.hpp"
#include "covdistill/dataset_io.hpp"
#include "covdistill/digest.hpp"
#include "covdistill/experiment.hpp"
#include "covdistill/verify.hpp"

namespace fs = std::filesystem;
using namespace covdistill;

namespace {

enum Exit { kOk = 0, kVerifyFailed = 1, kConfig = 2, kIo = 3, kDivergence = 4 };

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Io:
    case ErrorKind::Parse:
    case ErrorKind::Corruption:
      return kIo;
    case ErrorKind::Divergence:
    case ErrorKind::Numeric:
      return kDivergence;
    default:
      return kConfig;
  }
}

struct Common {
  std::optional<std::string> config_file;
  std::vector<std::string> overrides;
  std::optional<std::string> output_dir;

  ExperimentConfig load() const {
    auto cfg = ExperimentConfig::load(config_file ? std::optional<fs::path>(*config_file) : std::nullopt, overrides);
    if (output_dir) cfg.output_dir = *output_dir;
    return cfg;
  }
  std::vector<fs::path> inputs() const {
    return config_file ? std::vector<fs::path>{*config_file} : std::vector<fs::path>{};
  }
};

void log(const std::string& s) { std::cerr << s << std::endl; }

std::string f4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + p.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed: " + p.string());
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + p.string() + ": " + ec.message());
}

fs::path data_dir(const ExperimentConfig& cfg) { return fs::path(cfg.output_dir) / "data"; }
fs::path dataset_path(const ExperimentConfig& cfg, const std::string& part) { return data_dir(cfg) / (part + ".jsonl"); }

Manifest manifest(const std::string& command, const ExperimentConfig& cfg, const Common& common) {
  Manifest m;
  m.command = command;
  m.config = cfg.to_json();
  m.config_digest = hex64(cfg.digest());
  m.inputs = common.inputs();
  return m;
}

/// Reads a dataset and checks it was generated for this config.
Dataset load_checked(const fs::path& path, const ExperimentConfig& cfg, const Taxonomy& tax, bool require_generator) {
  if (!fs::exists(path)) throw Error(ErrorKind::Io, "dataset " + path.string() + " not found (run `covdistill gen` first)");
  Dataset ds = read_dataset(path);
  const auto want = dataset_header(cfg, tax);
  if (ds.header.taxonomy_digest != want.taxonomy_digest || ds.header.n_labels != want.n_labels) {
    throw Error(ErrorKind::Config, path.string() + ": taxonomy digest " + ds.header.taxonomy_digest +
                                       " does not match the configured taxonomy (" + want.taxonomy_digest + ")");
  }
  if (require_generator &&
      (ds.header.generator_digest != want.generator_digest || ds.header.teacher_digest != want.teacher_digest)) {
    throw Error(ErrorKind::Config, path.string() + ": generator/teacher digests differ from the configuration; "
                                   "regenerate with `covdistill gen`");
  }
  return ds;
}

const AblationVariant& find_variant(const ExperimentConfig& cfg, const std::string& name) {
  for (const auto& v : cfg.ablation.variants) {
    if (v.name == name) return v;
  }
  throw Error(ErrorKind::Config, "unknown variant '" + name + "'");
}

std::vector<SceneRecord> fraction_of(std::vector<SceneRecord> scenes, double fraction) {
  if (fraction < 1.0) {
    const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(scenes.size())));
    scenes.resize(std::max<std::size_t>(n, 2));
  }
  return scenes;
}

bool is_checkpoint(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + p.string());
  char magic[4] = {};
  in.read(magic, 4);
  return in.gcount() == 4 && std::string(magic, 4) == "SCTK";
}

// ---------------------------------------------------------------------------

int cmd_gen(const Common& common, FloatEncoding enc) {
  const auto cfg = common.load();
  const auto tax = cfg.taxonomy();
  log("generating " + std::to_string(cfg.generator.n_scenes) + " scenes (" + std::to_string(tax.label_count()) +
      " labels, profile " + tax.profile_name() + ")");
  const Corpus corpus = build_corpus(cfg, tax);
  const auto dir = data_dir(cfg);
  make_dir(dir);
  const auto header = dataset_header(cfg, tax);
  auto m = manifest("gen", cfg, common);
  for (const auto& name : corpus.split.names) {
    const auto path = dataset_path(cfg, name);
    write_dataset(path, header, corpus.part(name), enc);
    m.outputs.push_back(path);
    log("  " + name + ": " + std::to_string(corpus.split.part(name).size()) + " scenes -> " + path.string());
  }
  log("expected teacher exact-match rate " + f4(expected_exact_match(corpus.prevalence, corpus.teacher)));
  write_manifest(dir / "manifest.json", m);
  return kOk;
}

int cmd_train(const Common& common, const std::optional<std::string>& labels, const std::string& variant_name) {
  auto cfg = common.load();
  const auto tax = cfg.taxonomy();
  cfg.validate(tax);
  const auto& variant = find_variant(cfg, variant_name);
  const LabelSource source = labels ? parse_label_source(*labels) : cfg.train.label_source;
  const auto train_path = dataset_path(cfg, "surrogate_train");
  const auto val_path = dataset_path(cfg, "surrogate_val");
  const auto train = fraction_of(load_checked(train_path, cfg, tax, true).scenes, variant.train_fraction);
  const auto val = load_checked(val_path, cfg, tax, true).scenes;

  const fs::path out = fs::path(cfg.output_dir) / "train" / (variant.name + "-" + to_string(source));
  make_dir(out);
  auto m = manifest("train --variant " + variant.name + " --labels " + to_string(source), cfg, common);
  m.inputs.push_back(train_path);
  m.inputs.push_back(val_path);

  if (variant.logreg) {
    log("fitting logistic regression on " + std::to_string(train.size()) + " scenes (" + to_string(source) + " labels)");
    const auto model = train_logreg(train, source, cfg.ablation.logreg);
    log("  " + std::to_string(model.iterations) + " iterations, objective " + f4(model.final_objective) +
        ", gradient norm " + std::to_string(model.gradient_norm));
    const auto path = out / "logreg.json";
    save_logreg(model, path);
    m.outputs.push_back(path);
  } else {
    const auto mc = apply_overrides(cfg.model, variant.model_overrides);
    auto tc = apply_overrides(cfg.train, variant.train_overrides);
    tc.label_source = source;
    log("training " + variant.name + " (" + std::to_string(SurrogateModel::parameter_count(mc)) + " parameters) on " +
        std::to_string(train.size()) + " scenes, " + to_string(source) + " labels");
    auto result = train_surrogate(train, val, mc, tc, tax, [&](const EpochRecord& e) {
      log("  epoch " + std::to_string(e.epoch) + "  loss " + f4(e.train_loss) + "  val macro F1 " +
          f4(e.val_macro_f1) + "  val loss " + f4(e.val_loss) + "  (" + f4(e.wall_seconds) + " s)");
    });
    log("best epoch " + std::to_string(result.report.best_epoch) + ", val macro F1 " +
        f4(result.report.best_val_macro_f1));
    const auto ckpt = out / "model.ckpt";
    save_checkpoint(result.model, ckpt);
    write_text(out / "report.json", train_report_to_json(result.report) + "\n");
    m.outputs.push_back(ckpt);
    m.outputs.push_back(out / "report.json");
  }
  write_manifest(out / "manifest.json", m);
  return kOk;
}

int cmd_eval(const Common& common, const std::optional<std::string>& model_arg, const std::optional<std::string>& dataset_arg,
             const std::string& against_s, bool teacher_labels) {
  const auto cfg = common.load();
  const auto tax = cfg.taxonomy();
  const LabelSource against = parse_label_source(against_s);
  const fs::path dataset = dataset_arg ? fs::path(*dataset_arg) : dataset_path(cfg, "surrogate_test");
  const auto ds = load_checked(dataset, cfg, tax, false);
  auto m = manifest("eval --against " + against_s, cfg, common);
  m.inputs.push_back(dataset);

  MetricsReport report;
  std::string who;
  if (teacher_labels) {
    std::vector<LabelVector> preds;
    for (const auto& s : ds.scenes) preds.push_back(labels_of(s, LabelSource::Teacher));
    report = evaluate_labels(preds, ds.scenes, against, tax);
    who = "teacher";
  } else {
    const fs::path model_path =
        model_arg ? fs::path(*model_arg) : fs::path(cfg.output_dir) / "train" / "full-teacher" / "model.ckpt";
    if (!fs::exists(model_path)) throw Error(ErrorKind::Io, "model " + model_path.string() + " not found");
    m.inputs.push_back(model_path);
    if (is_checkpoint(model_path)) {
      const auto model = load_checkpoint(model_path);
      if (model.config().n_labels != tax.label_count()) {
        throw Error(ErrorKind::Config, "checkpoint predicts " + std::to_string(model.config().n_labels) +
                                           " labels, taxonomy has " + std::to_string(tax.label_count()));
      }
      report = evaluate(model, ds.scenes, against, tax, cfg.train.threshold);
    } else {
      report = evaluate(load_logreg(model_path), ds.scenes, against, tax, cfg.train.threshold);
    }
    who = model_path.parent_path().filename().string();
  }
  const fs::path out = fs::path(cfg.output_dir) / "eval" / (who + "_" + dataset.stem().string() + "_vs_" + against_s);
  make_dir(out);
  const std::string title = who + " on " + dataset.stem().string() + " vs " + against_s;
  const std::string table = render_table(report, tax, title);
  write_text(out / "metrics.txt", table);
  write_text(out / "metrics.json", report_to_json(report) + "\n");
  m.outputs.push_back(out / "metrics.txt");
  m.outputs.push_back(out / "metrics.json");
  write_manifest(out / "manifest.json", m);
  std::cout << table;
  return kOk;
}

int cmd_ablate(const Common& common) {
  const auto cfg = common.load();
  const auto tax = cfg.taxonomy();
  cfg.validate(tax);
  if (cfg.ablation.seeds.size() < 3) {
    log("warning: " + std::to_string(cfg.ablation.seeds.size()) + " seed(s); at least 3 are recommended for medians");
  }
  auto m = manifest("ablate", cfg, common);
  std::vector<std::vector<SceneRecord>> parts;
  for (const char* name : {"surrogate_train", "surrogate_val", "surrogate_test"}) {
    const auto p = dataset_path(cfg, name);
    parts.push_back(load_checked(p, cfg, tax, true).scenes);
    m.inputs.push_back(p);
  }
  const auto result = run_ablation(cfg.ablation, parts[0], parts[1], parts[2], cfg.model, cfg.train, tax,
                                   [](const AblationRun& r) {
                                     log("  " + r.variant + " seed " + std::to_string(r.seed) + ": " +
                                         (r.failed ? "FAILED " + r.error : "macro F1 " + f4(r.macro_f1)) + " (" +
                                         f4(r.wall_seconds) + " s)");
                                   });
  const fs::path out = fs::path(cfg.output_dir) / "ablation";
  make_dir(out);
  const auto text = render_report(result, ReportFormat::Text);
  write_text(out / "ablation.txt", text);
  write_text(out / "ablation.jsonl", render_report(result, ReportFormat::Structured));
  m.outputs.push_back(out / "ablation.txt");
  m.outputs.push_back(out / "ablation.jsonl");
  write_manifest(out / "manifest.json", m);
  std::cout << text;
  return kOk;
}

int cmd_bench(const Common& common, std::vector<std::string> models) {
  const auto cfg = common.load();
  const auto tax = cfg.taxonomy();
  auto m = manifest("bench", cfg, common);
  if (models.empty()) {
    const fs::path train_dir = fs::path(cfg.output_dir) / "train";
    models = {(train_dir / "full-teacher" / "model.ckpt").string(), (train_dir / "logreg-teacher" / "logreg.json").string()};
  }
  const auto test_path = dataset_path(cfg, "surrogate_test");
  auto scenes = load_checked(test_path, cfg, tax, false).scenes;
  m.inputs.push_back(test_path);
  if (scenes.size() > cfg.bench_scenes) scenes.resize(cfg.bench_scenes);

  std::vector<SurrogateModel> surrogates;
  std::vector<LogRegModel> logregs;
  std::vector<std::pair<std::string, bool>> order;  // name, is surrogate
  surrogates.reserve(models.size());
  logregs.reserve(models.size());
  for (const auto& p : models) {
    if (!fs::exists(p)) throw Error(ErrorKind::Io, "model " + p + " not found (run `covdistill train` first)");
    m.inputs.push_back(p);
    const std::string name = fs::path(p).parent_path().filename().string();
    if (is_checkpoint(p)) {
      surrogates.push_back(load_checkpoint(p));
      order.emplace_back(name, true);
    } else {
      logregs.push_back(load_logreg(p));
      order.emplace_back(name, false);
    }
  }
  std::vector<BenchModel> bm;
  std::size_t si = 0, li = 0;
  for (const auto& [name, sur] : order) {
    if (sur) {
      bm.push_back({name, &surrogates[si++], nullptr});
    } else {
      bm.push_back({name, nullptr, &logregs[li++]});
    }
  }
  log("benchmarking " + std::to_string(bm.size()) + " model(s) on " + std::to_string(scenes.size()) + " scenes");
  const auto report = bench_inference(bm, scenes, cfg.bench);
  const fs::path out = fs::path(cfg.output_dir) / "bench";
  make_dir(out);
  const auto text = render_report(report, ReportFormat::Text);
  write_text(out / "bench.txt", text);
  write_text(out / "bench.jsonl", render_report(report, ReportFormat::Structured));
  m.outputs.push_back(out / "bench.txt");
  m.outputs.push_back(out / "bench.jsonl");
  write_manifest(out / "manifest.json", m);
  std::cout << text;
  return kOk;
}

int cmd_verify(const Common& common, bool corrupt) {
  const auto cfg = common.load();
  debug::set_corrupt_backward(corrupt);
  const auto checks = run_verify(cfg);
  debug::set_corrupt_backward(false);
  const auto text = render_checks(checks);
  const fs::path out = fs::path(cfg.output_dir) / "verify";
  make_dir(out);
  write_text(out / "summary.txt", text);
  auto m = manifest(corrupt ? "verify --corrupt-backward" : "verify", cfg, common);
  m.outputs.push_back(out / "summary.txt");
  write_manifest(out / "manifest.json", m);
  std::cout << text;
  for (const auto& c : checks) {
    if (!c.passed) return kVerifyFailed;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coverage-label distillation pipeline: synthetic scenes, calibrated teacher, surrogate training"};
  app.require_subcommand(1);
  Common common;
  app.add_option("-c,--config", common.config_file, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--set", common.overrides, "Override a config value, e.g. --set train.epochs=10")
      ->type_name("KEY=VALUE");
  app.add_option("-o,--output", common.output_dir, "Run directory (overrides output_dir)");
  app.fallthrough();

  auto* gen = app.add_subcommand("gen", "Generate scenes, apply the teacher, write split datasets");
  std::string encoding = "hex";
  gen->add_option("--encoding", encoding, "Float encoding in dataset files")
      ->check(CLI::IsMember({"hex", "array"}))
      ->capture_default_str();

  auto* train = app.add_subcommand("train", "Train one variant on surrogate_train");
  std::optional<std::string> labels;
  std::string variant = "full";
  train->add_option("--labels", labels, "Training labels (default from config)")->check(CLI::IsMember({"teacher", "truth"}));
  train->add_option("--variant", variant, "Variant name from the ablation spec")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "Score a model (or the teacher labels) on a dataset");
  std::optional<std::string> model_path, dataset;
  std::string against = "truth";
  bool teacher_labels = false;
  eval->add_option("--model", model_path, "Checkpoint or logreg file (default: full-teacher checkpoint)");
  eval->add_option("--dataset", dataset, "Dataset file (default: surrogate_test)");
  eval->add_option("--against", against, "Reference labels")->check(CLI::IsMember({"truth", "teacher"}))->capture_default_str();
  eval->add_flag("--teacher-labels", teacher_labels, "Score the dataset's teacher labels instead of a model");

  auto* ablate = app.add_subcommand("ablate", "Run the ablation matrix over the configured seeds");

  auto* bench = app.add_subcommand("bench", "Measure inference latency");
  std::vector<std::string> bench_models;
  bench->add_option("--model", bench_models, "Checkpoint or logreg file (repeatable)");

  auto* verify = app.add_subcommand("verify", "Run the fast property suite");
  bool corrupt = false;
  verify->add_flag("--corrupt-backward", corrupt, "Test hook: flip a backward sign (negative control)")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_gen(common, encoding == "hex" ? FloatEncoding::Hex : FloatEncoding::Array);
    if (*train) return cmd_train(common, labels, variant);
    if (*eval) return cmd_eval(common, model_path, dataset, against, teacher_labels);
    if (*ablate) return cmd_ablate(common);
    if (*bench) return cmd_bench(common, bench_models);
    if (*verify) return cmd_verify(common, corrupt);
  } catch (const Error& e) {
    std::cerr << "covdistill: " << e.what() << std::endl;
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "covdistill: " << e.what() << std::endl;
    return kConfig;
  }
  return kOk;
}
