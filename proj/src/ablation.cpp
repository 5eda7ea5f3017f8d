#include "covdistill/ablation.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <omp.h>

#include "covdistill/config_json.hpp"
#include "covdistill/digest.hpp"

namespace covdistill {

using nlohmann::json;

AblationSpec AblationSpec::defaults() {
  AblationSpec s;
  s.variants = {
      {"full", json::object(), json::object(), 1.0, false},
      {"no_cross_attention", json{{"use_attention", false}}, json::object(), 1.0, false},
      {"no_dropout", json{{"dropout_p", 0.0}}, json::object(), 1.0, false},
      {"two_residual_blocks", json{{"n_residual_blocks", 2}}, json::object(), 1.0, false},
      {"reduced_train", json::object(), json::object(), 1.0 / 8.0, false},
      {"logreg", json::object(), json::object(), 1.0, true},
  };
  return s;
}

void AblationSpec::validate() const {
  if (variants.empty()) throw Error(ErrorKind::Validation, "ablation: variant list is empty");
  if (seeds.empty()) throw Error(ErrorKind::Validation, "ablation: seed list is empty");
  std::set<std::string> names;
  for (const auto& v : variants) {
    if (v.name.empty()) throw Error(ErrorKind::Validation, "ablation: variant with empty name");
    if (!names.insert(v.name).second) throw Error(ErrorKind::Validation, "ablation: duplicate variant '" + v.name + "'");
    if (!(v.train_fraction > 0.0 && v.train_fraction <= 1.0)) {
      throw Error(ErrorKind::Validation, "ablation: variant '" + v.name + "' train_fraction must be in (0, 1]");
    }
  }
  if (!names.count(baseline)) throw Error(ErrorKind::Validation, "ablation: baseline '" + baseline + "' is not a variant");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw Error(ErrorKind::Validation, "ablation: duplicate seeds");
  }
}

void to_json(json& j, const AblationVariant& v) {
  j = json{{"name", v.name},
           {"model", v.model_overrides},
           {"train", v.train_overrides},
           {"train_fraction", v.train_fraction},
           {"logreg", v.logreg}};
}

void from_json(const json& j, AblationVariant& v) {
  for (const auto& [k, val] : j.items()) {
    if (k != "name" && k != "model" && k != "train" && k != "train_fraction" && k != "logreg") {
      throw Error(ErrorKind::Config, "unknown ablation variant key '" + k + "'");
    }
  }
  v.name = j.at("name").get<std::string>();
  v.model_overrides = j.value("model", json::object());
  v.train_overrides = j.value("train", json::object());
  v.train_fraction = j.value("train_fraction", 1.0);
  v.logreg = j.value("logreg", false);
}

void to_json(json& j, const AblationSpec& s) {
  j = json{{"variants", s.variants},
           {"seeds", s.seeds},
           {"baseline", s.baseline},
           {"logreg_l2", s.logreg.l2_strength},
           {"logreg_max_iterations", s.logreg.max_iterations},
           {"logreg_tolerance", s.logreg.tolerance},
           {"evaluate_against", to_string(s.evaluate_against)}};
}

void from_json(const json& j, AblationSpec& s) {
  static const std::set<std::string> known{"variants",      "seeds", "baseline", "logreg_l2", "logreg_max_iterations",
                                           "logreg_tolerance", "evaluate_against"};
  for (const auto& [k, val] : j.items()) {
    if (!known.count(k)) throw Error(ErrorKind::Config, "unknown ablation key '" + k + "'");
  }
  try {
    if (j.contains("variants")) s.variants = j.at("variants").get<std::vector<AblationVariant>>();
    if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    s.baseline = j.value("baseline", s.baseline);
    s.logreg.l2_strength = j.value("logreg_l2", s.logreg.l2_strength);
    s.logreg.max_iterations = j.value("logreg_max_iterations", s.logreg.max_iterations);
    s.logreg.tolerance = j.value("logreg_tolerance", s.logreg.tolerance);
    if (j.contains("evaluate_against")) s.evaluate_against = parse_label_source(j.at("evaluate_against"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("ablation: ") + e.what());
  }
}

const AblationRow& AblationResult::row(const std::string& variant) const {
  for (const auto& r : rows) {
    if (r.variant == variant) return r;
  }
  throw Error(ErrorKind::Lookup, "no ablation row '" + variant + "'");
}

double median(std::vector<double> values) {
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

SurrogateConfig apply_overrides(const SurrogateConfig& base, const json& overrides) {
  json j = base;
  j.merge_patch(overrides);
  auto c = j.get<SurrogateConfig>();
  c.validate();
  return c;
}

TrainConfig apply_overrides(const TrainConfig& base, const json& overrides) {
  json j = base;
  j.merge_patch(overrides);
  auto c = j.get<TrainConfig>();
  c.validate();
  return c;
}

std::uint64_t scenes_digest(const std::vector<SceneRecord>& scenes) {
  Fnv1a h;
  for (const auto& s : scenes) {
    h.update(s.scene_id);
    h.update(s.mask.data(), s.mask.size());
    h.update(s.y_true.data(), s.y_true.size());
    if (s.y_teacher) h.update(s.y_teacher->data(), s.y_teacher->size());
    h.update(s.embeddings.data(), s.embeddings.size() * sizeof(double));
  }
  return h.value();
}

std::vector<AblationRow> summarize_runs(const std::vector<AblationRun>& runs, const std::vector<std::string>& order,
                                        const std::string& baseline) {
  std::vector<AblationRow> rows;
  for (const auto& name : order) {
    AblationRow row;
    row.variant = name;
    for (const auto& r : runs) {
      if (r.variant != name) continue;
      if (r.failed) {
        ++row.failed;
      } else {
        row.per_seed.push_back(r.macro_f1);
      }
    }
    row.median = median(row.per_seed);
    rows.push_back(std::move(row));
  }
  double base = std::nan("");
  for (const auto& r : rows) {
    if (r.variant == baseline) base = r.median;
  }
  for (auto& r : rows) r.delta = r.median - base;
  return rows;
}

namespace {

std::vector<GroupScore> group_scores(const MetricsReport& m) {
  std::vector<GroupScore> out;
  for (const auto& g : m.per_group) out.push_back({group_roman(g.group), g.prf.f1});
  return out;
}

std::vector<SceneRecord> prefix(const std::vector<SceneRecord>& scenes, double fraction) {
  if (fraction >= 1.0) return scenes;
  const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(scenes.size())));
  return std::vector<SceneRecord>(scenes.begin(), scenes.begin() + static_cast<std::ptrdiff_t>(std::max<std::size_t>(n, 2)));
}

}  // namespace

AblationResult run_ablation(const AblationSpec& spec, const std::vector<SceneRecord>& train,
                            const std::vector<SceneRecord>& val, const std::vector<SceneRecord>& test,
                            const SurrogateConfig& base_model, const TrainConfig& base_train, const Taxonomy& tax,
                            const RunCallback& on_run) {
  spec.validate();
  AblationResult result;
  result.baseline = spec.baseline;
  result.evaluated_against = to_string(spec.evaluate_against);
  {
    json sj = spec;
    sj["base_model"] = base_model;
    sj["base_train"] = base_train;
    result.spec_digest = hex64(json_digest(sj));
  }
  {
    Fnv1a h;
    for (const auto* part : {&train, &val, &test}) {
      const auto d = scenes_digest(*part);
      h.update(&d, sizeof d);
    }
    result.data_digest = hex64(h.value());
  }

  std::optional<LogRegModel> logreg_cache;
  std::optional<AblationRun> logreg_run;
  std::vector<std::string> order;
  for (const auto& v : spec.variants) order.push_back(v.name);

  for (const auto& variant : spec.variants) {
    for (std::uint64_t seed : spec.seeds) {
      AblationRun run;
      run.variant = variant.name;
      run.seed = seed;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const auto data = prefix(train, variant.train_fraction);
        if (variant.logreg) {
          json cj{{"l2_strength", spec.logreg.l2_strength},
                  {"max_iterations", spec.logreg.max_iterations},
                  {"tolerance", spec.logreg.tolerance},
                  {"label_source", to_string(base_train.label_source)},
                  {"train_fraction", variant.train_fraction}};
          run.config_digest = hex64(json_digest(cj));
          // Convex and seed-free: one fit serves every seed.
          if (!logreg_cache) logreg_cache = train_logreg(data, base_train.label_source, spec.logreg);
          const auto m = evaluate(*logreg_cache, test, spec.evaluate_against, tax, base_train.threshold);
          run.macro_f1 = m.macro.f1;
          run.per_group = group_scores(m);
          run.parameter_count = logreg_cache->parameter_count();
          run.best_epoch = logreg_cache->iterations;
        } else {
          SurrogateConfig mc = apply_overrides(base_model, variant.model_overrides);
          TrainConfig tc = apply_overrides(base_train, variant.train_overrides);
          if (!variant.model_overrides.contains("init_seed")) mc.init_seed = Rng::derive(seed, "init", 0);
          if (!variant.train_overrides.contains("shuffle_seed")) tc.shuffle_seed = Rng::derive(seed, "shuffle", 0);
          json cj{{"model", mc}, {"train", tc}, {"train_fraction", variant.train_fraction}};
          run.config_digest = hex64(json_digest(cj));
          auto trained = train_surrogate(data, val, mc, tc, tax);
          const auto m = evaluate(trained.model, test, spec.evaluate_against, tax, tc.threshold);
          run.macro_f1 = m.macro.f1;
          run.per_group = group_scores(m);
          run.parameter_count = trained.model.parameter_count();
          run.best_epoch = trained.report.best_epoch;
        }
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Divergence && e.kind() != ErrorKind::Numeric) throw;
        run.failed = true;
        run.error = e.what();
      }
      run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (on_run) on_run(run);
      result.runs.push_back(std::move(run));
    }
  }
  result.rows = summarize_runs(result.runs, order, spec.baseline);
  return result;
}

// ---------------------------------------------------------------------------

const BenchEntry& BenchReport::entry(const std::string& model) const {
  for (const auto& e : entries) {
    if (e.model == model) return e;
  }
  throw Error(ErrorKind::Lookup, "no bench entry '" + model + "'");
}

std::string hardware_description() {
  std::string cpu = "unknown CPU";
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(colon + 2);
      break;
    }
  }
  return cpu + ", " + std::to_string(std::thread::hardware_concurrency()) + " hardware threads, " +
         std::to_string(omp_get_max_threads()) + " OpenMP threads";
}

long peak_rss_kb() {
  rusage ru{};
  getrusage(RUSAGE_SELF, &ru);
  return ru.ru_maxrss;
}

namespace {

template <typename F>
double median_seconds(std::size_t reps, F&& body) {
  body();  // warm-up
  std::vector<double> t;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    body();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return median(t);
}

}  // namespace

BenchReport bench_inference(const std::vector<BenchModel>& models, const std::vector<SceneRecord>& scenes,
                            const BenchOptions& opts) {
  if (scenes.size() < 100) throw Error(ErrorKind::Config, "bench needs at least 100 scenes");
  if (opts.reps < 5) throw Error(ErrorKind::Config, "bench needs at least 5 repetitions");
  if (opts.batch_size == 0) throw Error(ErrorKind::Config, "bench batch_size must be positive");
  BenchReport report;
  report.n_scenes = scenes.size();
  report.reps = opts.reps;
  report.hardware = hardware_description();
  const double n = static_cast<double>(scenes.size());

  for (const auto& bm : models) {
    if ((bm.surrogate == nullptr) == (bm.logreg == nullptr)) {
      throw Error(ErrorKind::Config, "bench model '" + bm.name + "' needs exactly one of surrogate/logreg");
    }
    BenchEntry e;
    e.model = bm.name;
    e.batch_size = opts.batch_size;
    Matrix probs;
    double batched = 0.0, unbatched = 0.0;
    if (bm.surrogate) {
      const auto& m = *bm.surrogate;
      e.parameter_count = m.parameter_count();
      batched = median_seconds(opts.reps, [&] { probs = predict_scenes(m, scenes, opts.batch_size); });
      unbatched = median_seconds(opts.reps, [&] {
        for (const auto& s : scenes) {
          const auto p = m.forward(s.embeddings, s.mask);
          if (p.empty()) throw Error(ErrorKind::Numeric, "empty prediction");
        }
      });
    } else {
      const auto& m = *bm.logreg;
      e.parameter_count = m.parameter_count();
      batched = median_seconds(opts.reps, [&] {
        probs = Matrix(scenes.size(), m.bias.size());
        for (std::size_t start = 0; start < scenes.size(); start += opts.batch_size) {
          const std::size_t end = std::min(scenes.size(), start + opts.batch_size);
          const std::vector<SceneRecord> chunk(scenes.begin() + static_cast<std::ptrdiff_t>(start),
                                               scenes.begin() + static_cast<std::ptrdiff_t>(end));
          const Matrix p = m.predict_scenes(chunk);
          std::copy(p.flat().begin(), p.flat().end(), probs.data() + start * probs.cols());
        }
      });
      unbatched = median_seconds(opts.reps, [&] {
        std::vector<SceneRecord> one(1);
        for (const auto& s : scenes) {
          one[0].embeddings = s.embeddings;
          one[0].mask = s.mask;
          const Matrix p = m.predict_scenes(one);
          if (p.empty()) throw Error(ErrorKind::Numeric, "empty prediction");
        }
      });
    }
    e.batched_seconds_per_scene = batched / n;
    e.batched_scenes_per_second = n / batched;
    e.unbatched_seconds_per_scene = unbatched / n;
    e.unbatched_scenes_per_second = n / unbatched;
    Fnv1a h;
    h.update(probs.data(), probs.size() * sizeof(double));
    e.prediction_digest = hex64(h.value());
    report.entries.push_back(e);
  }
  report.peak_rss_kb = peak_rss_kb();
  return report;
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

json run_record(const AblationRun& r) {
  json groups = json::object();
  for (const auto& g : r.per_group) groups[g.group] = g.f1;
  return json{{"record", "run"},
              {"variant", r.variant},
              {"seed", r.seed},
              {"failed", r.failed},
              {"error", r.error},
              {"macro_f1", r.macro_f1},
              {"per_group", groups},
              {"best_epoch", r.best_epoch},
              {"parameter_count", r.parameter_count},
              {"wall_time", r.wall_seconds},
              {"config_digest", r.config_digest}};
}

json number_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }
double null_to_nan(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

}  // namespace

std::string render_report(const AblationResult& result, ReportFormat format) {
  if (result.rows.empty()) throw Error(ErrorKind::Validation, "ablation report has no variants");
  if (format == ReportFormat::Structured) {
    std::string out = json{{"record", "ablation"},
                           {"baseline", result.baseline},
                           {"evaluated_against", result.evaluated_against},
                           {"spec_digest", result.spec_digest},
                           {"data_digest", result.data_digest}}
                          .dump() +
                      "\n";
    for (const auto& r : result.runs) out += run_record(r).dump() + "\n";
    for (const auto& r : result.rows) {
      out += json{{"record", "row"},
                  {"variant", r.variant},
                  {"per_seed", r.per_seed},
                  {"failed", r.failed},
                  {"median", number_or_null(r.median)},
                  {"delta", number_or_null(r.delta)}}
                 .dump() +
             "\n";
    }
    return out;
  }

  std::size_t w = 8;
  for (const auto& r : result.rows) w = std::max(w, r.variant.size() + 2);
  std::ostringstream os;
  os << "Ablation (median macro-F1 vs " << result.evaluated_against << ")\n";
  os << pad("Variant", w) << pad("Macro Avg. F1", 15) << pad("Delta", 9) << "Seeds\n";
  // Worst first, baseline last, like the usual ablation layout.
  std::vector<const AblationRow*> sorted;
  for (const auto& r : result.rows) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [&](const AblationRow* a, const AblationRow* b) {
    const bool ab = a->variant == result.baseline, bb = b->variant == result.baseline;
    if (ab != bb) return bb;
    const double am = std::isnan(a->median) ? -1.0 : a->median;
    const double bm = std::isnan(b->median) ? -1.0 : b->median;
    return am < bm;
  });
  for (const auto* r : sorted) {
    const bool base = r->variant == result.baseline;
    os << pad(r->variant + (base ? " *" : ""), w);
    os << pad(std::isnan(r->median) ? "failed" : fmt("%.4f", r->median), 15);
    os << pad(base || std::isnan(r->delta) ? "" : fmt("%+.4f", r->delta), 9);
    for (std::size_t i = 0; i < r->per_seed.size(); ++i) os << (i ? " " : "") << fmt("%.4f", r->per_seed[i]);
    if (r->failed) os << " (" << r->failed << " failed)";
    os << "\n";
  }
  os << "* baseline. spec " << result.spec_digest << ", data " << result.data_digest << "\n";
  return os.str();
}

AblationResult parse_ablation_records(const std::string& jsonl) {
  AblationResult res;
  std::istringstream in(jsonl);
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      const auto kind = j.at("record").get<std::string>();
      if (kind == "ablation") {
        header = true;
        res.baseline = j.at("baseline");
        res.evaluated_against = j.at("evaluated_against");
        res.spec_digest = j.at("spec_digest");
        res.data_digest = j.at("data_digest");
      } else if (kind == "run") {
        AblationRun r;
        r.variant = j.at("variant");
        r.seed = j.at("seed");
        r.failed = j.at("failed");
        r.error = j.at("error");
        r.macro_f1 = j.at("macro_f1");
        for (const auto& [g, v] : j.at("per_group").items()) r.per_group.push_back({g, v.get<double>()});
        r.best_epoch = j.at("best_epoch");
        r.parameter_count = j.at("parameter_count");
        r.wall_seconds = j.at("wall_time");
        r.config_digest = j.at("config_digest");
        res.runs.push_back(std::move(r));
      } else if (kind == "row") {
        AblationRow r;
        r.variant = j.at("variant");
        r.per_seed = j.at("per_seed").get<std::vector<double>>();
        r.failed = j.at("failed");
        r.median = null_to_nan(j.at("median"));
        r.delta = null_to_nan(j.at("delta"));
        res.rows.push_back(std::move(r));
      } else {
        throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": unknown record '" + kind + "'");
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!header) throw Error(ErrorKind::Parse, "ablation records lack a header record");
  return res;
}

std::string render_report(const BenchReport& report, ReportFormat format) {
  if (report.entries.empty()) throw Error(ErrorKind::Validation, "bench report has no models");
  if (format == ReportFormat::Structured) {
    std::string out = json{{"record", "bench"},
                           {"n_scenes", report.n_scenes},
                           {"reps", report.reps},
                           {"peak_rss_kb", report.peak_rss_kb},
                           {"hardware", report.hardware}}
                          .dump() +
                      "\n";
    for (const auto& e : report.entries) {
      out += json{{"record", "model"},
                  {"model", e.model},
                  {"parameter_count", e.parameter_count},
                  {"batch_size", e.batch_size},
                  {"batched_seconds_per_scene", e.batched_seconds_per_scene},
                  {"batched_scenes_per_second", e.batched_scenes_per_second},
                  {"unbatched_seconds_per_scene", e.unbatched_seconds_per_scene},
                  {"unbatched_scenes_per_second", e.unbatched_scenes_per_second},
                  {"prediction_digest", e.prediction_digest}}
                 .dump() +
             "\n";
    }
    return out;
  }
  std::size_t w = 18;
  for (const auto& e : report.entries) w = std::max(w, e.model.size() + 2);
  std::ostringstream os;
  os << "Inference cost (" << report.n_scenes << " scenes, median of " << report.reps << " reps)\n";
  os << pad("Model", w) << pad("Params", 11) << pad("Batched ms/scene", 18) << pad("Scenes/s", 12)
     << pad("Single ms/scene", 17) << "Scenes/s\n";
  for (const auto& e : report.entries) {
    os << pad(e.model, w) << pad(std::to_string(e.parameter_count), 11)
       << pad(fmt("%.4f", 1e3 * e.batched_seconds_per_scene), 18) << pad(fmt("%.1f", e.batched_scenes_per_second), 12)
       << pad(fmt("%.4f", 1e3 * e.unbatched_seconds_per_scene), 17) << fmt("%.1f", e.unbatched_scenes_per_second)
       << "\n";
  }
  os << pad("Human annotator", w) << "10-15 min per scene (reference figure, not measured)\n";
  os << "Peak resident memory: " << report.peak_rss_kb << " KiB\n";
  os << "Hardware: " << report.hardware << "\n";
  return os.str();
}

BenchReport parse_bench_records(const std::string& jsonl) {
  BenchReport rep;
  std::istringstream in(jsonl);
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      const auto kind = j.at("record").get<std::string>();
      if (kind == "bench") {
        header = true;
        rep.n_scenes = j.at("n_scenes");
        rep.reps = j.at("reps");
        rep.peak_rss_kb = j.at("peak_rss_kb");
        rep.hardware = j.at("hardware");
      } else if (kind == "model") {
        BenchEntry e;
        e.model = j.at("model");
        e.parameter_count = j.at("parameter_count");
        e.batch_size = j.at("batch_size");
        e.batched_seconds_per_scene = j.at("batched_seconds_per_scene");
        e.batched_scenes_per_second = j.at("batched_scenes_per_second");
        e.unbatched_seconds_per_scene = j.at("unbatched_seconds_per_scene");
        e.unbatched_scenes_per_second = j.at("unbatched_scenes_per_second");
        e.prediction_digest = j.at("prediction_digest");
        rep.entries.push_back(std::move(e));
      } else {
        throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": unknown record '" + kind + "'");
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!header) throw Error(ErrorKind::Parse, "bench records lack a header record");
  return rep;
}

}  // namespace covdistill
