#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "covdistill/trainer.hpp"

namespace covdistill {

/// One ablation variant: JSON overrides merged onto the base model and
/// training configs, a training-set fraction, or the logistic baseline.
struct AblationVariant {
  std::string name;
  nlohmann::json model_overrides = nlohmann::json::object();
  nlohmann::json train_overrides = nlohmann::json::object();
  double train_fraction = 1.0;
  bool logreg = false;

  bool operator==(const AblationVariant&) const = default;
};

struct AblationSpec {
  std::vector<AblationVariant> variants;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string baseline = "full";
  LogRegConfig logreg;
  LabelSource evaluate_against = LabelSource::Truth;

  /// full, no_cross_attention, no_dropout, two_residual_blocks,
  /// reduced_train (1/8 of the training split), logreg.
  static AblationSpec defaults();
  /// Validation error on an empty variant list, duplicate names, a missing
  /// baseline or no seeds.
  void validate() const;
  bool operator==(const AblationSpec&) const = default;
};

void to_json(nlohmann::json& j, const AblationVariant& v);
void from_json(const nlohmann::json& j, AblationVariant& v);
void to_json(nlohmann::json& j, const AblationSpec& s);
void from_json(const nlohmann::json& j, AblationSpec& s);

struct GroupScore {
  std::string group;
  double f1 = 0.0;
  bool operator==(const GroupScore&) const = default;
};

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  double macro_f1 = 0.0;
  std::vector<GroupScore> per_group;
  std::size_t best_epoch = 0;
  std::size_t parameter_count = 0;
  double wall_seconds = 0.0;
  std::string config_digest;  // resolved model + train config (or logreg config)
  bool operator==(const AblationRun&) const = default;
};

struct AblationRow {
  std::string variant;
  std::vector<double> per_seed;  // failed runs are omitted
  std::size_t failed = 0;
  double median = 0.0;
  double delta = 0.0;  // median - baseline median
  bool operator==(const AblationRow&) const = default;
};

struct AblationResult {
  std::string baseline;
  std::string evaluated_against;
  std::string spec_digest;
  std::string data_digest;  // train/val/test scene digests combined
  std::vector<AblationRun> runs;
  std::vector<AblationRow> rows;
  bool operator==(const AblationResult&) const = default;

  const AblationRow& row(const std::string& variant) const;
};

using RunCallback = std::function<void(const AblationRun&)>;

/// Trains and scores every (variant, seed). Model init and shuffle seeds are
/// derived from the run seed alone, so all variants see the same streams.
/// A diverging run is recorded as failed and the sweep continues.
AblationResult run_ablation(const AblationSpec& spec, const std::vector<SceneRecord>& train,
                            const std::vector<SceneRecord>& val, const std::vector<SceneRecord>& test,
                            const SurrogateConfig& base_model, const TrainConfig& base_train, const Taxonomy& tax,
                            const RunCallback& on_run = {});

/// Rows (median, delta) recomputed from runs, in spec order.
std::vector<AblationRow> summarize_runs(const std::vector<AblationRun>& runs, const std::vector<std::string>& order,
                                        const std::string& baseline);

SurrogateConfig apply_overrides(const SurrogateConfig& base, const nlohmann::json& overrides);
TrainConfig apply_overrides(const TrainConfig& base, const nlohmann::json& overrides);

/// FNV-1a over scene ids, masks, labels and embedding bytes.
std::uint64_t scenes_digest(const std::vector<SceneRecord>& scenes);

double median(std::vector<double> values);

// ---------------------------------------------------------------------------
// Inference benchmark

struct BenchOptions {
  std::size_t reps = 5;
  std::size_t batch_size = 256;
};

struct BenchEntry {
  std::string model;
  std::size_t parameter_count = 0;
  std::size_t batch_size = 0;
  double batched_seconds_per_scene = 0.0;
  double batched_scenes_per_second = 0.0;
  double unbatched_seconds_per_scene = 0.0;
  double unbatched_scenes_per_second = 0.0;
  std::string prediction_digest;  // FNV-1a over the batched probability bytes
  bool operator==(const BenchEntry&) const = default;
};

struct BenchReport {
  std::vector<BenchEntry> entries;
  std::size_t n_scenes = 0;
  std::size_t reps = 0;
  long peak_rss_kb = 0;
  std::string hardware;
  bool operator==(const BenchReport&) const = default;

  const BenchEntry& entry(const std::string& model) const;
};

struct BenchModel {
  std::string name;
  const SurrogateModel* surrogate = nullptr;
  const LogRegModel* logreg = nullptr;
};

/// Eval-mode latency: one warm-up pass, then the median over `reps` timed
/// passes, both batched and one scene at a time. Needs >= 100 scenes and
/// reps >= 5 (Config error otherwise).
BenchReport bench_inference(const std::vector<BenchModel>& models, const std::vector<SceneRecord>& scenes,
                            const BenchOptions& opts = {});

std::string hardware_description();
long peak_rss_kb();

// ---------------------------------------------------------------------------
// Rendering

enum class ReportFormat { Text, Structured };

/// Text: a variant table with median, delta and per-seed columns.
/// Structured: JSON Lines, one header record, one record per run, one per row.
std::string render_report(const AblationResult& result, ReportFormat format);
std::string render_report(const BenchReport& report, ReportFormat format);
AblationResult parse_ablation_records(const std::string& jsonl);
BenchReport parse_bench_records(const std::string& jsonl);

}  // namespace covdistill
