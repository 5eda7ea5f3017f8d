#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "covdistill/data_forge.hpp"
#include "covdistill/metrics.hpp"
#include "covdistill/surrogate.hpp"

namespace covdistill {

enum class LabelSource { Teacher, Truth };

const char* to_string(LabelSource s);
LabelSource parse_label_source(const std::string& s);

/// Labels of a scene under the given source. Validation error when absent.
const LabelVector& labels_of(const SceneRecord& scene, LabelSource source);

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled, applied to weight matrices only
  std::size_t early_stop_patience = 8;
  LabelSource label_source = LabelSource::Teacher;
  std::uint64_t shuffle_seed = 3;
  double threshold = 0.5;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_macro_f1 = 0.0;
  double val_loss = 0.0;  // mean BCE against the training label source
  double wall_seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0: the initialization was never beaten
  double best_val_macro_f1 = 0.0;
  std::string checkpoint_digest;
  std::string label_source;
};

struct TrainResult {
  SurrogateModel model;
  TrainReport report;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam with decoupled weight decay on mean BCE against the
/// configured label source. Batches come from a seeded shuffle per epoch; a
/// trailing batch of one scene is folded into the previous batch (batch norm
/// needs two). Early stopping watches validation group-macro F1 against the
/// same label source, ties going to the lower validation loss, and the
/// returned model, running statistics included, is the best epoch's snapshot.
TrainResult train_surrogate(const std::vector<SceneRecord>& train, const std::vector<SceneRecord>& val,
                            const SurrogateConfig& model_cfg, const TrainConfig& tcfg, const Taxonomy& tax,
                            const EpochCallback& on_epoch = {});

/// Eval-mode probabilities, scenes x n_labels, in batches of `batch_size`.
Matrix predict_scenes(const SurrogateModel& model, const std::vector<SceneRecord>& scenes,
                      std::size_t batch_size = 256);

std::vector<LabelVector> threshold_rows(const Matrix& probabilities, double threshold);

MetricsReport evaluate(const SurrogateModel& model, const std::vector<SceneRecord>& scenes, LabelSource against,
                       const Taxonomy& tax, double threshold = 0.5);
/// Scores label vectors (e.g. the teacher's own) against a reference.
MetricsReport evaluate_labels(const std::vector<LabelVector>& preds, const std::vector<SceneRecord>& scenes,
                              LabelSource against, const Taxonomy& tax);

Batch make_batch(const std::vector<SceneRecord>& scenes, std::span<const std::size_t> order);

std::string train_report_to_json(const TrainReport& report);

// ---------------------------------------------------------------------------
// L2-regularized logistic regression on masked-mean-pooled frames.

struct LogRegConfig {
  double l2_strength = 1e-3;
  std::size_t max_iterations = 5000;
  double tolerance = 1e-6;  // on the full gradient norm
  bool operator==(const LogRegConfig&) const = default;
};

struct LogRegModel {
  Matrix weight;             // n_labels x embed_dim
  std::vector<double> bias;  // n_labels
  double l2_strength = 1e-3;
  std::size_t iterations = 0;
  double final_objective = 0.0;
  double gradient_norm = 0.0;

  std::size_t parameter_count() const { return weight.size() + bias.size(); }
  Matrix predict_proba(const Matrix& pooled) const;
  Matrix predict_scenes(const std::vector<SceneRecord>& scenes) const;
};

/// Masked mean over frames: scenes x embed_dim.
Matrix pooled_features(const std::vector<SceneRecord>& scenes);

/// Minimizes (1/N) sum_n sum_l BCE(x_n w_l + b_l, y_nl) + (l2/2)||W||^2.
/// Each step is a Newton step against the fixed quadratic bound
/// X^T X / (4N) + l2 I on the Hessian (bias unregularized), factored once, so
/// the objective never increases. Stops when the gradient norm drops below
/// tolerance or at max_iterations.
LogRegModel train_logreg(const std::vector<SceneRecord>& train, LabelSource source, const LogRegConfig& cfg = {});

MetricsReport evaluate(const LogRegModel& model, const std::vector<SceneRecord>& scenes, LabelSource against,
                       const Taxonomy& tax, double threshold = 0.5);

void save_logreg(const LogRegModel& model, const std::filesystem::path& path);
LogRegModel load_logreg(const std::filesystem::path& path);

}  // namespace covdistill
