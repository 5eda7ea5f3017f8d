#include "covdistill/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "covdistill/digest.hpp"

namespace covdistill {

const char* to_string(LabelSource s) { return s == LabelSource::Teacher ? "teacher" : "truth"; }

LabelSource parse_label_source(const std::string& s) {
  if (s == "teacher") return LabelSource::Teacher;
  if (s == "truth") return LabelSource::Truth;
  throw Error(ErrorKind::Config, "label source must be 'teacher' or 'truth', got '" + s + "'");
}

const LabelVector& labels_of(const SceneRecord& scene, LabelSource source) {
  if (source == LabelSource::Truth) return scene.y_true;
  if (!scene.y_teacher) throw Error(ErrorKind::Validation, "scene " + scene.scene_id + " has no teacher labels");
  return *scene.y_teacher;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::Config, "train: " + m); };
  if (batch_size < 2) fail("batch_size must be >= 2 (batch normalization)");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("Adam betas must be in [0, 1)");
}

Batch make_batch(const std::vector<SceneRecord>& scenes, std::span<const std::size_t> order) {
  Batch b;
  std::size_t rows = 0;
  for (std::size_t i : order) rows += scenes[i].embeddings.rows();
  if (!order.empty()) {
    b.x = Matrix(0, scenes[order[0]].embeddings.cols());
    b.x.reserve_rows(rows);
  }
  for (std::size_t i : order) b.add(scenes[i].embeddings, scenes[i].mask);
  return b;
}

Matrix predict_scenes(const SurrogateModel& model, const std::vector<SceneRecord>& scenes, std::size_t batch_size) {
  Matrix out(scenes.size(), model.config().n_labels);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < scenes.size(); start += batch_size) {
    const std::size_t end = std::min(scenes.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Matrix p = model.predict_proba(make_batch(scenes, idx));
    std::copy(p.flat().begin(), p.flat().end(), out.data() + start * out.cols());
  }
  return out;
}

std::vector<LabelVector> threshold_rows(const Matrix& probabilities, double threshold) {
  std::vector<LabelVector> out(probabilities.rows());
  for (std::size_t r = 0; r < probabilities.rows(); ++r) out[r] = predict(probabilities.row(r), threshold);
  return out;
}

namespace {

std::vector<LabelVector> reference_labels(const std::vector<SceneRecord>& scenes, LabelSource against) {
  std::vector<LabelVector> refs;
  refs.reserve(scenes.size());
  for (const auto& s : scenes) refs.push_back(labels_of(s, against));
  return refs;
}

Matrix targets_for(const std::vector<SceneRecord>& scenes, std::span<const std::size_t> order, LabelSource src,
                   std::size_t n_labels) {
  Matrix y(order.size(), n_labels);
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& lab = labels_of(scenes[order[r]], src);
    for (std::size_t i = 0; i < n_labels; ++i) y(r, i) = lab[i];
  }
  return y;
}

void check_scenes(const std::vector<SceneRecord>& scenes, std::size_t embed_dim, std::size_t n_labels,
                  LabelSource src, const char* what) {
  for (const auto& s : scenes) {
    if (s.embeddings.cols() != embed_dim) {
      throw Error(ErrorKind::Shape, std::string(what) + " scene " + s.scene_id + " has embedding width " +
                                        std::to_string(s.embeddings.cols()));
    }
    if (labels_of(s, src).size() != n_labels) {
      throw Error(ErrorKind::Validation, std::string(what) + " scene " + s.scene_id + " label length mismatch");
    }
  }
}

struct Adam {
  std::vector<Matrix> m, v;
  std::size_t step = 0;

  explicit Adam(const std::vector<Param*>& params) {
    for (const Param* p : params) {
      m.emplace_back(p->value.rows(), p->value.cols());
      v.emplace_back(p->value.rows(), p->value.cols());
    }
  }

  void update(const std::vector<Param*>& params, const TrainConfig& c) {
    ++step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Param& p = *params[k];
      double* mk = m[k].data();
      double* vk = v[k].data();
      const double decay = p.decay ? c.weight_decay : 0.0;
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad.data()[i];
        mk[i] = c.beta1 * mk[i] + (1.0 - c.beta1) * g;
        vk[i] = c.beta2 * vk[i] + (1.0 - c.beta2) * g * g;
        const double mhat = mk[i] / bc1;
        const double vhat = vk[i] / bc2;
        double& w = p.value.data()[i];
        w -= c.learning_rate * (mhat / (std::sqrt(vhat) + c.adam_eps) + decay * w);
      }
    }
  }
};

}  // namespace

TrainResult train_surrogate(const std::vector<SceneRecord>& train, const std::vector<SceneRecord>& val,
                            const SurrogateConfig& model_cfg, const TrainConfig& tcfg, const Taxonomy& tax,
                            const EpochCallback& on_epoch) {
  tcfg.validate();
  model_cfg.validate();
  if (train.empty() || val.empty()) throw Error(ErrorKind::Validation, "training and validation sets must be non-empty");
  if (tcfg.batch_size > train.size()) {
    throw Error(ErrorKind::Config, "batch_size " + std::to_string(tcfg.batch_size) + " exceeds training set size " +
                                       std::to_string(train.size()));
  }
  if (model_cfg.n_labels != tax.label_count()) {
    throw Error(ErrorKind::Config, "model n_labels differs from taxonomy label count");
  }
  check_scenes(train, model_cfg.embed_dim, model_cfg.n_labels, tcfg.label_source, "training");
  check_scenes(val, model_cfg.embed_dim, model_cfg.n_labels, tcfg.label_source, "validation");

  SurrogateModel model(model_cfg);
  TrainResult result{model, {}};
  result.report.label_source = to_string(tcfg.label_source);
  const auto val_refs = reference_labels(val, tcfg.label_source);
  std::vector<std::size_t> val_order(val.size());
  std::iota(val_order.begin(), val_order.end(), 0);
  const Matrix val_targets = targets_for(val, val_order, tcfg.label_source, model_cfg.n_labels);

  auto params = model.params();
  Adam adam(params);
  Rng dropout_rng = Rng::child(tcfg.shuffle_seed, "dropout");
  std::vector<std::size_t> order(train.size());
  std::size_t since_best = 0;
  bool have_best = false;
  double best_val_loss = 0.0;

  for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    Rng shuf = Rng::child(tcfg.shuffle_seed, "shuffle", epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(shuf.uniform_int(0, static_cast<std::int64_t>(i - 1)));
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0.0;
    std::size_t loss_scenes = 0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size) {
      std::size_t end = std::min(order.size(), start + tcfg.batch_size);
      if (order.size() - end == 1) end = order.size();  // fold a lone trailing scene in
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Batch batch = make_batch(train, idx);
      const Matrix y = targets_for(train, idx, tcfg.label_source, model_cfg.n_labels);
      model.zero_grad();
      const double loss = model.forward_backward(batch, y, PassOptions::train(), &dropout_rng);
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::Divergence, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                               std::to_string(batch_no));
      }
      adam.update(params, tcfg);
      loss_sum += loss * static_cast<double>(idx.size());
      loss_scenes += idx.size();
      ++batch_no;
      start = end - tcfg.batch_size;  // loop increment lands on `end`
    }

    const Matrix val_probs = predict_scenes(model, val);
    const auto preds = threshold_rows(val_probs, tcfg.threshold);
    const auto val_report = make_report(preds, val_refs, tax, to_string(tcfg.label_source));
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(loss_scenes);
    rec.val_macro_f1 = val_report.macro.f1;
    rec.val_loss = bce_loss(val_probs, val_targets);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    const bool better = !have_best || rec.val_macro_f1 > result.report.best_val_macro_f1 ||
                        (rec.val_macro_f1 == result.report.best_val_macro_f1 && rec.val_loss < best_val_loss);
    if (better) {
      have_best = true;
      result.report.best_val_macro_f1 = rec.val_macro_f1;
      best_val_loss = rec.val_loss;
      result.report.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= tcfg.early_stop_patience && tcfg.early_stop_patience > 0) {
      break;
    }
  }
  result.report.checkpoint_digest = hex64(checkpoint_digest(result.model));
  return result;
}

MetricsReport evaluate_labels(const std::vector<LabelVector>& preds, const std::vector<SceneRecord>& scenes,
                              LabelSource against, const Taxonomy& tax) {
  if (scenes.empty()) throw Error(ErrorKind::Validation, "evaluation over an empty scene list");
  return make_report(preds, reference_labels(scenes, against), tax, to_string(against));
}

MetricsReport evaluate(const SurrogateModel& model, const std::vector<SceneRecord>& scenes, LabelSource against,
                       const Taxonomy& tax, double threshold) {
  if (scenes.empty()) throw Error(ErrorKind::Validation, "evaluation over an empty scene list");
  const auto refs = reference_labels(scenes, against);
  return make_report(threshold_rows(predict_scenes(model, scenes), threshold), refs, tax, to_string(against));
}

std::string train_report_to_json(const TrainReport& report) {
  nlohmann::json j;
  j["best_epoch"] = report.best_epoch;
  j["best_val_macro_f1"] = report.best_val_macro_f1;
  j["checkpoint_digest"] = report.checkpoint_digest;
  j["label_source"] = report.label_source;
  j["epochs"] = nlohmann::json::array();
  for (const auto& e : report.epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"val_macro_f1", e.val_macro_f1},
                           {"val_loss", e.val_loss},
                           {"wall_seconds", e.wall_seconds}});
  }
  return j.dump(2);
}

}  // namespace covdistill
