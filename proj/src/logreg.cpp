#include <cmath>
#include <fstream>

#include <Eigen/Cholesky>
#include <json.hpp>

#include "covdistill/error.hpp"
#include "covdistill/kernels.hpp"
#include "covdistill/trainer.hpp"

namespace covdistill {

namespace kn = kernels;

namespace {

void add_bias(Matrix& z, const std::vector<double>& b) {
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
  }
}

}  // namespace

Matrix pooled_features(const std::vector<SceneRecord>& scenes) {
  if (scenes.empty()) return Matrix();
  const std::size_t e = scenes[0].embeddings.cols();
  Matrix out(scenes.size(), e);
  for (std::size_t n = 0; n < scenes.size(); ++n) {
    const auto& s = scenes[n];
    if (s.embeddings.cols() != e) throw Error(ErrorKind::Shape, "scene " + s.scene_id + " embedding width differs");
    std::size_t live = 0;
    auto dst = out.row(n);
    for (std::size_t t = 0; t < s.embeddings.rows(); ++t) {
      if (!s.mask[t]) continue;
      ++live;
      auto src = s.embeddings.row(t);
      for (std::size_t k = 0; k < e; ++k) dst[k] += src[k];
    }
    if (live == 0) throw Error(ErrorKind::DegenerateMask, "scene " + s.scene_id + " has no unmasked frames");
    for (std::size_t k = 0; k < e; ++k) dst[k] /= static_cast<double>(live);
  }
  return out;
}

Matrix LogRegModel::predict_proba(const Matrix& pooled) const {
  if (pooled.cols() != weight.cols()) {
    throw Error(ErrorKind::Shape, "logreg expects width " + std::to_string(weight.cols()) + ", got " +
                                      std::to_string(pooled.cols()));
  }
  Matrix z(pooled.rows(), weight.rows());
  kn::matmul_a_bt(pooled, weight, z);
  add_bias(z, bias);
  for (double& v : z.flat()) v = sigmoid(v);
  return z;
}

Matrix LogRegModel::predict_scenes(const std::vector<SceneRecord>& scenes) const {
  return predict_proba(pooled_features(scenes));
}

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

/// Objective at theta (labels x (E+1), bias last) and its gradient.
double objective(const Matrix& xa, const Matrix& y, const Matrix& theta, double l2, Matrix& grad) {
  const std::size_t n = xa.rows();
  const std::size_t e = xa.cols() - 1;
  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix z(n, theta.rows());
  kn::matmul_a_bt(xa, theta, z);
  double loss = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double zi = z.data()[i];
    const double yi = y.data()[i];
    loss += softplus(zi) - yi * zi;
    z.data()[i] = (sigmoid(zi) - yi) * inv_n;
  }
  loss *= inv_n;
  grad.resize(theta.rows(), theta.cols());
  kn::matmul_at_b(z, xa, grad, false);
  for (std::size_t r = 0; r < theta.rows(); ++r) {
    for (std::size_t k = 0; k < e; ++k) {
      loss += 0.5 * l2 * theta(r, k) * theta(r, k);
      grad(r, k) += l2 * theta(r, k);
    }
  }
  return loss;
}

}  // namespace

LogRegModel train_logreg(const std::vector<SceneRecord>& train, LabelSource source, const LogRegConfig& cfg) {
  if (train.empty()) throw Error(ErrorKind::Validation, "logreg: empty training set");
  if (!(cfg.l2_strength >= 0.0)) throw Error(ErrorKind::Config, "logreg: l2_strength must be non-negative");
  const Matrix x = pooled_features(train);
  const std::size_t n = x.rows();
  const std::size_t e = x.cols();
  const std::size_t n_labels = labels_of(train[0], source).size();
  Matrix y(n, n_labels);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& lab = labels_of(train[i], source);
    if (lab.size() != n_labels) throw Error(ErrorKind::Validation, "logreg: label length mismatch");
    for (std::size_t l = 0; l < n_labels; ++l) y(i, l) = lab[l];
  }
  Matrix xa(n, e + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < e; ++k) xa(i, k) = x(i, k);
    xa(i, e) = 1.0;
  }

  // Fixed quadratic upper bound on the Hessian, shared by all labels.
  Matrix bound(e + 1, e + 1);
  kn::matmul_at_b(xa, xa, bound, false);
  double trace = 0.0;
  for (double& v : bound.flat()) v *= 0.25 / static_cast<double>(n);
  for (std::size_t k = 0; k <= e; ++k) trace += bound(k, k);
  for (std::size_t k = 0; k < e; ++k) bound(k, k) += cfg.l2_strength;
  const double jitter = 1e-10 * trace / static_cast<double>(e + 1);
  for (std::size_t k = 0; k <= e; ++k) bound(k, k) += jitter;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> bound_map(
      bound.data(), e + 1, e + 1);
  const Eigen::LLT<Eigen::MatrixXd> llt(bound_map);
  if (llt.info() != Eigen::Success) throw Error(ErrorKind::Numeric, "logreg: curvature bound is not positive definite");

  Matrix theta(n_labels, e + 1), grad;
  double f = objective(xa, y, theta, cfg.l2_strength, grad);
  std::size_t it = 0;
  auto grad_norm = [&] {
    double sq = 0.0;
    for (double g : grad.flat()) sq += g * g;
    return std::sqrt(sq);
  };
  while (it < cfg.max_iterations && grad_norm() >= cfg.tolerance) {
    for (std::size_t r = 0; r < n_labels; ++r) {
      Eigen::Map<Eigen::VectorXd> g(grad.row(r).data(), static_cast<Eigen::Index>(e + 1));
      Eigen::Map<Eigen::VectorXd> t(theta.row(r).data(), static_cast<Eigen::Index>(e + 1));
      t -= llt.solve(g);
    }
    ++it;
    f = objective(xa, y, theta, cfg.l2_strength, grad);
    if (!std::isfinite(f)) {
      throw Error(ErrorKind::Divergence, "logreg objective became non-finite at iteration " + std::to_string(it));
    }
  }

  LogRegModel model;
  model.l2_strength = cfg.l2_strength;
  model.iterations = it;
  model.final_objective = f;
  model.gradient_norm = grad_norm();
  model.weight = Matrix(n_labels, e);
  model.bias.assign(n_labels, 0.0);
  for (std::size_t r = 0; r < n_labels; ++r) {
    for (std::size_t k = 0; k < e; ++k) model.weight(r, k) = theta(r, k);
    model.bias[r] = theta(r, e);
  }
  return model;
}

MetricsReport evaluate(const LogRegModel& model, const std::vector<SceneRecord>& scenes, LabelSource against,
                       const Taxonomy& tax, double threshold) {
  return evaluate_labels(threshold_rows(model.predict_scenes(scenes), threshold), scenes, against, tax);
}

void save_logreg(const LogRegModel& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "logreg";
  j["l2_strength"] = model.l2_strength;
  j["iterations"] = model.iterations;
  j["final_objective"] = model.final_objective;
  j["gradient_norm"] = model.gradient_norm;
  j["rows"] = model.weight.rows();
  j["cols"] = model.weight.cols();
  j["weight"] = std::vector<double>(model.weight.flat().begin(), model.weight.flat().end());
  j["bias"] = model.bias;
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << j.dump() << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

LogRegModel load_logreg(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format") != "logreg") throw Error(ErrorKind::Parse, path.string() + ": not a logreg model");
    LogRegModel m;
    m.l2_strength = j.at("l2_strength").get<double>();
    m.iterations = j.at("iterations").get<std::size_t>();
    m.final_objective = j.at("final_objective").get<double>();
    m.gradient_norm = j.at("gradient_norm").get<double>();
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    const auto w = j.at("weight").get<std::vector<double>>();
    m.bias = j.at("bias").get<std::vector<double>>();
    if (w.size() != rows * cols || m.bias.size() != rows) {
      throw Error(ErrorKind::Corruption, path.string() + ": logreg tensor sizes disagree");
    }
    m.weight = Matrix(rows, cols);
    std::copy(w.begin(), w.end(), m.weight.data());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

}  // namespace covdistill
