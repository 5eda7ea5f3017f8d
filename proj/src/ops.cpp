#include "covdistill/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace covdistill {

namespace debug {
namespace {
std::atomic<bool> g_corrupt{false};
}
void set_corrupt_backward(bool on) { g_corrupt.store(on); }
bool corrupt_backward() { return g_corrupt.load(std::memory_order_relaxed); }
}  // namespace debug

void masked_softmax_row(std::span<const double> logits, std::span<const std::uint8_t> mask,
                        std::span<double> out) {
  const std::size_t n = logits.size();
  double mx = kMaskSentinel;
  bool any = false;
  for (std::size_t j = 0; j < n; ++j) {
    if (mask[j]) {
      any = true;
      mx = std::max(mx, logits[j]);
    }
  }
  if (!any) throw Error(ErrorKind::DegenerateMask, "softmax row has no unmasked entry");
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double z = logits[j] + (mask[j] ? 0.0 : kMaskSentinel);
    out[j] = std::exp(z - mx);
    total += out[j];
  }
  const double inv = 1.0 / total;
  for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
}

Matrix masked_softmax(const Matrix& logits, std::span<const std::uint8_t> mask) {
  if (mask.size() != logits.cols()) {
    throw Error(ErrorKind::Shape, "mask length " + std::to_string(mask.size()) + " for " +
                                      logits.shape_str());
  }
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) masked_softmax_row(logits.row(r), mask, out.row(r));
  return out;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Matrix batchnorm_forward(const Matrix& x, const Param& gamma, const Param& beta,
                         const RunningStats& running, Mode mode, BatchNormCache* cache,
                         RunningStats* update) {
  const std::size_t n = x.rows();
  const std::size_t f = x.cols();
  if (gamma.value.size() != f || beta.value.size() != f || running.mean.size() != f) {
    throw Error(ErrorKind::Shape, "batchnorm width " + std::to_string(f));
  }
  Matrix y(n, f);
  std::vector<double> mean(f, 0.0), inv_std(f, 0.0);
  if (update && update != &running) *update = running;
  if (mode == Mode::Train) {
    if (n < 2) throw Error(ErrorKind::Config, "batch normalization needs batch size >= 2 in train mode");
    std::vector<double> var(f, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < f; ++c) mean[c] += x(r, c);
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < f; ++c) {
        const double d = x(r, c) - mean[c];
        var[c] += d * d;
      }
    for (std::size_t c = 0; c < f; ++c) {
      const double biased = var[c] / static_cast<double>(n);
      inv_std[c] = 1.0 / std::sqrt(biased + kBatchNormEps);
      if (update) {
        const double unbiased = var[c] / static_cast<double>(n - 1);
        const double old_mean = running.mean.data()[c];
        const double old_var = running.var.data()[c];
        update->mean.data()[c] = (1.0 - kBatchNormMomentum) * old_mean + kBatchNormMomentum * mean[c];
        update->var.data()[c] = (1.0 - kBatchNormMomentum) * old_var + kBatchNormMomentum * unbiased;
      }
    }
  } else {
    for (std::size_t c = 0; c < f; ++c) {
      mean[c] = running.mean.data()[c];
      inv_std[c] = 1.0 / std::sqrt(running.var.data()[c] + kBatchNormEps);
    }
  }
  Matrix xhat(n, f);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < f; ++c) {
      xhat(r, c) = (x(r, c) - mean[c]) * inv_std[c];
      y(r, c) = gamma.value.data()[c] * xhat(r, c) + beta.value.data()[c];
    }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->batch_stats = (mode == Mode::Train);
  }
  return y;
}

Matrix batchnorm_backward(const Matrix& dy, Param& gamma, Param& beta, const BatchNormCache& cache) {
  const std::size_t n = dy.rows();
  const std::size_t f = dy.cols();
  std::vector<double> sum_dxhat(f, 0.0), sum_dxhat_xhat(f, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < f; ++c) {
      const double g = dy(r, c);
      gamma.grad.data()[c] += g * cache.xhat(r, c);
      beta.grad.data()[c] += g;
      const double dxhat = g * gamma.value.data()[c];
      sum_dxhat[c] += dxhat;
      sum_dxhat_xhat[c] += dxhat * cache.xhat(r, c);
    }
  Matrix dx(n, f);
  if (!cache.batch_stats) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < f; ++c) dx(r, c) = dy(r, c) * gamma.value.data()[c] * cache.inv_std[c];
    return dx;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < f; ++c) {
      const double dxhat = dy(r, c) * gamma.value.data()[c];
      dx(r, c) = inv_n * cache.inv_std[c] *
                 (static_cast<double>(n) * dxhat - sum_dxhat[c] - cache.xhat(r, c) * sum_dxhat_xhat[c]);
    }
  return dx;
}

Matrix dropout(const Matrix& x, double p, Rng& rng, Mode mode, Matrix* scale_out) {
  if (!(p >= 0.0 && p < 1.0)) throw Error(ErrorKind::Config, "dropout probability must be in [0, 1)");
  if (mode == Mode::Eval || p == 0.0) {
    if (scale_out) *scale_out = Matrix(x.rows(), x.cols(), 1.0);
    return x;
  }
  const double keep_scale = 1.0 / (1.0 - p);
  Matrix y(x.rows(), x.cols());
  Matrix scale(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = rng.uniform() < p ? 0.0 : keep_scale;
    scale.data()[i] = s;
    y.data()[i] = x.data()[i] * s;
  }
  if (scale_out) *scale_out = std::move(scale);
  return y;
}

void relu_inplace(Matrix& x) {
  for (double& v : x.flat()) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(Matrix& grad, const Matrix& pre) {
  const double sign = debug::corrupt_backward() ? -1.0 : 1.0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    grad.data()[i] = pre.data()[i] > 0.0 ? sign * grad.data()[i] : 0.0;
  }
}

namespace {
void check_targets(const Matrix& a, const Matrix& targets) {
  if (!a.same_shape(targets)) {
    throw Error(ErrorKind::Shape, "bce " + a.shape_str() + " vs targets " + targets.shape_str());
  }
  for (double t : targets.flat()) {
    if (t != 0.0 && t != 1.0) throw Error(ErrorKind::Validation, "bce target outside {0,1}");
  }
}

// log(1 + e^z) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
}  // namespace

double bce_loss(const Matrix& probabilities, const Matrix& targets) {
  check_targets(probabilities, targets);
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double p = std::clamp(probabilities.data()[i], kProbClamp, 1.0 - kProbClamp);
    const double y = targets.data()[i];
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return targets.empty() ? 0.0 : total / static_cast<double>(targets.size());
}

BceResult bce_with_logits(const Matrix& logits, const Matrix& targets) {
  check_targets(logits, targets);
  // Clamping p to [c, 1-c] is clamping z to [-zc, zc] with zc = logit(1-c).
  static const double kLogitClamp = std::log((1.0 - kProbClamp) / kProbClamp);
  BceResult res;
  res.dlogits = Matrix(logits.rows(), logits.cols());
  const double inv = targets.empty() ? 0.0 : 1.0 / static_cast<double>(targets.size());
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double z = logits.data()[i];
    const double y = targets.data()[i];
    const double zc = std::clamp(z, -kLogitClamp, kLogitClamp);
    // -[y log s(z) + (1-y) log(1-s(z))] = softplus(z) - y z
    total += softplus(zc) - y * zc;
    res.dlogits.data()[i] = (sigmoid(z) - y) * inv;
  }
  res.loss = total * inv;
  return res;
}

}  // namespace covdistill
