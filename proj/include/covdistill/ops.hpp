#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "covdistill/matrix.hpp"
#include "covdistill/rng.hpp"

namespace covdistill {

enum class Mode { Train, Eval };

/// Added to masked logits. Finite, so softmax backward needs no special case.
inline constexpr double kMaskSentinel = -1e30;

using Mask = std::vector<std::uint8_t>;

/// Softmax over one row restricted to mask[j] != 0. Masked outputs are exactly 0.
void masked_softmax_row(std::span<const double> logits, std::span<const std::uint8_t> mask,
                        std::span<double> out);
/// Row-wise masked softmax; one mask shared by all rows.
Matrix masked_softmax(const Matrix& logits, std::span<const std::uint8_t> mask);

double sigmoid(double z);

// ---------------------------------------------------------------------------
// Batch normalization over rows (examples) per column (feature).

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct RunningStats {
  Matrix mean;  // 1 x features
  Matrix var;   // 1 x features

  explicit RunningStats(std::size_t features = 0) : mean(1, features, 0.0), var(1, features, 1.0) {}
};

struct BatchNormCache {
  Matrix xhat;
  std::vector<double> inv_std;
  bool batch_stats = false;
};

/// Train mode normalizes by batch statistics (biased variance); when `update`
/// is given it receives `running` moved by momentum 0.1 toward the batch mean
/// and unbiased batch variance (`update` may alias `running`). Eval mode
/// normalizes by `running`.
Matrix batchnorm_forward(const Matrix& x, const Param& gamma, const Param& beta,
                         const RunningStats& running, Mode mode, BatchNormCache* cache = nullptr,
                         RunningStats* update = nullptr);
/// Accumulates into gamma.grad / beta.grad and returns dL/dx.
Matrix batchnorm_backward(const Matrix& dy, Param& gamma, Param& beta,
                          const BatchNormCache& cache);

// ---------------------------------------------------------------------------

/// Inverted dropout. When scale_out is given it receives the per-entry
/// multiplier (0 or 1/(1-p)) for the backward pass.
Matrix dropout(const Matrix& x, double p, Rng& rng, Mode mode, Matrix* scale_out = nullptr);

struct BceResult {
  double loss = 0.0;
  Matrix dlogits;  // (sigmoid(z) - y) / cells
};

/// Mean binary cross-entropy over all cells, probabilities clamped to
/// [1e-7, 1 - 1e-7].
double bce_loss(const Matrix& probabilities, const Matrix& targets);
/// Same loss evaluated from logits in log-sigmoid form, with its gradient.
BceResult bce_with_logits(const Matrix& logits, const Matrix& targets);

inline constexpr double kProbClamp = 1e-7;

/// In place: x = max(x, 0).
void relu_inplace(Matrix& x);
/// grad *= (pre > 0), with pre the ReLU input.
void relu_backward_inplace(Matrix& grad, const Matrix& pre);

namespace debug {
/// Negative-control hook: when set, ReLU backward returns the negated
/// gradient. Only the verification runner touches this.
void set_corrupt_backward(bool on);
bool corrupt_backward();
}  // namespace debug

}  // namespace covdistill
