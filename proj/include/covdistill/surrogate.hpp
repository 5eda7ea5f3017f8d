#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "covdistill/matrix.hpp"
#include "covdistill/ops.hpp"
#include "covdistill/rng.hpp"

namespace covdistill {

enum class AttentionKind {
  Cross,  // learned query tokens attend over the frame sequence
  Self,   // every frame attends over the sequence, then masked mean over frames
};

struct SurrogateConfig {
  std::size_t embed_dim = 256;
  std::size_t n_heads = 4;
  std::size_t n_queries = 4;
  std::size_t attn_dim = 128;
  std::size_t hidden_dim = 256;
  std::size_t proj_dim = 512;
  std::size_t n_residual_blocks = 3;
  double dropout_p = 0.1;
  std::size_t n_labels = 68;
  bool use_attention = true;
  AttentionKind attention = AttentionKind::Cross;
  std::uint64_t init_seed = 1;

  void validate() const;
  bool operator==(const SurrogateConfig&) const = default;
};

using LabelVector = std::vector<std::uint8_t>;

/// Ragged batch of frame sequences. Scene b owns rows [offsets[b],
/// offsets[b+1]) of `x`; frame_mask marks which of those rows participate.
/// No padding rows are materialized: a masked row is ignored wherever it
/// sits, so a batch behaves exactly like one padded to its longest scene.
struct Batch {
  Matrix x;
  Mask frame_mask;
  std::vector<std::size_t> offsets{0};

  std::size_t size() const { return offsets.size() - 1; }
  std::size_t frames(std::size_t b) const { return offsets[b + 1] - offsets[b]; }

  void add(const Matrix& embeddings, std::span<const std::uint8_t> mask);
  static Batch single(const Matrix& embeddings, std::span<const std::uint8_t> mask);
};

/// Which stochastic/stateful pieces are live in a pass.
struct PassOptions {
  bool batch_stats = false;      // batch norm uses batch statistics
  bool update_running = false;   // commit running-stat updates
  bool dropout = false;

  static PassOptions train() { return {true, true, true}; }
  static PassOptions eval() { return {false, false, false}; }
};

struct Tape;

/// Attention-pooled residual multi-label classifier.
///
/// Pipeline per scene: (a) attention over the masked frame sequence, scaled
/// dot product with scale 1/sqrt(attn_dim / n_heads); (b) mean over the
/// attention outputs; (c) pre-norm residual blocks h += W2 relu(W1 bn(h));
/// (d) projection linear to proj_dim -> batch norm -> ReLU -> dropout; (e) linear head
/// and sigmoid. Without attention, (a)-(b) become a masked mean of the
/// frames followed by a linear lift to attn_dim. There is no positional
/// encoding, so the output is invariant to frame order.
class SurrogateModel {
 public:
  explicit SurrogateModel(const SurrogateConfig& config);

  const SurrogateConfig& config() const { return config_; }

  /// Closed-form parameter count for a config (running statistics excluded).
  static std::size_t parameter_count(const SurrogateConfig& config);
  std::size_t parameter_count() const;

  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  Param& param(const std::string& name);
  const Param& param(const std::string& name) const;

  /// Named running statistics of every batch-norm layer.
  std::vector<std::pair<std::string, RunningStats*>> running_stats();
  std::vector<std::pair<std::string, const RunningStats*>> running_stats() const;

  /// Eval-mode probabilities for one scene.
  std::vector<double> forward(const Matrix& embeddings, std::span<const std::uint8_t> mask) const;
  /// Eval-mode probabilities, batch.size() x n_labels. Read-only.
  Matrix predict_proba(const Batch& batch) const;
  /// Logits under arbitrary pass options. Running stats are never touched.
  Matrix logits(const Batch& batch, const PassOptions& opts, Rng* rng) const;

  /// Forward + BCE + backward. Gradients are accumulated into params (call
  /// zero_grad first). Commits running-stat updates when requested.
  double forward_backward(const Batch& batch, const Matrix& targets, const PassOptions& opts,
                          Rng* rng);

  void zero_grad();

 private:
  friend class CheckpointAccess;

  Matrix run_forward(const Batch& batch, const PassOptions& opts, Rng* rng, Tape* tape) const;
  void run_backward(const Batch& batch, const Matrix& dlogits, Tape& tape);
  void check_batch(const Batch& batch) const;

  SurrogateConfig config_;
  std::vector<Param> params_;
  std::vector<std::pair<std::string, RunningStats>> norms_;

  // Indices into params_.
  struct BlockIdx {
    std::size_t gamma, beta, fc1_w, fc1_b, fc2_w, fc2_b;
  };
  std::size_t query_ = 0, q_w_ = 0, q_b_ = 0, kv_w_ = 0, kv_b_ = 0, out_w_ = 0, out_b_ = 0;
  std::size_t lift_w_ = 0, lift_b_ = 0;
  std::vector<BlockIdx> blocks_;
  std::size_t proj_w_ = 0, proj_gamma_ = 0, proj_beta_ = 0, head_w_ = 0, head_b_ = 0;
};

/// bit i = 1 iff probabilities[i] >= threshold.
LabelVector predict(std::span<const double> probabilities, double threshold = 0.5);

// ---------------------------------------------------------------------------
// Checkpoint file: "SCTK", u32 format version, u64 config-text length, config
// text (JSON), u64 config digest, u32 tensor count, then per tensor
// (u32 name length, name, u64 rows, u64 cols, rows*cols little-endian f64),
// then a u64 FNV-1a checksum over every preceding byte.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const SurrogateModel& model, const std::filesystem::path& path);
SurrogateModel load_checkpoint(const std::filesystem::path& path,
                               std::uint32_t reader_version = kCheckpointVersion);
std::string encode_checkpoint(const SurrogateModel& model);
SurrogateModel decode_checkpoint(const std::string& bytes,
                                 std::uint32_t reader_version = kCheckpointVersion);
/// FNV-1a over the encoded checkpoint.
std::uint64_t checkpoint_digest(const SurrogateModel& model);

}  // namespace covdistill
