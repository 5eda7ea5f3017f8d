#include "covdistill/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "covdistill/kernels.hpp"

namespace covdistill {

namespace kn = kernels;

void SurrogateConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::Config, "surrogate: " + msg); };
  if (embed_dim == 0) fail("embed_dim must be positive");
  if (n_heads == 0) fail("n_heads must be positive");
  if (n_queries == 0) fail("n_queries must be positive");
  if (attn_dim == 0) fail("attn_dim must be positive");
  if (hidden_dim == 0) fail("hidden_dim must be positive");
  if (proj_dim == 0) fail("proj_dim must be positive");
  if (n_labels == 0) fail("n_labels must be >= 1");
  if (attn_dim % n_heads != 0) {
    fail("attn_dim " + std::to_string(attn_dim) + " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must be in [0, 1)");
}

// ---------------------------------------------------------------------------

void Batch::add(const Matrix& embeddings, std::span<const std::uint8_t> mask) {
  if (mask.size() != embeddings.rows()) {
    throw Error(ErrorKind::Shape, "mask length " + std::to_string(mask.size()) + " for " +
                                      std::to_string(embeddings.rows()) + " frames");
  }
  if (size() > 0 && embeddings.cols() != x.cols()) {
    throw Error(ErrorKind::Shape, "embedding width " + std::to_string(embeddings.cols()) +
                                      " differs from batch width " + std::to_string(x.cols()));
  }
  x.append_rows(embeddings);
  frame_mask.insert(frame_mask.end(), mask.begin(), mask.end());
  offsets.push_back(x.rows());
}

Batch Batch::single(const Matrix& embeddings, std::span<const std::uint8_t> mask) {
  Batch b;
  b.add(embeddings, mask);
  return b;
}

// ---------------------------------------------------------------------------

struct BlockTape {
  BatchNormCache bn;
  Matrix normed;
  Matrix pre;
  Matrix act;
};

struct Tape {
  Matrix kv;      // frames x 2A
  Matrix q_self;  // frames x A
  std::vector<double> attn;
  std::vector<std::size_t> attn_off;
  Matrix pooled;  // B x A, or B x E without attention
  std::vector<BlockTape> blocks;
  Matrix proj_in;
  BatchNormCache proj_bn;
  Matrix proj_bn_out;
  Matrix drop_scale;
  Matrix head_in;
  std::vector<RunningStats> pending;
};

namespace {

double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

SurrogateModel::SurrogateModel(const SurrogateConfig& config) : config_(config) {
  config_.validate();
  const std::size_t E = config_.embed_dim, A = config_.attn_dim, H = config_.hidden_dim;
  const std::size_t L = config_.n_labels;

  auto add = [&](const std::string& name, std::size_t r, std::size_t c, bool decay) {
    params_.emplace_back(name, r, c, decay);
    return params_.size() - 1;
  };
  // Each weight draws from its own stream keyed by name, so adding a layer
  // never shifts the initialization of another.
  auto glorot = [&](std::size_t idx, std::size_t fan_in, std::size_t fan_out) {
    Param& p = params_[idx];
    Rng rng = Rng::child(config_.init_seed, p.name);
    const double lim = glorot_limit(fan_in, fan_out);
    for (double& v : p.value.flat()) v = rng.uniform(-lim, lim);
  };

  if (config_.use_attention) {
    if (config_.attention == AttentionKind::Cross) {
      query_ = add("attn.query", config_.n_queries, A, true);
      glorot(query_, config_.n_queries, A);
    } else {
      q_w_ = add("attn.q.weight", E, A, true);
      glorot(q_w_, E, A);
      q_b_ = add("attn.q.bias", 1, A, false);
    }
    kv_w_ = add("attn.kv.weight", E, 2 * A, true);
    glorot(kv_w_, E, A);  // key and value halves are separate E->A maps
    kv_b_ = add("attn.kv.bias", 1, 2 * A, false);
    out_w_ = add("attn.out.weight", A, A, true);
    glorot(out_w_, A, A);
    out_b_ = add("attn.out.bias", 1, A, false);
  } else {
    lift_w_ = add("lift.weight", E, A, true);
    glorot(lift_w_, E, A);
    lift_b_ = add("lift.bias", 1, A, false);
  }

  for (std::size_t k = 0; k < config_.n_residual_blocks; ++k) {
    const std::string pre = "block" + std::to_string(k) + ".";
    BlockIdx bi{};
    bi.gamma = add(pre + "norm.gamma", 1, A, false);
    params_[bi.gamma].value.fill(1.0);
    bi.beta = add(pre + "norm.beta", 1, A, false);
    bi.fc1_w = add(pre + "fc1.weight", A, H, true);
    glorot(bi.fc1_w, A, H);
    bi.fc1_b = add(pre + "fc1.bias", 1, H, false);
    bi.fc2_w = add(pre + "fc2.weight", H, A, true);
    glorot(bi.fc2_w, H, A);
    bi.fc2_b = add(pre + "fc2.bias", 1, A, false);
    blocks_.push_back(bi);
    norms_.emplace_back(pre + "norm", RunningStats(A));
  }

  const std::size_t P = config_.proj_dim;
  proj_w_ = add("proj.weight", A, P, true);
  glorot(proj_w_, A, P);
  proj_gamma_ = add("proj.norm.gamma", 1, P, false);
  params_[proj_gamma_].value.fill(1.0);
  proj_beta_ = add("proj.norm.beta", 1, P, false);
  norms_.emplace_back("proj.norm", RunningStats(P));

  head_w_ = add("head.weight", P, L, true);
  glorot(head_w_, P, L);
  head_b_ = add("head.bias", 1, L, false);
}

std::size_t SurrogateModel::parameter_count(const SurrogateConfig& c) {
  const std::size_t E = c.embed_dim, A = c.attn_dim, H = c.hidden_dim, P = c.proj_dim, L = c.n_labels;
  std::size_t n = 0;
  if (c.use_attention) {
    n += (c.attention == AttentionKind::Cross) ? c.n_queries * A : E * A + A;
    n += E * 2 * A + 2 * A;  // key/value
    n += A * A + A;          // output
  } else {
    n += E * A + A;
  }
  n += c.n_residual_blocks * (2 * A + A * H + H + H * A + A);
  n += A * P + 2 * P;  // projection (no bias; the norm's beta covers it)
  n += P * L + L;
  return n;
}

std::size_t SurrogateModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<Param*> SurrogateModel::params() {
  std::vector<Param*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Param*> SurrogateModel::params() const {
  std::vector<const Param*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

Param& SurrogateModel::param(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw Error(ErrorKind::Lookup, "no parameter named '" + name + "'");
}

const Param& SurrogateModel::param(const std::string& name) const {
  return const_cast<SurrogateModel*>(this)->param(name);
}

std::vector<std::pair<std::string, RunningStats*>> SurrogateModel::running_stats() {
  std::vector<std::pair<std::string, RunningStats*>> out;
  for (auto& [n, s] : norms_) out.emplace_back(n, &s);
  return out;
}

std::vector<std::pair<std::string, const RunningStats*>> SurrogateModel::running_stats() const {
  std::vector<std::pair<std::string, const RunningStats*>> out;
  for (const auto& [n, s] : norms_) out.emplace_back(n, &s);
  return out;
}

void SurrogateModel::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void SurrogateModel::check_batch(const Batch& batch) const {
  if (batch.size() == 0) throw Error(ErrorKind::Validation, "empty batch");
  if (batch.x.cols() != config_.embed_dim) {
    throw Error(ErrorKind::Shape, "embedding width " + std::to_string(batch.x.cols()) +
                                      " != embed_dim " + std::to_string(config_.embed_dim));
  }
  for (std::size_t b = 0; b < batch.size(); ++b) {
    bool any = false;
    for (std::size_t r = batch.offsets[b]; r < batch.offsets[b + 1]; ++r) any = any || batch.frame_mask[r];
    if (!any) throw Error(ErrorKind::DegenerateMask, "scene " + std::to_string(b) + " has no unmasked frame");
  }
}

// ---------------------------------------------------------------------------

Matrix SurrogateModel::run_forward(const Batch& batch, const PassOptions& opts, Rng* rng,
                                   Tape* tape) const {
  check_batch(batch);
  const std::size_t B = batch.size();
  const std::size_t A = config_.attn_dim;
  const std::size_t nh = config_.n_heads;
  const std::size_t dh = A / nh;
  const std::size_t nq = config_.n_queries;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Mode bn_mode = opts.batch_stats ? Mode::Train : Mode::Eval;

  Tape local;
  Tape& t = tape ? *tape : local;
  t.pending.assign(norms_.size(), RunningStats{});

  Matrix z;  // B x A trunk input
  if (config_.use_attention) {
    kn::matmul(batch.x, params_[kv_w_].value, t.kv);
    kn::add_row_bias(t.kv, params_[kv_b_].value);
    const bool cross = config_.attention == AttentionKind::Cross;
    if (!cross) {
      kn::matmul(batch.x, params_[q_w_].value, t.q_self);
      kn::add_row_bias(t.q_self, params_[q_b_].value);
    }
    t.attn_off.assign(B + 1, 0);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t T = batch.frames(b);
      t.attn_off[b + 1] = t.attn_off[b] + nh * (cross ? nq : T) * T;
    }
    t.attn.assign(t.attn_off[B], 0.0);
    t.pooled = Matrix(B, A);

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(B); ++bi) {
      const auto b = static_cast<std::size_t>(bi);
      const std::size_t r0 = batch.offsets[b];
      const std::size_t T = batch.frames(b);
      const std::span<const std::uint8_t> mask(batch.frame_mask.data() + r0, T);
      const std::size_t nrows = cross ? nq : T;
      std::size_t active_rows = nrows;
      if (!cross) active_rows = static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
      const double inv_rows = 1.0 / static_cast<double>(active_rows);
      std::vector<double> logits(T);
      double* pooled = t.pooled.data() + b * A;
      for (std::size_t h = 0; h < nh; ++h) {
        for (std::size_t i = 0; i < nrows; ++i) {
          if (!cross && !mask[i]) continue;
          const double* q = cross ? params_[query_].value.data() + i * A + h * dh
                                  : t.q_self.data() + (r0 + i) * A + h * dh;
          for (std::size_t s = 0; s < T; ++s) {
            logits[s] = scale * dot(q, t.kv.data() + (r0 + s) * 2 * A + h * dh, dh);
          }
          double* p = t.attn.data() + t.attn_off[b] + (h * nrows + i) * T;
          masked_softmax_row(logits, mask, std::span<double>(p, T));
          for (std::size_t s = 0; s < T; ++s) {
            if (p[s] == 0.0) continue;
            const double w = p[s] * inv_rows;
            const double* v = t.kv.data() + (r0 + s) * 2 * A + A + h * dh;
            for (std::size_t d = 0; d < dh; ++d) pooled[h * dh + d] += w * v[d];
          }
        }
      }
    }
    kn::matmul(t.pooled, params_[out_w_].value, z);
    kn::add_row_bias(z, params_[out_b_].value);
  } else {
    const std::size_t E = config_.embed_dim;
    t.pooled = Matrix(B, E);
    for (std::size_t b = 0; b < B; ++b) {
      double count = 0.0;
      double* out = t.pooled.data() + b * E;
      for (std::size_t r = batch.offsets[b]; r < batch.offsets[b + 1]; ++r) {
        if (!batch.frame_mask[r]) continue;
        count += 1.0;
        const double* xr = batch.x.data() + r * E;
        for (std::size_t d = 0; d < E; ++d) out[d] += xr[d];
      }
      for (std::size_t d = 0; d < E; ++d) out[d] /= count;
    }
    kn::matmul(t.pooled, params_[lift_w_].value, z);
    kn::add_row_bias(z, params_[lift_b_].value);
  }

  t.blocks.resize(blocks_.size());
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const BlockIdx& bi = blocks_[k];
    BlockTape& bt = t.blocks[k];
    bt.normed = batchnorm_forward(z, params_[bi.gamma], params_[bi.beta], norms_[k].second, bn_mode,
                                  &bt.bn, opts.update_running ? &t.pending[k] : nullptr);
    kn::matmul(bt.normed, params_[bi.fc1_w].value, bt.pre);
    kn::add_row_bias(bt.pre, params_[bi.fc1_b].value);
    bt.act = bt.pre;
    relu_inplace(bt.act);
    Matrix delta;
    kn::matmul(bt.act, params_[bi.fc2_w].value, delta);
    kn::add_row_bias(delta, params_[bi.fc2_b].value);
    for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] += delta.data()[i];
  }

  t.proj_in = std::move(z);
  Matrix proj;
  kn::matmul(t.proj_in, params_[proj_w_].value, proj);
  const std::size_t pk = blocks_.size();
  t.proj_bn_out = batchnorm_forward(proj, params_[proj_gamma_], params_[proj_beta_], norms_[pk].second,
                                    bn_mode, &t.proj_bn, opts.update_running ? &t.pending[pk] : nullptr);
  Matrix act = t.proj_bn_out;
  relu_inplace(act);
  if (opts.dropout && config_.dropout_p > 0.0) {
    if (!rng) throw Error(ErrorKind::Config, "dropout pass needs an rng");
    t.head_in = dropout(act, config_.dropout_p, *rng, Mode::Train, &t.drop_scale);
  } else {
    t.head_in = std::move(act);
    t.drop_scale = Matrix();
  }
  Matrix logits;
  kn::matmul(t.head_in, params_[head_w_].value, logits);
  kn::add_row_bias(logits, params_[head_b_].value);
  return logits;
}

void SurrogateModel::run_backward(const Batch& batch, const Matrix& dlogits, Tape& t) {
  const std::size_t B = batch.size();
  const std::size_t A = config_.attn_dim;
  const std::size_t nh = config_.n_heads;
  const std::size_t dh = A / nh;
  const std::size_t nq = config_.n_queries;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  kn::matmul_at_b(t.head_in, dlogits, params_[head_w_].grad, true);
  kn::col_sums(dlogits, params_[head_b_].grad, true);
  Matrix g;
  kn::matmul_a_bt(dlogits, params_[head_w_].value, g);
  if (!t.drop_scale.empty()) {
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] *= t.drop_scale.data()[i];
  }
  relu_backward_inplace(g, t.proj_bn_out);
  g = batchnorm_backward(g, params_[proj_gamma_], params_[proj_beta_], t.proj_bn);
  kn::matmul_at_b(t.proj_in, g, params_[proj_w_].grad, true);
  Matrix dz;
  kn::matmul_a_bt(g, params_[proj_w_].value, dz);

  for (std::size_t k = blocks_.size(); k-- > 0;) {
    const BlockIdx& bi = blocks_[k];
    BlockTape& bt = t.blocks[k];
    kn::matmul_at_b(bt.act, dz, params_[bi.fc2_w].grad, true);
    kn::col_sums(dz, params_[bi.fc2_b].grad, true);
    Matrix dact;
    kn::matmul_a_bt(dz, params_[bi.fc2_w].value, dact);
    relu_backward_inplace(dact, bt.pre);
    kn::matmul_at_b(bt.normed, dact, params_[bi.fc1_w].grad, true);
    kn::col_sums(dact, params_[bi.fc1_b].grad, true);
    Matrix dnormed;
    kn::matmul_a_bt(dact, params_[bi.fc1_w].value, dnormed);
    Matrix dh_in = batchnorm_backward(dnormed, params_[bi.gamma], params_[bi.beta], bt.bn);
    for (std::size_t i = 0; i < dz.size(); ++i) dz.data()[i] += dh_in.data()[i];
  }

  if (!config_.use_attention) {
    kn::matmul_at_b(t.pooled, dz, params_[lift_w_].grad, true);
    kn::col_sums(dz, params_[lift_b_].grad, true);
    return;
  }

  kn::matmul_at_b(t.pooled, dz, params_[out_w_].grad, true);
  kn::col_sums(dz, params_[out_b_].grad, true);
  Matrix dpooled;
  kn::matmul_a_bt(dz, params_[out_w_].value, dpooled);

  const bool cross = config_.attention == AttentionKind::Cross;
  Matrix dkv(t.kv.rows(), 2 * A);
  Matrix dq_self(cross ? 0 : t.q_self.rows(), A);
  // Per-scene query-token grads, reduced below in scene order.
  Matrix dquery_scene(cross ? B : 0, nq * A);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(B); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    const std::size_t r0 = batch.offsets[b];
    const std::size_t T = batch.frames(b);
    const std::uint8_t* mask = batch.frame_mask.data() + r0;
    const std::size_t nrows = cross ? nq : T;
    std::size_t active_rows = nrows;
    if (!cross) active_rows = static_cast<std::size_t>(std::count_if(mask, mask + T, [](auto m) { return m != 0; }));
    const double inv_rows = 1.0 / static_cast<double>(active_rows);
    std::vector<double> dp(T), dout(dh);
    for (std::size_t h = 0; h < nh; ++h) {
      for (std::size_t d = 0; d < dh; ++d) dout[d] = dpooled(b, h * dh + d) * inv_rows;
      for (std::size_t i = 0; i < nrows; ++i) {
        if (!cross && !mask[i]) continue;
        const double* p = t.attn.data() + t.attn_off[b] + (h * nrows + i) * T;
        double weighted = 0.0;
        for (std::size_t s = 0; s < T; ++s) {
          const std::size_t row = r0 + s;
          dp[s] = dot(dout.data(), t.kv.data() + row * 2 * A + A + h * dh, dh);
          weighted += p[s] * dp[s];
          double* dv = dkv.data() + row * 2 * A + A + h * dh;
          for (std::size_t d = 0; d < dh; ++d) dv[d] += p[s] * dout[d];
        }
        const double* q = cross ? params_[query_].value.data() + i * A + h * dh
                                : t.q_self.data() + (r0 + i) * A + h * dh;
        double* dq = cross ? dquery_scene.data() + b * nq * A + i * A + h * dh
                           : dq_self.data() + (r0 + i) * A + h * dh;
        for (std::size_t s = 0; s < T; ++s) {
          const double ds = p[s] * (dp[s] - weighted) * scale;
          if (ds == 0.0) continue;
          const std::size_t row = r0 + s;
          const double* k = t.kv.data() + row * 2 * A + h * dh;
          double* dk = dkv.data() + row * 2 * A + h * dh;
          for (std::size_t d = 0; d < dh; ++d) {
            dq[d] += ds * k[d];
            dk[d] += ds * q[d];
          }
        }
      }
    }
  }

  if (cross) {
    double* gq = params_[query_].grad.data();
    for (std::size_t b = 0; b < B; ++b) {
      const double* src = dquery_scene.data() + b * nq * A;
      for (std::size_t j = 0; j < nq * A; ++j) gq[j] += src[j];
    }
  } else {
    kn::matmul_at_b(batch.x, dq_self, params_[q_w_].grad, true);
    kn::col_sums(dq_self, params_[q_b_].grad, true);
  }
  kn::matmul_at_b(batch.x, dkv, params_[kv_w_].grad, true);
  kn::col_sums(dkv, params_[kv_b_].grad, true);
}

// ---------------------------------------------------------------------------

Matrix SurrogateModel::logits(const Batch& batch, const PassOptions& opts, Rng* rng) const {
  PassOptions o = opts;
  o.update_running = false;
  return run_forward(batch, o, rng, nullptr);
}

Matrix SurrogateModel::predict_proba(const Batch& batch) const {
  Matrix z = run_forward(batch, PassOptions::eval(), nullptr, nullptr);
  // Saturated logits would round to exactly 0 or 1.
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  for (double& v : z.flat()) v = std::clamp(sigmoid(v), lo, hi);
  return z;
}

std::vector<double> SurrogateModel::forward(const Matrix& embeddings,
                                            std::span<const std::uint8_t> mask) const {
  Matrix p = predict_proba(Batch::single(embeddings, mask));
  return {p.flat().begin(), p.flat().end()};
}

double SurrogateModel::forward_backward(const Batch& batch, const Matrix& targets,
                                        const PassOptions& opts, Rng* rng) {
  Tape tape;
  Matrix z = run_forward(batch, opts, rng, &tape);
  BceResult bce = bce_with_logits(z, targets);
  run_backward(batch, bce.dlogits, tape);
  if (opts.update_running && opts.batch_stats) {
    for (std::size_t k = 0; k < norms_.size(); ++k) norms_[k].second = tape.pending[k];
  }
  return bce.loss;
}

LabelVector predict(std::span<const double> probabilities, double threshold) {
  LabelVector out(probabilities.size());
  for (std::size_t i = 0; i < probabilities.size(); ++i) out[i] = probabilities[i] >= threshold ? 1 : 0;
  return out;
}

}  // namespace covdistill
