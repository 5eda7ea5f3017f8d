#include "covdistill/verify.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "covdistill/grad_check.hpp"
#include "covdistill/kernels.hpp"
#include "covdistill/metrics.hpp"

namespace covdistill {

namespace {

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.flat()) v = scale * rng.normal();
  return m;
}

Batch random_batch(std::size_t scenes, std::size_t frames, std::size_t dim, Rng& rng) {
  Batch b;
  for (std::size_t s = 0; s < scenes; ++s) {
    Mask mask(frames, 1);
    if (frames > 1 && s % 2 == 1) mask[frames - 1] = 0;
    b.add(random_matrix(frames, dim, rng), mask);
  }
  return b;
}

CheckResult check_surrogate_grad(const std::string& name, SurrogateConfig mc, bool batch_stats, std::uint64_t seed) {
  Rng rng = Rng::child(seed, "verify-grad", mc.init_seed);
  SurrogateModel model(mc);
  const Batch batch = random_batch(3, 3, mc.embed_dim, rng);
  Matrix y(batch.size(), mc.n_labels);
  for (double& v : y.flat()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  PassOptions opts;
  opts.batch_stats = batch_stats;
  auto loss = [&](bool grad) {
    if (grad) {
      model.zero_grad();
      return model.forward_backward(batch, y, opts, nullptr);
    }
    return bce_with_logits(model.logits(batch, opts, nullptr), y).loss;
  };
  auto params = model.params();
  const auto r = grad_check(loss, params, rng);
  return {name, r.max_rel_error < 1e-4,
          "max rel error " + fmt("%.3e", r.max_rel_error) + " (" + r.worst_param + " " + fmt("%.3e", r.worst_analytic) + " vs " + fmt("%.3e", r.worst_numeric) + ", " +
              std::to_string(r.coordinates) + " coords)"};
}

CheckResult check_linear_bce_grad(std::uint64_t seed) {
  Rng rng = Rng::child(seed, "verify-linear");
  const Matrix x = random_matrix(6, 5, rng);
  Matrix y(6, 3);
  for (double& v : y.flat()) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
  Param w("w", 5, 3, true);
  Param b("b", 1, 3);
  w.value = random_matrix(5, 3, rng, 0.5);
  b.value = random_matrix(1, 3, rng, 0.5);
  auto loss = [&](bool grad) {
    Matrix z = kernels::matmul(x, w.value);
    kernels::add_row_bias(z, b.value);
    const auto r = bce_with_logits(z, y);
    if (grad) {
      kernels::matmul_at_b(x, r.dlogits, w.grad, false);
      kernels::col_sums(r.dlogits, b.grad, false);
    }
    return r.loss;
  };
  std::vector<Param*> params{&w, &b};
  const auto r = grad_check(loss, params, rng);
  return {"grad: linear + BCE", r.max_rel_error < 1e-6, "max rel error " + fmt("%.3e", r.max_rel_error)};
}

// Brute-force counterparts, written independently of metrics.cpp.
struct Brute {
  double p, r, f;
};

Brute brute_prf(double tp, double fp, double fn) {
  const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  return {p, r, f};
}

CheckResult check_metrics_oracle(const Taxonomy& tax, std::size_t cases, std::uint64_t seed) {
  Rng rng = Rng::child(seed, "verify-metrics");
  const std::size_t L = tax.label_count();
  std::size_t bad = 0;
  std::string first_failure;
  for (std::size_t c = 0; c < cases; ++c) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 40));
    const double density = rng.uniform(0.0, 0.6);
    std::vector<LabelVector> preds(n, LabelVector(L)), refs(n, LabelVector(L));
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t i = 0; i < L; ++i) {
        preds[s][i] = rng.bernoulli(density);
        refs[s][i] = rng.bernoulli(density);
      }
    }
    const auto rep = make_report(preds, refs, tax, "truth");
    double f_sum = 0.0;
    std::size_t groups = 0;
    for (const auto& g : rep.per_group) {
      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < L; ++i) {
        if (tax.group_of(i) != g.group) continue;
        for (std::size_t s = 0; s < n; ++s) {
          tp += preds[s][i] && refs[s][i];
          fp += preds[s][i] && !refs[s][i];
          fn += !preds[s][i] && refs[s][i];
        }
      }
      const auto b = brute_prf(tp, fp, fn);
      if (b.p != g.prf.precision || b.r != g.prf.recall || std::abs(b.f - g.prf.f1) > 1e-15 ||
          static_cast<double>(g.counts.tp) != tp) {
        ++bad;
        if (first_failure.empty()) first_failure = "case " + std::to_string(c) + " group " + group_roman(g.group);
      }
      f_sum += b.f;
      ++groups;
    }
    std::size_t exact = 0, agree = 0;
    for (std::size_t s = 0; s < n; ++s) {
      exact += preds[s] == refs[s];
      for (std::size_t i = 0; i < L; ++i) agree += preds[s][i] == refs[s][i];
    }
    if (std::abs(rep.macro.f1 - f_sum / static_cast<double>(groups)) > 1e-15 ||
        std::abs(rep.exact_match_rate - static_cast<double>(exact) / static_cast<double>(n)) > 1e-15 ||
        std::abs(rep.label_agreement_rate - static_cast<double>(agree) / static_cast<double>(n * L)) > 1e-15) {
      ++bad;
      if (first_failure.empty()) first_failure = "case " + std::to_string(c) + " aggregate";
    }
  }
  return {"metrics: brute-force oracle", bad == 0,
          std::to_string(cases) + " cases" + (bad ? ", first mismatch " + first_failure : "")};
}

std::vector<CheckResult> check_calibration(const ExperimentConfig& cfg, const Taxonomy& tax, std::size_t n) {
  const std::size_t L = tax.label_count();
  const auto pi = resolve_prevalence(cfg.generator, L);
  const auto teacher = calibrate_teacher(cfg.teacher, tax, pi);
  const auto truth = generate_labels(cfg.generator, L, 0, n);
  std::vector<LabelVector> noisy(n);
  for (std::size_t s = 0; s < n; ++s) noisy[s] = corrupt_labels(truth[s], teacher, s);
  const auto rep = make_report(noisy, truth, tax, "truth");
  std::vector<CheckResult> out;
  bool ok = true;
  std::string detail;
  for (const auto& g : rep.per_group) {
    const auto& t = cfg.teacher.target(g.group);
    const bool pass = std::abs(g.prf.precision - t.precision) <= 0.02 && std::abs(g.prf.recall - t.recall) <= 0.02;
    ok = ok && pass;
    detail += std::string(group_roman(g.group)) + " " + fmt("%.3f", g.prf.precision) + "/" +
              fmt("%.3f", g.prf.recall) + (pass ? "" : "!") + " ";
  }
  out.push_back({"teacher: per-group P/R within 0.02", ok, detail + "(" + std::to_string(n) + " scenes)"});
  out.push_back({"teacher: macro F1 within 0.02 of 0.84", std::abs(rep.macro.f1 - 0.84) <= 0.02,
                 "macro F1 " + fmt("%.4f", rep.macro.f1)});
  return out;
}

CheckResult check_softmax(std::size_t cases, std::uint64_t seed) {
  Rng rng = Rng::child(seed, "verify-softmax");
  std::size_t bad = 0;
  for (std::size_t c = 0; c < cases; ++c) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 12));
    std::vector<double> z(n), out(n);
    Mask m(n);
    for (std::size_t j = 0; j < n; ++j) {
      z[j] = rng.normal() * 10.0;
      m[j] = rng.bernoulli(0.7);
    }
    m[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n - 1)))] = 1;
    masked_softmax_row(z, m, out);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!m[j] && out[j] != 0.0) ++bad;
      sum += out[j];
    }
    if (std::abs(sum - 1.0) > 1e-12) ++bad;
  }
  bool degenerate_rejected = false;
  try {
    masked_softmax(Matrix(1, 3), Mask(3, 0));
  } catch (const Error& e) {
    degenerate_rejected = e.kind() == ErrorKind::DegenerateMask;
  }
  return {"softmax: row sums, masked zeros, all-masked rejected", bad == 0 && degenerate_rejected,
          std::to_string(cases) + " cases"};
}

CheckResult check_pooling_invariance(std::size_t cases, std::uint64_t seed) {
  SurrogateConfig mc;
  mc.embed_dim = 8;
  mc.attn_dim = 8;
  mc.n_heads = 2;
  mc.n_queries = 2;
  mc.hidden_dim = 8;
  mc.proj_dim = 8;
  mc.n_residual_blocks = 1;
  mc.n_labels = 4;
  mc.init_seed = seed;
  const SurrogateModel model(mc);
  Rng rng = Rng::child(seed, "verify-invariance");
  double worst = 0.0;
  auto diff = [&](const std::vector<double>& a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  };
  for (std::size_t c = 0; c < cases; ++c) {
    const auto t = static_cast<std::size_t>(rng.uniform_int(1, 8));
    const Matrix x = random_matrix(t, mc.embed_dim, rng);
    const Mask m(t, 1);
    const auto base = model.forward(x, m);
    // order
    std::vector<std::size_t> perm(t);
    for (std::size_t i = 0; i < t; ++i) perm[i] = i;
    for (std::size_t i = t; i > 1; --i) std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
    Matrix xp(t, mc.embed_dim);
    for (std::size_t i = 0; i < t; ++i) std::copy(x.row(perm[i]).begin(), x.row(perm[i]).end(), xp.row(i).begin());
    diff(base, model.forward(xp, m));
    // duplication of every frame
    Matrix xd = x;
    xd.append_rows(x);
    diff(base, model.forward(xd, Mask(2 * t, 1)));
    // padding with masked garbage
    Matrix xpad = x;
    xpad.append_rows(random_matrix(3, mc.embed_dim, rng, 100.0));
    Mask mpad(t + 3, 1);
    for (std::size_t i = t; i < t + 3; ++i) mpad[i] = 0;
    diff(base, model.forward(xpad, mpad));
  }
  return {"pooling: order/duplication/padding invariance", worst <= 1e-12,
          "max deviation " + fmt("%.3e", worst) + " over " + std::to_string(cases) + " cases"};
}

CheckResult check_checkpoint(std::uint64_t seed) {
  SurrogateConfig mc;
  mc.embed_dim = 8;
  mc.attn_dim = 8;
  mc.n_heads = 2;
  mc.hidden_dim = 8;
  mc.proj_dim = 8;
  mc.n_labels = 4;
  mc.init_seed = seed;
  const SurrogateModel model(mc);
  const auto bytes = encode_checkpoint(model);
  const auto back = decode_checkpoint(bytes);
  bool ok = encode_checkpoint(back) == bytes;
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x01;
  try {
    decode_checkpoint(flipped);
    ok = false;
  } catch (const Error& e) {
    ok = ok && e.kind() == ErrorKind::Corruption;
  }
  return {"checkpoint: round trip, bit flip detected", ok, std::to_string(bytes.size()) + " bytes"};
}

}  // namespace

std::vector<CheckResult> run_verify(const ExperimentConfig& cfg, const VerifyOptions& opts) {
  const Taxonomy tax = cfg.taxonomy();
  cfg.validate(tax);
  std::vector<CheckResult> out;

  SurrogateConfig small;
  small.embed_dim = 8;
  small.attn_dim = 8;
  small.n_heads = 2;
  small.n_queries = 2;
  small.hidden_dim = 8;
  small.proj_dim = 8;
  small.n_residual_blocks = 2;
  small.n_labels = 4;
  small.dropout_p = 0.0;
  small.init_seed = opts.seed;
  out.push_back(check_surrogate_grad("grad: surrogate, cross attention, frozen norm", small, false, opts.seed));
  out.push_back(check_surrogate_grad("grad: surrogate, cross attention, batch norm", small, true, opts.seed));
  auto self_cfg = small;
  self_cfg.attention = AttentionKind::Self;
  out.push_back(check_surrogate_grad("grad: surrogate, self attention", self_cfg, false, opts.seed));
  auto plain = small;
  plain.use_attention = false;
  out.push_back(check_surrogate_grad("grad: surrogate, no attention", plain, false, opts.seed));
  out.push_back(check_linear_bce_grad(opts.seed));
  out.push_back(check_metrics_oracle(tax, opts.metric_cases, opts.seed));
  for (auto& c : check_calibration(cfg, tax, opts.calibration_scenes)) out.push_back(std::move(c));
  out.push_back(check_softmax(1000, opts.seed));
  out.push_back(check_pooling_invariance(opts.invariance_cases, opts.seed));
  out.push_back(check_checkpoint(opts.seed));
  return out;
}

std::string render_checks(const std::vector<CheckResult>& checks) {
  std::size_t w = 0;
  for (const auto& c : checks) w = std::max(w, c.name.size());
  std::ostringstream os;
  std::size_t passed = 0;
  for (const auto& c : checks) {
    passed += c.passed;
    os << (c.passed ? "PASS  " : "FAIL  ") << c.name << std::string(w + 2 - c.name.size(), ' ') << c.detail << "\n";
  }
  os << passed << "/" << checks.size() << " checks passed\n";
  return os.str();
}

}  // namespace covdistill
