#include "covdistill/data_forge.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "covdistill/rng.hpp"

namespace covdistill {

void GeneratorConfig::validate(std::size_t n_labels) const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::Config, "generator: " + m); };
  if (embed_dim == 0) fail("embed_dim must be positive");
  if (seq_len_min == 0 || seq_len_min > seq_len_max) fail("need 1 <= seq_len_min <= seq_len_max");
  if (!prevalence.empty()) {
    if (prevalence.size() != n_labels) {
      fail("prevalence has " + std::to_string(prevalence.size()) + " entries for " +
           std::to_string(n_labels) + " labels");
    }
    for (double p : prevalence) {
      if (!(p > 0.0 && p < 1.0)) fail("prevalence entries must lie in (0, 1)");
    }
  }
  if (!(signal_strength >= 0.0)) fail("signal_strength must be non-negative");
  if (!(noise_std > 0.0)) fail("noise_std must be positive");
  if (!(nuisance_std >= 0.0)) fail("nuisance_std must be non-negative");
  if (event_frames_min > event_frames_max) fail("event_frames_min > event_frames_max");
  if (event_frames_max > 0 && event_frames_min == 0) fail("event_frames_min must be >= 1 when events are localized");
  if (!(context_modulation >= 0.0 && context_modulation <= 1.0)) fail("context_modulation must be in [0, 1]");
  if (!(event_marker >= 0.0) || !(context_strength >= 0.0)) fail("marker/context strengths must be non-negative");
}

std::vector<double> default_prevalence(std::size_t n_labels, std::uint64_t seed) {
  Rng rng = Rng::child(seed, "prevalence");
  std::vector<std::size_t> order(n_labels);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n_labels; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
    std::swap(order[i - 1], order[j]);
  }
  const auto n_rare = static_cast<std::size_t>(std::lround(55.0 / 68.0 * static_cast<double>(n_labels)));
  std::vector<double> pi(n_labels);
  const double lo = std::log(0.02), hi = std::log(0.30);
  for (std::size_t k = 0; k < n_labels; ++k) {
    pi[order[k]] = k < n_rare ? std::exp(rng.uniform(lo, hi)) : rng.uniform(0.30, 0.50);
  }
  return pi;
}

std::vector<double> resolve_prevalence(const GeneratorConfig& config, std::size_t n_labels) {
  return config.prevalence.empty() ? default_prevalence(n_labels, config.seed) : config.prevalence;
}

namespace {

std::vector<double> unit_vector(std::uint64_t seed, std::string_view tag, std::uint64_t index, std::size_t dim) {
  Rng rng = Rng::child(seed, tag, index);
  std::vector<double> v(dim);
  double norm = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

LabelVector draw_labels(std::uint64_t seed, std::uint64_t index, std::span<const double> pi) {
  Rng rng = Rng::child(seed, "labels", index);
  LabelVector y(pi.size());
  for (std::size_t i = 0; i < pi.size(); ++i) y[i] = rng.bernoulli(pi[i]) ? 1 : 0;
  return y;
}

std::string scene_name(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene-%06llu", static_cast<unsigned long long>(index));
  return buf;
}

}  // namespace

std::vector<LabelVector> generate_labels(const GeneratorConfig& config, std::size_t n_labels,
                                         std::size_t first, std::size_t count) {
  config.validate(n_labels);
  const auto pi = resolve_prevalence(config, n_labels);
  std::vector<LabelVector> out(count);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(count); ++k) {
    out[static_cast<std::size_t>(k)] = draw_labels(config.seed, first + static_cast<std::size_t>(k), pi);
  }
  return out;
}

std::vector<SceneRecord> generate(const GeneratorConfig& config, const Taxonomy& tax) {
  const std::size_t L = tax.label_count();
  config.validate(L);
  const auto pi = resolve_prevalence(config, L);
  const std::size_t E = config.embed_dim;

  std::vector<std::vector<double>> protos(L);
  for (std::size_t i = 0; i < L; ++i) protos[i] = unit_vector(config.seed, "prototype", i, E);
  const auto context_dir = unit_vector(config.seed, "context-direction", 0, E);
  const auto marker_dir = unit_vector(config.seed, "event-marker", 0, E);

  std::vector<SceneRecord> scenes(config.n_scenes);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(config.n_scenes); ++si) {
    const auto idx = static_cast<std::uint64_t>(si);
    SceneRecord& rec = scenes[static_cast<std::size_t>(si)];
    rec.index = idx;
    rec.scene_id = scene_name(idx);
    rec.y_true = draw_labels(config.seed, idx, pi);

    Rng rng = Rng::child(config.seed, "frames", idx);
    const auto T = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(config.seq_len_min),
                                                            static_cast<std::int64_t>(config.seq_len_max)));
    const double c = rng.bernoulli(0.5) ? 1.0 : -1.0;
    const double gain = config.signal_strength * (1.0 - config.context_modulation + config.context_modulation * c);

    std::vector<double> shared(E, 0.0);   // added to every frame
    std::vector<double> evidence(E, 0.0); // added to event frames
    for (std::size_t d = 0; d < E; ++d) {
      shared[d] = config.nuisance_std * rng.normal() + config.context_strength * c * context_dir[d];
      evidence[d] = config.event_marker * marker_dir[d];
    }
    for (std::size_t i = 0; i < L; ++i) {
      if (!rec.y_true[i]) continue;
      for (std::size_t d = 0; d < E; ++d) evidence[d] += gain * protos[i][d];
    }

    std::vector<std::uint8_t> is_event(T, 1);
    if (config.event_frames_max > 0) {
      const auto k = std::min<std::size_t>(
          T, static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(config.event_frames_min),
                                                      static_cast<std::int64_t>(config.event_frames_max))));
      // Event frames form a contiguous run at a random start.
      const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(T - k)));
      std::fill(is_event.begin(), is_event.end(), 0);
      std::fill(is_event.begin() + static_cast<std::ptrdiff_t>(start),
                is_event.begin() + static_cast<std::ptrdiff_t>(start + k), 1);
    }

    rec.embeddings = Matrix(T, E);
    for (std::size_t t = 0; t < T; ++t) {
      double* row = rec.embeddings.data() + t * E;
      for (std::size_t d = 0; d < E; ++d) {
        row[d] = config.noise_std * rng.normal() + shared[d] + (is_event[t] ? evidence[d] : 0.0);
      }
    }
    rec.mask.assign(T, 1);
  }
  return scenes;
}

// ---------------------------------------------------------------------------

TeacherTargets TeacherTargets::lvlm_reference() {
  TeacherTargets t;
  t.groups = {{Group::II, 0.91, 0.88}, {Group::III, 0.85, 0.79}, {Group::IV, 0.87, 0.75}, {Group::V, 0.83, 0.86}};
  return t;
}

const GroupTarget& TeacherTargets::target(Group g) const {
  for (const auto& t : groups) {
    if (t.group == g) return t;
  }
  throw Error(ErrorKind::Lookup, std::string("no teacher target for group ") + group_roman(g));
}

FlipRates calibrate_label(double prevalence, double precision, double recall) {
  if (!(precision > 0.0 && precision <= 1.0) || !(recall > 0.0 && recall <= 1.0)) {
    throw Error(ErrorKind::Calibration, "precision and recall targets must lie in (0, 1]");
  }
  if (!(prevalence > 0.0 && prevalence < 1.0)) {
    throw Error(ErrorKind::Calibration, "prevalence must lie in (0, 1)");
  }
  FlipRates r;
  r.fn = 1.0 - recall;
  r.fp = prevalence * recall * (1.0 - precision) / (precision * (1.0 - prevalence));
  if (r.fp >= 1.0) {
    throw Error(ErrorKind::Calibration, "implied false-positive rate " + std::to_string(r.fp) + " >= 1");
  }
  return r;
}

TeacherConfig calibrate_teacher(const TeacherTargets& targets, const Taxonomy& tax,
                                std::span<const double> prevalence) {
  if (prevalence.size() != tax.label_count()) {
    throw Error(ErrorKind::Config, "prevalence length does not match taxonomy label count");
  }
  TeacherConfig cfg;
  cfg.seed = targets.seed;
  cfg.rates.resize(prevalence.size());
  for (std::size_t i = 0; i < prevalence.size(); ++i) {
    const auto& t = targets.target(tax.group_of(i));
    try {
      cfg.rates[i] = calibrate_label(prevalence[i], t.precision, t.recall);
    } catch (const Error& e) {
      throw Error(ErrorKind::Calibration, "label " + tax.id_at(i) + ": " + e.what());
    }
  }
  return cfg;
}

LabelVector corrupt_labels(const LabelVector& truth, const TeacherConfig& teacher, std::uint64_t scene_index) {
  if (truth.size() != teacher.rates.size()) {
    throw Error(ErrorKind::Validation, "label length differs from teacher calibration");
  }
  Rng rng = Rng::child(teacher.seed, "teacher", scene_index);
  LabelVector out(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    // One draw per cell regardless of outcome keeps cells independent of each other.
    const double u = rng.uniform();
    if (truth[i]) {
      out[i] = u < teacher.rates[i].fn ? 0 : 1;
    } else {
      out[i] = u < teacher.rates[i].fp ? 1 : 0;
    }
  }
  return out;
}

void apply_teacher(std::vector<SceneRecord>& scenes, const TeacherConfig& teacher) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(scenes.size()); ++k) {
    auto& s = scenes[static_cast<std::size_t>(k)];
    s.y_teacher = corrupt_labels(s.y_true, teacher, s.index);
  }
}

double expected_label_agreement(double prevalence, const FlipRates& r) {
  return 1.0 - prevalence * r.fn - (1.0 - prevalence) * r.fp;
}

double expected_exact_match(std::span<const double> prevalence, const TeacherConfig& teacher) {
  double p = 1.0;
  for (std::size_t i = 0; i < prevalence.size(); ++i) p *= expected_label_agreement(prevalence[i], teacher.rates[i]);
  return p;
}

// ---------------------------------------------------------------------------

std::vector<SplitPart> default_split_parts() {
  return {{"teacher_train", 8.0 / 90.0},
          {"teacher_test", 2.0 / 90.0},
          {"surrogate_train", 56.0 / 90.0},
          {"surrogate_val", 12.0 / 90.0},
          {"surrogate_test", 12.0 / 90.0}};
}

const std::vector<std::size_t>& DatasetSplit::part(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return indices[i];
  }
  throw Error(ErrorKind::Lookup, "no split part named '" + name + "'");
}

DatasetSplit split(std::size_t n_scenes, const std::vector<SplitPart>& parts, std::uint64_t seed) {
  if (parts.empty()) throw Error(ErrorKind::Config, "split needs at least one part");
  double total = 0.0;
  for (const auto& p : parts) {
    if (!(p.proportion >= 0.0)) throw Error(ErrorKind::Config, "negative split proportion for " + p.name);
    total += p.proportion;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorKind::Config, "split proportions sum to " + std::to_string(total) + ", not 1");
  }
  std::vector<std::size_t> order(n_scenes);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::child(seed, "split");
  for (std::size_t i = n_scenes; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
    std::swap(order[i - 1], order[j]);
  }
  DatasetSplit out;
  double cum = 0.0;
  std::size_t begin = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    cum += parts[k].proportion;
    const std::size_t end =
        k + 1 == parts.size() ? n_scenes : static_cast<std::size_t>(std::llround(cum * static_cast<double>(n_scenes)));
    out.names.push_back(parts[k].name);
    out.indices.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                             order.begin() + static_cast<std::ptrdiff_t>(std::max(begin, end)));
    begin = std::max(begin, end);
  }
  return out;
}

std::vector<SceneRecord> select(const std::vector<SceneRecord>& scenes, const std::vector<std::size_t>& idx) {
  std::vector<SceneRecord> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    if (i >= scenes.size()) throw Error(ErrorKind::Bounds, "scene position " + std::to_string(i));
    out.push_back(scenes[i]);
  }
  return out;
}

}  // namespace covdistill
