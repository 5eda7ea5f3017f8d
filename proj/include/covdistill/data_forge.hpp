#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "covdistill/matrix.hpp"
#include "covdistill/ops.hpp"
#include "covdistill/surrogate.hpp"
#include "covdistill/taxonomy.hpp"

namespace covdistill {

struct SceneRecord {
  std::string scene_id;
  std::uint64_t index = 0;  // generation index; keys every per-scene random stream
  Matrix embeddings;        // seq_len x embed_dim
  Mask mask;
  LabelVector y_true;
  std::optional<LabelVector> y_teacher;

  bool operator==(const SceneRecord&) const = default;
};

/// Synthetic scene generator.
///
/// Every label i has a fixed unit prototype p_i. A scene draws y_i ~
/// Bernoulli(pi_i), a length T in [seq_len_min, seq_len_max], a context sign
/// c in {-1, +1}, a nuisance offset n ~ N(0, nuisance_std^2 I) and a set of
/// event frames E. Frame t is
///
///   x_t = noise_std * eps_t + n + context_strength * c * u
///         + [t in E] * (event_marker * e + signal_strength * g(c) * sum_{y_i=1} p_i)
///
/// with g(c) = 1 - context_modulation + context_modulation * c, and u, e
/// fixed unit directions. event_frames_max = 0 means every frame is an event
/// frame. Setting context_modulation, event_marker, context_strength and
/// event_frames_max to 0 leaves the plain additive model.
struct GeneratorConfig {
  std::size_t n_scenes = 9000;
  std::size_t embed_dim = 256;
  std::size_t seq_len_min = 5;
  std::size_t seq_len_max = 8;
  /// Per-label positive rate; empty selects default_prevalence().
  std::vector<double> prevalence;
  double signal_strength = 1.5;
  double noise_std = 1.0;
  double nuisance_std = 0.5;
  std::size_t event_frames_min = 2;
  std::size_t event_frames_max = 3;
  double event_marker = 3.0;
  double context_strength = 2.0;
  double context_modulation = 0.7;
  std::uint64_t seed = 7;

  void validate(std::size_t n_labels) const;
  bool operator==(const GeneratorConfig&) const = default;
};

/// Long-tail profile: round(55/68 * n) labels log-uniform in [0.02, 0.30),
/// the rest uniform in [0.30, 0.50); which labels are rare is a seeded
/// permutation.
std::vector<double> default_prevalence(std::size_t n_labels, std::uint64_t seed);
/// The prevalence vector a config resolves to.
std::vector<double> resolve_prevalence(const GeneratorConfig& config, std::size_t n_labels);

std::vector<SceneRecord> generate(const GeneratorConfig& config, const Taxonomy& tax);
/// Ground-truth labels of scenes [first, first + count) without embeddings.
/// Identical to the labels generate() produces for the same indices.
std::vector<LabelVector> generate_labels(const GeneratorConfig& config, std::size_t n_labels,
                                         std::size_t first, std::size_t count);

// ---------------------------------------------------------------------------
// Teacher oracle

struct GroupTarget {
  Group group;
  double precision;
  double recall;
  bool operator==(const GroupTarget&) const = default;
};

/// Per-group precision/recall the corrupted labels should reach.
struct TeacherTargets {
  std::vector<GroupTarget> groups;
  std::uint64_t seed = 11;

  /// Fine-tuned LVLM vs human labels: II 0.91/0.88, III 0.85/0.79,
  /// IV 0.87/0.75, V 0.83/0.86.
  static TeacherTargets lvlm_reference();
  const GroupTarget& target(Group g) const;
  bool operator==(const TeacherTargets&) const = default;
};

struct FlipRates {
  double fn = 0.0;  // P(teacher 0 | truth 1)
  double fp = 0.0;  // P(teacher 1 | truth 0)
};

/// Per-label flip rates with expected precision/recall equal to the targets.
struct TeacherConfig {
  std::vector<FlipRates> rates;
  std::uint64_t seed = 11;
};

/// fn = 1 - R, fp = pi R (1 - P) / (P (1 - pi)). Throws Calibration when fp >= 1.
FlipRates calibrate_label(double prevalence, double precision, double recall);
TeacherConfig calibrate_teacher(const TeacherTargets& targets, const Taxonomy& tax,
                                std::span<const double> prevalence);

LabelVector corrupt_labels(const LabelVector& truth, const TeacherConfig& teacher, std::uint64_t scene_index);
void apply_teacher(std::vector<SceneRecord>& scenes, const TeacherConfig& teacher);

/// 1 - pi fn - (1 - pi) fp
double expected_label_agreement(double prevalence, const FlipRates& r);
/// prod_i expected_label_agreement(pi_i, r_i)
double expected_exact_match(std::span<const double> prevalence, const TeacherConfig& teacher);

// ---------------------------------------------------------------------------
// Splits

struct SplitPart {
  std::string name;
  double proportion;
};

/// teacher_train 8/90, teacher_test 2/90, surrogate_train 56/90,
/// surrogate_val 12/90, surrogate_test 12/90.
std::vector<SplitPart> default_split_parts();

struct DatasetSplit {
  std::vector<std::string> names;
  std::vector<std::vector<std::size_t>> indices;  // positions in the scene list

  const std::vector<std::size_t>& part(const std::string& name) const;
};

/// Seeded shuffle then contiguous partition with boundaries round(cum_p * n).
DatasetSplit split(std::size_t n_scenes, const std::vector<SplitPart>& parts, std::uint64_t seed);

std::vector<SceneRecord> select(const std::vector<SceneRecord>& scenes, const std::vector<std::size_t>& idx);

}  // namespace covdistill
