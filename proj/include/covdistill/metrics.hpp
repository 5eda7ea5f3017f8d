#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "covdistill/surrogate.hpp"
#include "covdistill/taxonomy.hpp"

namespace covdistill {

struct LabelCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  LabelCounts& operator+=(const LabelCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  bool operator==(const LabelCounts&) const = default;
};

struct ConfusionCounts {
  std::vector<LabelCounts> labels;
  std::size_t n_scenes = 0;
};

/// Precision/recall/F1. A zero denominator yields 0 and sets the matching
/// flag, so labels that never occur cannot inflate averages.
struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;

  bool any_undefined() const { return precision_undefined || recall_undefined || f1_undefined; }
  bool operator==(const Prf&) const = default;
};

struct GroupPrf {
  Group group;
  std::size_t n_labels = 0;
  LabelCounts counts;
  Prf prf;
  /// No positives predicted or referenced anywhere in the group.
  bool undefined() const { return counts.tp + counts.fp + counts.fn == 0; }
};

ConfusionCounts confusion(std::span<const LabelVector> preds, std::span<const LabelVector> refs);
Prf prf(const LabelCounts& c);
std::vector<Prf> prf(const ConfusionCounts& counts);
/// Micro-accumulates counts inside each group, then applies prf. Groups
/// default to the taxonomy's active groups; a listed group without labels
/// comes back as zeros with every flag set.
std::vector<GroupPrf> group_prf(const ConfusionCounts& counts, const Taxonomy& tax,
                                std::vector<Group> groups = {});
/// Unweighted mean over groups that own at least one label.
Prf macro(std::span<const GroupPrf> groups);
/// Unweighted mean of the given values.
Prf macro(std::span<const Prf> values);

double exact_match_rate(std::span<const LabelVector> preds, std::span<const LabelVector> refs);
double agreement_rate(std::span<const LabelVector> preds, std::span<const LabelVector> refs);

struct MetricsReport {
  std::vector<std::string> label_ids;
  std::vector<Prf> per_label;
  std::vector<GroupPrf> per_group;
  Prf macro;        // over groups
  Prf label_macro;  // over labels
  double exact_match_rate = 0.0;
  double label_agreement_rate = 0.0;
  std::size_t n_scenes = 0;
  std::string reference_source;  // "truth" or "teacher"
};

MetricsReport make_report(std::span<const LabelVector> preds, std::span<const LabelVector> refs,
                          const Taxonomy& tax, const std::string& reference_source);

/// Aligned plain-text table: one row per group, then "Macro Avg.", exact
/// match and label agreement rows.
std::string render_table(const MetricsReport& report, const Taxonomy& tax, const std::string& title = "");
std::string report_to_json(const MetricsReport& report);

}  // namespace covdistill
