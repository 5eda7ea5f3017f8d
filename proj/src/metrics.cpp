#include "covdistill/metrics.hpp"

#include <algorithm>
#include <cstdio>

#include <json.hpp>

namespace covdistill {

namespace {
void check_lists(std::span<const LabelVector> preds, std::span<const LabelVector> refs) {
  if (preds.size() != refs.size()) {
    throw Error(ErrorKind::Validation, "prediction count " + std::to_string(preds.size()) +
                                           " != reference count " + std::to_string(refs.size()));
  }
  for (std::size_t s = 0; s < preds.size(); ++s) {
    if (preds[s].size() != refs[s].size() || preds[s].size() != preds[0].size()) {
      throw Error(ErrorKind::Validation, "label vector length mismatch at scene " + std::to_string(s));
    }
  }
}
}  // namespace

ConfusionCounts confusion(std::span<const LabelVector> preds, std::span<const LabelVector> refs) {
  check_lists(preds, refs);
  ConfusionCounts c;
  c.n_scenes = preds.size();
  c.labels.resize(preds.empty() ? 0 : preds[0].size());
  for (std::size_t s = 0; s < preds.size(); ++s) {
    for (std::size_t i = 0; i < c.labels.size(); ++i) {
      const bool p = preds[s][i] != 0, r = refs[s][i] != 0;
      auto& lc = c.labels[i];
      if (p && r) ++lc.tp;
      else if (p) ++lc.fp;
      else if (r) ++lc.fn;
      else ++lc.tn;
    }
  }
  return c;
}

Prf prf(const LabelCounts& c) {
  Prf out;
  const auto tp = static_cast<double>(c.tp);
  if (c.tp + c.fp == 0) out.precision_undefined = true;
  else out.precision = tp / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn == 0) out.recall_undefined = true;
  else out.recall = tp / static_cast<double>(c.tp + c.fn);
  if (out.precision + out.recall == 0.0) out.f1_undefined = true;
  else out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

std::vector<Prf> prf(const ConfusionCounts& counts) {
  std::vector<Prf> out;
  out.reserve(counts.labels.size());
  for (const auto& c : counts.labels) out.push_back(prf(c));
  return out;
}

std::vector<GroupPrf> group_prf(const ConfusionCounts& counts, const Taxonomy& tax, std::vector<Group> groups) {
  if (counts.labels.size() != tax.label_count()) {
    throw Error(ErrorKind::Validation, "counts cover " + std::to_string(counts.labels.size()) +
                                           " labels, taxonomy has " + std::to_string(tax.label_count()));
  }
  if (groups.empty()) groups = tax.active_groups();
  std::vector<GroupPrf> out;
  for (Group g : groups) {
    GroupPrf gp{g, 0, {}, {}};
    for (std::size_t i = 0; i < counts.labels.size(); ++i) {
      if (tax.group_of(i) != g) continue;
      ++gp.n_labels;
      gp.counts += counts.labels[i];
    }
    gp.prf = prf(gp.counts);
    out.push_back(gp);
  }
  return out;
}

Prf macro(std::span<const GroupPrf> groups) {
  std::vector<Prf> vals;
  bool any_defined = false;
  for (const auto& g : groups) {
    if (g.n_labels == 0) continue;
    vals.push_back(g.prf);
    any_defined = any_defined || !g.undefined();
  }
  if (!any_defined) throw Error(ErrorKind::Validation, "macro average: every group is undefined");
  return macro(std::span<const Prf>(vals));
}

Prf macro(std::span<const Prf> values) {
  if (values.empty()) throw Error(ErrorKind::Validation, "macro average of nothing");
  Prf out;
  for (const auto& v : values) {
    out.precision += v.precision;
    out.recall += v.recall;
    out.f1 += v.f1;
  }
  const auto n = static_cast<double>(values.size());
  out.precision /= n;
  out.recall /= n;
  out.f1 /= n;
  return out;
}

double exact_match_rate(std::span<const LabelVector> preds, std::span<const LabelVector> refs) {
  check_lists(preds, refs);
  if (preds.empty()) throw Error(ErrorKind::Validation, "exact match rate of an empty set");
  std::size_t hits = 0;
  for (std::size_t s = 0; s < preds.size(); ++s) hits += preds[s] == refs[s];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double agreement_rate(std::span<const LabelVector> preds, std::span<const LabelVector> refs) {
  check_lists(preds, refs);
  std::size_t match = 0, total = 0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    for (std::size_t i = 0; i < preds[s].size(); ++i) match += (preds[s][i] != 0) == (refs[s][i] != 0);
    total += preds[s].size();
  }
  if (total == 0) throw Error(ErrorKind::Validation, "agreement rate of an empty set");
  return static_cast<double>(match) / static_cast<double>(total);
}

MetricsReport make_report(std::span<const LabelVector> preds, std::span<const LabelVector> refs,
                          const Taxonomy& tax, const std::string& reference_source) {
  if (preds.empty()) throw Error(ErrorKind::Validation, "metrics over an empty scene list");
  MetricsReport r;
  const auto counts = confusion(preds, refs);
  r.per_label = prf(counts);
  for (std::size_t i = 0; i < tax.label_count(); ++i) r.label_ids.push_back(tax.id_at(i));
  r.per_group = group_prf(counts, tax);
  r.macro = macro(std::span<const GroupPrf>(r.per_group));
  r.label_macro = macro(std::span<const Prf>(r.per_label));
  r.exact_match_rate = exact_match_rate(preds, refs);
  r.label_agreement_rate = agreement_rate(preds, refs);
  r.n_scenes = preds.size();
  r.reference_source = reference_source;
  return r;
}

std::string render_table(const MetricsReport& report, const Taxonomy& tax, const std::string& title) {
  std::string out;
  char buf[256];
  if (!title.empty()) out += title + "\n";
  const int w = 36;
  std::snprintf(buf, sizeof buf, "%-*s %9s %9s %9s\n", w, "Categories (accumulated)", "Precision", "Recall",
                "F1 Score");
  out += buf;
  out += std::string(w + 30, '-') + "\n";
  for (const auto& g : report.per_group) {
    const std::string name = std::string("Group ") + group_roman(g.group) + ". " + tax.group_info(g.group).short_name;
    std::snprintf(buf, sizeof buf, "%-*s %9.4f %9.4f %9.4f%s\n", w, name.c_str(), g.prf.precision, g.prf.recall,
                  g.prf.f1, g.prf.any_undefined() ? "  (undefined)" : "");
    out += buf;
  }
  out += std::string(w + 30, '-') + "\n";
  std::snprintf(buf, sizeof buf, "%-*s %9.4f %9.4f %9.4f\n", w, "Macro Avg.", report.macro.precision,
                report.macro.recall, report.macro.f1);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-*s %9.2f%%\n", w, "Exact Match Rate", 100.0 * report.exact_match_rate);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-*s %9.2f%%\n", w, "Label Agreement Rate", 100.0 * report.label_agreement_rate);
  out += buf;
  std::snprintf(buf, sizeof buf, "(%zu scenes, reference: %s, label-macro F1 %.4f)\n", report.n_scenes,
                report.reference_source.c_str(), report.label_macro.f1);
  out += buf;
  return out;
}

namespace {
nlohmann::json prf_json(const Prf& p) {
  nlohmann::json j = {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}};
  if (p.any_undefined()) {
    j["undefined"] = {{"precision", p.precision_undefined}, {"recall", p.recall_undefined}, {"f1", p.f1_undefined}};
  }
  return j;
}
}  // namespace

std::string report_to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["reference_source"] = report.reference_source;
  j["n_scenes"] = report.n_scenes;
  j["macro"] = prf_json(report.macro);
  j["label_macro"] = prf_json(report.label_macro);
  j["exact_match_rate"] = report.exact_match_rate;
  j["label_agreement_rate"] = report.label_agreement_rate;
  j["groups"] = nlohmann::json::array();
  for (const auto& g : report.per_group) {
    auto gj = prf_json(g.prf);
    gj["group"] = group_roman(g.group);
    gj["n_labels"] = g.n_labels;
    gj["tp"] = g.counts.tp;
    gj["fp"] = g.counts.fp;
    gj["fn"] = g.counts.fn;
    gj["tn"] = g.counts.tn;
    j["groups"].push_back(gj);
  }
  j["labels"] = nlohmann::json::array();
  for (std::size_t i = 0; i < report.per_label.size(); ++i) {
    auto lj = prf_json(report.per_label[i]);
    lj["id"] = report.label_ids.at(i);
    j["labels"].push_back(lj);
  }
  return j.dump(2);
}

}  // namespace covdistill
