#include <gtest/gtest.h>

#include <cmath>

#include "covdistill/metrics.hpp"
#include "test_util.hpp"

using namespace covdistill;
using testutil::kind_of;

namespace {

// Brute-force reference: each count recomputed by its own pass over every
// (scene, label) cell, ratios from the textbook definitions.
struct RefCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

RefCounts ref_counts(const std::vector<LabelVector>& p, const std::vector<LabelVector>& r,
                     const std::vector<std::size_t>& labels) {
  RefCounts c;
  for (std::size_t l : labels) {
    for (std::size_t s = 0; s < p.size(); ++s) c.tp += (p[s][l] == 1 && r[s][l] == 1);
    for (std::size_t s = 0; s < p.size(); ++s) c.fp += (p[s][l] == 1 && r[s][l] == 0);
    for (std::size_t s = 0; s < p.size(); ++s) c.fn += (p[s][l] == 0 && r[s][l] == 1);
    for (std::size_t s = 0; s < p.size(); ++s) c.tn += (p[s][l] == 0 && r[s][l] == 0);
  }
  return c;
}

struct RefPrf {
  double p, r, f;
  bool p_undef, r_undef, f_undef;
};

RefPrf ref_prf(const RefCounts& c) {
  RefPrf o{0, 0, 0, false, false, false};
  if (c.tp + c.fp > 0) o.p = double(c.tp) / double(c.tp + c.fp);
  else o.p_undef = true;
  if (c.tp + c.fn > 0) o.r = double(c.tp) / double(c.tp + c.fn);
  else o.r_undef = true;
  if (o.p + o.r > 0) o.f = 2 * o.p * o.r / (o.p + o.r);
  else o.f_undef = true;
  return o;
}

void expect_prf(const Prf& got, const RefPrf& want) {
  EXPECT_NEAR(got.precision, want.p, 1e-15);
  EXPECT_NEAR(got.recall, want.r, 1e-15);
  EXPECT_NEAR(got.f1, want.f, 1e-15);
  EXPECT_EQ(got.precision_undefined, want.p_undef);
  EXPECT_EQ(got.recall_undefined, want.r_undef);
  EXPECT_EQ(got.f1_undefined, want.f_undef);
}

}  // namespace

TEST(Confusion, IdenticalListsHaveNoErrors) {
  const std::vector<LabelVector> v{{1, 0, 1}, {0, 0, 1}};
  for (const auto& c : confusion(v, v).labels) {
    EXPECT_EQ(c.fp, 0u);
    EXPECT_EQ(c.fn, 0u);
  }
}

TEST(Confusion, SingleSceneSwap) {
  const auto c = confusion(std::vector<LabelVector>{{1, 0}}, std::vector<LabelVector>{{0, 1}});
  EXPECT_EQ(c.labels[0], (LabelCounts{0, 1, 0, 0}));
  EXPECT_EQ(c.labels[1], (LabelCounts{0, 0, 1, 0}));
}

TEST(Confusion, ThreeSceneHandCase) {
  const auto c = confusion(std::vector<LabelVector>{{1}, {1}, {0}}, std::vector<LabelVector>{{1}, {0}, {0}});
  EXPECT_EQ(c.labels[0], (LabelCounts{1, 1, 0, 1}));
}

TEST(Confusion, LengthMismatchIsValidationError) {
  EXPECT_EQ(kind_of([] { confusion(std::vector<LabelVector>{{1, 0}}, std::vector<LabelVector>{{1}}); }),
            ErrorKind::Validation);
  EXPECT_EQ(kind_of([] { confusion(std::vector<LabelVector>{{1}}, std::vector<LabelVector>{}); }),
            ErrorKind::Validation);
}

TEST(Prf, HandCases) {
  auto a = prf(LabelCounts{8, 2, 2, 0});
  EXPECT_DOUBLE_EQ(a.precision, 0.8);
  EXPECT_DOUBLE_EQ(a.recall, 0.8);
  EXPECT_NEAR(a.f1, 0.8, 1e-15);
  EXPECT_FALSE(a.any_undefined());

  auto b = prf(LabelCounts{0, 0, 0, 5});
  EXPECT_EQ(b.precision, 0.0);
  EXPECT_EQ(b.recall, 0.0);
  EXPECT_EQ(b.f1, 0.0);
  EXPECT_TRUE(b.precision_undefined && b.recall_undefined && b.f1_undefined);

  auto c = prf(LabelCounts{1, 0, 0, 0});
  EXPECT_EQ(c.precision, 1.0);
  EXPECT_EQ(c.recall, 1.0);
  EXPECT_EQ(c.f1, 1.0);
}

TEST(GroupPrf, OneLabelPerGroupEqualsLabel) {
  // Label i of this profile list: D-1 (II), G-1 (III), J-1 (IV), L-1 (V).
  const auto tax = Taxonomy::builtin();
  ConfusionCounts counts;
  counts.labels.assign(tax.label_count(), LabelCounts{});
  const std::vector<std::string> ids{"D-1", "G-1", "J-1", "L-1"};
  const std::vector<LabelCounts> vals{{3, 1, 2, 0}, {5, 0, 1, 0}, {0, 2, 2, 0}, {7, 7, 7, 0}};
  for (std::size_t k = 0; k < ids.size(); ++k) counts.labels[tax.label_index(ids[k])] = vals[k];
  const auto groups = group_prf(counts, tax);
  ASSERT_EQ(groups.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(groups[k].prf, prf(vals[k]));
}

TEST(GroupPrf, MicroAccumulationInsideGroup) {
  const auto tax = Taxonomy::builtin();
  ConfusionCounts counts;
  counts.labels.assign(tax.label_count(), LabelCounts{});
  counts.labels[tax.label_index("D-1")] = {1, 1, 0, 0};
  counts.labels[tax.label_index("D-2")] = {1, 0, 1, 0};
  const auto g = group_prf(counts, tax, {Group::II});
  EXPECT_NEAR(g[0].prf.precision, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(g[0].prf.recall, 2.0 / 3.0, 1e-15);
}

TEST(GroupPrf, GroupWithoutLabelsIsFlagged) {
  const auto tax = Taxonomy::builtin();
  ConfusionCounts counts;
  counts.labels.assign(tax.label_count(), LabelCounts{});
  const auto g = group_prf(counts, tax, {Group::I});
  EXPECT_EQ(g[0].n_labels, 0u);
  EXPECT_EQ(g[0].prf.f1, 0.0);
  EXPECT_TRUE(g[0].prf.f1_undefined);
  EXPECT_TRUE(g[0].undefined());
}

TEST(Macro, PublishedGroupScores) {
  const std::vector<double> lvlm{0.89, 0.82, 0.80, 0.84};
  const std::vector<double> surrogate{0.87, 0.78, 0.75, 0.82};
  auto mean_f1 = [](const std::vector<double>& f) {
    std::vector<Prf> v;
    for (double x : f) v.push_back(Prf{0, 0, x});
    return macro(std::span<const Prf>(v)).f1;
  };
  EXPECT_NEAR(mean_f1(lvlm), 0.8375, 1e-12);
  EXPECT_NEAR(mean_f1(lvlm), 0.84, 0.005);
  EXPECT_NEAR(mean_f1(surrogate), 0.805, 1e-12);
  EXPECT_NEAR(mean_f1(surrogate), 0.80, 0.005);
  EXPECT_EQ(mean_f1({0.5}), 0.5);
}

TEST(Macro, EmptyInputIsValidationError) {
  EXPECT_EQ(kind_of([] { macro(std::span<const Prf>()); }), ErrorKind::Validation);
}

TEST(Rates, ExactMatch) {
  const std::vector<LabelVector> a{{1, 0}, {0, 0}, {1, 1}, {0, 1}};
  auto b = a;
  EXPECT_EQ(exact_match_rate(a, b), 1.0);
  b[2][0] = 0;
  EXPECT_EQ(exact_match_rate(a, b), 0.75);
  std::vector<LabelVector> c{{0, 1}, {1, 1}, {0, 0}, {1, 0}};
  EXPECT_EQ(exact_match_rate(a, c), 0.0);
}

TEST(Rates, Agreement) {
  const std::vector<LabelVector> a{{1, 0, 1, 1}, {0, 0, 1, 0}};
  EXPECT_EQ(agreement_rate(a, a), 1.0);
  auto b = a;
  b[0][1] = 1;
  b[1][3] = 1;
  EXPECT_EQ(agreement_rate(a, b), 0.75);
  auto c = a;
  for (auto& v : c)
    for (auto& x : v) x = !x;
  EXPECT_EQ(agreement_rate(a, c), 0.0);
}

TEST(MetricsOracle, RandomCasesMatchBruteForce) {
  const auto tax = Taxonomy::builtin(Taxonomy::kPaper68Profile);
  const std::size_t L = tax.label_count();
  Rng rng(17);
  bool saw_undefined_precision = false, saw_undefined_recall = false;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 12));
    // Sparse regimes make zero-division paths common.
    const double dens = trial % 3 == 0 ? 0.02 : rng.uniform(0.05, 0.6);
    std::vector<LabelVector> p(n, LabelVector(L)), r(n, LabelVector(L));
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < L; ++i) {
        p[s][i] = rng.bernoulli(dens);
        r[s][i] = rng.bernoulli(dens);
      }
    const auto counts = confusion(p, r);
    for (std::size_t i = 0; i < L; ++i) {
      const auto want = ref_counts(p, r, {i});
      const auto& got = counts.labels[i];
      ASSERT_EQ(got.tp, want.tp);
      ASSERT_EQ(got.fp, want.fp);
      ASSERT_EQ(got.fn, want.fn);
      ASSERT_EQ(got.tn, want.tn);
      expect_prf(prf(got), ref_prf(want));
    }
    const auto groups = group_prf(counts, tax);
    double macro_f1 = 0.0, macro_p = 0.0, macro_r = 0.0;
    bool any_defined = false;
    for (const auto& g : groups) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < L; ++i)
        if (tax.group_of(i) == g.group) members.push_back(i);
      const auto want = ref_prf(ref_counts(p, r, members));
      expect_prf(g.prf, want);
      saw_undefined_precision |= want.p_undef;
      saw_undefined_recall |= want.r_undef;
      any_defined |= !(want.p_undef && want.r_undef);
      macro_f1 += want.f;
      macro_p += want.p;
      macro_r += want.r;
    }
    if (any_defined) {
      const auto m = macro(std::span<const GroupPrf>(groups));
      EXPECT_NEAR(m.f1, macro_f1 / double(groups.size()), 1e-15);
      EXPECT_NEAR(m.precision, macro_p / double(groups.size()), 1e-15);
      EXPECT_NEAR(m.recall, macro_r / double(groups.size()), 1e-15);
    }
    std::size_t exact = 0, agree = 0;
    for (std::size_t s = 0; s < n; ++s) {
      bool same = true;
      for (std::size_t i = 0; i < L; ++i) {
        same = same && p[s][i] == r[s][i];
        agree += p[s][i] == r[s][i];
      }
      exact += same;
    }
    EXPECT_NEAR(exact_match_rate(p, r), double(exact) / double(n), 1e-15);
    EXPECT_NEAR(agreement_rate(p, r), double(agree) / double(n * L), 1e-15);
  }
  EXPECT_TRUE(saw_undefined_precision);
  EXPECT_TRUE(saw_undefined_recall);
}

TEST(Report, TextTableHasOneMacroRow) {
  const auto tax = Taxonomy::builtin();
  std::vector<LabelVector> p(3, LabelVector(tax.label_count(), 0)), r = p;
  p[0][0] = r[0][0] = 1;
  p[1][40] = 1;
  r[2][70] = 1;
  const auto report = make_report(p, r, tax, "truth");
  const auto text = render_table(report, tax, "t");
  std::size_t count = 0;
  for (std::size_t pos = text.find("Macro Avg."); pos != std::string::npos; pos = text.find("Macro Avg.", pos + 1)) {
    ++count;
  }
  EXPECT_EQ(count, 1u);
  EXPECT_NE(text.find("Exact Match"), std::string::npos);
  EXPECT_EQ(kind_of([&] { make_report({}, {}, tax, "truth"); }), ErrorKind::Validation);
}
