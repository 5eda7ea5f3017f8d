#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "covdistill/data_forge.hpp"
#include "covdistill/dataset_io.hpp"
#include "covdistill/digest.hpp"
#include "covdistill/metrics.hpp"
#include "test_util.hpp"

using namespace covdistill;
using testutil::kind_of;

namespace {

GeneratorConfig tiny_generator(std::size_t n) {
  GeneratorConfig g;
  g.n_scenes = n;
  g.embed_dim = 6;
  g.seq_len_min = 2;
  g.seq_len_max = 5;
  return g;
}

}  // namespace

TEST(Generator, ZeroScenes) {
  EXPECT_TRUE(generate(tiny_generator(0), Taxonomy::builtin()).empty());
}

TEST(Generator, ShapesAndIds) {
  const auto tax = Taxonomy::builtin();
  const auto scenes = generate(tiny_generator(40), tax);
  ASSERT_EQ(scenes.size(), 40u);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& s = scenes[i];
    EXPECT_EQ(s.index, i);
    EXPECT_GE(s.embeddings.rows(), 2u);
    EXPECT_LE(s.embeddings.rows(), 5u);
    EXPECT_EQ(s.embeddings.cols(), 6u);
    EXPECT_EQ(s.mask.size(), s.embeddings.rows());
    EXPECT_EQ(s.y_true.size(), tax.label_count());
    EXPECT_FALSE(s.y_teacher.has_value());
  }
  EXPECT_EQ(scenes[7].scene_id, "scene-000007");
}

TEST(Generator, DeterministicPerSeed) {
  const auto tax = Taxonomy::builtin();
  auto g = tiny_generator(30);
  EXPECT_EQ(generate(g, tax), generate(g, tax));
  g.seed += 1;
  EXPECT_NE(generate(g, tax), generate(tiny_generator(30), tax));
}

TEST(Generator, ScenesIndependentOfCorpusSize) {
  const auto tax = Taxonomy::builtin();
  const auto a = generate(tiny_generator(20), tax);
  const auto b = generate(tiny_generator(21), tax);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Generator, LabelsOnlyPathMatchesFullGenerator) {
  const auto tax = Taxonomy::builtin();
  const auto g = tiny_generator(25);
  const auto scenes = generate(g, tax);
  const auto labels = generate_labels(g, tax.label_count(), 10, 15);
  for (std::size_t k = 0; k < 15; ++k) EXPECT_EQ(labels[k], scenes[10 + k].y_true);
}

TEST(Generator, EmpiricalPrevalenceConverges) {
  const auto tax = Taxonomy::builtin(Taxonomy::kPaper68Profile);
  const auto g = tiny_generator(100000);
  const auto pi = resolve_prevalence(g, tax.label_count());
  const auto labels = generate_labels(g, tax.label_count(), 0, g.n_scenes);
  for (std::size_t i = 0; i < pi.size(); ++i) {
    double hits = 0;
    for (const auto& y : labels) hits += y[i];
    EXPECT_NEAR(hits / 1e5, pi[i], 0.01) << tax.id_at(i);
  }
}

TEST(Generator, DefaultPrevalenceIsLongTailed) {
  const auto pi = default_prevalence(68, 7);
  std::size_t rare = 0;
  for (double p : pi) {
    EXPECT_GE(p, 0.02);
    EXPECT_LT(p, 0.50);
    rare += p < 0.30;
  }
  EXPECT_EQ(rare, 55u);
  EXPECT_GE(std::count_if(pi.begin(), pi.end(), [](double p) { return p <= 0.30; }), 45);
}

TEST(Generator, ConfigValidation) {
  const auto tax = Taxonomy::builtin();
  auto bad = tiny_generator(3);
  bad.seq_len_min = 0;
  EXPECT_EQ(kind_of([&] { generate(bad, tax); }), ErrorKind::Config);
  bad = tiny_generator(3);
  bad.prevalence = {0.5};
  EXPECT_EQ(kind_of([&] { generate(bad, tax); }), ErrorKind::Config);
  bad = tiny_generator(3);
  bad.noise_std = 0.0;
  EXPECT_EQ(kind_of([&] { generate(bad, tax); }), ErrorKind::Config);
}

TEST(Teacher, PerfectTargetsGiveZeroFlips) {
  const auto r = calibrate_label(0.3, 1.0, 1.0);
  EXPECT_EQ(r.fn, 0.0);
  EXPECT_EQ(r.fp, 0.0);
}

TEST(Teacher, ClosedFormRates) {
  const auto r = calibrate_label(0.2, 0.91, 0.88);
  EXPECT_NEAR(r.fn, 0.12, 1e-15);
  EXPECT_NEAR(r.fp, 0.2 * 0.88 * 0.09 / (0.91 * 0.8), 1e-15);
  EXPECT_NEAR(r.fp, 0.02176, 1e-5);
}

TEST(Teacher, InfeasibleTargetIsCalibrationError) {
  EXPECT_EQ(kind_of([] { calibrate_label(0.5, 0.3, 0.9); }), ErrorKind::Calibration);
}

TEST(Teacher, ZeroRatesCopyTruth) {
  const auto tax = Taxonomy::builtin();
  auto scenes = generate(tiny_generator(50), tax);
  TeacherConfig t;
  t.rates.assign(tax.label_count(), FlipRates{});
  apply_teacher(scenes, t);
  for (const auto& s : scenes) EXPECT_EQ(*s.y_teacher, s.y_true);
}

TEST(Teacher, CalibrationReachesGroupTargets) {
  const auto tax = Taxonomy::builtin(Taxonomy::kPaper68Profile);
  const auto g = tiny_generator(50000);
  const auto pi = resolve_prevalence(g, tax.label_count());
  const auto targets = TeacherTargets::lvlm_reference();
  const auto teacher = calibrate_teacher(targets, tax, pi);
  const auto truth = generate_labels(g, tax.label_count(), 0, g.n_scenes);
  std::vector<LabelVector> noisy(truth.size());
  for (std::size_t k = 0; k < truth.size(); ++k) noisy[k] = corrupt_labels(truth[k], teacher, k);

  const auto counts = confusion(noisy, truth);
  for (const auto& gp : group_prf(counts, tax)) {
    const auto& t = targets.target(gp.group);
    EXPECT_NEAR(gp.prf.precision, t.precision, 0.02) << group_roman(gp.group);
    EXPECT_NEAR(gp.prf.recall, t.recall, 0.02) << group_roman(gp.group);
  }
  for (std::size_t i = 0; i < pi.size(); ++i) {
    const auto& c = counts.labels[i];
    const double agree = static_cast<double>(c.tp + c.tn) / static_cast<double>(truth.size());
    EXPECT_NEAR(agree, expected_label_agreement(pi[i], teacher.rates[i]), 0.01) << tax.id_at(i);
  }
}

TEST(Teacher, MissingGroupTargetIsLookupError) {
  TeacherTargets t;
  t.groups = {{Group::II, 0.9, 0.9}};
  const auto tax = Taxonomy::builtin();
  const std::vector<double> pi(tax.label_count(), 0.1);
  EXPECT_EQ(kind_of([&] { calibrate_teacher(t, tax, pi); }), ErrorKind::Lookup);
}

TEST(Split, TenScenes) {
  const auto s = split(10, {{"a", 0.8}, {"b", 0.2}}, 1);
  EXPECT_EQ(s.part("a").size(), 8u);
  EXPECT_EQ(s.part("b").size(), 2u);
}

TEST(Split, DefaultDeskScale) {
  const auto s = split(9000, default_split_parts(), 3);
  EXPECT_EQ(s.part("teacher_train").size(), 800u);
  EXPECT_EQ(s.part("teacher_test").size(), 200u);
  EXPECT_EQ(s.part("surrogate_train").size(), 5600u);
  EXPECT_EQ(s.part("surrogate_val").size(), 1200u);
  EXPECT_EQ(s.part("surrogate_test").size(), 1200u);
  std::vector<int> seen(9000, 0);
  for (const auto& part : s.indices)
    for (std::size_t i : part) ++seen[i];
  for (int v : seen) EXPECT_EQ(v, 1);
}

TEST(Split, DeterministicAndSeeded) {
  EXPECT_EQ(split(100, default_split_parts(), 5).indices, split(100, default_split_parts(), 5).indices);
  EXPECT_NE(split(100, default_split_parts(), 5).indices, split(100, default_split_parts(), 6).indices);
}

TEST(Split, ProportionsMustSumToOne) {
  EXPECT_EQ(kind_of([] { split(10, {{"a", 0.5}, {"b", 0.4}}, 1); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([] { split(10, {{"a", 1.0}}, 1).part("b"); }), ErrorKind::Lookup);
}

class DatasetIo : public ::testing::TestWithParam<FloatEncoding> {};

TEST_P(DatasetIo, RoundTripIsExact) {
  testutil::TempDir dir("dataset");
  const auto tax = Taxonomy::builtin();
  auto scenes = generate(tiny_generator(12), tax);
  const std::vector<double> pi(tax.label_count(), 0.2);
  apply_teacher(scenes, calibrate_teacher(TeacherTargets::lvlm_reference(), tax, pi));
  scenes[3].y_teacher.reset();
  scenes[4].mask[0] = 0;
  DatasetHeader h{1, 6, tax.label_count(), "tax", "gen", "teach"};
  const auto path = dir.path() / "d.jsonl";
  write_dataset(path, h, scenes, GetParam());
  const auto ds = read_dataset(path);
  EXPECT_EQ(ds.header, h);
  EXPECT_EQ(ds.scenes, scenes);
}

INSTANTIATE_TEST_SUITE_P(Encodings, DatasetIo, ::testing::Values(FloatEncoding::Hex, FloatEncoding::Array));

TEST(DatasetIoErrors, EmptyBodyAndBadRecords) {
  testutil::TempDir dir("dataset_err");
  const auto tax = Taxonomy::builtin();
  DatasetHeader h{1, 6, tax.label_count(), "tax", "gen", "teach"};
  const auto path = dir.path() / "d.jsonl";
  write_dataset(path, h, {});
  EXPECT_TRUE(read_dataset(path).scenes.empty());

  auto scenes = generate(tiny_generator(1), tax);
  scenes[0].y_true.pop_back();
  const std::string line = encode_scene(scenes[0], FloatEncoding::Hex);
  EXPECT_EQ(kind_of([&] { decode_scene(line, h, 2); }), ErrorKind::Validation);
  EXPECT_EQ(kind_of([&] { decode_scene("{not json", h, 2); }), ErrorKind::Parse);
  EXPECT_EQ(kind_of([&] { read_dataset(dir.path() / "missing.jsonl"); }), ErrorKind::Io);
}

TEST(DatasetIoErrors, FileDigestTracksBytes) {
  testutil::TempDir dir("digest");
  const auto p = dir.path() / "f.txt";
  std::ofstream(p) << "abc";
  EXPECT_EQ(file_digest(p), fnv1a64("abc"));
}

TEST(DatasetIoErrors, BitStrings) {
  EXPECT_EQ(bits_to_string({1, 0, 1}), "101");
  EXPECT_EQ(string_to_bits("0110"), (LabelVector{0, 1, 1, 0}));
  EXPECT_EQ(kind_of([] { string_to_bits("01x"); }), ErrorKind::Parse);
}
