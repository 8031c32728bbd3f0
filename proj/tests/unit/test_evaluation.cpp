#include <algorithm>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "confusion_oracle.hpp"
#include "dualseg/evaluation.hpp"
#include "error_code.hpp"
#include "nifti_fixture.hpp"
#include "temp_dir.hpp"

namespace dualseg {
namespace {

using testing::thrown_code;

Mask mask_from(int h, int w, std::initializer_list<int> ones) {
  Mask m(h, w);
  for (int i : ones) m.values[i] = 1;
  return m;
}

TEST(Metrics, FixedExamples) {
  const Mask a = mask_from(2, 4, {0, 1, 2});
  EXPECT_EQ(dice_score(a, a), 1.0);
  EXPECT_EQ(sensitivity(a, a), 1.0);
  const Mask b = mask_from(2, 4, {4, 5});
  EXPECT_EQ(dice_score(a, b), 0.0);
  EXPECT_EQ(dice_score(Mask(2, 4), Mask(2, 4)), 1.0);
  EXPECT_EQ(sensitivity(Mask(2, 4), Mask(2, 4)), 1.0);
  EXPECT_EQ(sensitivity(Mask(2, 4), a), 0.0);

  const Mask p = mask_from(2, 4, {0, 1});
  const Mask g = mask_from(2, 4, {0, 1, 2, 3});
  EXPECT_NEAR(dice_score(p, g), 2.0 * 2 / (2 + 4), 1e-15);

  const Mask p3 = mask_from(2, 4, {0, 1, 2, 7});
  EXPECT_EQ(sensitivity(p3, g), 0.75);
}

TEST(Metrics, Errors) {
  EXPECT_EQ(thrown_code([&] { dice_score(Mask(2, 2), Mask(2, 3)); }), Errc::ShapeMismatch);
  Mask bad(2, 2);
  bad.values[0] = 3;
  EXPECT_EQ(thrown_code([&] { sensitivity(bad, Mask(2, 2)); }), Errc::NonBinary);
}

TEST(Metrics, MatchBruteForceOracle) {
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 100; ++t) {
    std::bernoulli_distribution bit(std::uniform_real_distribution<double>(0.0, 1.0)(rng));
    Mask p(8, 8), g(8, 8);
    for (auto& v : p.values) v = bit(rng);
    for (auto& v : g.values) v = bit(rng);
    const auto c = testing::brute_force_counts(p.values, g.values);
    EXPECT_EQ(dice_score(p, g), testing::oracle_dice(c));
    EXPECT_EQ(sensitivity(p, g), testing::oracle_sensitivity(c));
    EXPECT_EQ(dice_score(p, g), dice_score(g, p));
    EXPECT_GE(dice_score(p, g), 0.0);
    EXPECT_LE(dice_score(p, g), 1.0);
  }
}

SliceRecord record(const std::string& pid, int idx, Mask gt) {
  SliceRecord r;
  r.patient_id = pid;
  r.slice_index = idx;
  r.image_a = Image(gt.h, gt.w);
  r.image_b = Image(gt.h, gt.w);
  r.mask = std::move(gt);
  r.labeled = true;
  return r;
}

TEST(Aggregate, PatientMeanNotPixelPooled) {
  // P1: pred {0,1,2}, gt {0,1,2,3,4} -> dice 2*3/8 = 0.75
  // P2: pred {0},     gt {0}         -> dice 1.0
  std::vector<SliceRecord> recs{record("P1", 0, mask_from(2, 4, {0, 1, 2, 3, 4})), record("P2", 0, mask_from(2, 4, {0}))};
  std::vector<Mask> preds{mask_from(2, 4, {0, 1, 2}), mask_from(2, 4, {0})};
  const MetricReport r = aggregate_metrics(recs, preds);
  EXPECT_EQ(r.n_patients, 2);
  EXPECT_EQ(r.per_patient.at("P1").dice, 0.75);
  EXPECT_EQ(r.per_patient.at("P2").dice, 1.0);
  EXPECT_EQ(r.mean_dice, 0.875);
  EXPECT_EQ(r.per_patient.at("P1").sens, 0.6);
  EXPECT_EQ(r.mean_sens, 0.8);
}

TEST(Aggregate, PoolsSlicesAndIgnoresOrder) {
  std::vector<SliceRecord> recs{record("P", 0, mask_from(1, 4, {0, 1})), record("P", 1, mask_from(1, 4, {}))};
  std::vector<Mask> preds{mask_from(1, 4, {0}), mask_from(1, 4, {3})};
  const MetricReport r = aggregate_metrics(recs, preds);
  EXPECT_EQ(r.per_patient.at("P").dice, 2.0 * 1 / (2 + 2));  // pooled: TP 1, FP 1, FN 1

  std::reverse(recs.begin(), recs.end());
  std::reverse(preds.begin(), preds.end());
  EXPECT_EQ(aggregate_metrics(recs, preds), r);
  EXPECT_EQ(thrown_code([&] { aggregate_metrics({}, {}); }), Errc::EmptyTestSet);
}

TEST(Fusion, ArgmaxOfAveragedProbabilities) {
  Tensor<float> a({1, 2, 1, 3}), b({1, 2, 1, 3});
  const float fa[3] = {0.9f, 0.2f, 0.6f};
  const float fb[3] = {0.3f, 0.7f, 0.2f};
  for (int i = 0; i < 3; ++i) {
    a.at(0, 1, 0, i) = fa[i];
    a.at(0, 0, 0, i) = 1 - fa[i];
    b.at(0, 1, 0, i) = fb[i];
    b.at(0, 0, 0, i) = 1 - fb[i];
  }
  const auto masks = fuse_predictions(a, b);
  ASSERT_EQ(masks.size(), 1u);
  EXPECT_EQ(masks[0].values, (std::vector<unsigned char>{1, 0, 0}));
}

TEST(Evaluate, PerfectAndExport) {
  NetworkConfig c;
  c.channel_dims = {2, 4, 6, 8, 10};
  c.crop_h = c.crop_w = 16;
  c.attention_dim = 2;
  DualBranchNet<float> net(c, 3);
  std::vector<SliceRecord> recs;
  for (int i = 0; i < 5; ++i) recs.push_back(record("P7", i, Mask(16, 16)));
  const std::vector<Mask> preds = predict_masks(net, recs, 2);
  ASSERT_EQ(preds.size(), 5u);
  // Score the model against its own predictions: a perfect match.
  std::vector<SliceRecord> self = recs;
  for (std::size_t i = 0; i < self.size(); ++i) self[i].mask = preds[i];
  const MetricReport r = evaluate(net, self);
  EXPECT_EQ(r.mean_dice, 1.0);
  EXPECT_EQ(r.mean_sens, 1.0);
  EXPECT_EQ(evaluate(net, self), r);

  testing::TempDir tmp;
  predict_patient(net, recs, tmp.path());
  int files = 0;
  for (const auto& e : std::filesystem::directory_iterator(tmp.path())) {
    ++files;
    const auto bytes = testing::read_bytes(e.path());
    const std::string header = "P5\n16 16\n255\n";
    ASSERT_EQ(bytes.size(), header.size() + 256);
    for (std::size_t i = header.size(); i < bytes.size(); ++i) EXPECT_TRUE(bytes[i] == 0 || bytes[i] == 255);
  }
  EXPECT_EQ(files, 10);
  EXPECT_TRUE(std::filesystem::exists(tmp / "P7_4_pred.pgm"));
  EXPECT_TRUE(std::filesystem::exists(tmp / "P7_0_gt.pgm"));

  testing::TempDir empty;
  predict_patient(net, {}, empty / "none");
  EXPECT_FALSE(std::filesystem::exists(empty / "none"));
}

TEST(Reports, JsonAndTables) {
  AblationResult a;
  a.rows = {{false, false, 0.5, 0.6}, {true, false, 0.55, 0.6}, {false, true, 0.56, 0.61}, {true, true, 0.6, 0.62}};
  const nlohmann::json j = a;
  ASSERT_EQ(j.size(), 4u);
  EXPECT_EQ(j[3]["enable_mem"], true);
  const std::string table = format_ablation_table(a);
  EXPECT_NE(table.find("0.6000"), std::string::npos);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 6);

  MetricReport r;
  r.per_patient["P1"] = {0.5, 0.25};
  r.mean_dice = 0.5;
  r.mean_sens = 0.25;
  r.n_patients = 1;
  EXPECT_NE(format_metric_table(r).find("P1"), std::string::npos);
  EXPECT_EQ(nlohmann::json(r)["per_patient"]["P1"]["sens"], 0.25);
}

}  // namespace
}  // namespace dualseg
