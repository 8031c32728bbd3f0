#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "dualseg/evaluation.hpp"
#include "dualseg/objectives.hpp"
#include "error_code.hpp"
#include "finite_difference.hpp"

namespace dualseg {
namespace {

using testing::numeric_gradient;
using testing::relative_error;
using testing::thrown_code;

// Two-class probabilities with the given foreground values.
Tensor<double> probs_from_fg(int n, int h, int w, const std::vector<double>& fg) {
  Tensor<double> p({n, 2, h, w});
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int s = 0; s < n; ++s)
    for (std::size_t i = 0; i < hw; ++i) {
      p.plane(s, 1)[i] = fg[s * hw + i];
      p.plane(s, 0)[i] = 1.0 - fg[s * hw + i];
    }
  return p;
}

MaskBatch mask_of(int n, int h, int w, std::vector<unsigned char> v) { return {n, h, w, std::move(v)}; }

Tensor<double> random_probs(int n, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.05, 0.95);
  std::vector<double> fg(static_cast<std::size_t>(n) * h * w);
  for (double& v : fg) v = d(rng);
  return probs_from_fg(n, h, w, fg);
}

MaskBatch random_mask(int n, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MaskBatch m{n, h, w, std::vector<unsigned char>(static_cast<std::size_t>(n) * h * w)};
  for (auto& v : m.values) v = static_cast<unsigned char>(rng() & 1u);
  return m;
}

TEST(CrossEntropy, Constants) {
  const MaskBatch m = mask_of(1, 2, 2, {1, 0, 1, 0});
  EXPECT_NEAR(cross_entropy(probs_from_fg(1, 2, 2, {0.5, 0.5, 0.5, 0.5}), m), std::log(2.0), 1e-6);
  EXPECT_LE(cross_entropy(probs_from_fg(1, 2, 2, {1, 0, 1, 0}), m), 1e-6);
  const double wrong = cross_entropy(probs_from_fg(1, 2, 2, {0, 1, 0, 1}), m);
  EXPECT_NEAR(wrong, -std::log(1e-7), 1e-3);
  EXPECT_NEAR(wrong, 16.118, 1e-3);
  EXPECT_EQ(thrown_code([&] { cross_entropy(probs_from_fg(1, 2, 2, {0, 0, 0, 0}), mask_of(1, 1, 4, {0, 0, 0, 0})); }),
            Errc::ShapeMismatch);
}

TEST(Dice, Constants) {
  EXPECT_LE(dice_loss(probs_from_fg(1, 2, 2, {1, 0, 1, 0}), mask_of(1, 2, 2, {1, 0, 1, 0})), 1e-5);
  EXPECT_EQ(dice_loss(probs_from_fg(1, 2, 2, {0, 0, 0, 0}), mask_of(1, 2, 2, {0, 0, 0, 0})), 0.0);
  const double eps = 1e-5;
  const double expected = 1.0 - (2.0 + eps) / (3.0 + eps);
  EXPECT_NEAR(dice_loss(probs_from_fg(1, 2, 2, {1, 1, 0, 0}), mask_of(1, 2, 2, {1, 0, 0, 0})), expected, 1e-12);
  EXPECT_NEAR(expected, 1.0 / 3.0, 1e-4);
}

TEST(Dice, PermutationInvariant) {
  const Tensor<double> p = random_probs(1, 4, 4, 1);
  const MaskBatch m = random_mask(1, 4, 4, 2);
  std::vector<int> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937 rng(3);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor<double> pp(p.shape());
  MaskBatch mp = m;
  for (int i = 0; i < 16; ++i) {
    pp.plane(0, 0)[i] = p.plane(0, 0)[perm[i]];
    pp.plane(0, 1)[i] = p.plane(0, 1)[perm[i]];
    mp.values[i] = m.values[perm[i]];
  }
  EXPECT_NEAR(dice_loss(p, m), dice_loss(pp, mp), 1e-12);
}

TEST(Dice, HardPredictionsMatchDiceScore) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MaskBatch gt = random_mask(1, 8, 8, seed);
    const MaskBatch pred = random_mask(1, 8, 8, seed + 100);
    std::vector<double> fg(pred.values.begin(), pred.values.end());
    const double loss = dice_loss(probs_from_fg(1, 8, 8, fg), gt);
    EXPECT_NEAR(loss, 1.0 - dice_score(pred.values, gt.values), 1e-4);
  }
}

TEST(Consistency, Constants) {
  const Tensor<double> ones = probs_from_fg(2, 3, 3, std::vector<double>(18, 1.0));
  const Tensor<double> zeros = probs_from_fg(2, 3, 3, std::vector<double>(18, 0.0));
  EXPECT_EQ(consistency_loss(ones, ones), 0.0);
  EXPECT_NEAR(consistency_loss(ones, zeros), 1.0, 1e-9);
  const Tensor<double> a = probs_from_fg(1, 2, 2, {0.75, 0.75, 0.75, 0.75});
  const Tensor<double> b = probs_from_fg(1, 2, 2, {0.25, 0.25, 0.25, 0.25});
  EXPECT_NEAR(consistency_loss(a, b), 0.25, 1e-12);
  EXPECT_EQ(consistency_loss(Tensor<double>({0, 2, 4, 4}), Tensor<double>({0, 2, 4, 4})), 0.0);
  EXPECT_EQ(thrown_code([&] { consistency_loss(a, ones); }), Errc::ShapeMismatch);
}

TEST(Consistency, SymmetricExactly) {
  const Tensor<double> a = random_probs(2, 4, 4, 7);
  const Tensor<double> b = random_probs(2, 4, 4, 8);
  EXPECT_EQ(consistency_loss(a, b), consistency_loss(b, a));
}

TEST(Supervised, WeightsAndSums) {
  const MaskBatch m = mask_of(1, 2, 2, {1, 0, 1, 0});
  const Tensor<double> perfect = probs_from_fg(1, 2, 2, {1, 0, 1, 0});
  EXPECT_LE(supervised_loss(perfect, perfect, m, LossWeights{}).total, 2e-5);

  const Tensor<double> pa = random_probs(1, 2, 2, 1);
  const Tensor<double> pb = random_probs(1, 2, 2, 2);
  LossWeights no_ce;
  no_ce.beta = 0.0;
  const SupervisedLoss s = supervised_loss(pa, pb, m, no_ce);
  EXPECT_NEAR(s.total, dice_loss(pa, m) + dice_loss(pb, m), 1e-15);

  const SupervisedLoss full = supervised_loss(pa, pb, m, LossWeights{});
  EXPECT_NEAR(full.total, full.ce_a + full.dice_a + full.ce_b + full.dice_b, 1e-15);
  EXPECT_EQ(0.7 + 0.3 + (0.5 + 0.2), 1.7);

  EXPECT_EQ(thrown_code([&] { supervised_loss(Tensor<double>({0, 2, 2, 2}), Tensor<double>({0, 2, 2, 2}),
                                              MaskBatch{0, 2, 2, {}}, LossWeights{}); }),
            Errc::EmptyLabeledBatch);
}

TEST(Final, Constants) {
  const LossWeights w;  // lambda_cons = 0.01
  EXPECT_EQ(final_loss(1.7, 0.25, w), 1.7025);
  EXPECT_EQ(final_loss(1.3, 0.0, w), 1.3);
  LossWeights zero = w;
  zero.lambda_cons = 0.0;
  EXPECT_EQ(final_loss(1.3, 123.0, zero), 1.3);
  EXPECT_EQ(thrown_code([&] { final_loss(NAN, 0.0, w); }), Errc::NonFiniteLoss);
  EXPECT_EQ(thrown_code([&] { final_loss(1.0, INFINITY, w); }), Errc::NonFiniteLoss);
}

TEST(Gradients, LossesAgainstFiniteDifferences) {
  const MaskBatch m = random_mask(2, 3, 3, 11);
  Tensor<double> p = random_probs(2, 3, 3, 12);
  Tensor<double> q = random_probs(2, 3, 3, 13);

  Tensor<double> g_ce, g_dice, g_ca, g_cb;
  cross_entropy(p, m, &g_ce);
  dice_loss(p, m, &g_dice);
  consistency_loss(p, q, &g_ca, &g_cb);

  EXPECT_LT(relative_error(g_ce.values(), numeric_gradient(p, [&] { return cross_entropy(p, m); }, 1e-6)), 1e-4);
  EXPECT_LT(relative_error(g_dice.values(), numeric_gradient(p, [&] { return dice_loss(p, m); }, 1e-6)), 1e-4);
  EXPECT_LT(relative_error(g_ca.values(), numeric_gradient(p, [&] { return consistency_loss(p, q); }, 1e-6)), 1e-4);
  EXPECT_LT(relative_error(g_cb.values(), numeric_gradient(q, [&] { return consistency_loss(p, q); }, 1e-6)), 1e-4);
}

TEST(Losses, NonNegative) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor<double> p = random_probs(2, 4, 4, seed);
    const Tensor<double> q = random_probs(2, 4, 4, seed + 50);
    const MaskBatch m = random_mask(2, 4, 4, seed + 99);
    EXPECT_GE(cross_entropy(p, m), 0.0);
    EXPECT_GE(dice_loss(p, m), 0.0);
    EXPECT_GE(consistency_loss(p, q), 0.0);
  }
}

}  // namespace
}  // namespace dualseg
