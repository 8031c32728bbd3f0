#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "dualseg/trainer.hpp"
#include "error_code.hpp"
#include "temp_dir.hpp"

namespace dualseg {
namespace {

using testing::TempDir;
using testing::thrown_code;

NetworkConfig small_net() {
  NetworkConfig c;
  c.channel_dims = {4, 8, 12, 16, 20};
  c.crop_h = c.crop_w = 16;
  c.attention_dim = 4;
  return c;
}

const DatasetSplit& small_split() {
  static const DatasetSplit split = [] {
    PhantomSpec spec;
    spec.n_patients = 6;
    spec.dims = {10, 20, 20};
    spec.lesion_radius_range = {2, 4};
    spec.seed = 17;
    return make_split(generate_phantom(spec), 0.3, 5, {16, 16});
  }();
  return split;
}

Batch first_batch(int labeled, int unlabeled) {
  const DatasetSplit& s = small_split();
  Batch b;
  for (int i = 0; i < labeled; ++i) b.labeled.push_back(&s.labeled[i % s.labeled.size()]);
  for (int i = 0; i < unlabeled; ++i) b.unlabeled.push_back(&s.unlabeled[i % s.unlabeled.size()]);
  return b;
}

bool same_values(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

bool same_parameters(TrainState& a, TrainState& b) {
  const auto pa = a.net.parameters();
  const auto pb = b.net.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->name != pb[i]->name || !same_values(pa[i]->value, pb[i]->value)) return false;
  }
  return true;
}

TEST(TrainStep, Deterministic) {
  TrainConfig cfg;
  TrainState a(small_net(), 3), b(small_net(), 3);
  const Batch batch = first_batch(2, 2);
  const LossReport ra = train_step(a, batch, cfg);
  const LossReport rb = train_step(b, batch, cfg);
  EXPECT_EQ(ra, rb);
  EXPECT_TRUE(same_parameters(a, b));
  EXPECT_EQ(a.step, 1);
  EXPECT_NEAR(ra.l_final, ra.l_sup_total + cfg.weights.lambda_cons * ra.l_cons, 1e-12);
}

TEST(TrainStep, MemAndCifReceiveGradient) {
  TrainConfig cfg;
  TrainState s(small_net(), 4);
  train_step(s, first_batch(2, 2), cfg);
  double mem = 0.0, cif = 0.0;
  for (Param<float>* p : s.net.trainable_parameters()) {
    double n = 0.0;
    for (float g : p->grad.values()) n += static_cast<double>(g) * g;
    if (p->name.find(".mem.") != std::string::npos) mem += n;
    if (p->name.rfind("cif.", 0) == 0) cif += n;
  }
  EXPECT_GT(mem, 0.0);
  EXPECT_GT(cif, 0.0);
}

TEST(TrainStep, NoUnlabeledMakesLambdaIrrelevant) {
  TrainConfig with, without;
  without.weights.lambda_cons = 0.0;
  TrainState a(small_net(), 5), b(small_net(), 5);
  const Batch batch = first_batch(3, 0);
  const LossReport ra = train_step(a, batch, with);
  const LossReport rb = train_step(b, batch, without);
  EXPECT_EQ(ra, rb);
  EXPECT_EQ(ra.l_cons, 0.0);
  EXPECT_TRUE(same_parameters(a, b));
}

TEST(TrainStep, ZeroLambdaGivesSupervisedFinalLoss) {
  TrainConfig cfg;
  cfg.weights.lambda_cons = 0.0;
  TrainState s(small_net(), 6);
  const LossReport r = train_step(s, first_batch(2, 2), cfg);
  EXPECT_GT(r.l_cons, 0.0);
  EXPECT_EQ(r.l_final, r.l_sup_total);
}

TEST(TrainStep, WeightDecayIsDecoupled) {
  TrainConfig decay, none;
  none.weight_decay = 0.0;
  TrainState a(small_net(), 7), b(small_net(), 7);
  const Batch batch = first_batch(2, 2);
  EXPECT_EQ(train_step(a, batch, decay), train_step(b, batch, none));
  EXPECT_FALSE(same_parameters(a, b));
  EXPECT_NE(train_step(a, batch, decay).l_final, train_step(b, batch, none).l_final);
}

TEST(TrainStep, AdamMatchesHandComputation) {
  TrainConfig cfg;
  TrainState s(small_net(), 8);
  Param<float>* p = s.net.trainable_parameters().front();
  const Tensor<float> before = p->value;
  train_step(s, first_batch(2, 0), cfg);
  // After one step m_hat = g and v_hat = g^2, so the update is lr * g / (|g| + eps).
  for (std::size_t k = 0; k < std::min<std::size_t>(p->value.size(), 20); ++k) {
    const double g = p->grad[k];
    const double expected = before[k] * (1.0 - cfg.learning_rate * cfg.weight_decay) -
                            cfg.learning_rate * g / (std::abs(g) + cfg.adam_eps);
    EXPECT_NEAR(p->value[k], expected, 1e-6) << k;
  }
}

TEST(TrainStep, NonFiniteInputIsReported) {
  TrainConfig cfg;
  TrainState s(small_net(), 9);
  SliceRecord bad = small_split().labeled.front();
  bad.image_a.values[0] = std::numeric_limits<float>::quiet_NaN();
  Batch batch;
  batch.labeled = {&bad};
  EXPECT_EQ(thrown_code([&] { train_step(s, batch, cfg); }), Errc::NonFiniteLoss);
  EXPECT_EQ(thrown_code([&] { train_step(s, Batch{}, cfg); }), Errc::EmptyLabeledBatch);
}

TEST(Checkpoint, RoundTripIsBitExactAndResumes) {
  TempDir tmp;
  TrainConfig cfg;
  TrainState a(small_net(), 10);
  train_step(a, first_batch(2, 2), cfg);
  a.epoch = 3;
  a.epoch_seed = 12345;
  a.batch_cursor = 2;
  a.best_val_dice = 0.25;
  a.rng.discard(17);
  save_checkpoint(a, tmp / "c.ckpt");
  TrainState b = load_checkpoint(tmp / "c.ckpt");

  EXPECT_EQ(b.step, a.step);
  EXPECT_EQ(b.epoch, a.epoch);
  EXPECT_EQ(b.epoch_seed, a.epoch_seed);
  EXPECT_EQ(b.batch_cursor, a.batch_cursor);
  EXPECT_EQ(b.best_val_dice, a.best_val_dice);
  EXPECT_EQ(b.rng, a.rng);
  EXPECT_EQ(b.net.config(), a.net.config());
  EXPECT_TRUE(same_parameters(a, b));
  for (std::size_t i = 0; i < a.adam_m.size(); ++i) {
    EXPECT_TRUE(same_values(a.adam_m[i], b.adam_m[i]));
    EXPECT_TRUE(same_values(a.adam_v[i], b.adam_v[i]));
  }

  const Batch next = first_batch(2, 2);
  EXPECT_EQ(train_step(a, next, cfg), train_step(b, next, cfg));
  EXPECT_TRUE(same_parameters(a, b));
  EXPECT_EQ(read_checkpoint_config(tmp / "c.ckpt"), small_net());
}

TEST(Checkpoint, CorruptionIsDetected) {
  TempDir tmp;
  TrainState a(small_net(), 11);
  save_checkpoint(a, tmp / "c.ckpt");

  std::filesystem::copy(tmp / "c.ckpt", tmp / "missing.ckpt", std::filesystem::copy_options::recursive);
  std::filesystem::remove(tmp / "missing.ckpt" / "a.enc.l1.block1.conv.weight.f32");
  EXPECT_EQ(thrown_code([&] { load_checkpoint(tmp / "missing.ckpt"); }), Errc::CorruptCheckpoint);

  std::filesystem::copy(tmp / "c.ckpt", tmp / "shape.ckpt", std::filesystem::copy_options::recursive);
  nlohmann::json m;
  std::ifstream(tmp / "shape.ckpt" / "manifest.json") >> m;
  m["arrays"][0]["shape"] = {1, 1, 1, 1};
  std::ofstream(tmp / "shape.ckpt" / "manifest.json", std::ios::trunc) << m.dump();
  EXPECT_EQ(thrown_code([&] { load_checkpoint(tmp / "shape.ckpt"); }), Errc::CorruptCheckpoint);

  EXPECT_EQ(thrown_code([&] { load_checkpoint(tmp / "absent.ckpt"); }), Errc::CorruptCheckpoint);
}

TEST(Fit, DeterministicHistoryAndLossDecreases) {
  TrainConfig cfg;
  cfg.max_steps = 60;
  cfg.eval_every = 30;
  cfg.batch_labeled = 2;
  cfg.batch_unlabeled = 2;
  std::ostringstream log_a, log_b;
  FitOptions oa, ob;
  oa.log = &log_a;
  ob.log = &log_b;
  const FitResult a = fit(small_split(), small_net(), cfg, oa);
  const FitResult b = fit(small_split(), small_net(), cfg, ob);
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(log_a.str(), log_b.str());
  ASSERT_EQ(a.history.steps.size(), 60u);
  ASSERT_EQ(a.history.evals.size(), 2u);

  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
  };
  std::vector<double> head, tail;
  for (int i = 0; i < 20; ++i) head.push_back(a.history.steps[i].l_final);
  for (int i = 40; i < 60; ++i) tail.push_back(a.history.steps[i].l_final);
  EXPECT_GT(median(head), median(tail));

  int lines = 0;
  std::istringstream in(log_a.str());
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.at("type") == "step" || j.at("type") == "eval");
    ++lines;
  }
  EXPECT_EQ(lines, 62);
}

TEST(Fit, ResumeMatchesUninterruptedRun) {
  TempDir tmp;
  TrainConfig cfg;
  cfg.max_steps = 14;
  cfg.eval_every = 0;
  cfg.batch_labeled = 2;
  cfg.batch_unlabeled = 2;
  const FitResult full = fit(small_split(), small_net(), cfg);

  TrainConfig half = cfg;
  half.max_steps = 9;
  FitOptions opts;
  opts.work_dir = tmp.path();
  fit(small_split(), small_net(), half, opts);
  TrainState resumed = load_checkpoint(tmp / "last.ckpt");
  resume_fit(resumed, small_split(), cfg);
  TrainState reference = full.state;
  EXPECT_EQ(resumed.step, reference.step);
  EXPECT_TRUE(same_parameters(resumed, reference));
}

TEST(Config, JsonRoundTripAndValidation) {
  TrainConfig c;
  c.max_steps = 77;
  c.weights.lambda_cons = 0.5;
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<TrainConfig>(), c);
  c.learning_rate = 0.0;
  EXPECT_EQ(thrown_code([&] { c.validate(); }), Errc::ConfigError);
  c = TrainConfig{};
  c.weights.beta = -1.0;
  EXPECT_EQ(thrown_code([&] { c.validate(); }), Errc::ConfigError);
}

}  // namespace
}  // namespace dualseg
