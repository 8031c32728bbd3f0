#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include <gtest/gtest.h>

#include "dualseg/network.hpp"
#include "error_code.hpp"
#include "finite_difference.hpp"
#include "reference_unet.hpp"

namespace dualseg {
namespace {

using testing::numeric_gradient;
using testing::relative_error;
using testing::thrown_code;

template <class T>
Tensor<T> random_tensor(Shape4 s, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  Tensor<T> t(s);
  for (T& v : t.values()) v = static_cast<T>(d(rng));
  return t;
}

template <class T>
double weighted_sum(const Tensor<T>& x, const Tensor<T>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += static_cast<double>(x[i]) * w[i];
  return s;
}

NetworkConfig tiny_config(bool mem, bool cif) {
  NetworkConfig c;
  c.channel_dims = {4, 8, 16, 32, 64};
  c.crop_h = c.crop_w = 16;
  c.attention_dim = 8;
  c.enable_mem = mem;
  c.enable_cif = cif;
  return c;
}

TEST(Shapes, FullWidthPyramidAndLogits) {
  NetworkConfig c;  // channels 32..512, crop 160
  DualBranchNet<float> net(c, 1);
  const auto img = random_tensor<float>({1, 1, 160, 160}, 2);
  ForwardTrace<float> trace;
  const DualPrediction<float> pred = net.forward(img, img, Mode::Infer, &trace);
  const int expected[5][3] = {{32, 160, 160}, {64, 80, 80}, {128, 40, 40}, {256, 20, 20}, {512, 10, 10}};
  for (int l = 0; l < 5; ++l) {
    EXPECT_EQ(trace.pyramid_a[l].shape(), (Shape4{1, expected[l][0], expected[l][1], expected[l][2]}));
  }
  EXPECT_EQ(trace.bottleneck_a.shape(), (Shape4{1, 1024, 10, 10}));
  EXPECT_EQ(trace.fused.shape(), (Shape4{1, 512, 10, 10}));
  EXPECT_EQ(pred.logits_a.shape(), (Shape4{1, 2, 160, 160}));
  EXPECT_EQ(pred.logits_b.shape(), (Shape4{1, 2, 160, 160}));
}

TEST(Shapes, ScaledConfig) {
  DualBranchNet<float> net(tiny_config(true, true), 1);
  const auto pyr = net.encode(random_tensor<float>({2, 1, 16, 16}, 3), Branch::A, Mode::Infer);
  EXPECT_EQ(pyr[4].shape(), (Shape4{2, 64, 1, 1}));
}

TEST(Shapes, Errors) {
  NetworkConfig c = tiny_config(true, true);
  DualBranchNet<float> net(c, 1);
  EXPECT_EQ(thrown_code([&] { net.encode(Tensor<float>({1, 1, 150, 150}), Branch::A, Mode::Infer); }),
            Errc::BadSpatialDims);
  const auto pyr = net.encode(random_tensor<float>({1, 1, 16, 16}, 4), Branch::A, Mode::Infer);
  EXPECT_EQ(thrown_code([&] { net.decode(pyr, Tensor<float>({1, 96, 1, 1}), Branch::A, Mode::Infer); }),
            Errc::BottleneckWidthMismatch);
  EXPECT_NO_THROW(net.decode(pyr, Tensor<float>({1, 128, 1, 1}), Branch::A, Mode::Infer));

  DualBranchNet<float> plain(tiny_config(true, false), 1);
  EXPECT_NO_THROW(plain.decode(pyr, Tensor<float>({1, 64, 1, 1}), Branch::A, Mode::Infer));
  EXPECT_EQ(thrown_code([&] { plain.mem_forward(Tensor<float>({1, 32, 1, 1}), Branch::A, Mode::Infer); }),
            Errc::ShapeMismatch);

  NetworkConfig bad = c;
  bad.channel_dims = {4, 8, 8, 32, 64};
  EXPECT_EQ(thrown_code([&] { bad.validate(); }), Errc::ConfigError);
  bad = c;
  bad.crop_h = 40;
  EXPECT_EQ(thrown_code([&] { bad.validate(); }), Errc::ConfigError);
}

TEST(Forward, ProbabilitiesSumToOneAndZeroInputIsFinite) {
  DualBranchNet<float> net(tiny_config(true, true), 5);
  const DualPrediction<float> p = net.forward(random_tensor<float>({2, 1, 16, 16}, 6),
                                              random_tensor<float>({2, 1, 16, 16}, 7), Mode::Train);
  for (int n = 0; n < 2; ++n)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        EXPECT_NEAR(p.probs_a.at(n, 0, y, x) + p.probs_a.at(n, 1, y, x), 1.0, 1e-5);
        EXPECT_NEAR(p.probs_b.at(n, 0, y, x) + p.probs_b.at(n, 1, y, x), 1.0, 1e-5);
      }
  const Tensor<float> zeros({2, 1, 16, 16});
  const DualPrediction<float> z = net.forward(zeros, zeros, Mode::Train);
  EXPECT_TRUE(z.logits_a.all_finite() && z.logits_b.all_finite());
}

TEST(Mem, IdentityAtInitAndWhenDisabled) {
  DualBranchNet<float> net(tiny_config(true, true), 8);
  const auto f = random_tensor<float>({2, 64, 1, 1}, 9);
  const EnhancedFeatures<float> e = net.mem_forward(f, Branch::A, Mode::Infer);
  EXPECT_EQ(std::memcmp(e.f_e.data(), f.data(), f.size() * sizeof(float)), 0);
  for (float v : e.f_a.values()) EXPECT_EQ(v, 0.0f);

  DualBranchNet<float> off(tiny_config(false, true), 8);
  EXPECT_EQ(off.attention(Branch::A), nullptr);
  const EnhancedFeatures<float> o = off.mem_forward(f, Branch::B, Mode::Infer);
  EXPECT_EQ(std::memcmp(o.f_e.data(), f.data(), f.size() * sizeof(float)), 0);
}

TEST(Mem, AttentionRowsAreStochastic) {
  NetworkConfig c = tiny_config(true, false);
  c.crop_h = c.crop_w = 32;
  DualBranchNet<double> net(c, 10);
  const auto e = net.mem_forward(random_tensor<double>({3, 64, 2, 2}, 11), Branch::A, Mode::Infer);
  ASSERT_EQ(e.attention.shape(), (Shape4{3, 1, 64, 64}));
  for (int n = 0; n < 3; ++n)
    for (int i = 0; i < 64; ++i) {
      double s = 0.0;
      for (int j = 0; j < 64; ++j) s += e.attention.at(n, 0, i, j);
      EXPECT_NEAR(s, 1.0, 1e-5);
    }
}

// Toy attention module: B=1, C=4, h=w=2.
struct MemFixture {
  ChannelAttention<double> mem{"m", 4, 4, 3};
  Tensor<double> f = random_tensor<double>({1, 4, 2, 2}, 21);
  Tensor<double> weights = random_tensor<double>({1, 4, 2, 2}, 22);

  MemFixture() {
    std::mt19937_64 rng(23);
    mem.init(rng);
    // A zero output projection would hide every upstream gradient.
    mem.w_o().value = random_tensor<double>({4, 4, 1, 1}, 24);
    mem.b_o().value = random_tensor<double>({4, 1, 1, 1}, 25);
  }
  double loss() { return weighted_sum(mem.forward(f, Mode::Infer).f_e, weights); }
};

TEST(Gradients, MemParametersAndInput) {
  MemFixture fx;
  ParamRefs<double> params;
  fx.mem.collect(params);
  for (Param<double>* p : params) p->grad = Tensor<double>(p->value.shape());
  fx.mem.forward(fx.f, Mode::Train);
  const Tensor<double> d_f = fx.mem.backward(fx.weights);

  for (Param<double>* p : params) {
    const auto numeric = numeric_gradient(p->value, [&] { return fx.loss(); }, 1e-3);
    EXPECT_LT(relative_error(p->grad.values(), numeric), 1e-4) << p->name;
  }
  const auto numeric_f = numeric_gradient(fx.f, [&] { return fx.loss(); }, 1e-3);
  EXPECT_LT(relative_error(d_f.values(), numeric_f), 1e-4);
}

struct CifFixture {
  FusionLayer<double> cif{"cif", 4};
  Tensor<double> a = random_tensor<double>({1, 4, 2, 2}, 31);
  Tensor<double> b = random_tensor<double>({1, 4, 2, 2}, 32);
  Tensor<double> weights = random_tensor<double>({1, 4, 2, 2}, 33);

  CifFixture() {
    std::mt19937_64 rng(34);
    cif.init(rng);
  }
  double loss() { return weighted_sum(cif.forward(a, b, Mode::Train), weights); }
};

TEST(Gradients, CifParametersAndInputs) {
  CifFixture fx;
  ParamRefs<double> params;
  fx.cif.collect(params);
  for (Param<double>* p : params) p->grad = Tensor<double>(p->value.shape());
  fx.cif.forward(fx.a, fx.b, Mode::Train);
  const auto [d_a, d_b] = fx.cif.backward(fx.weights);

  int checked = 0;
  for (Param<double>* p : params) {
    if (!p->trainable) continue;
    const auto numeric = numeric_gradient(p->value, [&] { return fx.loss(); }, 1e-5);
    EXPECT_LT(relative_error(p->grad.values(), numeric), 1e-4) << p->name;
    ++checked;
  }
  EXPECT_EQ(checked, 8);  // two blocks x (conv weight, conv bias, bn gamma, bn beta)
  EXPECT_LT(relative_error(d_a.values(), numeric_gradient(fx.a, [&] { return fx.loss(); }, 1e-5)), 1e-4);
  EXPECT_LT(relative_error(d_b.values(), numeric_gradient(fx.b, [&] { return fx.loss(); }, 1e-5)), 1e-4);
}

TEST(Cif, RangeAndAsymmetry) {
  DualBranchNet<double> net(tiny_config(true, true), 40);
  const auto x = random_tensor<double>({2, 64, 1, 1}, 41, 3.0);
  const auto y = random_tensor<double>({2, 64, 1, 1}, 42, 3.0);
  const Tensor<double> xy = net.cif_fuse(x, y, Mode::Train);
  const Tensor<double> yx = net.cif_fuse(y, x, Mode::Train);
  double diff = 0.0;
  for (std::size_t i = 0; i < xy.size(); ++i) {
    EXPECT_GT(xy[i], 0.0);
    EXPECT_LT(xy[i], 1.0);
    diff += (xy[i] - yx[i]) * (xy[i] - yx[i]);
  }
  EXPECT_GT(diff, 0.0);
  EXPECT_EQ(thrown_code([&] { net.cif_fuse(x, Tensor<double>({2, 64, 2, 1}), Mode::Train); }), Errc::ShapeMismatch);
}

TEST(Gradients, WholeNetworkSpotCheck) {
  NetworkConfig c;
  c.channel_dims = {2, 4, 6, 8, 10};
  c.crop_h = c.crop_w = 16;
  c.attention_dim = 3;
  DualBranchNet<double> net(c, 50);
  net.attention(Branch::A)->w_o().value = random_tensor<double>({10, 10, 1, 1}, 51, 0.3);
  net.attention(Branch::B)->w_o().value = random_tensor<double>({10, 10, 1, 1}, 52, 0.3);
  const auto ia = random_tensor<double>({2, 1, 16, 16}, 53);
  const auto ib = random_tensor<double>({2, 1, 16, 16}, 54);
  const auto wa = random_tensor<double>({2, 2, 16, 16}, 55);
  const auto wb = random_tensor<double>({2, 2, 16, 16}, 56);
  auto loss = [&] {
    const auto p = net.forward(ia, ib, Mode::Train);
    return weighted_sum(p.logits_a, wa) + weighted_sum(p.logits_b, wb);
  };
  net.zero_grad();
  net.forward(ia, ib, Mode::Train);
  net.backward(wa, wb);

  for (const char* name : {"a.enc.l1.block1.conv.weight", "b.enc.l3.block2.bn.gamma", "a.mem.w_q", "b.mem.w_v",
                           "cif.block1.conv.weight", "cif.block2.bn.beta", "b.dec.up4.block1.conv.weight",
                           "a.dec.head.bias"}) {
    Param<double>* p = net.find(name);
    ASSERT_NE(p, nullptr) << name;
    const Tensor<double> analytic = p->grad;
    const auto numeric = numeric_gradient(p->value, loss, 1e-5);
    EXPECT_LT(relative_error(analytic.values(), numeric), 1e-4) << name;
  }
}

TEST(Ablation, DisabledModulesAreTwoIndependentUNets) {
  DualBranchNet<double> net(tiny_config(false, false), 60);
  auto lookup = [&](const std::string& name) -> const Tensor<double>& {
    Param<double>* p = net.find(name);
    if (!p) throw std::runtime_error("missing " + name);
    return p->value;
  };
  const testing::ReferenceUNet ref_a("a", {4, 8, 16, 32, 64}, lookup);
  const testing::ReferenceUNet ref_b("b", {4, 8, 16, 32, 64}, lookup);
  const auto ia = random_tensor<double>({2, 1, 16, 16}, 61);
  const auto ib = random_tensor<double>({2, 1, 16, 16}, 62);
  const Tensor<double> oa = ref_a.forward(ia);
  const Tensor<double> ob = ref_b.forward(ib);
  const DualPrediction<double> p = net.forward(ia, ib, Mode::Train);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < oa.size(); ++i) {
    max_diff = std::max({max_diff, std::abs(oa[i] - p.logits_a[i]), std::abs(ob[i] - p.logits_b[i])});
  }
  EXPECT_LT(max_diff, 1e-6);

  // Branch b's input must not influence branch a's output.
  const DualPrediction<double> q = net.forward(ia, random_tensor<double>({2, 1, 16, 16}, 63), Mode::Train);
  for (std::size_t i = 0; i < oa.size(); ++i) EXPECT_EQ(q.logits_a[i], p.logits_a[i]);

  SingleBranchUNet<double> single(tiny_config(false, false), Branch::A);
  single.load_branch(net);
  const Tensor<double> s = single.forward(ia, Mode::Train);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], p.logits_a[i], 1e-12);
}

TEST(Init, ModuleStreamsAreIndependentOfFlags) {
  DualBranchNet<float> full(tiny_config(true, true), 70);
  DualBranchNet<float> base(tiny_config(false, false), 70);
  for (const char* name : {"a.enc.l2.block1.conv.weight", "b.enc.l5.block2.conv.weight"}) {
    EXPECT_EQ(full.find(name)->value.values().size(), base.find(name)->value.values().size());
    EXPECT_TRUE(std::equal(full.find(name)->value.values().begin(), full.find(name)->value.values().end(),
                           base.find(name)->value.values().begin()))
        << name;
  }
}

}  // namespace
}  // namespace dualseg
