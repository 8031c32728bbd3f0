#include "dualseg/network.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace dualseg {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

template <class T>
Param<T> make_param(const std::string& name, Shape4 shape) {
  return {name, Tensor<T>(shape), Tensor<T>(shape), true};
}

// Each submodule draws from its own stream so that toggling MEM or CIF
// leaves the encoder and decoder initialization unchanged.
std::mt19937_64 module_rng(std::uint64_t seed, std::uint32_t module) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), module};
  return std::mt19937_64(seq);
}

}  // namespace

// --------------------------------------------------------- NetworkConfig

void NetworkConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(Errc::ConfigError, "network config: " + m); };
  if (in_channels < 1) fail("in_channels must be >= 1");
  if (n_classes < 2) fail("n_classes must be >= 2");
  for (std::size_t i = 0; i < channel_dims.size(); ++i) {
    if (channel_dims[i] < 2 || channel_dims[i] % 2 != 0) fail("channel_dims must be positive and even");
    if (i > 0 && channel_dims[i] <= channel_dims[i - 1]) fail("channel_dims must be strictly increasing");
  }
  if (crop_h < 16 || crop_w < 16 || crop_h % 16 != 0 || crop_w % 16 != 0) fail("crop must be divisible by 16");
  if (attention_dim < 1) fail("attention_dim must be >= 1");
}

void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = {{"in_channels", c.in_channels},
       {"n_classes", c.n_classes},
       {"channel_dims", c.channel_dims},
       {"crop", {c.crop_h, c.crop_w}},
       {"enable_mem", c.enable_mem},
       {"enable_cif", c.enable_cif},
       {"attention_dim", c.attention_dim}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
  NetworkConfig d;
  c.in_channels = j.value("in_channels", d.in_channels);
  c.n_classes = j.value("n_classes", d.n_classes);
  if (j.contains("channel_dims")) {
    const auto dims = j.at("channel_dims").get<std::vector<int>>();
    if (dims.size() != 5) throw Error(Errc::ConfigError, "network config: channel_dims must have 5 entries");
    std::copy(dims.begin(), dims.end(), c.channel_dims.begin());
  } else {
    c.channel_dims = d.channel_dims;
  }
  if (j.contains("crop")) {
    const auto crop = j.at("crop").get<std::vector<int>>();
    if (crop.size() != 2) throw Error(Errc::ConfigError, "network config: crop must be [H, W]");
    c.crop_h = crop[0];
    c.crop_w = crop[1];
  } else {
    c.crop_h = d.crop_h;
    c.crop_w = d.crop_w;
  }
  c.enable_mem = j.value("enable_mem", d.enable_mem);
  c.enable_cif = j.value("enable_cif", d.enable_cif);
  c.attention_dim = j.value("attention_dim", d.attention_dim);
}

std::string branch_prefix(Branch b) { return b == Branch::A ? "a" : "b"; }

// ---------------------------------------------------------------- Encoder

template <class T>
Encoder<T>::Encoder(const std::string& prefix, int in_channels, const std::array<int, 5>& dims) {
  int in = in_channels;
  for (int i = 0; i < 5; ++i) {
    levels_[i] = DoubleConv<T>(prefix + ".l" + std::to_string(i + 1), in, dims[i]);
    in = dims[i];
  }
}

template <class T>
void Encoder<T>::init(std::mt19937_64& rng) {
  for (auto& l : levels_) l.init(rng);
}

template <class T>
FeaturePyramid<T> Encoder<T>::forward(const Tensor<T>& image, Mode mode) {
  FeaturePyramid<T> out;
  out[0] = levels_[0].forward(image, mode);
  for (int i = 1; i < 5; ++i) out[i] = levels_[i].forward(pools_[i - 1].forward(out[i - 1], mode), mode);
  return out;
}

template <class T>
void Encoder<T>::backward(const FeaturePyramid<T>& grads) {
  Tensor<T> g = grads[4];
  for (int i = 4; i >= 1; --i) {
    Tensor<T> d_prev = pools_[i - 1].backward(levels_[i].backward(g));
    d_prev += grads[i - 1];
    g = std::move(d_prev);
  }
  levels_[0].backward(g);
}

template <class T>
void Encoder<T>::collect(ParamRefs<T>& out) {
  for (auto& l : levels_) l.collect(out);
}

// ------------------------------------------------------- ChannelAttention

template <class T>
ChannelAttention<T>::ChannelAttention(const std::string& prefix, int channels, int spatial, int attention_dim)
    : c_(channels),
      n_(spatial),
      d_(attention_dim),
      w_q_(make_param<T>(prefix + ".w_q", {1, 1, spatial, attention_dim})),
      w_k_(make_param<T>(prefix + ".w_k", {1, 1, spatial, attention_dim})),
      w_v_(make_param<T>(prefix + ".w_v", {1, 1, spatial, spatial})),
      w_o_(make_param<T>(prefix + ".w_o", {channels, channels, 1, 1})),
      b_o_(make_param<T>(prefix + ".b_o", {channels, 1, 1, 1})) {}

template <class T>
void ChannelAttention<T>::init(std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(n_)));
  for (Param<T>* p : {&w_q_, &w_k_, &w_v_}) {
    for (T& v : p->value.values()) v = static_cast<T>(dist(rng));
  }
  w_o_.value.zero();
  b_o_.value.zero();
}

template <class T>
EnhancedFeatures<T> ChannelAttention<T>::forward(const Tensor<T>& f_ls, Mode mode) {
  if (f_ls.c() != c_ || static_cast<int>(f_ls.shape().plane()) != n_) {
    throw Error(Errc::ShapeMismatch, w_q_.name + ": expected " + std::to_string(c_) + " channels over " +
                                         std::to_string(n_) + " positions, got " + to_string(f_ls.shape()));
  }
  const int batch = f_ls.n();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_)));
  const std::size_t cn = static_cast<std::size_t>(c_) * n_;
  const std::size_t cd = static_cast<std::size_t>(c_) * d_;
  const std::size_t cc = static_cast<std::size_t>(c_) * c_;

  EnhancedFeatures<T> out{Tensor<T>(f_ls.shape()), Tensor<T>(f_ls.shape()), Tensor<T>({batch, 1, c_, c_})};
  if (mode == Mode::Train) {
    in_shape_ = f_ls.shape();
    f_.assign(f_ls.values().begin(), f_ls.values().end());
    q_.resize(batch * cd);
    k_.resize(batch * cd);
    v_.resize(batch * cn);
    a_.resize(batch * cc);
    o_.resize(batch * cn);
  }

  MapConstMat<T> wq(w_q_.value.data(), n_, d_);
  MapConstMat<T> wk(w_k_.value.data(), n_, d_);
  MapConstMat<T> wv(w_v_.value.data(), n_, n_);
  MapConstMat<T> wo(w_o_.value.data(), c_, c_);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bo(b_o_.value.data(), c_);

  RowMat<T> q(c_, d_), k(c_, d_), v(c_, n_), s(c_, c_), o(c_, n_);
  for (int b = 0; b < batch; ++b) {
    MapConstMat<T> f(f_ls.sample(b), c_, n_);
    q.noalias() = f * wq;
    k.noalias() = f * wk;
    v.noalias() = f * wv;
    s.noalias() = (q * k.transpose()) * scale;
    MapMat<T> a(out.attention.sample(b), c_, c_);
    for (int i = 0; i < c_; ++i) {
      const T mx = s.row(i).maxCoeff();
      a.row(i) = (s.row(i).array() - mx).exp();
      a.row(i) /= a.row(i).sum();
    }
    o.noalias() = a * v;
    MapMat<T> fa(out.f_a.sample(b), c_, n_);
    fa.noalias() = wo * o;
    fa.colwise() += bo;
    MapMat<T> fe(out.f_e.sample(b), c_, n_);
    fe = fa + f;
    if (mode == Mode::Train) {
      std::copy_n(q.data(), cd, q_.data() + b * cd);
      std::copy_n(k.data(), cd, k_.data() + b * cd);
      std::copy_n(v.data(), cn, v_.data() + b * cn);
      std::copy_n(a.data(), cc, a_.data() + b * cc);
      std::copy_n(o.data(), cn, o_.data() + b * cn);
    }
  }
  return out;
}

template <class T>
Tensor<T> ChannelAttention<T>::backward(const Tensor<T>& d_fe) {
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_)));
  const std::size_t cn = static_cast<std::size_t>(c_) * n_;
  const std::size_t cd = static_cast<std::size_t>(c_) * d_;
  const std::size_t cc = static_cast<std::size_t>(c_) * c_;

  MapConstMat<T> wq(w_q_.value.data(), n_, d_);
  MapConstMat<T> wk(w_k_.value.data(), n_, d_);
  MapConstMat<T> wv(w_v_.value.data(), n_, n_);
  MapConstMat<T> wo(w_o_.value.data(), c_, c_);
  MapMat<T> dwq(w_q_.grad.data(), n_, d_);
  MapMat<T> dwk(w_k_.grad.data(), n_, d_);
  MapMat<T> dwv(w_v_.grad.data(), n_, n_);
  MapMat<T> dwo(w_o_.grad.data(), c_, c_);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dbo(b_o_.grad.data(), c_);

  Tensor<T> d_f(in_shape_);
  RowMat<T> d_o(c_, n_), d_a(c_, c_), d_s(c_, c_), d_v(c_, n_), d_q(c_, d_), d_k(c_, d_);
  for (int b = 0; b < in_shape_.n; ++b) {
    MapConstMat<T> g(d_fe.sample(b), c_, n_);
    MapConstMat<T> f(f_.data() + b * cn, c_, n_);
    MapConstMat<T> q(q_.data() + b * cd, c_, d_);
    MapConstMat<T> k(k_.data() + b * cd, c_, d_);
    MapConstMat<T> v(v_.data() + b * cn, c_, n_);
    MapConstMat<T> a(a_.data() + b * cc, c_, c_);
    MapConstMat<T> o(o_.data() + b * cn, c_, n_);

    dwo.noalias() += g * o.transpose();
    dbo += g.rowwise().sum();
    d_o.noalias() = wo.transpose() * g;
    d_a.noalias() = d_o * v.transpose();
    d_v.noalias() = a.transpose() * d_o;
    for (int i = 0; i < c_; ++i) {
      const T dot = (d_a.row(i).array() * a.row(i).array()).sum();
      d_s.row(i) = a.row(i).array() * (d_a.row(i).array() - dot);
    }
    d_q.noalias() = (d_s * k) * scale;
    d_k.noalias() = (d_s.transpose() * q) * scale;
    dwq.noalias() += f.transpose() * d_q;
    dwk.noalias() += f.transpose() * d_k;
    dwv.noalias() += f.transpose() * d_v;

    MapMat<T> df(d_f.sample(b), c_, n_);
    df = g;
    df.noalias() += d_q * wq.transpose();
    df.noalias() += d_k * wk.transpose();
    df.noalias() += d_v * wv.transpose();
  }
  return d_f;
}

template <class T>
void ChannelAttention<T>::collect(ParamRefs<T>& out) {
  for (Param<T>* p : {&w_q_, &w_k_, &w_v_, &w_o_, &b_o_}) out.push_back(p);
}

// ------------------------------------------------------------ FusionLayer

template <class T>
FusionLayer<T>::FusionLayer(const std::string& prefix, int channels)
    : c_(channels), block1_(prefix + ".block1", 2 * channels, channels), block2_(prefix + ".block2", channels, channels) {}

template <class T>
void FusionLayer<T>::init(std::mt19937_64& rng) {
  block1_.init(rng);
  block2_.init(rng);
}

template <class T>
Tensor<T> FusionLayer<T>::forward(const Tensor<T>& f_e_a, const Tensor<T>& f_e_b, Mode mode) {
  f_e_a.require_same(f_e_b, "cif_fuse");
  if (f_e_a.c() != c_) throw Error(Errc::ShapeMismatch, "cif_fuse: expected " + std::to_string(c_) + " channels");
  Tensor<T> fused = sigmoid(block2_.forward(block1_.forward(concat_channels(f_e_a, f_e_b), mode), mode));
  if (mode == Mode::Train) out_ = fused;
  return fused;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> FusionLayer<T>::backward(const Tensor<T>& d_fused) {
  Tensor<T> d_pre(d_fused.shape());
  for (std::size_t i = 0; i < d_pre.size(); ++i) d_pre[i] = d_fused[i] * out_[i] * (T{1} - out_[i]);
  return split_channels(block1_.backward(block2_.backward(d_pre)), c_);
}

template <class T>
void FusionLayer<T>::collect(ParamRefs<T>& out) {
  block1_.collect(out);
  block2_.collect(out);
}

// ---------------------------------------------------------------- Decoder

template <class T>
Decoder<T>::Decoder(const std::string& prefix, const std::array<int, 5>& dims, int bottleneck_channels, int n_classes)
    : bottleneck_channels_(bottleneck_channels), dims_(dims), head_(prefix + ".head", dims[0], n_classes, 1) {
  int in = bottleneck_channels;
  for (int s = 0; s < 4; ++s) {
    const int level = 3 - s;
    stages_[s] = DoubleConv<T>(prefix + ".up" + std::to_string(level + 1), in + dims[level], dims[level]);
    in = dims[level];
  }
}

template <class T>
void Decoder<T>::init(std::mt19937_64& rng) {
  for (auto& s : stages_) s.init(rng);
  head_.init(rng);
}

template <class T>
Tensor<T> Decoder<T>::forward(const FeaturePyramid<T>& pyramid, const Tensor<T>& bottleneck, Mode mode) {
  if (bottleneck.c() != bottleneck_channels_) {
    throw Error(Errc::BottleneckWidthMismatch, "decoder expects a " + std::to_string(bottleneck_channels_) +
                                                   "-channel bottleneck, got " + to_string(bottleneck.shape()));
  }
  Tensor<T> x = bottleneck;
  for (int s = 0; s < 4; ++s) {
    const Tensor<T>& skip = pyramid[3 - s];
    if (skip.h() != 2 * x.h() || skip.w() != 2 * x.w() || skip.n() != x.n() || skip.c() != dims_[3 - s]) {
      throw Error(Errc::ShapeMismatch, "decoder skip level " + std::to_string(4 - s) + " is " + to_string(skip.shape()));
    }
    x = stages_[s].forward(concat_channels(upsample2(x), skip), mode);
  }
  return head_.forward(x, mode);
}

template <class T>
DecoderGrads<T> Decoder<T>::backward(const Tensor<T>& d_logits) {
  DecoderGrads<T> out;
  Tensor<T> g = head_.backward(d_logits);
  for (int s = 3; s >= 0; --s) {
    const int up_channels = s == 0 ? bottleneck_channels_ : dims_[4 - s];
    auto [d_up, d_skip] = split_channels(stages_[s].backward(g), up_channels);
    out.pyramid[3 - s] = std::move(d_skip);
    g = upsample2_backward(d_up);
  }
  out.bottleneck = std::move(g);
  return out;
}

template <class T>
void Decoder<T>::collect(ParamRefs<T>& out) {
  for (auto& s : stages_) s.collect(out);
  head_.collect(out);
}

// ---------------------------------------------------------- DualBranchNet

template <class T>
DualBranchNet<T>::DualBranchNet(const NetworkConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const auto& dims = config_.channel_dims;
  const int c = config_.deepest_channels();
  const int bottleneck = config_.enable_cif ? 2 * c : c;
  const int spatial = config_.bottleneck_h() * config_.bottleneck_w();

  enc_a_ = Encoder<T>("a.enc", config_.in_channels, dims);
  enc_b_ = Encoder<T>("b.enc", config_.in_channels, dims);
  dec_a_ = Decoder<T>("a.dec", dims, bottleneck, config_.n_classes);
  dec_b_ = Decoder<T>("b.dec", dims, bottleneck, config_.n_classes);
  if (config_.enable_mem) {
    mem_a_.emplace("a.mem", c, spatial, config_.attention_dim);
    mem_b_.emplace("b.mem", c, spatial, config_.attention_dim);
  }
  if (config_.enable_cif) cif_.emplace("cif", c);

  auto rng = module_rng(seed, 1);
  enc_a_.init(rng);
  rng = module_rng(seed, 2);
  enc_b_.init(rng);
  rng = module_rng(seed, 3);
  dec_a_.init(rng);
  rng = module_rng(seed, 4);
  dec_b_.init(rng);
  if (mem_a_) {
    rng = module_rng(seed, 5);
    mem_a_->init(rng);
    rng = module_rng(seed, 6);
    mem_b_->init(rng);
  }
  if (cif_) {
    rng = module_rng(seed, 7);
    cif_->init(rng);
  }
}

template <class T>
void DualBranchNet<T>::check_input(const Tensor<T>& image) const {
  if (image.c() != config_.in_channels) {
    throw Error(Errc::ShapeMismatch, "expected " + std::to_string(config_.in_channels) + " input channel(s), got " +
                                         to_string(image.shape()));
  }
  if (image.h() < 16 || image.w() < 16 || image.h() % 16 != 0 || image.w() % 16 != 0) {
    throw Error(Errc::BadSpatialDims, "spatial dims must be divisible by 16, got " + to_string(image.shape()));
  }
}

template <class T>
FeaturePyramid<T> DualBranchNet<T>::encode(const Tensor<T>& image, Branch branch, Mode mode) {
  check_input(image);
  return encoder(branch).forward(image, mode);
}

template <class T>
EnhancedFeatures<T> DualBranchNet<T>::mem_forward(const Tensor<T>& f_ls, Branch branch, Mode mode) {
  if (f_ls.c() != config_.deepest_channels()) {
    throw Error(Errc::ShapeMismatch, "mem_forward expects " + std::to_string(config_.deepest_channels()) + " channels");
  }
  if (ChannelAttention<T>* mem = attention(branch)) return mem->forward(f_ls, mode);
  return {f_ls, Tensor<T>(f_ls.shape()), Tensor<T>()};
}

template <class T>
Tensor<T> DualBranchNet<T>::cif_fuse(const Tensor<T>& f_e_a, const Tensor<T>& f_e_b, Mode mode) {
  if (!cif_) throw Error(Errc::ConfigError, "cif_fuse called on a model built with enable_cif = false");
  return cif_->forward(f_e_a, f_e_b, mode);
}

template <class T>
Tensor<T> DualBranchNet<T>::decode(const FeaturePyramid<T>& pyramid, const Tensor<T>& bottleneck, Branch branch,
                                   Mode mode) {
  return decoder(branch).forward(pyramid, bottleneck, mode);
}

template <class T>
DualPrediction<T> DualBranchNet<T>::forward(const Tensor<T>& image_a, const Tensor<T>& image_b, Mode mode,
                                            ForwardTrace<T>* trace) {
  image_a.require_same(image_b, "model_forward");
  FeaturePyramid<T> pa = encode(image_a, Branch::A, mode);
  FeaturePyramid<T> pb = encode(image_b, Branch::B, mode);
  EnhancedFeatures<T> ea = mem_forward(pa[4], Branch::A, mode);
  EnhancedFeatures<T> eb = mem_forward(pb[4], Branch::B, mode);

  Tensor<T> fused;
  Tensor<T> bott_a = ea.f_e;
  Tensor<T> bott_b = eb.f_e;
  if (cif_) {
    fused = cif_fuse(ea.f_e, eb.f_e, mode);
    bott_a = concat_channels(ea.f_e, fused);
    bott_b = concat_channels(eb.f_e, fused);
  }

  DualPrediction<T> pred;
  pred.logits_a = dec_a_.forward(pa, bott_a, mode);
  pred.logits_b = dec_b_.forward(pb, bott_b, mode);
  pred.probs_a = softmax_channels(pred.logits_a);
  pred.probs_b = softmax_channels(pred.logits_b);

  if (trace) {
    *trace = {std::move(pa), std::move(pb), std::move(ea), std::move(eb),
              std::move(fused), std::move(bott_a), std::move(bott_b)};
  }
  return pred;
}

template <class T>
void DualBranchNet<T>::backward(const Tensor<T>& d_logits_a, const Tensor<T>& d_logits_b) {
  DecoderGrads<T> ga = dec_a_.backward(d_logits_a);
  DecoderGrads<T> gb = dec_b_.backward(d_logits_b);
  const int c = config_.deepest_channels();

  Tensor<T> d_fe_a;
  Tensor<T> d_fe_b;
  if (cif_) {
    auto [da, dfu_a] = split_channels(ga.bottleneck, c);
    auto [db, dfu_b] = split_channels(gb.bottleneck, c);
    dfu_a += dfu_b;
    auto [ca, cb] = cif_->backward(dfu_a);
    da += ca;
    db += cb;
    d_fe_a = std::move(da);
    d_fe_b = std::move(db);
  } else {
    d_fe_a = std::move(ga.bottleneck);
    d_fe_b = std::move(gb.bottleneck);
  }

  ga.pyramid[4] = mem_a_ ? mem_a_->backward(d_fe_a) : std::move(d_fe_a);
  gb.pyramid[4] = mem_b_ ? mem_b_->backward(d_fe_b) : std::move(d_fe_b);
  enc_a_.backward(ga.pyramid);
  enc_b_.backward(gb.pyramid);
}

template <class T>
ParamRefs<T> DualBranchNet<T>::parameters() {
  ParamRefs<T> out;
  enc_a_.collect(out);
  enc_b_.collect(out);
  if (mem_a_) mem_a_->collect(out);
  if (mem_b_) mem_b_->collect(out);
  if (cif_) cif_->collect(out);
  dec_a_.collect(out);
  dec_b_.collect(out);
  return out;
}

template <class T>
ParamRefs<T> DualBranchNet<T>::trainable_parameters() {
  ParamRefs<T> out;
  for (Param<T>* p : parameters()) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

template <class T>
void DualBranchNet<T>::zero_grad() {
  for (Param<T>* p : trainable_parameters()) p->grad.zero();
}

template <class T>
Param<T>* DualBranchNet<T>::find(const std::string& name) {
  for (Param<T>* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

template <class T>
ChannelAttention<T>* DualBranchNet<T>::attention(Branch b) {
  auto& m = b == Branch::A ? mem_a_ : mem_b_;
  return m ? &*m : nullptr;
}

template <class T>
void DualBranchNet<T>::copy_values_from(DualBranchNet& other) {
  ParamRefs<T> mine = parameters();
  ParamRefs<T> theirs = other.parameters();
  if (mine.size() != theirs.size()) throw Error(Errc::ShapeMismatch, "models have different parameter sets");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i]->name != theirs[i]->name || !(mine[i]->value.shape() == theirs[i]->value.shape())) {
      throw Error(Errc::ShapeMismatch, "parameter mismatch at " + mine[i]->name);
    }
    mine[i]->value = theirs[i]->value;
  }
}

// -------------------------------------------------------- SingleBranchUNet

template <class T>
SingleBranchUNet<T>::SingleBranchUNet(const NetworkConfig& config, Branch branch) {
  config.validate();
  const std::string prefix = branch_prefix(branch);
  enc_ = Encoder<T>(prefix + ".enc", config.in_channels, config.channel_dims);
  dec_ = Decoder<T>(prefix + ".dec", config.channel_dims, config.deepest_channels(), config.n_classes);
}

template <class T>
Tensor<T> SingleBranchUNet<T>::forward(const Tensor<T>& image, Mode mode) {
  FeaturePyramid<T> p = enc_.forward(image, mode);
  return dec_.forward(p, p[4], mode);
}

template <class T>
ParamRefs<T> SingleBranchUNet<T>::parameters() {
  ParamRefs<T> out;
  enc_.collect(out);
  dec_.collect(out);
  return out;
}

template <class T>
void SingleBranchUNet<T>::load_branch(DualBranchNet<T>& dual) {
  for (Param<T>* p : parameters()) {
    Param<T>* src = dual.find(p->name);
    if (!src || !(src->value.shape() == p->value.shape())) {
      throw Error(Errc::ShapeMismatch, "dual model has no array matching " + p->name);
    }
    p->value = src->value;
  }
}

template class Encoder<float>;
template class Encoder<double>;
template class ChannelAttention<float>;
template class ChannelAttention<double>;
template class FusionLayer<float>;
template class FusionLayer<double>;
template class Decoder<float>;
template class Decoder<double>;
template class DualBranchNet<float>;
template class DualBranchNet<double>;
template class SingleBranchUNet<float>;
template class SingleBranchUNet<double>;

}  // namespace dualseg
