#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dualseg/layers.hpp"
#include "dualseg/tensor.hpp"

namespace dualseg {

struct NetworkConfig {
  int in_channels = 1;
  int n_classes = 2;
  std::array<int, 5> channel_dims{32, 64, 128, 256, 512};
  int crop_h = 160;
  int crop_w = 160;
  bool enable_mem = true;
  bool enable_cif = true;
  int attention_dim = 64;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;

  int deepest_channels() const { return channel_dims[4]; }
  int bottleneck_h() const { return crop_h / 16; }
  int bottleneck_w() const { return crop_w / 16; }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

enum class Branch { A, B };

std::string branch_prefix(Branch b);

/// Encoder outputs, finest first: (B,c0,H,W) ... (B,c4,H/16,W/16).
template <class T>
using FeaturePyramid = std::array<Tensor<T>, 5>;

template <class T>
struct EnhancedFeatures {
  Tensor<T> f_e;
  Tensor<T> f_a;
  Tensor<T> attention;  // (B, 1, C, C); empty when MEM is disabled
};

template <class T>
struct DualPrediction {
  Tensor<T> logits_a;
  Tensor<T> logits_b;
  Tensor<T> probs_a;
  Tensor<T> probs_b;
};

/// Intermediate activations of one dual forward pass, kept for inspection.
template <class T>
struct ForwardTrace {
  FeaturePyramid<T> pyramid_a;
  FeaturePyramid<T> pyramid_b;
  EnhancedFeatures<T> enhanced_a;
  EnhancedFeatures<T> enhanced_b;
  Tensor<T> fused;  // empty when CIF is disabled
  Tensor<T> bottleneck_a;
  Tensor<T> bottleneck_b;
};

template <class T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const std::string& prefix, int in_channels, const std::array<int, 5>& dims);

  void init(std::mt19937_64& rng);
  FeaturePyramid<T> forward(const Tensor<T>& image, Mode mode);
  /// Gradients arrive for every pyramid level; input gradient is discarded.
  void backward(const FeaturePyramid<T>& grads);
  void collect(ParamRefs<T>& out);

 private:
  std::array<DoubleConv<T>, 5> levels_;
  std::array<MaxPool2<T>, 4> pools_;
};

/// Channel-wise self-attention over the deepest feature map plus a skip
/// connection. Each channel's flattened spatial map is projected to queries
/// and keys of width attention_dim and to values of width h*w; the (C, C)
/// attention mixes channels, a zero-initialized 1x1 projection maps the
/// result back, and the input is added on top, so f_e == f_ls at init.
template <class T>
class ChannelAttention {
 public:
  ChannelAttention() = default;
  ChannelAttention(const std::string& prefix, int channels, int spatial, int attention_dim);

  void init(std::mt19937_64& rng);
  EnhancedFeatures<T> forward(const Tensor<T>& f_ls, Mode mode);
  Tensor<T> backward(const Tensor<T>& d_fe);
  void collect(ParamRefs<T>& out);

  Param<T>& w_q() { return w_q_; }
  Param<T>& w_k() { return w_k_; }
  Param<T>& w_v() { return w_v_; }
  Param<T>& w_o() { return w_o_; }
  Param<T>& b_o() { return b_o_; }

 private:
  int c_ = 0;
  int n_ = 0;
  int d_ = 0;
  Param<T> w_q_;  // (1, 1, n, d)
  Param<T> w_k_;  // (1, 1, n, d)
  Param<T> w_v_;  // (1, 1, n, n)
  Param<T> w_o_;  // (c, c, 1, 1)
  Param<T> b_o_;  // (c, 1, 1, 1)

  Shape4 in_shape_;
  AlignedVector<T> f_, q_, k_, v_, a_, o_;
};

/// Shared fusion layer: concat -> ConvBlock(2C->C) -> ConvBlock(C->C) -> sigmoid.
template <class T>
class FusionLayer {
 public:
  FusionLayer() = default;
  FusionLayer(const std::string& prefix, int channels);

  void init(std::mt19937_64& rng);
  Tensor<T> forward(const Tensor<T>& f_e_a, const Tensor<T>& f_e_b, Mode mode);
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& d_fused);
  void collect(ParamRefs<T>& out);

  Conv2d<T>& first_conv() { return block1_.conv(); }
  Conv2d<T>& second_conv() { return block2_.conv(); }

 private:
  int c_ = 0;
  ConvBlock<T> block1_;
  ConvBlock<T> block2_;
  Tensor<T> out_;
};

template <class T>
struct DecoderGrads {
  Tensor<T> bottleneck;
  FeaturePyramid<T> pyramid;  // levels 0..3 filled, level 4 empty
};

template <class T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const std::string& prefix, const std::array<int, 5>& dims, int bottleneck_channels, int n_classes);

  void init(std::mt19937_64& rng);
  Tensor<T> forward(const FeaturePyramid<T>& pyramid, const Tensor<T>& bottleneck, Mode mode);
  DecoderGrads<T> backward(const Tensor<T>& d_logits);
  void collect(ParamRefs<T>& out);

  int bottleneck_channels() const { return bottleneck_channels_; }

 private:
  int bottleneck_channels_ = 0;
  std::array<int, 5> dims_{};
  std::array<DoubleConv<T>, 4> stages_;  // stage i outputs dims[3 - i]
  Conv2d<T> head_;
};

/// The dual-branch model: per-modality encoder, optional channel attention
/// per branch, optional shared fusion layer, per-modality decoder.
template <class T>
class DualBranchNet {
 public:
  explicit DualBranchNet(const NetworkConfig& config, std::uint64_t seed = 0);

  const NetworkConfig& config() const { return config_; }

  FeaturePyramid<T> encode(const Tensor<T>& image, Branch branch, Mode mode);
  EnhancedFeatures<T> mem_forward(const Tensor<T>& f_ls, Branch branch, Mode mode);
  Tensor<T> cif_fuse(const Tensor<T>& f_e_a, const Tensor<T>& f_e_b, Mode mode);
  Tensor<T> decode(const FeaturePyramid<T>& pyramid, const Tensor<T>& bottleneck, Branch branch, Mode mode);

  DualPrediction<T> forward(const Tensor<T>& image_a, const Tensor<T>& image_b, Mode mode,
                            ForwardTrace<T>* trace = nullptr);

  /// Backpropagates logit gradients of the last Train-mode forward and
  /// accumulates parameter gradients.
  void backward(const Tensor<T>& d_logits_a, const Tensor<T>& d_logits_b);

  void zero_grad();
  /// Every named array (trainable and buffers) in a stable order.
  ParamRefs<T> parameters();
  ParamRefs<T> trainable_parameters();
  Param<T>* find(const std::string& name);

  Encoder<T>& encoder(Branch b) { return b == Branch::A ? enc_a_ : enc_b_; }
  Decoder<T>& decoder(Branch b) { return b == Branch::A ? dec_a_ : dec_b_; }
  ChannelAttention<T>* attention(Branch b);
  FusionLayer<T>* fusion() { return cif_ ? &*cif_ : nullptr; }

  /// Copies every array value from `other` (names and shapes must match).
  void copy_values_from(DualBranchNet& other);

 private:
  void check_input(const Tensor<T>& image) const;

  NetworkConfig config_;
  Encoder<T> enc_a_;
  Encoder<T> enc_b_;
  std::optional<ChannelAttention<T>> mem_a_;
  std::optional<ChannelAttention<T>> mem_b_;
  std::optional<FusionLayer<T>> cif_;
  Decoder<T> dec_a_;
  Decoder<T> dec_b_;
};

/// A plain single-branch U-Net (encoder + decoder, no attention or fusion).
/// Its arrays use the same names as one branch of DualBranchNet, which lets
/// a dual model with both modules disabled be checked branch by branch.
template <class T>
class SingleBranchUNet {
 public:
  SingleBranchUNet(const NetworkConfig& config, Branch branch);

  Tensor<T> forward(const Tensor<T>& image, Mode mode);
  ParamRefs<T> parameters();
  /// Copies this branch's arrays out of a dual model, by name.
  void load_branch(DualBranchNet<T>& dual);

 private:
  Encoder<T> enc_;
  Decoder<T> dec_;
};

}  // namespace dualseg
