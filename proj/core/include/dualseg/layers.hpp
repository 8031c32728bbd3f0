#pragma once

#include <random>
#include <string>
#include <vector>

#include "dualseg/tensor.hpp"

namespace dualseg {

/// Train caches activations for backward and updates batch-norm running
/// statistics; Infer touches no layer state, so concurrent inference is safe.
enum class Mode { Train, Infer };

/// A named array owned by a layer. Buffers (batch-norm running statistics)
/// are checkpointed but never optimized.
template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
};

template <class T>
using ParamRefs = std::vector<Param<T>*>;

/// Stride-1 "same" convolution with square kernel (3x3 or 1x1), via im2col
/// and a GEMM per sample.
template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel);

  /// He-normal weights, zero bias.
  void init(std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);

  void collect(ParamRefs<T>& out);
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  int in_ = 0;
  int out_ = 0;
  int k_ = 3;
  Param<T> weight_;  // (out, in, k, k)
  Param<T> bias_;    // (out, 1, 1, 1)
  Shape4 in_shape_;
  AlignedVector<T> cols_;  // im2col of the last training input, per sample
};

template <class T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(ParamRefs<T>& out);

  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

 private:
  int c_ = 0;
  Param<T> gamma_;
  Param<T> beta_;
  Param<T> running_mean_;
  Param<T> running_var_;
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
};

template <class T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  std::vector<unsigned char> active_;
};

template <class T>
class MaxPool2 {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  Shape4 in_shape_;
  std::vector<std::size_t> argmax_;
};

/// Nearest-neighbour 2x upsampling.
template <class T>
Tensor<T> upsample2(const Tensor<T>& x);
template <class T>
Tensor<T> upsample2_backward(const Tensor<T>& dy);

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x);

/// Softmax over the channel (class) axis.
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& logits);

/// Gradient w.r.t. logits given probabilities and the gradient w.r.t. them.
template <class T>
Tensor<T> softmax_channels_backward(const Tensor<T>& probs, const Tensor<T>& dprobs);

/// conv 3x3 -> batch-norm -> ReLU.
template <class T>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const std::string& name, int in_channels, int out_channels);

  void init(std::mt19937_64& rng) { conv_.init(rng); }
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(ParamRefs<T>& out);

  Conv2d<T>& conv() { return conv_; }

 private:
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
  ReLU<T> relu_;
};

/// Two ConvBlocks, the canonical U-Net stage.
template <class T>
class DoubleConv {
 public:
  DoubleConv() = default;
  DoubleConv(const std::string& name, int in_channels, int out_channels);

  void init(std::mt19937_64& rng);
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(ParamRefs<T>& out);

 private:
  ConvBlock<T> first_;
  ConvBlock<T> second_;
};

}  // namespace dualseg
