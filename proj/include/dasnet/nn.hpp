#pragma once

#include <random>
#include <string>
#include <vector>

#include "dasnet/ops.hpp"

namespace dasnet::nn {

/// One named trainable parameter or persistent buffer of a module tree.
template <typename S>
struct ParamEntry {
  std::string name;
  Var<S>* param = nullptr;     // trainable (exclusive with buffer)
  Tensor<S>* buffer = nullptr; // running statistics etc.
  bool decay = true;           // weight decay applies (off for biases / norm affines)
  bool backbone = false;       // encoder LR group
};

template <typename S>
using ParamList = std::vector<ParamEntry<S>>;

template <typename S>
std::int64_t count_trainable(const ParamList<S>& entries) {
  std::int64_t n = 0;
  for (const auto& e : entries)
    if (e.param) n += e.param->value().numel();
  return n;
}

template <typename S>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, int dilation, bool bias,
         std::mt19937_64& rng)
      : stride_(stride), pad_(pad), dilation_(dilation) {
    Tensor<S> w({out_ch, in_ch, kernel, kernel});
    const double fan_in = static_cast<double>(in_ch) * kernel * kernel;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<S>(dist(rng));
    weight_ = Var<S>(std::move(w), true);
    if (bias) bias_ = Var<S>(Tensor<S>({out_ch}), true);
  }

  Var<S> forward(const Var<S>& x) const {
    return conv2d(x, weight_, bias_, stride_, pad_, dilation_);
  }

  void collect(const std::string& prefix, bool backbone, ParamList<S>& out) {
    out.push_back({prefix + ".weight", &weight_, nullptr, true, backbone});
    if (bias_.defined()) out.push_back({prefix + ".bias", &bias_, nullptr, false, backbone});
  }

  const Var<S>& weight() const { return weight_; }
  Var<S>& weight() { return weight_; }
  Var<S>& bias() { return bias_; }
  int out_channels() const { return weight_.value().dim(0); }
  int in_channels() const { return weight_.value().dim(1); }

 private:
  Var<S> weight_, bias_;
  int stride_ = 1, pad_ = 0, dilation_ = 1;
};

template <typename S>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels)
      : gamma_(Tensor<S>::full({channels}, S(1)), true),
        beta_(Tensor<S>({channels}), true),
        running_mean_({channels}),
        running_var_(Tensor<S>::full({channels}, S(1))) {}

  Var<S> forward(const Var<S>& x, bool training) {
    return batch_norm(x, gamma_, beta_, running_mean_, running_var_, training, momentum_, eps_);
  }

  void collect(const std::string& prefix, bool backbone, ParamList<S>& out) {
    out.push_back({prefix + ".gamma", &gamma_, nullptr, false, backbone});
    out.push_back({prefix + ".beta", &beta_, nullptr, false, backbone});
    out.push_back({prefix + ".running_mean", nullptr, &running_mean_, false, backbone});
    out.push_back({prefix + ".running_var", nullptr, &running_var_, false, backbone});
  }

  Var<S>& gamma() { return gamma_; }
  Var<S>& beta() { return beta_; }

 private:
  Var<S> gamma_, beta_;
  Tensor<S> running_mean_, running_var_;
  S momentum_ = static_cast<S>(0.1);
  S eps_ = static_cast<S>(1e-5);
};

/// Conv -> BatchNorm -> ReLU, the basic unit of the encoders and fusers.
template <typename S>
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(int in_ch, int out_ch, int kernel, int stride, int pad, int dilation,
             std::mt19937_64& rng)
      : conv_(in_ch, out_ch, kernel, stride, pad, dilation, /*bias=*/false, rng),
        bn_(out_ch) {}

  Var<S> forward(const Var<S>& x, bool training) {
    return relu(bn_.forward(conv_.forward(x), training));
  }

  void collect(const std::string& prefix, bool backbone, ParamList<S>& out) {
    conv_.collect(prefix + ".conv", backbone, out);
    bn_.collect(prefix + ".bn", backbone, out);
  }

  int out_channels() const { return conv_.out_channels(); }
  int in_channels() const { return conv_.in_channels(); }

 private:
  Conv2d<S> conv_;
  BatchNorm2d<S> bn_;
};

template <typename S>
class Linear {
 public:
  Linear() = default;
  Linear(int in_dim, int out_dim, std::mt19937_64& rng) {
    Tensor<S> w({out_dim, in_dim});
    const double bound = std::sqrt(6.0 / (in_dim + out_dim));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<S>(dist(rng));
    weight_ = Var<S>(std::move(w), true);
    bias_ = Var<S>(Tensor<S>({out_dim}), true);
  }

  Var<S> forward(const Var<S>& x) const { return linear(x, weight_, bias_); }

  void collect(const std::string& prefix, bool backbone, ParamList<S>& out) {
    out.push_back({prefix + ".weight", &weight_, nullptr, true, backbone});
    out.push_back({prefix + ".bias", &bias_, nullptr, false, backbone});
  }

  Var<S>& weight() { return weight_; }
  Var<S>& bias() { return bias_; }

 private:
  Var<S> weight_, bias_;
};

}  // namespace dasnet::nn
