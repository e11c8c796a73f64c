#pragma once

#include <array>
#include <random>
#include <string>

#include "dasnet/nn.hpp"

namespace dasnet::nn {

/// Atrous spatial pyramid pooling head: 1x1 conv, three dilated 3x3 convs and a
/// global-pool-and-broadcast branch, concatenated and projected.
template <typename S>
class AsppHead {
 public:
  AsppHead() = default;
  AsppHead(int in_ch, int out_ch, std::array<int, 3> rates, std::mt19937_64& rng)
      : conv1x1_(in_ch, out_ch, 1, 1, 0, 1, rng),
        dil_a_(in_ch, out_ch, 3, 1, rates[0], rates[0], rng),
        dil_b_(in_ch, out_ch, 3, 1, rates[1], rates[1], rng),
        dil_c_(in_ch, out_ch, 3, 1, rates[2], rates[2], rng),
        pool_proj_(in_ch, out_ch, 1, 1, 0, 1, rng),
        project_(5 * out_ch, out_ch, 1, 1, 0, 1, rng) {}

  Var<S> forward(const Var<S>& x, bool training) {
    const int h = x.value().dim(2), w = x.value().dim(3);
    Var<S> b0 = conv1x1_.forward(x, training);
    Var<S> b1 = dil_a_.forward(x, training);
    Var<S> b2 = dil_b_.forward(x, training);
    Var<S> b3 = dil_c_.forward(x, training);
    Var<S> pooled = global_avg_pool(x);
    pooled = reshape(pooled, {x.value().dim(0), x.value().dim(1), 1, 1});
    Var<S> b4 = upsample_bilinear(pool_proj_.forward(pooled, training), h, w);
    return project_.forward(concat_channels<S>({b0, b1, b2, b3, b4}), training);
  }

  void collect(const std::string& prefix, bool backbone, ParamList<S>& out) {
    conv1x1_.collect(prefix + ".conv1x1", backbone, out);
    dil_a_.collect(prefix + ".dil_a", backbone, out);
    dil_b_.collect(prefix + ".dil_b", backbone, out);
    dil_c_.collect(prefix + ".dil_c", backbone, out);
    pool_proj_.collect(prefix + ".pool_proj", backbone, out);
    project_.collect(prefix + ".project", backbone, out);
  }

 private:
  ConvBnRelu<S> conv1x1_;
  ConvBnRelu<S> dil_a_, dil_b_, dil_c_;
  ConvBnRelu<S> pool_proj_;
  ConvBnRelu<S> project_;
};

}  // namespace dasnet::nn
