#pragma once

#include <random>
#include <string>

#include "dasnet/nn.hpp"

namespace dasnet::nn {

/// Channel-aware fusion of two feature maps.
///
/// Both inputs are encoded to the working width, combined with their pixel-wise
/// product, squeezed by global average pooling into a channel attention vector,
/// and decoded through two residual paths back to the working width. The second
/// input is bilinearly resized to the first input's grid, so the output always
/// lives on the first input's resolution.
template <typename S>
class ChannelAwareFusion {
 public:
  ChannelAwareFusion() = default;
  ChannelAwareFusion(int in_a, int in_b, int width, std::mt19937_64& rng)
      : width_(width),
        enc_a_(in_a, width, 3, 1, 1, 1, rng),
        enc_b_(in_b, width, 3, 1, 1, 1, rng),
        channel_transform_(3 * width, 3 * width, rng),
        dec_u1_(3 * width, width, 3, 1, 1, 1, rng),
        dec_u2_(3 * width, width, 3, 1, 1, 1, rng),
        red_v1_(width, width, 3, 1, 1, 1, rng),
        red_v2_(width, width, 3, 1, 1, 1, rng),
        out_head_(2 * width, width, 3, 1, 1, 1, rng) {}

  Var<S> forward(const Var<S>& f_alpha, const Var<S>& f_beta, bool training) {
    const Tensor<S>& av = f_alpha.value();
    const Tensor<S>& bv = f_beta.value();
    check(av.rank() == 4 && bv.rank() == 4, "fuse: rank-4 inputs required");
    check(av.dim(1) == enc_a_.in_channels(),
          "fuse: first input has " + std::to_string(av.dim(1)) + " channels, expected " +
              std::to_string(enc_a_.in_channels()));
    check(bv.dim(1) == enc_b_.in_channels(),
          "fuse: second input has " + std::to_string(bv.dim(1)) + " channels, expected " +
              std::to_string(enc_b_.in_channels()));
    check(av.dim(2) > 0 && av.dim(3) > 0 && bv.dim(2) > 0 && bv.dim(3) > 0,
          "fuse: zero-sized spatial dims");
    check(av.dim(0) == bv.dim(0), "fuse: batch size mismatch");

    Var<S> fb = f_beta;
    if (bv.dim(2) != av.dim(2) || bv.dim(3) != av.dim(3))
      fb = upsample_bilinear(f_beta, av.dim(2), av.dim(3));

    Var<S> a = enc_a_.forward(f_alpha, training);
    Var<S> b = enc_b_.forward(fb, training);
    Var<S> fc = concat_channels<S>({a, b, mul(a, b)});
    Var<S> g = global_avg_pool(fc);
    Var<S> att = sigmoid(channel_transform_.forward(g));
    Var<S> u = channel_scale(fc, att);
    Var<S> pa = red_v1_.forward(add(a, dec_u1_.forward(u, training)), training);
    Var<S> pb = red_v2_.forward(add(b, dec_u2_.forward(u, training)), training);
    return out_head_.forward(concat_channels<S>({pa, pb}), training);
  }

  void collect(const std::string& prefix, bool backbone, ParamList<S>& out) {
    enc_a_.collect(prefix + ".enc_a", backbone, out);
    enc_b_.collect(prefix + ".enc_b", backbone, out);
    channel_transform_.collect(prefix + ".channel_transform", backbone, out);
    dec_u1_.collect(prefix + ".dec_u1", backbone, out);
    dec_u2_.collect(prefix + ".dec_u2", backbone, out);
    red_v1_.collect(prefix + ".red_v1", backbone, out);
    red_v2_.collect(prefix + ".red_v2", backbone, out);
    out_head_.collect(prefix + ".out_head", backbone, out);
  }

  int width() const { return width_; }
  Linear<S>& channel_transform() { return channel_transform_; }

 private:
  int width_ = 0;
  ConvBnRelu<S> enc_a_, enc_b_;
  Linear<S> channel_transform_;
  ConvBnRelu<S> dec_u1_, dec_u2_;
  ConvBnRelu<S> red_v1_, red_v2_;
  ConvBnRelu<S> out_head_;
};

}  // namespace dasnet::nn
