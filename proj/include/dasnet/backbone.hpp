#pragma once

#include <random>
#include <string>
#include <vector>

#include "dasnet/nn.hpp"

namespace dasnet::nn {

struct EncoderConfig {
  int stages = 5;
  std::vector<int> widths = {16, 32, 64, 64, 64};
};

/// Staged feature encoder. Each stage halves the spatial resolution with a
/// stride-2 conv block followed by a stride-1 block, so stage i lives on the
/// input grid divided by 2^i.
template <typename S>
class ToyEncoder {
 public:
  ToyEncoder() = default;
  ToyEncoder(const EncoderConfig& cfg, std::mt19937_64& rng) : stages_(cfg.stages) {
    check(cfg.stages >= 1, "encoder: need at least one stage");
    check(static_cast<int>(cfg.widths.size()) == cfg.stages,
          "encoder: widths size must equal stage count");
    int in_ch = 3;
    for (int i = 0; i < cfg.stages; ++i) {
      const int out_ch = cfg.widths[static_cast<std::size_t>(i)];
      down_.emplace_back(in_ch, out_ch, 3, 2, 1, 1, rng);
      refine_.emplace_back(out_ch, out_ch, 3, 1, 1, 1, rng);
      in_ch = out_ch;
    }
  }

  /// Returns the feature pyramid, stage 1 (finest) first.
  std::vector<Var<S>> forward(const Var<S>& rgb, bool training) {
    const Tensor<S>& xv = rgb.value();
    check(xv.rank() == 4 && xv.dim(1) == 3, "encode: expected {N,3,H,W} input");
    const int div = 1 << stages_;
    check(xv.dim(2) % div == 0 && xv.dim(3) % div == 0,
          "encode: input " + std::to_string(xv.dim(2)) + "x" + std::to_string(xv.dim(3)) +
              " must be divisible by " + std::to_string(div));
    std::vector<Var<S>> pyramid;
    Var<S> cur = rgb;
    for (int i = 0; i < stages_; ++i) {
      cur = down_[static_cast<std::size_t>(i)].forward(cur, training);
      cur = refine_[static_cast<std::size_t>(i)].forward(cur, training);
      pyramid.push_back(cur);
    }
    return pyramid;
  }

  void collect(const std::string& prefix, ParamList<S>& out) {
    for (int i = 0; i < stages_; ++i) {
      const std::string stage = prefix + ".stage" + std::to_string(i + 1);
      down_[static_cast<std::size_t>(i)].collect(stage + ".down", /*backbone=*/true, out);
      refine_[static_cast<std::size_t>(i)].collect(stage + ".refine", /*backbone=*/true, out);
    }
  }

  int stages() const { return stages_; }
  int stage_width(int i) const { return down_[static_cast<std::size_t>(i)].out_channels(); }

 private:
  int stages_ = 0;
  std::vector<ConvBnRelu<S>> down_, refine_;
};

}  // namespace dasnet::nn
