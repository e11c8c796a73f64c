#pragma once

#include <array>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dasnet/aspp.hpp"
#include "dasnet/backbone.hpp"
#include "dasnet/caf.hpp"

namespace dasnet::nn {

struct NetConfig {
  int stages = 5;
  std::vector<int> widths = {16, 32, 64, 64, 64};
  int fusion_width = 64;
  std::array<int, 3> aspp_rates = {6, 12, 18};
  bool use_caf = true;  // false: lateral 1x1 projections + pixel-wise summation
  bool use_dam = true;  // false: no depth branch, no cross-branch refinement
  std::uint64_t init_seed = 1234;

  /// Small configuration for gradient checks and the overfit run.
  static NetConfig miniature() {
    NetConfig c;
    c.stages = 3;
    c.widths = {8, 16, 16};
    c.fusion_width = 16;
    return c;
  }

  nlohmann::json to_json() const {
    return {{"stages", stages},       {"widths", widths},
            {"fusion_width", fusion_width}, {"aspp_rates", aspp_rates},
            {"use_caf", use_caf},     {"use_dam", use_dam},
            {"init_seed", init_seed}};
  }

  static NetConfig from_json(const nlohmann::json& j) {
    NetConfig c;
    c.stages = j.at("stages").get<int>();
    c.widths = j.at("widths").get<std::vector<int>>();
    c.fusion_width = j.at("fusion_width").get<int>();
    const auto rates = j.at("aspp_rates").get<std::vector<int>>();
    check(rates.size() == 3, "config: aspp_rates must have 3 entries");
    c.aspp_rates = {rates[0], rates[1], rates[2]};
    c.use_caf = j.at("use_caf").get<bool>();
    c.use_dam = j.at("use_dam").get<bool>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    return c;
  }
};

/// Graph-bearing forward outputs. Side outputs are ordered finest first and
/// upsampled to the input resolution; native sizes record each side output's
/// resolution before upsampling.
template <typename S>
struct Predictions {
  std::vector<Var<S>> sides;
  Var<S> depth;  // undefined when the depth branch is disabled
  std::vector<std::pair<int, int>> side_native_sizes;
};

/// Plain-tensor view of a forward pass for inference-side consumers.
template <typename S>
struct PredictionBundle {
  std::vector<Tensor<S>> saliency;
  Tensor<S> depth;
  std::vector<std::pair<int, int>> side_native_sizes;
};

/// Depth-aware saliency network: shared encoder, depth-regression decoder,
/// saliency decoder and per-level cross-branch refinement. Depth maps are
/// consumed only by the losses; inference needs RGB alone.
template <typename S>
class DasNet {
 public:
  explicit DasNet(NetConfig cfg) : cfg_(std::move(cfg)) {
    check(cfg_.stages >= 2, "net: need at least two stages");
    check(static_cast<int>(cfg_.widths.size()) == cfg_.stages,
          "net: widths size must equal stage count");
    std::mt19937_64 rng(cfg_.init_seed);
    EncoderConfig enc_cfg{cfg_.stages, cfg_.widths};
    encoder_ = ToyEncoder<S>(enc_cfg, rng);
    const int cw = cfg_.fusion_width;
    const int top_w = cfg_.widths.back();
    aspp_ = AsppHead<S>(top_w, cw, cfg_.aspp_rates, rng);

    if (cfg_.use_caf) {
      sod_top_ = ChannelAwareFusion<S>(top_w, cw, cw, rng);
      for (int i = 0; i < cfg_.stages - 1; ++i) {
        depth_fuse_.emplace_back(cfg_.widths[static_cast<std::size_t>(i)], cw, cw, rng);
        sod_fuse_.emplace_back(cfg_.widths[static_cast<std::size_t>(i)], cw, cw, rng);
      }
      if (cfg_.use_dam)
        for (int i = 0; i < cfg_.stages; ++i) cross_fuse_.emplace_back(cw, cw, cw, rng);
    } else {
      for (int i = 0; i < cfg_.stages; ++i)
        lat_sod_.emplace_back(cfg_.widths[static_cast<std::size_t>(i)], cw, 1, 1, 0, 1, rng);
      if (cfg_.use_dam)
        for (int i = 0; i < cfg_.stages - 1; ++i)
          lat_depth_.emplace_back(cfg_.widths[static_cast<std::size_t>(i)], cw, 1, 1, 0, 1, rng);
    }
    for (int i = 0; i < cfg_.stages; ++i)
      side_heads_.emplace_back(cw, 1, 3, 1, 1, 1, /*bias=*/true, rng);
    if (cfg_.use_dam) depth_head_ = Conv2d<S>(cw, 1, 3, 1, 1, 1, /*bias=*/true, rng);
  }

  Predictions<S> forward(const Var<S>& rgb, bool training) {
    const int s = cfg_.stages;
    const int in_h = rgb.value().dim(2), in_w = rgb.value().dim(3);
    std::vector<Var<S>> pyr = encoder_.forward(rgb, training);
    Var<S> context = aspp_.forward(pyr[static_cast<std::size_t>(s - 1)], training);

    std::vector<Var<S>> dfeat(static_cast<std::size_t>(s));
    if (cfg_.use_dam) {
      dfeat[static_cast<std::size_t>(s - 1)] = context;
      for (int i = s - 2; i >= 0; --i) {
        const auto& enc = pyr[static_cast<std::size_t>(i)];
        const auto& up = dfeat[static_cast<std::size_t>(i + 1)];
        dfeat[static_cast<std::size_t>(i)] =
            cfg_.use_caf
                ? depth_fuse_[static_cast<std::size_t>(i)].forward(enc, up, training)
                : add(lat_depth_[static_cast<std::size_t>(i)].forward(enc, training),
                      upsample_bilinear(up, enc.value().dim(2), enc.value().dim(3)));
      }
    }

    std::vector<Var<S>> sfeat(static_cast<std::size_t>(s));
    {
      const auto& enc_top = pyr[static_cast<std::size_t>(s - 1)];
      sfeat[static_cast<std::size_t>(s - 1)] =
          cfg_.use_caf
              ? sod_top_.forward(enc_top, context, training)
              : add(lat_sod_[static_cast<std::size_t>(s - 1)].forward(enc_top, training), context);
    }
    for (int i = s - 2; i >= 0; --i) {
      const auto& enc = pyr[static_cast<std::size_t>(i)];
      const auto& up = sfeat[static_cast<std::size_t>(i + 1)];
      sfeat[static_cast<std::size_t>(i)] =
          cfg_.use_caf ? sod_fuse_[static_cast<std::size_t>(i)].forward(enc, up, training)
                       : add(lat_sod_[static_cast<std::size_t>(i)].forward(enc, training),
                             upsample_bilinear(up, enc.value().dim(2), enc.value().dim(3)));
    }

    Predictions<S> out;
    for (int i = 0; i < s; ++i) {
      Var<S> refined = sfeat[static_cast<std::size_t>(i)];
      if (cfg_.use_dam) {
        refined = cfg_.use_caf
                      ? cross_fuse_[static_cast<std::size_t>(i)].forward(
                            sfeat[static_cast<std::size_t>(i)],
                            dfeat[static_cast<std::size_t>(i)], training)
                      : add(sfeat[static_cast<std::size_t>(i)],
                            dfeat[static_cast<std::size_t>(i)]);
      }
      out.side_native_sizes.emplace_back(refined.value().dim(2), refined.value().dim(3));
      Var<S> logits = side_heads_[static_cast<std::size_t>(i)].forward(refined);
      out.sides.push_back(upsample_bilinear(sigmoid(logits), in_h, in_w));
    }
    if (cfg_.use_dam) {
      Var<S> dlogits = depth_head_.forward(dfeat[0]);
      out.depth = upsample_bilinear(sigmoid(dlogits), in_h, in_w);
    }
    return out;
  }

  /// Plain-tensor forward without graph construction.
  PredictionBundle<S> infer(const Tensor<S>& rgb) {
    NoGradGuard ng;
    Predictions<S> p = forward(Var<S>(rgb), /*training=*/false);
    PredictionBundle<S> b;
    for (auto& v : p.sides) b.saliency.push_back(std::move(v.value()));
    if (p.depth.defined()) b.depth = std::move(p.depth.value());
    b.side_native_sizes = std::move(p.side_native_sizes);
    return b;
  }

  /// RGB-only inference: the finest, fully refined saliency map.
  Tensor<S> predict(const Tensor<S>& rgb) {
    NoGradGuard ng;
    Predictions<S> p = forward(Var<S>(rgb), /*training=*/false);
    return p.sides.front().value();
  }

  ParamList<S> parameters() {
    ParamList<S> out;
    encoder_.collect("encoder", out);
    aspp_.collect("aspp", /*backbone=*/false, out);
    if (cfg_.use_caf) {
      sod_top_.collect("sod_top", false, out);
      for (std::size_t i = 0; i < depth_fuse_.size(); ++i)
        depth_fuse_[i].collect("depth_fuse" + std::to_string(i + 1), false, out);
      for (std::size_t i = 0; i < sod_fuse_.size(); ++i)
        sod_fuse_[i].collect("sod_fuse" + std::to_string(i + 1), false, out);
      for (std::size_t i = 0; i < cross_fuse_.size(); ++i)
        cross_fuse_[i].collect("cross_fuse" + std::to_string(i + 1), false, out);
    } else {
      for (std::size_t i = 0; i < lat_sod_.size(); ++i)
        lat_sod_[i].collect("lat_sod" + std::to_string(i + 1), false, out);
      for (std::size_t i = 0; i < lat_depth_.size(); ++i)
        lat_depth_[i].collect("lat_depth" + std::to_string(i + 1), false, out);
    }
    for (std::size_t i = 0; i < side_heads_.size(); ++i)
      side_heads_[i].collect("side_head" + std::to_string(i + 1), false, out);
    if (cfg_.use_dam) depth_head_.collect("depth_head", false, out);
    return out;
  }

  const NetConfig& config() const { return cfg_; }

 private:
  NetConfig cfg_;
  ToyEncoder<S> encoder_;
  AsppHead<S> aspp_;
  ChannelAwareFusion<S> sod_top_;
  std::vector<ChannelAwareFusion<S>> depth_fuse_, sod_fuse_, cross_fuse_;
  std::vector<ConvBnRelu<S>> lat_sod_, lat_depth_;
  std::vector<Conv2d<S>> side_heads_;
  Conv2d<S> depth_head_;
};

}  // namespace dasnet::nn
