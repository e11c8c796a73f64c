#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dasnet/ops.hpp"

namespace dasnet::losses {

inline constexpr double kProbEps = 1e-7;   // clamp for probabilities inside log
inline constexpr double kDepthEps = 1e-3;  // depth maps live in (kDepthEps, 1]

namespace detail {

template <typename S>
int batch_count(const Tensor<S>& t) {
  return t.rank() == 4 ? t.dim(0) : 1;
}

template <typename S>
std::int64_t sample_size(const Tensor<S>& t) {
  return t.rank() == 4 ? t.numel() / t.dim(0) : t.numel();
}

template <typename S>
void check_pair(const Tensor<S>& p, const Tensor<S>& y, const char* op) {
  check(p.same_shape(y), std::string(op) + ": shape mismatch " + p.shape_str() + " vs " +
                             y.shape_str());
  check(p.numel() > 0, std::string(op) + ": empty input");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Binary cross entropy, mean-reduced over all elements.

template <typename S>
Var<S> bce_loss(const Var<S>& p, const Tensor<S>& y) {
  detail::check_pair(p.value(), y, "bce_loss");
  const Tensor<S>& pv = p.value();
  const std::int64_t m = pv.numel();
  const S lo = static_cast<S>(kProbEps), hi = S(1) - static_cast<S>(kProbEps);
  S acc = S(0);
  for (std::int64_t i = 0; i < m; ++i) {
    const S pc = std::min(hi, std::max(lo, pv[i]));
    acc -= y[i] * std::log(pc) + (S(1) - y[i]) * std::log(S(1) - pc);
  }
  acc /= static_cast<S>(m);
  auto pn = p.node();
  Tensor<S> ycopy = y;
  return make_result<S>(scalar_tensor(acc), {pn}, [pn, ycopy, m, lo, hi](Node<S>& self) {
    const S g = self.grad[0] / static_cast<S>(m);
    for (std::int64_t i = 0; i < m; ++i) {
      const S pc = pn->value[i];
      if (pc <= lo || pc >= hi) continue;  // clamped region carries no gradient
      pn->grad[i] += g * (-ycopy[i] / pc + (S(1) - ycopy[i]) / (S(1) - pc));
    }
  });
}

// ---------------------------------------------------------------------------
// IoU loss, per sample then averaged over the batch.

template <typename S>
Var<S> iou_loss(const Var<S>& p, const Tensor<S>& y) {
  detail::check_pair(p.value(), y, "iou_loss");
  const Tensor<S>& pv = p.value();
  const int n = detail::batch_count(pv);
  const std::int64_t m = detail::sample_size(pv);
  std::vector<S> inter(static_cast<std::size_t>(n)), uni(static_cast<std::size_t>(n));
  S acc = S(0);
  for (int bn = 0; bn < n; ++bn) {
    S si = S(0), su = S(0);
    const std::int64_t base = static_cast<std::int64_t>(bn) * m;
    for (std::int64_t i = 0; i < m; ++i) {
      const S pi = pv[base + i], yi = y[base + i];
      si += pi * yi;
      su += pi + yi - pi * yi;
    }
    inter[static_cast<std::size_t>(bn)] = si + S(1);
    uni[static_cast<std::size_t>(bn)] = su + S(1);
    acc += S(1) - (si + S(1)) / (su + S(1));
  }
  acc /= static_cast<S>(n);
  auto pn = p.node();
  Tensor<S> ycopy = y;
  return make_result<S>(scalar_tensor(acc), {pn},
                        [pn, ycopy, n, m, inter, uni](Node<S>& self) {
                          const S g = self.grad[0] / static_cast<S>(n);
                          for (int bn = 0; bn < n; ++bn) {
                            const S num = inter[static_cast<std::size_t>(bn)];
                            const S den = uni[static_cast<std::size_t>(bn)];
                            const std::int64_t base = static_cast<std::int64_t>(bn) * m;
                            for (std::int64_t i = 0; i < m; ++i) {
                              const S yi = ycopy[base + i];
                              // d/dp [num/den] = (y*den - num*(1-y)) / den^2
                              pn->grad[base + i] +=
                                  -g * (yi * den - num * (S(1) - yi)) / (den * den);
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// logMSE depth loss.

template <typename S>
Var<S> depth_loss(const Var<S>& p, const Tensor<S>& y) {
  detail::check_pair(p.value(), y, "depth_loss");
  const Tensor<S>& pv = p.value();
  const std::int64_t m = pv.numel();
  const S lo = static_cast<S>(kDepthEps);
  S acc = S(0);
  for (std::int64_t i = 0; i < m; ++i) {
    const S pc = std::max(lo, pv[i]);
    const S yc = std::max(lo, y[i]);
    const S d = std::log(yc) - std::log(pc);
    acc += d * d;
  }
  acc /= static_cast<S>(m);
  auto pn = p.node();
  Tensor<S> ycopy = y;
  return make_result<S>(scalar_tensor(acc), {pn}, [pn, ycopy, m, lo](Node<S>& self) {
    const S g = self.grad[0] / static_cast<S>(m);
    for (std::int64_t i = 0; i < m; ++i) {
      const S pc = pn->value[i];
      if (pc <= lo) continue;
      const S yc = std::max(lo, ycopy[i]);
      pn->grad[i] += g * S(2) * (std::log(pc) - std::log(yc)) / pc;
    }
  });
}

// ---------------------------------------------------------------------------
// Depth error weights (no gradient flows through these).

/// Mean pooling with an odd window and edge-replicated padding, per sample.
template <typename S>
Tensor<S> window_mean(const Tensor<S>& err, int win_w, int win_h) {
  check(win_w >= 1 && win_h >= 1 && win_w % 2 == 1 && win_h % 2 == 1,
        "window_mean: window dims must be odd and positive, got " + std::to_string(win_w) + "x" +
            std::to_string(win_h));
  check(err.rank() >= 2, "window_mean: rank >= 2 required");
  const int w = err.dim(err.rank() - 1);
  const int h = err.dim(err.rank() - 2);
  const int planes = static_cast<int>(err.numel() / (static_cast<std::int64_t>(h) * w));
  const int rx = win_w / 2, ry = win_h / 2;
  const int ph = h + 2 * ry, pw = w + 2 * rx;

  Tensor<S> out(err.shape());
  std::vector<double> integral(static_cast<std::size_t>(ph + 1) * (pw + 1), 0.0);
  for (int pl = 0; pl < planes; ++pl) {
    const S* src = err.data() + static_cast<std::int64_t>(pl) * h * w;
    // Summed-area table over the replication-padded plane.
    for (int y = 0; y < ph; ++y) {
      const int sy = std::min(h - 1, std::max(0, y - ry));
      double rowsum = 0.0;
      for (int x = 0; x < pw; ++x) {
        const int sx = std::min(w - 1, std::max(0, x - rx));
        rowsum += static_cast<double>(src[static_cast<std::int64_t>(sy) * w + sx]);
        integral[static_cast<std::size_t>(y + 1) * (pw + 1) + (x + 1)] =
            integral[static_cast<std::size_t>(y) * (pw + 1) + (x + 1)] + rowsum;
      }
    }
    S* dst = out.data() + static_cast<std::int64_t>(pl) * h * w;
    const double inv = 1.0 / (static_cast<double>(win_w) * win_h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int y0 = y, y1 = y + win_h;  // in padded coordinates
        const int x0 = x, x1 = x + win_w;
        const double s = integral[static_cast<std::size_t>(y1) * (pw + 1) + x1] -
                         integral[static_cast<std::size_t>(y0) * (pw + 1) + x1] -
                         integral[static_cast<std::size_t>(y1) * (pw + 1) + x0] +
                         integral[static_cast<std::size_t>(y0) * (pw + 1) + x0];
        dst[static_cast<std::int64_t>(y) * w + x] = static_cast<S>(s * inv);
      }
    }
  }
  return out;
}

/// Absolute log-depth error |log p - log y| with depth clamping.
template <typename S>
Tensor<S> abs_log_error(const Tensor<S>& p_d, const Tensor<S>& y_d) {
  detail::check_pair(p_d, y_d, "abs_log_error");
  Tensor<S> err(p_d.shape());
  const S lo = static_cast<S>(kDepthEps);
  for (std::int64_t i = 0; i < err.numel(); ++i) {
    const S pc = std::max(lo, p_d[i]);
    const S yc = std::max(lo, y_d[i]);
    err[i] = std::abs(std::log(pc) - std::log(yc));
  }
  return err;
}

/// Normalizes a pooled error map to [0,1] per sample; uniform 1 when the
/// pooled error is globally negligible.
template <typename S>
Tensor<S> dec_weights_from_error(const Tensor<S>& err, std::pair<int, int> window) {
  Tensor<S> pooled = window_mean(err, window.first, window.second);
  const int n = detail::batch_count(pooled);
  const std::int64_t m = detail::sample_size(pooled);
  for (int bn = 0; bn < n; ++bn) {
    const std::int64_t base = static_cast<std::int64_t>(bn) * m;
    S mx = S(0);
    for (std::int64_t i = 0; i < m; ++i) mx = std::max(mx, pooled[base + i]);
    if (mx < static_cast<S>(1e-8)) {
      for (std::int64_t i = 0; i < m; ++i) pooled[base + i] = S(1);
    } else {
      for (std::int64_t i = 0; i < m; ++i) pooled[base + i] /= mx;
    }
  }
  return pooled;
}

/// Per-pixel error weights from predicted vs. ground-truth depth (Eq. 5 role):
/// window-mean of |log p - log y|, normalized by its per-sample maximum.
template <typename S>
Tensor<S> dec_weights(const Tensor<S>& p_d, const Tensor<S>& y_d,
                      std::pair<int, int> window = {7, 7}) {
  return dec_weights_from_error(abs_log_error(p_d, y_d), window);
}

// ---------------------------------------------------------------------------
// Error-weighted BCE, per sample then averaged over the batch.

template <typename S>
Var<S> dec_loss(const Var<S>& p, const Tensor<S>& y, const Tensor<S>& e) {
  detail::check_pair(p.value(), y, "dec_loss");
  detail::check_pair(p.value(), e, "dec_loss(weights)");
  const Tensor<S>& pv = p.value();
  const int n = detail::batch_count(pv);
  const std::int64_t m = detail::sample_size(pv);
  const S lo = static_cast<S>(kProbEps), hi = S(1) - static_cast<S>(kProbEps);
  std::vector<S> wsum(static_cast<std::size_t>(n));
  S acc = S(0);
  for (int bn = 0; bn < n; ++bn) {
    const std::int64_t base = static_cast<std::int64_t>(bn) * m;
    S num = S(0), den = S(0);
    for (std::int64_t i = 0; i < m; ++i) {
      const S pc = std::min(hi, std::max(lo, pv[base + i]));
      num -= e[base + i] *
             (y[base + i] * std::log(pc) + (S(1) - y[base + i]) * std::log(S(1) - pc));
      den += e[base + i];
    }
    check(den > S(0), "dec_loss: zero weight mass");
    wsum[static_cast<std::size_t>(bn)] = den;
    acc += num / den;
  }
  acc /= static_cast<S>(n);
  auto pn = p.node();
  Tensor<S> ycopy = y, ecopy = e;
  return make_result<S>(scalar_tensor(acc), {pn},
                        [pn, ycopy, ecopy, n, m, wsum, lo, hi](Node<S>& self) {
                          const S g = self.grad[0] / static_cast<S>(n);
                          for (int bn = 0; bn < n; ++bn) {
                            const std::int64_t base = static_cast<std::int64_t>(bn) * m;
                            const S inv = S(1) / wsum[static_cast<std::size_t>(bn)];
                            for (std::int64_t i = 0; i < m; ++i) {
                              const S pc = pn->value[base + i];
                              if (pc <= lo || pc >= hi) continue;
                              pn->grad[base + i] +=
                                  g * inv * ecopy[base + i] *
                                  (-ycopy[base + i] / pc + (S(1) - ycopy[base + i]) / (S(1) - pc));
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Multi-level total objective.

/// Level weights: [1, 0.8, 0.6, 0.4, 0.2] truncated/extended to S levels.
inline std::vector<double> default_level_weights(int stages) {
  std::vector<double> w(static_cast<std::size_t>(stages));
  for (int i = 0; i < stages; ++i) w[static_cast<std::size_t>(i)] = std::max(0.2, 1.0 - 0.2 * i);
  return w;
}

struct LossSwitches {
  bool use_iou = true;
  bool use_dec = true;
  bool use_mls = true;
  bool depth_supervision = true;  // false in depth-free / DAM-less modes
};

template <typename S>
struct LossBreakdown {
  S total = S(0);
  std::vector<std::pair<std::string, S>> terms;
  std::vector<S> lambdas;

  S term(const std::string& name) const {
    for (const auto& [k, v] : terms)
      if (k == name) return v;
    fail("no loss term named " + name);
  }
  bool has_term(const std::string& name) const {
    for (const auto& [k, v] : terms)
      if (k == name) return true;
    return false;
  }
};

/// Assembles L = L_depth + sum_i lambda_i (L_bce,i + L_iou,i + L_dec,i) over the
/// side outputs (finest first). One shared error-weight map is derived from the
/// depth prediction and treated as a constant.
template <typename S>
std::pair<Var<S>, LossBreakdown<S>> total_loss(const std::vector<Var<S>>& sides,
                                               const Var<S>& depth_pred, const Tensor<S>& y_mask,
                                               const Tensor<S>* y_depth,
                                               const std::vector<S>& lambdas,
                                               std::pair<int, int> window,
                                               const LossSwitches& sw) {
  check(!sides.empty(), "total_loss: no side outputs");
  const int levels = sw.use_mls ? static_cast<int>(sides.size()) : 1;
  check(!sw.use_mls || lambdas.size() == sides.size(),
        "total_loss: lambda count must equal the number of side outputs");

  const bool need_depth = sw.depth_supervision || sw.use_dec;
  if (need_depth) {
    check(depth_pred.defined(),
          "total_loss: no depth prediction available; disable depth supervision");
    check(y_depth != nullptr,
          "total_loss: sample has no depth map; training requires depth supervision "
          "(use the depth-free mode to train without depth)");
  }

  LossBreakdown<S> bd;
  std::vector<std::pair<S, Var<S>>> parts;

  if (sw.depth_supervision) {
    Var<S> ld = depth_loss(depth_pred, *y_depth);
    bd.terms.emplace_back("depth", ld.value()[0]);
    parts.emplace_back(S(1), ld);
  }

  Tensor<S> e;
  if (sw.use_dec) e = dec_weights(depth_pred.value(), *y_depth, window);

  for (int i = 0; i < levels; ++i) {
    const S li = sw.use_mls ? lambdas[static_cast<std::size_t>(i)] : S(1);
    bd.lambdas.push_back(li);
    const std::string suffix = "_l" + std::to_string(i + 1);

    Var<S> lb = bce_loss(sides[static_cast<std::size_t>(i)], y_mask);
    bd.terms.emplace_back("bce" + suffix, lb.value()[0]);
    parts.emplace_back(li, lb);

    if (sw.use_iou) {
      Var<S> lu = iou_loss(sides[static_cast<std::size_t>(i)], y_mask);
      bd.terms.emplace_back("iou" + suffix, lu.value()[0]);
      parts.emplace_back(li, lu);
    }
    if (sw.use_dec) {
      Var<S> lw = dec_loss(sides[static_cast<std::size_t>(i)], y_mask, e);
      bd.terms.emplace_back("dec" + suffix, lw.value()[0]);
      parts.emplace_back(li, lw);
    }
  }

  Var<S> total = weighted_sum(parts);
  bd.total = total.value()[0];
  return {total, bd};
}

}  // namespace dasnet::losses
