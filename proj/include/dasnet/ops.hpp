#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <utility>
#include <vector>

#include "dasnet/autograd.hpp"

namespace dasnet {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

namespace detail {

inline int conv_out_dim(int in, int k, int stride, int pad, int dil) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

// Unpacks one image (C,H,W) into a (C*KH*KW) x (OH*OW) matrix.
template <typename S>
void im2col(const S* src, int C, int H, int W, int kh, int kw, int stride, int pad, int dil,
            int oh, int ow, S* cols) {
  const std::int64_t opx = static_cast<std::int64_t>(oh) * ow;
  std::int64_t row = 0;
  for (int c = 0; c < C; ++c) {
    const S* plane = src + static_cast<std::int64_t>(c) * H * W;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        S* dst = cols + row * opx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky * dil;
          if (iy < 0 || iy >= H) {
            for (int ox = 0; ox < ow; ++ox) *dst++ = S(0);
            continue;
          }
          const S* line = plane + static_cast<std::int64_t>(iy) * W;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx * dil;
            *dst++ = (ix >= 0 && ix < W) ? line[ix] : S(0);
          }
        }
      }
    }
  }
}

// Scatter-adds a column matrix back into one image (C,H,W).
template <typename S>
void col2im_add(const S* cols, int C, int H, int W, int kh, int kw, int stride, int pad, int dil,
                int oh, int ow, S* dst) {
  const std::int64_t opx = static_cast<std::int64_t>(oh) * ow;
  std::int64_t row = 0;
  for (int c = 0; c < C; ++c) {
    S* plane = dst + static_cast<std::int64_t>(c) * H * W;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        const S* src = cols + row * opx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky * dil;
          if (iy < 0 || iy >= H) {
            src += ow;
            continue;
          }
          S* line = plane + static_cast<std::int64_t>(iy) * W;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx * dil;
            if (ix >= 0 && ix < W) line[ix] += src[ox];
          }
          src += ow;
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

template <typename S>
Var<S> relu(const Var<S>& x) {
  const Tensor<S>& xv = x.value();
  Tensor<S> y(xv.shape());
  for (std::int64_t i = 0; i < xv.numel(); ++i) y[i] = xv[i] > S(0) ? xv[i] : S(0);
  auto xn = x.node();
  return make_result<S>(std::move(y), {xn}, [xn](Node<S>& self) {
    for (std::int64_t i = 0; i < self.value.numel(); ++i) {
      if (xn->value[i] > S(0)) xn->grad[i] += self.grad[i];
    }
  });
}

template <typename S>
Var<S> sigmoid(const Var<S>& x) {
  const Tensor<S>& xv = x.value();
  Tensor<S> y(xv.shape());
  for (std::int64_t i = 0; i < xv.numel(); ++i) y[i] = S(1) / (S(1) + std::exp(-xv[i]));
  auto xn = x.node();
  return make_result<S>(std::move(y), {xn}, [xn](Node<S>& self) {
    for (std::int64_t i = 0; i < self.value.numel(); ++i) {
      const S s = self.value[i];
      xn->grad[i] += self.grad[i] * s * (S(1) - s);
    }
  });
}

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  check(a.value().same_shape(b.value()), "add: shape mismatch " + a.value().shape_str() +
                                             " vs " + b.value().shape_str());
  Tensor<S> y(a.value().shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] + b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_result<S>(std::move(y), {an, bn}, [an, bn](Node<S>& self) {
    if (an->requires_grad)
      for (std::int64_t i = 0; i < self.value.numel(); ++i) an->grad[i] += self.grad[i];
    if (bn->requires_grad)
      for (std::int64_t i = 0; i < self.value.numel(); ++i) bn->grad[i] += self.grad[i];
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  check(a.value().same_shape(b.value()), "mul: shape mismatch " + a.value().shape_str() +
                                             " vs " + b.value().shape_str());
  Tensor<S> y(a.value().shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] * b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_result<S>(std::move(y), {an, bn}, [an, bn](Node<S>& self) {
    if (an->requires_grad)
      for (std::int64_t i = 0; i < self.value.numel(); ++i)
        an->grad[i] += self.grad[i] * bn->value[i];
    if (bn->requires_grad)
      for (std::int64_t i = 0; i < self.value.numel(); ++i)
        bn->grad[i] += self.grad[i] * an->value[i];
  });
}

template <typename S>
Var<S> reshape(const Var<S>& x, std::vector<int> shape) {
  Tensor<S> y = x.value().reshaped(std::move(shape));
  auto xn = x.node();
  return make_result<S>(std::move(y), {xn}, [xn](Node<S>& self) {
    for (std::int64_t i = 0; i < self.value.numel(); ++i) xn->grad[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// NCHW structure ops

template <typename S>
Var<S> concat_channels(const std::vector<Var<S>>& xs) {
  check(!xs.empty(), "concat_channels: no inputs");
  const int n = xs[0].value().dim(0), h = xs[0].value().dim(2), w = xs[0].value().dim(3);
  int ctot = 0;
  for (const auto& x : xs) {
    check(x.value().rank() == 4, "concat_channels: rank-4 inputs required");
    check(x.value().dim(0) == n && x.value().dim(2) == h && x.value().dim(3) == w,
          "concat_channels: inputs must agree on N,H,W");
    ctot += x.value().dim(1);
  }
  Tensor<S> y({n, ctot, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<NodePtr<S>> parents;
  std::vector<int> widths;
  for (const auto& x : xs) {
    parents.push_back(x.node());
    widths.push_back(x.value().dim(1));
  }
  for (int bn = 0; bn < n; ++bn) {
    int coff = 0;
    for (const auto& x : xs) {
      const int c = x.value().dim(1);
      const S* src = x.value().data() + static_cast<std::int64_t>(bn) * c * plane;
      S* dst = y.data() + (static_cast<std::int64_t>(bn) * ctot + coff) * plane;
      std::copy(src, src + static_cast<std::int64_t>(c) * plane, dst);
      coff += c;
    }
  }
  return make_result<S>(std::move(y), std::move(parents),
                        [widths, n, plane, ctot](Node<S>& self) {
                          for (int bn = 0; bn < n; ++bn) {
                            int coff = 0;
                            for (std::size_t k = 0; k < widths.size(); ++k) {
                              const int c = widths[k];
                              auto& p = self.parents[k];
                              if (p->requires_grad) {
                                const S* src = self.grad.data() +
                                               (static_cast<std::int64_t>(bn) * ctot + coff) * plane;
                                S* dst = p->grad.data() + static_cast<std::int64_t>(bn) * c * plane;
                                for (std::int64_t i = 0; i < c * plane; ++i) dst[i] += src[i];
                              }
                              coff += c;
                            }
                          }
                        });
}

/// Mean over spatial positions: {N,C,H,W} -> {N,C}.
template <typename S>
Var<S> global_avg_pool(const Var<S>& x) {
  const Tensor<S>& xv = x.value();
  check(xv.rank() == 4, "global_avg_pool: rank-4 input required");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  check(h > 0 && w > 0, "global_avg_pool: zero-sized spatial dims");
  Tensor<S> y({n, c});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const S inv = S(1) / static_cast<S>(plane);
  for (int bn = 0; bn < n; ++bn)
    for (int ch = 0; ch < c; ++ch) {
      const S* src = xv.data() + (static_cast<std::int64_t>(bn) * c + ch) * plane;
      S acc = S(0);
      for (std::int64_t i = 0; i < plane; ++i) acc += src[i];
      y[static_cast<std::int64_t>(bn) * c + ch] = acc * inv;
    }
  auto xn = x.node();
  return make_result<S>(std::move(y), {xn}, [xn, n, c, plane, inv](Node<S>& self) {
    for (int bn = 0; bn < n; ++bn)
      for (int ch = 0; ch < c; ++ch) {
        const S g = self.grad[static_cast<std::int64_t>(bn) * c + ch] * inv;
        S* dst = xn->grad.data() + (static_cast<std::int64_t>(bn) * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) dst[i] += g;
      }
  });
}

/// Per-channel scaling: {N,C,H,W} * {N,C} broadcast over space.
template <typename S>
Var<S> channel_scale(const Var<S>& x, const Var<S>& s) {
  const Tensor<S>& xv = x.value();
  const Tensor<S>& sv = s.value();
  check(xv.rank() == 4 && sv.rank() == 2, "channel_scale: expects {N,C,H,W} and {N,C}");
  check(xv.dim(0) == sv.dim(0) && xv.dim(1) == sv.dim(1),
        "channel_scale: N,C mismatch between input and scales");
  const int n = xv.dim(0), c = xv.dim(1);
  const std::int64_t plane = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
  Tensor<S> y(xv.shape());
  for (int bn = 0; bn < n; ++bn)
    for (int ch = 0; ch < c; ++ch) {
      const S k = sv[static_cast<std::int64_t>(bn) * c + ch];
      const S* src = xv.data() + (static_cast<std::int64_t>(bn) * c + ch) * plane;
      S* dst = y.data() + (static_cast<std::int64_t>(bn) * c + ch) * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * k;
    }
  auto xn = x.node(), sn = s.node();
  return make_result<S>(std::move(y), {xn, sn}, [xn, sn, n, c, plane](Node<S>& self) {
    for (int bn = 0; bn < n; ++bn)
      for (int ch = 0; ch < c; ++ch) {
        const std::int64_t base = (static_cast<std::int64_t>(bn) * c + ch) * plane;
        const std::int64_t si = static_cast<std::int64_t>(bn) * c + ch;
        if (xn->requires_grad) {
          const S k = sn->value[si];
          for (std::int64_t i = 0; i < plane; ++i)
            xn->grad[base + i] += self.grad[base + i] * k;
        }
        if (sn->requires_grad) {
          S acc = S(0);
          for (std::int64_t i = 0; i < plane; ++i)
            acc += self.grad[base + i] * xn->value[base + i];
          sn->grad[si] += acc;
        }
      }
  });
}

/// Fully connected layer: {N,K} x {O,K}^T + {O} -> {N,O}.
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  const Tensor<S>& xv = x.value();
  const Tensor<S>& wv = weight.value();
  check(xv.rank() == 2 && wv.rank() == 2, "linear: expects {N,K} input and {O,K} weight");
  check(xv.dim(1) == wv.dim(1), "linear: input width " + std::to_string(xv.dim(1)) +
                                    " does not match weight width " + std::to_string(wv.dim(1)));
  const int n = xv.dim(0), k = xv.dim(1), o = wv.dim(0);
  Tensor<S> y({n, o});
  ConstMatMap<S> xm(xv.data(), n, k), wm(wv.data(), o, k);
  MatMap<S> ym(y.data(), n, o);
  ym.noalias() = xm * wm.transpose();
  if (bias.defined()) {
    check(bias.value().numel() == o, "linear: bias size mismatch");
    for (int bn = 0; bn < n; ++bn)
      for (int j = 0; j < o; ++j) y[static_cast<std::int64_t>(bn) * o + j] += bias.value()[j];
  }
  auto xn = x.node(), wn = weight.node();
  auto bnode = bias.defined() ? bias.node() : nullptr;
  std::vector<NodePtr<S>> parents{xn, wn};
  if (bnode) parents.push_back(bnode);
  return make_result<S>(std::move(y), std::move(parents), [xn, wn, bnode, n, k, o](Node<S>& self) {
    ConstMatMap<S> gm(self.grad.data(), n, o);
    if (xn->requires_grad) {
      MatMap<S> gx(xn->grad.data(), n, k);
      ConstMatMap<S> wm(wn->value.data(), o, k);
      gx.noalias() += gm * wm;
    }
    if (wn->requires_grad) {
      MatMap<S> gw(wn->grad.data(), o, k);
      ConstMatMap<S> xm(xn->value.data(), n, k);
      gw.noalias() += gm.transpose() * xm;
    }
    if (bnode && bnode->requires_grad) {
      for (int bn = 0; bn < n; ++bn)
        for (int j = 0; j < o; ++j) bnode->grad[j] += self.grad[static_cast<std::int64_t>(bn) * o + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution

/// 2-D convolution, NCHW input {N,C,H,W}, weight {O,C,KH,KW}, optional bias {O}.
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride, int pad,
              int dilation) {
  const Tensor<S>& xv = x.value();
  const Tensor<S>& wv = weight.value();
  check(xv.rank() == 4, "conv2d: rank-4 input required, got " + xv.shape_str());
  check(wv.rank() == 4, "conv2d: rank-4 weight required");
  check(xv.dim(1) == wv.dim(1), "conv2d: input has " + std::to_string(xv.dim(1)) +
                                    " channels but weight expects " + std::to_string(wv.dim(1)));
  check(stride >= 1 && dilation >= 1 && pad >= 0, "conv2d: bad stride/pad/dilation");
  const int n = xv.dim(0), ic = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int oc = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  const int oh = detail::conv_out_dim(h, kh, stride, pad, dilation);
  const int ow = detail::conv_out_dim(w, kw, stride, pad, dilation);
  check(oh > 0 && ow > 0, "conv2d: output would be empty for input " + xv.shape_str());

  const std::int64_t krows = static_cast<std::int64_t>(ic) * kh * kw;
  const std::int64_t opx = static_cast<std::int64_t>(oh) * ow;
  Tensor<S> y({n, oc, oh, ow});
  std::vector<S> cols(static_cast<std::size_t>(krows * opx));
  ConstMatMap<S> wm(wv.data(), oc, krows);
  for (int bn = 0; bn < n; ++bn) {
    detail::im2col(xv.data() + static_cast<std::int64_t>(bn) * ic * h * w, ic, h, w, kh, kw,
                   stride, pad, dilation, oh, ow, cols.data());
    ConstMatMap<S> cm(cols.data(), krows, opx);
    MatMap<S> ym(y.data() + static_cast<std::int64_t>(bn) * oc * opx, oc, opx);
    ym.noalias() = wm * cm;
  }
  if (bias.defined()) {
    check(bias.value().numel() == oc, "conv2d: bias size mismatch");
    for (int bn = 0; bn < n; ++bn)
      for (int c = 0; c < oc; ++c) {
        S* dst = y.data() + (static_cast<std::int64_t>(bn) * oc + c) * opx;
        const S b = bias.value()[c];
        for (std::int64_t i = 0; i < opx; ++i) dst[i] += b;
      }
  }

  auto xn = x.node(), wn = weight.node();
  auto bnode = bias.defined() ? bias.node() : nullptr;
  std::vector<NodePtr<S>> parents{xn, wn};
  if (bnode) parents.push_back(bnode);
  return make_result<S>(
      std::move(y), std::move(parents),
      [xn, wn, bnode, n, ic, h, w, oc, kh, kw, stride, pad, dilation, oh, ow, krows,
       opx](Node<S>& self) {
        std::vector<S> cols(static_cast<std::size_t>(krows * opx));
        ConstMatMap<S> wm(wn->value.data(), oc, krows);
        for (int bn = 0; bn < n; ++bn) {
          ConstMatMap<S> gm(self.grad.data() + static_cast<std::int64_t>(bn) * oc * opx, oc, opx);
          if (wn->requires_grad) {
            detail::im2col(xn->value.data() + static_cast<std::int64_t>(bn) * ic * h * w, ic, h,
                           w, kh, kw, stride, pad, dilation, oh, ow, cols.data());
            ConstMatMap<S> cm(cols.data(), krows, opx);
            MatMap<S> gw(wn->grad.data(), oc, krows);
            gw.noalias() += gm * cm.transpose();
          }
          if (xn->requires_grad) {
            MatMap<S> gc(cols.data(), krows, opx);
            gc.noalias() = wm.transpose() * gm;
            detail::col2im_add(cols.data(), ic, h, w, kh, kw, stride, pad, dilation, oh, ow,
                               xn->grad.data() + static_cast<std::int64_t>(bn) * ic * h * w);
          }
        }
        if (bnode && bnode->requires_grad) {
          for (int bn = 0; bn < n; ++bn)
            for (int c = 0; c < oc; ++c) {
              const S* g = self.grad.data() + (static_cast<std::int64_t>(bn) * oc + c) * opx;
              S acc = S(0);
              for (std::int64_t i = 0; i < opx; ++i) acc += g[i];
              bnode->grad[c] += acc;
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Bilinear resize (half-pixel centers; identity when sizes match)

template <typename S>
Var<S> upsample_bilinear(const Var<S>& x, int out_h, int out_w) {
  const Tensor<S>& xv = x.value();
  check(xv.rank() == 4, "upsample_bilinear: rank-4 input required");
  check(out_h > 0 && out_w > 0, "upsample_bilinear: bad target size");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  check(h > 0 && w > 0, "upsample_bilinear: zero-sized spatial dims");

  struct Tap {
    int i0, i1;
    S w0, w1;
  };
  auto make_taps = [](int in, int out) {
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * scale - 0.5;
      if (src < 0) src = 0;
      if (src > in - 1) src = in - 1;
      const int i0 = static_cast<int>(src);
      const int i1 = std::min(i0 + 1, in - 1);
      const S f = static_cast<S>(src - i0);
      taps[static_cast<std::size_t>(o)] = {i0, i1, S(1) - f, f};
    }
    return taps;
  };
  const auto ty = make_taps(h, out_h);
  const auto tx = make_taps(w, out_w);

  Tensor<S> y({n, c, out_h, out_w});
  for (int bn = 0; bn < n; ++bn)
    for (int ch = 0; ch < c; ++ch) {
      const S* src = xv.data() + (static_cast<std::int64_t>(bn) * c + ch) * h * w;
      S* dst = y.data() + (static_cast<std::int64_t>(bn) * c + ch) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const Tap& a = ty[static_cast<std::size_t>(oy)];
        const S* r0 = src + static_cast<std::int64_t>(a.i0) * w;
        const S* r1 = src + static_cast<std::int64_t>(a.i1) * w;
        for (int ox = 0; ox < out_w; ++ox) {
          const Tap& b = tx[static_cast<std::size_t>(ox)];
          *dst++ = a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1]) +
                   a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]);
        }
      }
    }

  auto xn = x.node();
  return make_result<S>(std::move(y), {xn}, [xn, ty, tx, n, c, h, w, out_h, out_w](Node<S>& self) {
    for (int bn = 0; bn < n; ++bn)
      for (int ch = 0; ch < c; ++ch) {
        S* dst = xn->grad.data() + (static_cast<std::int64_t>(bn) * c + ch) * h * w;
        const S* g = self.grad.data() + (static_cast<std::int64_t>(bn) * c + ch) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          const Tap& a = ty[static_cast<std::size_t>(oy)];
          for (int ox = 0; ox < out_w; ++ox) {
            const Tap& b = tx[static_cast<std::size_t>(ox)];
            const S gv = *g++;
            dst[static_cast<std::int64_t>(a.i0) * w + b.i0] += gv * a.w0 * b.w0;
            dst[static_cast<std::int64_t>(a.i0) * w + b.i1] += gv * a.w0 * b.w1;
            dst[static_cast<std::int64_t>(a.i1) * w + b.i0] += gv * a.w1 * b.w0;
            dst[static_cast<std::int64_t>(a.i1) * w + b.i1] += gv * a.w1 * b.w1;
          }
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Batch normalization

/// Batch norm over (N,H,W) per channel. Training mode uses batch statistics and
/// updates the running buffers in place; eval mode reads the running buffers.
template <typename S>
Var<S> batch_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta,
                  Tensor<S>& running_mean, Tensor<S>& running_var, bool training, S momentum,
                  S eps) {
  const Tensor<S>& xv = x.value();
  check(xv.rank() == 4, "batch_norm: rank-4 input required");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  check(gamma.value().numel() == c && beta.value().numel() == c,
        "batch_norm: affine parameter size mismatch");
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t m = static_cast<std::int64_t>(n) * plane;

  std::vector<S> mean(static_cast<std::size_t>(c)), invstd(static_cast<std::size_t>(c));
  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      S acc = S(0);
      for (int bn = 0; bn < n; ++bn) {
        const S* src = xv.data() + (static_cast<std::int64_t>(bn) * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) acc += src[i];
      }
      const S mu = acc / static_cast<S>(m);
      S var = S(0);
      for (int bn = 0; bn < n; ++bn) {
        const S* src = xv.data() + (static_cast<std::int64_t>(bn) * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const S d = src[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<S>(m);
      mean[static_cast<std::size_t>(ch)] = mu;
      invstd[static_cast<std::size_t>(ch)] = S(1) / std::sqrt(var + eps);
      const S unbiased = m > 1 ? var * static_cast<S>(m) / static_cast<S>(m - 1) : var;
      running_mean[ch] = (S(1) - momentum) * running_mean[ch] + momentum * mu;
      running_var[ch] = (S(1) - momentum) * running_var[ch] + momentum * unbiased;
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[static_cast<std::size_t>(ch)] = running_mean[ch];
      invstd[static_cast<std::size_t>(ch)] = S(1) / std::sqrt(running_var[ch] + eps);
    }
  }

  Tensor<S> y(xv.shape());
  for (int bn = 0; bn < n; ++bn)
    for (int ch = 0; ch < c; ++ch) {
      const S mu = mean[static_cast<std::size_t>(ch)];
      const S is = invstd[static_cast<std::size_t>(ch)];
      const S g = gamma.value()[ch], b = beta.value()[ch];
      const S* src = xv.data() + (static_cast<std::int64_t>(bn) * c + ch) * plane;
      S* dst = y.data() + (static_cast<std::int64_t>(bn) * c + ch) * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = (src[i] - mu) * is * g + b;
    }

  auto xn = x.node(), gn = gamma.node(), bn_ = beta.node();
  return make_result<S>(
      std::move(y), {xn, gn, bn_},
      [xn, gn, bn_, mean, invstd, n, c, plane, m, training](Node<S>& self) {
        for (int ch = 0; ch < c; ++ch) {
          const S mu = mean[static_cast<std::size_t>(ch)];
          const S is = invstd[static_cast<std::size_t>(ch)];
          const S g = gn->value[ch];
          S sum_dy = S(0), sum_dy_xhat = S(0);
          for (int bi = 0; bi < n; ++bi) {
            const std::int64_t base = (static_cast<std::int64_t>(bi) * c + ch) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              const S dy = self.grad[base + i];
              sum_dy += dy;
              sum_dy_xhat += dy * (xn->value[base + i] - mu) * is;
            }
          }
          if (gn->requires_grad) gn->grad[ch] += sum_dy_xhat;
          if (bn_->requires_grad) bn_->grad[ch] += sum_dy;
          if (xn->requires_grad) {
            const S inv_m = S(1) / static_cast<S>(m);
            for (int bi = 0; bi < n; ++bi) {
              const std::int64_t base = (static_cast<std::int64_t>(bi) * c + ch) * plane;
              for (std::int64_t i = 0; i < plane; ++i) {
                const S dy = self.grad[base + i];
                const S xhat = (xn->value[base + i] - mu) * is;
                if (training) {
                  xn->grad[base + i] +=
                      g * is * (dy - sum_dy * inv_m - xhat * sum_dy_xhat * inv_m);
                } else {
                  xn->grad[base + i] += g * is * dy;
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Scalar combinations

/// Sum of all elements -> scalar.
template <typename S>
Var<S> sum_all(const Var<S>& x) {
  S acc = S(0);
  for (std::int64_t i = 0; i < x.value().numel(); ++i) acc += x.value()[i];
  auto xn = x.node();
  return make_result<S>(scalar_tensor(acc), {xn}, [xn](Node<S>& self) {
    const S g = self.grad[0];
    for (std::int64_t i = 0; i < xn->grad.numel(); ++i) xn->grad[i] += g;
  });
}

/// Weighted sum of scalar Vars -> scalar.
template <typename S>
Var<S> weighted_sum(const std::vector<std::pair<S, Var<S>>>& terms) {
  check(!terms.empty(), "weighted_sum: no terms");
  S acc = S(0);
  std::vector<NodePtr<S>> parents;
  std::vector<S> coeffs;
  for (const auto& [cw, v] : terms) {
    check(v.value().numel() == 1, "weighted_sum: scalar terms required");
    acc += cw * v.value()[0];
    parents.push_back(v.node());
    coeffs.push_back(cw);
  }
  return make_result<S>(scalar_tensor(acc), std::move(parents), [coeffs](Node<S>& self) {
    for (std::size_t k = 0; k < coeffs.size(); ++k) {
      auto& p = self.parents[k];
      if (p->requires_grad) p->grad[0] += self.grad[0] * coeffs[k];
    }
  });
}

}  // namespace dasnet
