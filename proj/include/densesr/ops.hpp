#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <utility>
#include <vector>

#include "densesr/common.hpp"
#include "densesr/tape.hpp"
#include "densesr/tensor.hpp"

namespace densesr {

enum class Mode { kTrain, kEval };

namespace detail {

template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Unfolds one image (channels x h x w) into a (channels*kh*kw) x (oh*ow)
// patch matrix. Out-of-range taps read as zero.
template <typename S>
void im2col(const S* img, int channels, int h, int w, int kh, int kw, int stride, int pad,
            int oh, int ow, S* col) {
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        S* dst = col + (static_cast<std::size_t>(c) * kh * kw + ky * kw + kx) * plane;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::memset(dst, 0, sizeof(S) * ow);
            dst += ow;
            continue;
          }
          const S* src = img + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : S(0);
          }
          dst += ow;
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds patch columns back onto the image grid.
template <typename S>
void col2im_add(const S* col, int channels, int h, int w, int kh, int kw, int stride, int pad,
                int oh, int ow, S* img) {
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const S* src = col + (static_cast<std::size_t>(c) * kh * kw + ky * kw + kx) * plane;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            src += ow;
            continue;
          }
          S* dst = img + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
          src += ow;
        }
      }
    }
  }
}

template <typename S>
Var<S> make_result(Tape<S>* tape, Tensor<S> value, typename Tape<S>::BackwardFn fn) {
  if (tape == nullptr) return constant(std::move(value));
  const Shape shape = value.shape();
  const int id = tape->emit(shape, std::move(fn));
  return Var<S>{std::move(value), id, tape};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

// kernel is (out_ch, in_ch, kh, kw); bias is (1, out_ch, 1, 1).
template <typename S>
Var<S> conv2d(const Var<S>& input, const Var<S>& kernel, const Var<S>& bias, int stride,
              int padding) {
  const Shape in = input.shape();
  const Shape ks = kernel.shape();
  const int oc = ks.n, ic = ks.c, kh = ks.h, kw = ks.w;
  if (in.c != ic) {
    fail_config("conv2d channel mismatch: input ", in.str(), " vs kernel ", ks.str());
  }
  if (kh % 2 == 0 || kw % 2 == 0) fail_config("conv2d kernel size must be odd, got ", ks.str());
  if (stride < 1) fail_config("conv2d stride must be >= 1, got ", stride);
  if (padding < 0) fail_config("conv2d padding must be >= 0, got ", padding);
  if (bias.shape() != Shape{1, oc, 1, 1}) {
    fail_config("conv2d bias shape ", bias.shape().str(), " does not match out channels ", oc);
  }
  const int oh = (in.h + 2 * padding - kh) / stride + 1;
  const int ow = (in.w + 2 * padding - kw) / stride + 1;
  if (in.h + 2 * padding < kh || in.w + 2 * padding < kw) {
    fail_config("conv2d kernel ", ks.str(), " does not fit input ", in.str(), " with padding ",
                padding);
  }

  const int patch = ic * kh * kw;
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  Tensor<S> out(Shape{in.n, oc, oh, ow});
  std::vector<S> col(static_cast<std::size_t>(patch) * plane);
  detail::ConstMatMap<S> kmat(kernel.value.data(), oc, patch);
  for (int b = 0; b < in.n; ++b) {
    detail::im2col(input.value.data() + input.value.index(b, 0, 0, 0), ic, in.h, in.w, kh, kw,
                   stride, padding, oh, ow, col.data());
    detail::ConstMatMap<S> cmat(col.data(), patch, plane);
    detail::MatMap<S> omat(out.mutable_data() + out.index(b, 0, 0, 0), oc, plane);
    omat.noalias() = kmat * cmat;
    for (int c = 0; c < oc; ++c) omat.row(c).array() += bias.value[c];
  }

  Tape<S>* tape = detail::common_tape<S>({&input, &kernel, &bias});
  if (tape == nullptr) return constant(std::move(out));

  auto backward = [in, oc, ic, kh, kw, stride, padding, oh, ow, in_node = input.node,
                   k_node = kernel.node, b_node = bias.node, x = input.value,
                   k = kernel.value](const Tensor<S>& g, Tape<S>& t) {
    const int patch = ic * kh * kw;
    const std::size_t plane = static_cast<std::size_t>(oh) * ow;
    std::vector<S> buf(static_cast<std::size_t>(patch) * plane);
    if (in_node >= 0) {
      Tensor<S>& gx = t.grad_buffer(in_node);
      detail::ConstMatMap<S> kmat(k.data(), oc, patch);
      for (int b = 0; b < in.n; ++b) {
        detail::ConstMatMap<S> gmat(g.data() + g.index(b, 0, 0, 0), oc, plane);
        detail::MatMap<S> cmat(buf.data(), patch, plane);
        cmat.noalias() = kmat.transpose() * gmat;
        detail::col2im_add(buf.data(), ic, in.h, in.w, kh, kw, stride, padding, oh, ow,
                           gx.mutable_data() + gx.index(b, 0, 0, 0));
      }
    }
    if (k_node >= 0) {
      Tensor<S>& gk = t.grad_buffer(k_node);
      detail::MatMap<S> gkmat(gk.mutable_data(), oc, patch);
      for (int b = 0; b < in.n; ++b) {
        detail::im2col(x.data() + x.index(b, 0, 0, 0), ic, in.h, in.w, kh, kw, stride, padding,
                       oh, ow, buf.data());
        detail::ConstMatMap<S> cmat(buf.data(), patch, plane);
        detail::ConstMatMap<S> gmat(g.data() + g.index(b, 0, 0, 0), oc, plane);
        gkmat.noalias() += gmat * cmat.transpose();
      }
    }
    if (b_node >= 0) {
      Tensor<S>& gb = t.grad_buffer(b_node);
      for (int b = 0; b < in.n; ++b) {
        for (int c = 0; c < oc; ++c) {
          double acc = 0.0;
          const S* src = g.data() + g.index(b, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) acc += src[i];
          gb[c] += static_cast<S>(acc);
        }
      }
    }
  };
  return detail::make_result(tape, std::move(out), std::move(backward));
}

// Transposed convolution; the linear adjoint of conv2d for matched stride
// and padding. kernel is (in_ch, out_ch, kh, kw); bias is (1, out_ch, 1, 1).
template <typename S>
Var<S> conv_transpose2d(const Var<S>& input, const Var<S>& kernel, const Var<S>& bias,
                        int stride, int padding, int output_padding) {
  const Shape in = input.shape();
  const Shape ks = kernel.shape();
  const int ic = ks.n, oc = ks.c, kh = ks.h, kw = ks.w;
  if (in.c != ic) {
    fail_config("conv_transpose2d channel mismatch: input ", in.str(), " vs kernel ", ks.str());
  }
  if (stride != 1 && stride != 2) {
    fail_config("conv_transpose2d stride must be 1 or 2, got ", stride);
  }
  if (output_padding < 0 || output_padding >= stride) {
    fail_config("conv_transpose2d output_padding must be in [0, stride), got ", output_padding,
                " with stride ", stride);
  }
  if (bias.shape() != Shape{1, oc, 1, 1}) {
    fail_config("conv_transpose2d bias shape ", bias.shape().str(),
                " does not match out channels ", oc);
  }
  const int oh = (in.h - 1) * stride - 2 * padding + kh + output_padding;
  const int ow = (in.w - 1) * stride - 2 * padding + kw + output_padding;
  if (oh < 1 || ow < 1) {
    fail_config("conv_transpose2d output would be empty for input ", in.str());
  }

  const int patch = oc * kh * kw;
  const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
  Tensor<S> out(Shape{in.n, oc, oh, ow});
  std::vector<S> col(static_cast<std::size_t>(patch) * plane);
  detail::ConstMatMap<S> kmat(kernel.value.data(), ic, patch);
  for (int b = 0; b < in.n; ++b) {
    detail::ConstMatMap<S> imat(input.value.data() + input.value.index(b, 0, 0, 0), ic, plane);
    detail::MatMap<S> cmat(col.data(), patch, plane);
    cmat.noalias() = kmat.transpose() * imat;
    S* dst = out.mutable_data() + out.index(b, 0, 0, 0);
    detail::col2im_add(col.data(), oc, oh, ow, kh, kw, stride, padding, in.h, in.w, dst);
    for (int c = 0; c < oc; ++c) {
      S* row = dst + static_cast<std::size_t>(c) * oh * ow;
      const S bv = bias.value[c];
      for (int i = 0; i < oh * ow; ++i) row[i] += bv;
    }
  }

  Tape<S>* tape = detail::common_tape<S>({&input, &kernel, &bias});
  if (tape == nullptr) return constant(std::move(out));

  auto backward = [in, ic, oc, kh, kw, stride, padding, oh, ow, in_node = input.node,
                   k_node = kernel.node, b_node = bias.node, x = input.value,
                   k = kernel.value](const Tensor<S>& g, Tape<S>& t) {
    const int patch = oc * kh * kw;
    const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
    std::vector<S> buf(static_cast<std::size_t>(patch) * plane);
    for (int b = 0; b < in.n; ++b) {
      const bool need_col = in_node >= 0 || k_node >= 0;
      if (need_col) {
        detail::im2col(g.data() + g.index(b, 0, 0, 0), oc, oh, ow, kh, kw, stride, padding,
                       in.h, in.w, buf.data());
      }
      detail::ConstMatMap<S> cmat(buf.data(), patch, plane);
      if (in_node >= 0) {
        Tensor<S>& gx = t.grad_buffer(in_node);
        detail::ConstMatMap<S> kmat(k.data(), ic, patch);
        detail::MatMap<S> gxmat(gx.mutable_data() + gx.index(b, 0, 0, 0), ic, plane);
        gxmat.noalias() += kmat * cmat;
      }
      if (k_node >= 0) {
        Tensor<S>& gk = t.grad_buffer(k_node);
        detail::ConstMatMap<S> imat(x.data() + x.index(b, 0, 0, 0), ic, plane);
        detail::MatMap<S> gkmat(gk.mutable_data(), ic, patch);
        gkmat.noalias() += imat * cmat.transpose();
      }
    }
    if (b_node >= 0) {
      Tensor<S>& gb = t.grad_buffer(b_node);
      const std::size_t oplane = static_cast<std::size_t>(oh) * ow;
      for (int b = 0; b < in.n; ++b) {
        for (int c = 0; c < oc; ++c) {
          double acc = 0.0;
          const S* src = g.data() + g.index(b, c, 0, 0);
          for (std::size_t i = 0; i < oplane; ++i) acc += src[i];
          gb[c] += static_cast<S>(acc);
        }
      }
    }
  };
  return detail::make_result(tape, std::move(out), std::move(backward));
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

// gamma, beta, running_mean, running_var are (1, C, 1, 1). Train mode
// normalizes with batch statistics and folds them into the running
// estimates; eval mode reads the running estimates and never writes.
template <typename S>
Var<S> batch_norm(const Var<S>& input, const Var<S>& gamma, const Var<S>& beta,
                  Tensor<S>& running_mean, Tensor<S>& running_var, Mode mode,
                  double momentum = 0.1, double epsilon = 1e-5) {
  const Shape in = input.shape();
  const int C = in.c;
  if (gamma.shape() != Shape{1, C, 1, 1} || beta.shape() != Shape{1, C, 1, 1}) {
    fail_config("batch_norm gamma/beta must be (1,", C, ",1,1), got ", gamma.shape().str(),
                " and ", beta.shape().str());
  }
  const std::size_t reduce_n = static_cast<std::size_t>(in.n) * in.h * in.w;
  const std::size_t hw = static_cast<std::size_t>(in.h) * in.w;

  std::vector<double> mean(C), inv_std(C);
  if (mode == Mode::kTrain) {
    if (reduce_n < 2) {
      fail_runtime("batch_norm needs at least 2 values per channel in train mode, got ",
                   reduce_n, " for input ", in.str());
    }
    for (int c = 0; c < C; ++c) {
      double sum = 0.0, sq = 0.0;
      for (int b = 0; b < in.n; ++b) {
        const S* src = input.value.data() + input.value.index(b, c, 0, 0);
        for (std::size_t i = 0; i < hw; ++i) {
          sum += src[i];
          sq += static_cast<double>(src[i]) * src[i];
        }
      }
      const double mu = sum / static_cast<double>(reduce_n);
      const double var = std::max(0.0, sq / static_cast<double>(reduce_n) - mu * mu);
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + epsilon);
      const double unbiased = var * static_cast<double>(reduce_n) / (reduce_n - 1);
      running_mean[c] = static_cast<S>((1.0 - momentum) * running_mean[c] + momentum * mu);
      running_var[c] = static_cast<S>((1.0 - momentum) * running_var[c] + momentum * unbiased);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + epsilon);
    }
  }

  Tensor<S> xhat(in);
  Tensor<S> out(in);
  for (int b = 0; b < in.n; ++b) {
    for (int c = 0; c < C; ++c) {
      const S* src = input.value.data() + input.value.index(b, c, 0, 0);
      S* xh = xhat.mutable_data() + xhat.index(b, c, 0, 0);
      S* dst = out.mutable_data() + out.index(b, c, 0, 0);
      const S g = gamma.value[c], bt = beta.value[c];
      for (std::size_t i = 0; i < hw; ++i) {
        xh[i] = static_cast<S>((src[i] - mean[c]) * inv_std[c]);
        dst[i] = g * xh[i] + bt;
      }
    }
  }

  Tape<S>* tape = detail::common_tape<S>({&input, &gamma, &beta});
  if (tape == nullptr) return constant(std::move(out));

  auto backward = [in, C, hw, reduce_n, mode, inv_std, xhat, gm = gamma.value,
                   in_node = input.node, g_node = gamma.node,
                   b_node = beta.node](const Tensor<S>& g, Tape<S>& t) {
    // Per-channel sums of g and g*xhat feed every gradient.
    std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
    for (int b = 0; b < in.n; ++b) {
      for (int c = 0; c < C; ++c) {
        const S* gp = g.data() + g.index(b, c, 0, 0);
        const S* xh = xhat.data() + xhat.index(b, c, 0, 0);
        double a = 0.0, ax = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
          a += gp[i];
          ax += static_cast<double>(gp[i]) * xh[i];
        }
        sum_g[c] += a;
        sum_gx[c] += ax;
      }
    }
    if (b_node >= 0) {
      Tensor<S>& gb = t.grad_buffer(b_node);
      for (int c = 0; c < C; ++c) gb[c] += static_cast<S>(sum_g[c]);
    }
    if (g_node >= 0) {
      Tensor<S>& gg = t.grad_buffer(g_node);
      for (int c = 0; c < C; ++c) gg[c] += static_cast<S>(sum_gx[c]);
    }
    if (in_node >= 0) {
      Tensor<S>& gx = t.grad_buffer(in_node);
      const double n = static_cast<double>(reduce_n);
      for (int b = 0; b < in.n; ++b) {
        for (int c = 0; c < C; ++c) {
          const S* gp = g.data() + g.index(b, c, 0, 0);
          const S* xh = xhat.data() + xhat.index(b, c, 0, 0);
          S* dst = gx.mutable_data() + gx.index(b, c, 0, 0);
          const double scale = gm[c] * inv_std[c];
          if (mode == Mode::kTrain) {
            const double mg = sum_g[c] / n, mgx = sum_gx[c] / n;
            for (std::size_t i = 0; i < hw; ++i) {
              dst[i] += static_cast<S>(scale * (gp[i] - mg - xh[i] * mgx));
            }
          } else {
            for (std::size_t i = 0; i < hw; ++i) dst[i] += static_cast<S>(scale * gp[i]);
          }
        }
      }
    }
  };
  return detail::make_result(tape, std::move(out), std::move(backward));
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

namespace detail {

// Shared plumbing for unary maps: fn(x) forward, dfn(x, y) local derivative.
template <typename S, typename Fwd, typename Dfn>
Var<S> unary_op(const Var<S>& x, Fwd fn, Dfn dfn) {
  Tensor<S> out(x.shape());
  const S* src = x.value.data();
  S* dst = out.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i) dst[i] = fn(src[i]);
  Tape<S>* tape = detail::common_tape<S>({&x});
  if (tape == nullptr) return constant(std::move(out));
  auto backward = [node = x.node, xv = x.value, yv = out, dfn](const Tensor<S>& g, Tape<S>& t) {
    if (node < 0) return;
    Tensor<S>& gx = t.grad_buffer(node);
    const S* gp = g.data();
    const S* xp = xv.data();
    const S* yp = yv.data();
    S* dst = gx.mutable_data();
    for (std::size_t i = 0; i < gx.size(); ++i) dst[i] += gp[i] * dfn(xp[i], yp[i]);
  };
  return detail::make_result(tape, std::move(out), std::move(backward));
}

}  // namespace detail

template <typename S>
Var<S> relu(const Var<S>& x) {
  return detail::unary_op(
      x, [](S v) { return v > S(0) ? v : S(0); },
      [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
Var<S> leaky_relu(const Var<S>& x, double slope = 0.2) {
  const S a = static_cast<S>(slope);
  return detail::unary_op(
      x, [a](S v) { return v > S(0) ? v : a * v; },
      [a](S v, S) { return v > S(0) ? S(1) : a; });
}

template <typename S>
Var<S> sigmoid(const Var<S>& x) {
  return detail::unary_op(
      x,
      [](S v) {
        if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
        const S e = std::exp(v);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

// Natural log; callers are expected to keep the argument positive (see clamp).
template <typename S>
Var<S> log(const Var<S>& x) {
  return detail::unary_op(
      x, [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}

// Gradient passes only strictly inside the interval.
template <typename S>
Var<S> clamp(const Var<S>& x, double lo, double hi) {
  const S l = static_cast<S>(lo), h = static_cast<S>(hi);
  return detail::unary_op(
      x, [l, h](S v) { return v < l ? l : (v > h ? h : v); },
      [l, h](S v, S) { return (v > l && v < h) ? S(1) : S(0); });
}

// y = mul * x + add, elementwise with scalar coefficients.
template <typename S>
Var<S> affine(const Var<S>& x, double mul, double add) {
  const S m = static_cast<S>(mul), a = static_cast<S>(add);
  return detail::unary_op(
      x, [m, a](S v) { return m * v + a; }, [m](S, S) { return m; });
}

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  if (a.shape() != b.shape()) {
    fail_config("add shape mismatch: ", a.shape().str(), " vs ", b.shape().str());
  }
  Tensor<S> out(a.shape());
  const S* pa = a.value.data();
  const S* pb = b.value.data();
  S* dst = out.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i) dst[i] = pa[i] + pb[i];
  Tape<S>* tape = detail::common_tape<S>({&a, &b});
  if (tape == nullptr) return constant(std::move(out));
  auto backward = [an = a.node, bn = b.node](const Tensor<S>& g, Tape<S>& t) {
    if (an >= 0) t.accumulate(an, g);
    if (bn >= 0) t.accumulate(bn, g);
  };
  return detail::make_result(tape, std::move(out), std::move(backward));
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  if (a.shape() != b.shape()) {
    fail_config("mul shape mismatch: ", a.shape().str(), " vs ", b.shape().str());
  }
  Tensor<S> out(a.shape());
  const S* pa = a.value.data();
  const S* pb = b.value.data();
  S* dst = out.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i) dst[i] = pa[i] * pb[i];
  Tape<S>* tape = detail::common_tape<S>({&a, &b});
  if (tape == nullptr) return constant(std::move(out));
  auto backward = [an = a.node, bn = b.node, av = a.value,
                   bv = b.value](const Tensor<S>& g, Tape<S>& t) {
    const S* gp = g.data();
    if (an >= 0) {
      Tensor<S>& gx = t.grad_buffer(an);
      S* dst = gx.mutable_data();
      const S* pb = bv.data();
      for (std::size_t i = 0; i < gx.size(); ++i) dst[i] += gp[i] * pb[i];
    }
    if (bn >= 0) {
      Tensor<S>& gx = t.grad_buffer(bn);
      S* dst = gx.mutable_data();
      const S* pa = av.data();
      for (std::size_t i = 0; i < gx.size(); ++i) dst[i] += gp[i] * pa[i];
    }
  };
  return detail::make_result(tape, std::move(out), std::move(backward));
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> concat_channels(const Var<S>& a, const Var<S>& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    fail_config("concat_channels needs matching batch/height/width: ", sa.str(), " vs ",
                sb.str());
  }
  Tensor<S> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t hw = static_cast<std::size_t>(sa.h) * sa.w;
  for (int n = 0; n < sa.n; ++n) {
    std::memcpy(out.mutable_data() + out.index(n, 0, 0, 0),
                a.value.data() + a.value.index(n, 0, 0, 0), sizeof(S) * sa.c * hw);
    std::memcpy(out.mutable_data() + out.index(n, sa.c, 0, 0),
                b.value.data() + b.value.index(n, 0, 0, 0), sizeof(S) * sb.c * hw);
  }
  Tape<S>* tape = detail::common_tape<S>({&a, &b});
  if (tape == nullptr) return constant(std::move(out));
  auto backward = [sa, sb, hw, an = a.node, bn = b.node](const Tensor<S>& g, Tape<S>& t) {
    if (an >= 0) {
      Tensor<S>& gx = t.grad_buffer(an);
      for (int n = 0; n < sa.n; ++n) {
        const S* src = g.data() + g.index(n, 0, 0, 0);
        S* dst = gx.mutable_data() + gx.index(n, 0, 0, 0);
        for (std::size_t i = 0; i < sa.c * hw; ++i) dst[i] += src[i];
      }
    }
    if (bn >= 0) {
      Tensor<S>& gx = t.grad_buffer(bn);
      for (int n = 0; n < sa.n; ++n) {
        const S* src = g.data() + g.index(n, sa.c, 0, 0);
        S* dst = gx.mutable_data() + gx.index(n, 0, 0, 0);
        for (std::size_t i = 0; i < sb.c * hw; ++i) dst[i] += src[i];
      }
    }
  };
  return detail::make_result(tape, std::move(out), std::move(backward));
}

// Non-overlapping 2x2 mean pool; needs even spatial dims.
template <typename S>
Var<S> avg_pool2(const Var<S>& x) {
  const Shape in = x.shape();
  if (in.h % 2 != 0 || in.w % 2 != 0) {
    fail_config("avg_pool2 needs even spatial dims, got ", in.str());
  }
  const int oh = in.h / 2, ow = in.w / 2;
  Tensor<S> out(Shape{in.n, in.c, oh, ow});
  for (int b = 0; b < in.n; ++b) {
    for (int c = 0; c < in.c; ++c) {
      for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
          const S v = x.value.at(b, c, 2 * y, 2 * xx) + x.value.at(b, c, 2 * y, 2 * xx + 1) +
                      x.value.at(b, c, 2 * y + 1, 2 * xx) +
                      x.value.at(b, c, 2 * y + 1, 2 * xx + 1);
          out.at(b, c, y, xx) = v / S(4);
        }
      }
    }
  }
  Tape<S>* tape = detail::common_tape<S>({&x});
  if (tape == nullptr) return constant(std::move(out));
  auto backward = [in, oh, ow, node = x.node](const Tensor<S>& g, Tape<S>& t) {
    if (node < 0) return;
    Tensor<S>& gx = t.grad_buffer(node);
    for (int b = 0; b < in.n; ++b) {
      for (int c = 0; c < in.c; ++c) {
        for (int y = 0; y < oh; ++y) {
          for (int xx = 0; xx < ow; ++xx) {
            const S q = g.at(b, c, y, xx) / S(4);
            gx.at(b, c, 2 * y, 2 * xx) += q;
            gx.at(b, c, 2 * y, 2 * xx + 1) += q;
            gx.at(b, c, 2 * y + 1, 2 * xx) += q;
            gx.at(b, c, 2 * y + 1, 2 * xx + 1) += q;
          }
        }
      }
    }
  };
  return detail::make_result(tape, std::move(out), std::move(backward));
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Var<S> mean_all(const Var<S>& x) {
  double acc = 0.0;
  const S* src = x.value.data();
  const std::size_t n = x.value.size();
  for (std::size_t i = 0; i < n; ++i) acc += src[i];
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc / static_cast<double>(n)));
  Tape<S>* tape = detail::common_tape<S>({&x});
  if (tape == nullptr) return constant(std::move(out));
  auto backward = [node = x.node, n](const Tensor<S>& g, Tape<S>& t) {
    if (node < 0) return;
    Tensor<S>& gx = t.grad_buffer(node);
    const S q = g[0] / static_cast<S>(n);
    S* dst = gx.mutable_data();
    for (std::size_t i = 0; i < gx.size(); ++i) dst[i] += q;
  };
  return detail::make_result(tape, std::move(out), std::move(backward));
}

// Mean over channels and pixels per batch element: (n,c,h,w) -> (n,1,1,1).
template <typename S>
Var<S> spatial_mean(const Var<S>& x) {
  const Shape in = x.shape();
  const std::size_t chw = static_cast<std::size_t>(in.c) * in.h * in.w;
  Tensor<S> out(Shape{in.n, 1, 1, 1});
  for (int b = 0; b < in.n; ++b) {
    double acc = 0.0;
    const S* src = x.value.data() + x.value.index(b, 0, 0, 0);
    for (std::size_t i = 0; i < chw; ++i) acc += src[i];
    out[b] = static_cast<S>(acc / static_cast<double>(chw));
  }
  Tape<S>* tape = detail::common_tape<S>({&x});
  if (tape == nullptr) return constant(std::move(out));
  auto backward = [in, chw, node = x.node](const Tensor<S>& g, Tape<S>& t) {
    if (node < 0) return;
    Tensor<S>& gx = t.grad_buffer(node);
    for (int b = 0; b < in.n; ++b) {
      const S q = g[b] / static_cast<S>(chw);
      S* dst = gx.mutable_data() + gx.index(b, 0, 0, 0);
      for (std::size_t i = 0; i < chw; ++i) dst[i] += q;
    }
  };
  return detail::make_result(tape, std::move(out), std::move(backward));
}

// Mean absolute difference over all elements. The subgradient at zero is 0.
template <typename S>
Var<S> l1_distance(const Var<S>& a, const Var<S>& b) {
  if (a.shape() != b.shape()) {
    fail_config("l1_distance shape mismatch: ", a.shape().str(), " vs ", b.shape().str());
  }
  const std::size_t n = a.value.size();
  double acc = 0.0;
  const S* pa = a.value.data();
  const S* pb = b.value.data();
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(pa[i]) - pb[i]);
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc / static_cast<double>(n)));
  Tape<S>* tape = detail::common_tape<S>({&a, &b});
  if (tape == nullptr) return constant(std::move(out));
  auto backward = [an = a.node, bn = b.node, av = a.value, bv = b.value,
                   n](const Tensor<S>& g, Tape<S>& t) {
    const S q = g[0] / static_cast<S>(n);
    const S* pa = av.data();
    const S* pb = bv.data();
    if (an >= 0) {
      Tensor<S>& gx = t.grad_buffer(an);
      S* dst = gx.mutable_data();
      for (std::size_t i = 0; i < n; ++i) {
        dst[i] += pa[i] > pb[i] ? q : (pa[i] < pb[i] ? -q : S(0));
      }
    }
    if (bn >= 0) {
      Tensor<S>& gx = t.grad_buffer(bn);
      S* dst = gx.mutable_data();
      for (std::size_t i = 0; i < n; ++i) {
        dst[i] += pa[i] > pb[i] ? -q : (pa[i] < pb[i] ? q : S(0));
      }
    }
  };
  return detail::make_result(tape, std::move(out), std::move(backward));
}

}  // namespace densesr
