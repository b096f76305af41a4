#pragma once

// Layer primitives for the grid processor: conv2d (im2col + GEMM),
// 2x average-pool downsample, 2x nearest-neighbor upsample.

#include <Eigen/Dense>

#include "nmpm/tensor.hpp"

namespace nmpm {

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// col(r, o) = x[ci][oy*s-p+ky][ox*s-p+kx] with r = (ci*k+ky)*k+kx, zero padded
template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad,
            int Ho, int Wo, MatRM<T>& col) {
  for (int ci = 0; ci < C; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        int r = (ci * k + ky) * k + kx;
        T* dst = col.data() + static_cast<std::size_t>(r) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride - pad + kx;
            dst[oy * Wo + ox] = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                    ? x[(static_cast<std::size_t>(ci) * H + iy) * W + ix]
                                    : T(0);
          }
        }
      }
}

template <typename T>
void col2im_accum(const MatRM<T>& col, int C, int H, int W, int k, int stride,
                  int pad, int Ho, int Wo, T* gx) {
  for (int ci = 0; ci < C; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        int r = (ci * k + ky) * k + kx;
        const T* src = col.data() + static_cast<std::size_t>(r) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            gx[(static_cast<std::size_t>(ci) * H + iy) * W + ix] += src[oy * Wo + ox];
          }
        }
      }
}

}  // namespace detail

// input [B,Cin,H,W], weight [Cout,Cin,k,k], optional bias [Cout].
// Pass a default-constructed Tensor to run without bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 int stride = 1, int padding = -1) {
  if (x.rank() != 4) throw TensorError("conv2d: input must be [B,C,H,W]");
  if (w.rank() != 4) throw TensorError("conv2d: weight must be [Cout,Cin,k,k]");
  int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  int Cout = w.dim(0), k = w.dim(2);
  if (w.dim(2) != w.dim(3)) throw TensorError("conv2d: kernel must be square");
  if (k % 2 == 0) throw TensorError("conv2d: kernel size must be odd");
  if (w.dim(1) != Cin)
    throw TensorError("conv2d: input channels " + detail::shape_str(x.shape()) +
                      " incompatible with weight " + detail::shape_str(w.shape()));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout))
    throw TensorError("conv2d: bias must be [Cout]");
  if (padding < 0) padding = (k - 1) / 2;
  if (H + 2 * padding < k || W + 2 * padding < k)
    throw TensorError("conv2d: padded input smaller than kernel");
  int Ho = (H + 2 * padding - k) / stride + 1;
  int Wo = (W + 2 * padding - k) / stride + 1;
  int K = Cin * k * k;

  std::vector<T> out(static_cast<std::size_t>(B) * Cout * Ho * Wo);
  Eigen::Map<const detail::MatRM<T>> wm(w.values().data(), Cout, K);
  {
    detail::MatRM<T> col(K, Ho * Wo);
    for (int b = 0; b < B; ++b) {
      detail::im2col(x.values().data() + static_cast<std::size_t>(b) * Cin * H * W,
                     Cin, H, W, k, stride, padding, Ho, Wo, col);
      Eigen::Map<detail::MatRM<T>> ob(out.data() + static_cast<std::size_t>(b) * Cout * Ho * Wo,
                                      Cout, Ho * Wo);
      ob.noalias() = wm * col;
      if (bias.defined())
        for (int co = 0; co < Cout; ++co)
          ob.row(co).array() += bias.values()[co];
    }
  }

  auto xn = x.node(), wn = w.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  auto bw = [xn, wn, bn, B, Cin, H, W, Cout, k, stride, padding, Ho,
             Wo, K](detail::Node<T>& o) {
    Eigen::Map<const detail::MatRM<T>> wm2(wn->value.data(), Cout, K);
    detail::MatRM<T> col(K, Ho * Wo), gcol(K, Ho * Wo), gw;
    if (wn->requires_grad) gw = detail::MatRM<T>::Zero(Cout, K);
    if (xn->requires_grad) xn->ensure_grad();
    for (int b = 0; b < B; ++b) {
      Eigen::Map<const detail::MatRM<T>> go(
          o.grad.data() + static_cast<std::size_t>(b) * Cout * Ho * Wo, Cout, Ho * Wo);
      if (wn->requires_grad || xn->requires_grad)
        detail::im2col(xn->value.data() + static_cast<std::size_t>(b) * Cin * H * W,
                       Cin, H, W, k, stride, padding, Ho, Wo, col);
      if (wn->requires_grad) gw.noalias() += go * col.transpose();
      if (xn->requires_grad) {
        gcol.noalias() = wm2.transpose() * go;
        detail::col2im_accum(gcol, Cin, H, W, k, stride, padding, Ho, Wo,
                             xn->grad.data() + static_cast<std::size_t>(b) * Cin * H * W);
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        for (int co = 0; co < Cout; ++co)
          bn->grad[co] += go.row(co).sum();
      }
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      Eigen::Map<detail::MatRM<T>>(wn->grad.data(), Cout, K) += gw;
    }
  };

  if (bias.defined())
    return detail::make_op<T>({B, Cout, Ho, Wo}, std::move(out), {x, w, bias}, bw);
  return detail::make_op<T>({B, Cout, Ho, Wo}, std::move(out), {x, w}, bw);
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  if (x.rank() != 4) throw TensorError("avg_pool2: input must be [B,C,H,W]");
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2) throw TensorError("avg_pool2: H and W must be even");
  int Ho = H / 2, Wo = W / 2;
  std::vector<T> out(static_cast<std::size_t>(B) * C * Ho * Wo);
  for (int bc = 0; bc < B * C; ++bc) {
    const T* src = x.values().data() + static_cast<std::size_t>(bc) * H * W;
    T* dst = out.data() + static_cast<std::size_t>(bc) * Ho * Wo;
    for (int y = 0; y < Ho; ++y)
      for (int xo = 0; xo < Wo; ++xo)
        dst[y * Wo + xo] = (src[(2 * y) * W + 2 * xo] + src[(2 * y) * W + 2 * xo + 1] +
                            src[(2 * y + 1) * W + 2 * xo] +
                            src[(2 * y + 1) * W + 2 * xo + 1]) *
                           T(0.25);
  }
  auto xn = x.node();
  return detail::make_op<T>({B, C, Ho, Wo}, std::move(out), {x},
                            [xn, B, C, H, W, Ho, Wo](detail::Node<T>& o) {
                              xn->ensure_grad();
                              for (int bc = 0; bc < B * C; ++bc) {
                                T* gx = xn->grad.data() + static_cast<std::size_t>(bc) * H * W;
                                const T* go = o.grad.data() + static_cast<std::size_t>(bc) * Ho * Wo;
                                for (int y = 0; y < Ho; ++y)
                                  for (int xo = 0; xo < Wo; ++xo) {
                                    T g = go[y * Wo + xo] * T(0.25);
                                    gx[(2 * y) * W + 2 * xo] += g;
                                    gx[(2 * y) * W + 2 * xo + 1] += g;
                                    gx[(2 * y + 1) * W + 2 * xo] += g;
                                    gx[(2 * y + 1) * W + 2 * xo + 1] += g;
                                  }
                              }
                            });
}

template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
  if (x.rank() != 4) throw TensorError("upsample_nearest2: input must be [B,C,H,W]");
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int Ho = H * 2, Wo = W * 2;
  std::vector<T> out(static_cast<std::size_t>(B) * C * Ho * Wo);
  for (int bc = 0; bc < B * C; ++bc) {
    const T* src = x.values().data() + static_cast<std::size_t>(bc) * H * W;
    T* dst = out.data() + static_cast<std::size_t>(bc) * Ho * Wo;
    for (int y = 0; y < H; ++y)
      for (int xo = 0; xo < W; ++xo) {
        T v = src[y * W + xo];
        dst[(2 * y) * Wo + 2 * xo] = v;
        dst[(2 * y) * Wo + 2 * xo + 1] = v;
        dst[(2 * y + 1) * Wo + 2 * xo] = v;
        dst[(2 * y + 1) * Wo + 2 * xo + 1] = v;
      }
  }
  auto xn = x.node();
  return detail::make_op<T>({B, C, Ho, Wo}, std::move(out), {x},
                            [xn, B, C, H, W, Wo](detail::Node<T>& o) {
                              xn->ensure_grad();
                              for (int bc = 0; bc < B * C; ++bc) {
                                T* gx = xn->grad.data() + static_cast<std::size_t>(bc) * H * W;
                                const T* go = o.grad.data() +
                                              static_cast<std::size_t>(bc) * 4 * H * W;
                                for (int y = 0; y < H; ++y)
                                  for (int xo = 0; xo < W; ++xo)
                                    gx[y * W + xo] += go[(2 * y) * Wo + 2 * xo] +
                                                      go[(2 * y) * Wo + 2 * xo + 1] +
                                                      go[(2 * y + 1) * Wo + 2 * xo] +
                                                      go[(2 * y + 1) * Wo + 2 * xo + 1];
                              }
                            });
}

}  // namespace nmpm
