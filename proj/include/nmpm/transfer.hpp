#pragma once

// Particle <-> grid bridge: voxelization (p2g), bilinear g2p sampling, and
// Euler position updates. Grid nodes sit at voxel centers; cell ownership is
// half-open [lo, hi) with the top/right domain edge folded into the last cell.

#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "nmpm/tensor.hpp"

namespace nmpm {

enum class Material : std::uint8_t { water = 0, sand = 1, goop = 2, boundary = 3 };

inline const char* material_name(Material m) {
  switch (m) {
    case Material::water: return "water";
    case Material::sand: return "sand";
    case Material::goop: return "goop";
    default: return "boundary";
  }
}

struct Domain {
  double lo_x = 0.0, lo_y = 0.0;
  double hi_x = 1.0, hi_y = 1.0;
  int width = 32;   // cells along x
  int height = 32;  // cells along y

  double cell_x() const { return (hi_x - lo_x) / width; }
  double cell_y() const { return (hi_y - lo_y) / height; }

  void validate() const {
    if (hi_x <= lo_x || hi_y <= lo_y)
      throw TensorError("Domain: upper bound must exceed lower bound");
    if (width < 4 || height < 4)
      throw TensorError("Domain: grid dims must be >= 4");
  }
};

// Positions, velocities and material labels for N particles at one timestep.
struct ParticleCloud {
  std::vector<float> pos;  // N x 2
  std::vector<float> vel;  // N x 2
  std::vector<std::uint8_t> material;
  double dt = 1.0;

  int count() const { return static_cast<int>(material.size()); }
};

enum class P2gMode { nearest_mean, bilinear_splat };

namespace detail {

// cell index of a position under half-open ownership
inline int cell_of(double p, double lo, double cell, int n) {
  int i = static_cast<int>(std::floor((p - lo) / cell));
  if (i < 0) i = 0;
  if (i >= n) i = n - 1;
  return i;
}

template <typename T>
void check_in_domain(const std::vector<T>& pos, const Domain& dom,
                     const char* op) {
  std::vector<int> bad;
  int n = static_cast<int>(pos.size() / 2);
  for (int i = 0; i < n; ++i) {
    double x = pos[2 * i], y = pos[2 * i + 1];
    if (x < dom.lo_x || x > dom.hi_x || y < dom.lo_y || y > dom.hi_y)
      bad.push_back(i);
  }
  if (!bad.empty()) {
    std::ostringstream os;
    os << op << ": particles outside domain (clamp first):";
    for (std::size_t i = 0; i < bad.size() && i < 16; ++i) os << " " << bad[i];
    if (bad.size() > 16) os << " ... (" << bad.size() << " total)";
    throw TensorError(os.str());
  }
}

// The 4 splat taps of a position in node space (nodes at voxel centers).
// Out-of-grid taps are clamped onto the edge node so total weight stays 1.
struct SplatTaps {
  int node[4];
  double w[4];
  double dwdx[4];  // d weight / d x (world units)
  double dwdy[4];
};

inline SplatTaps splat_taps(double x, double y, const Domain& dom) {
  double cx = dom.cell_x(), cy = dom.cell_y();
  double u = (x - dom.lo_x) / cx - 0.5;
  double v = (y - dom.lo_y) / cy - 0.5;
  int i0 = static_cast<int>(std::floor(u));
  int j0 = static_cast<int>(std::floor(v));
  double fx = u - i0, fy = v - j0;
  double wx[2] = {1.0 - fx, fx};
  double wy[2] = {1.0 - fy, fy};
  double dwx[2] = {-1.0 / cx, 1.0 / cx};
  double dwy[2] = {-1.0 / cy, 1.0 / cy};
  SplatTaps t;
  int k = 0;
  for (int dj = 0; dj < 2; ++dj)
    for (int di = 0; di < 2; ++di) {
      int ii = std::min(std::max(i0 + di, 0), dom.width - 1);
      int jj = std::min(std::max(j0 + dj, 0), dom.height - 1);
      t.node[k] = jj * dom.width + ii;
      t.w[k] = wx[di] * wy[dj];
      t.dwdx[k] = dwx[di] * wy[dj];
      t.dwdy[k] = wx[di] * dwy[dj];
      ++k;
    }
  return t;
}

}  // namespace detail

// p2g voxelization of one particle group. Output channels: [vel_x, vel_y,
// density] as a [3,H,W] tensor. nearest_mean averages members per cell
// (no position gradient); bilinear_splat weight-averages over the 4
// surrounding nodes and is differentiable w.r.t. positions and velocities.
template <typename T>
Tensor<T> voxelize_p2g(const Tensor<T>& positions, const Tensor<T>& velocities,
                       const Domain& dom, P2gMode mode, T density_scale) {
  dom.validate();
  if (positions.rank() != 2 || positions.dim(1) != 2)
    throw TensorError("voxelize_p2g: positions must be N x 2");
  detail::check_same_shape(positions, velocities, "voxelize_p2g");
  if (!(density_scale > T(0)))
    throw TensorError("voxelize_p2g: density_scale must be positive");
  detail::check_in_domain(positions.values(), dom, "voxelize_p2g");

  int n = positions.dim(0);
  int W = dom.width, H = dom.height;
  std::size_t hw = static_cast<std::size_t>(H) * W;
  std::vector<T> out(3 * hw, T(0));
  T* vx = out.data();
  T* vy = out.data() + hw;
  T* den = out.data() + 2 * hw;

  auto pn = positions.node(), vn = velocities.node();

  if (mode == P2gMode::nearest_mean) {
    std::vector<int> count(hw, 0);
    std::vector<int> cell(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      int cxi = detail::cell_of(positions.values()[2 * i], dom.lo_x, dom.cell_x(), W);
      int cyi = detail::cell_of(positions.values()[2 * i + 1], dom.lo_y, dom.cell_y(), H);
      int c = cyi * W + cxi;
      cell[static_cast<std::size_t>(i)] = c;
      vx[c] += velocities.values()[2 * i];
      vy[c] += velocities.values()[2 * i + 1];
      count[static_cast<std::size_t>(c)] += 1;
    }
    for (std::size_t c = 0; c < hw; ++c) {
      if (count[c] > 0) {
        vx[c] /= static_cast<T>(count[c]);
        vy[c] /= static_cast<T>(count[c]);
      }
      den[c] = static_cast<T>(count[c]) / density_scale;
    }
    return detail::make_op<T>(
        {3, H, W}, std::move(out), {positions, velocities},
        [vn, cell, count, hw, n](detail::Node<T>& o) {
          // gradient flows through velocity values only; cell membership is
          // piecewise constant in position
          if (!vn->requires_grad) return;
          vn->ensure_grad();
          for (int i = 0; i < n; ++i) {
            int c = cell[static_cast<std::size_t>(i)];
            T inv = T(1) / static_cast<T>(count[static_cast<std::size_t>(c)]);
            vn->grad[2 * i] += o.grad[static_cast<std::size_t>(c)] * inv;
            vn->grad[2 * i + 1] += o.grad[hw + c] * inv;
          }
        });
  }

  // bilinear_splat
  std::vector<T> wsum(hw, T(0));
  for (int i = 0; i < n; ++i) {
    auto taps = detail::splat_taps(positions.values()[2 * i],
                                   positions.values()[2 * i + 1], dom);
    for (int k = 0; k < 4; ++k) {
      T w = static_cast<T>(taps.w[k]);
      vx[taps.node[k]] += w * velocities.values()[2 * i];
      vy[taps.node[k]] += w * velocities.values()[2 * i + 1];
      wsum[static_cast<std::size_t>(taps.node[k])] += w;
    }
  }
  std::vector<T> node_vx(hw, T(0)), node_vy(hw, T(0));
  for (std::size_t c = 0; c < hw; ++c) {
    if (wsum[c] > T(0)) {
      vx[c] /= wsum[c];
      vy[c] /= wsum[c];
    }
    node_vx[c] = vx[c];
    node_vy[c] = vy[c];
    den[c] = wsum[c] / density_scale;
  }
  Domain dom_c = dom;
  return detail::make_op<T>(
      {3, H, W}, std::move(out), {positions, velocities},
      [pn, vn, dom_c, density_scale, wsum, node_vx, node_vy, hw,
       n](detail::Node<T>& o) {
        const T* gvx = o.grad.data();
        const T* gvy = o.grad.data() + hw;
        const T* gden = o.grad.data() + 2 * hw;
        if (vn->requires_grad) vn->ensure_grad();
        if (pn->requires_grad) pn->ensure_grad();
        for (int i = 0; i < n; ++i) {
          double px = pn->value[2 * i], py = pn->value[2 * i + 1];
          auto taps = detail::splat_taps(px, py, dom_c);
          T velx = vn->value[2 * i], vely = vn->value[2 * i + 1];
          for (int k = 0; k < 4; ++k) {
            std::size_t c = static_cast<std::size_t>(taps.node[k]);
            if (wsum[c] <= T(0)) continue;
            T w = static_cast<T>(taps.w[k]);
            if (vn->requires_grad) {
              vn->grad[2 * i] += gvx[c] * w / wsum[c];
              vn->grad[2 * i + 1] += gvy[c] * w / wsum[c];
            }
            if (pn->requires_grad) {
              // d node_vel / d w = (v_p - node_vel) / wsum; d density / d w =
              // 1 / density_scale
              T common = gvx[c] * (velx - node_vx[c]) / wsum[c] +
                         gvy[c] * (vely - node_vy[c]) / wsum[c] +
                         gden[c] / density_scale;
              pn->grad[2 * i] += static_cast<T>(taps.dwdx[k]) * common;
              pn->grad[2 * i + 1] += static_cast<T>(taps.dwdy[k]) * common;
            }
          }
        }
      });
}

// Bilinear sampling of channel pair (cx, cy) of a [C,H,W] grid at N positions.
// Out-of-grid neighbors are dropped and weights renormalized over in-grid
// nodes. Differentiable w.r.t. grid values and positions.
template <typename T>
Tensor<T> g2p_bilinear(const Tensor<T>& grid, int chan_x, int chan_y,
                       const Tensor<T>& positions, const Domain& dom) {
  dom.validate();
  if (grid.rank() != 3) throw TensorError("g2p_bilinear: grid must be [C,H,W]");
  if (chan_x < 0 || chan_y < 0 || chan_x >= grid.dim(0) || chan_y >= grid.dim(0))
    throw TensorError("g2p_bilinear: channel index out of range");
  if (grid.dim(1) != dom.height || grid.dim(2) != dom.width)
    throw TensorError("g2p_bilinear: grid dims do not match domain");
  if (positions.rank() != 2 || positions.dim(1) != 2)
    throw TensorError("g2p_bilinear: positions must be N x 2");
  detail::check_in_domain(positions.values(), dom, "g2p_bilinear");

  int n = positions.dim(0);
  int W = dom.width, H = dom.height;
  std::size_t hw = static_cast<std::size_t>(H) * W;
  double cx = dom.cell_x(), cy = dom.cell_y();

  // per-particle taps, in-grid only, with renormalized weights
  struct Tap {
    int node;
    double w, dwdx, dwdy;
  };
  auto taps_of = [dom, cx, cy, W, H](double x, double y, Tap taps[4], int& cnt,
                                     double& wsum, double& dwsdx, double& dwsdy) {
    double u = (x - dom.lo_x) / cx - 0.5;
    double v = (y - dom.lo_y) / cy - 0.5;
    int i0 = static_cast<int>(std::floor(u));
    int j0 = static_cast<int>(std::floor(v));
    double fx = u - i0, fy = v - j0;
    double wx[2] = {1.0 - fx, fx}, wy[2] = {1.0 - fy, fy};
    double dwx[2] = {-1.0 / cx, 1.0 / cx}, dwy[2] = {-1.0 / cy, 1.0 / cy};
    cnt = 0;
    wsum = 0.0;
    dwsdx = dwsdy = 0.0;
    for (int dj = 0; dj < 2; ++dj)
      for (int di = 0; di < 2; ++di) {
        int ii = i0 + di, jj = j0 + dj;
        if (ii < 0 || ii >= W || jj < 0 || jj >= H) continue;
        Tap t;
        t.node = jj * W + ii;
        t.w = wx[di] * wy[dj];
        t.dwdx = dwx[di] * wy[dj];
        t.dwdy = wx[di] * dwy[dj];
        taps[cnt++] = t;
        wsum += t.w;
        dwsdx += t.dwdx;
        dwsdy += t.dwdy;
      }
  };

  std::vector<T> out(static_cast<std::size_t>(n) * 2, T(0));
  const T* gx = grid.values().data() + static_cast<std::size_t>(chan_x) * hw;
  const T* gy = grid.values().data() + static_cast<std::size_t>(chan_y) * hw;
  for (int i = 0; i < n; ++i) {
    Tap taps[4];
    int cnt;
    double wsum, dwsdx, dwsdy;
    taps_of(positions.values()[2 * i], positions.values()[2 * i + 1], taps, cnt,
            wsum, dwsdx, dwsdy);
    double ax = 0, ay = 0;
    for (int k = 0; k < cnt; ++k) {
      ax += taps[k].w * gx[taps[k].node];
      ay += taps[k].w * gy[taps[k].node];
    }
    out[2 * i] = static_cast<T>(ax / wsum);
    out[2 * i + 1] = static_cast<T>(ay / wsum);
  }

  auto gn = grid.node(), pn = positions.node();
  return detail::make_op<T>(
      {n, 2}, std::move(out), {grid, positions},
      [gn, pn, taps_of, chan_x, chan_y, hw, n](detail::Node<T>& o) {
        const T* gx2 = gn->value.data() + static_cast<std::size_t>(chan_x) * hw;
        const T* gy2 = gn->value.data() + static_cast<std::size_t>(chan_y) * hw;
        if (gn->requires_grad) gn->ensure_grad();
        if (pn->requires_grad) pn->ensure_grad();
        for (int i = 0; i < n; ++i) {
          Tap taps[4];
          int cnt;
          double wsum, dwsdx, dwsdy;
          taps_of(pn->value[2 * i], pn->value[2 * i + 1], taps, cnt, wsum, dwsdx,
                  dwsdy);
          T gox = o.grad[2 * i], goy = o.grad[2 * i + 1];
          double valx = 0, valy = 0;
          for (int k = 0; k < cnt; ++k) {
            valx += taps[k].w * gx2[taps[k].node];
            valy += taps[k].w * gy2[taps[k].node];
          }
          valx /= wsum;
          valy /= wsum;
          for (int k = 0; k < cnt; ++k) {
            if (gn->requires_grad) {
              gn->grad[static_cast<std::size_t>(chan_x) * hw + taps[k].node] +=
                  gox * static_cast<T>(taps[k].w / wsum);
              gn->grad[static_cast<std::size_t>(chan_y) * hw + taps[k].node] +=
                  goy * static_cast<T>(taps[k].w / wsum);
            }
            if (pn->requires_grad) {
              // quotient rule through the renormalizer
              double ddx = (taps[k].dwdx - taps[k].w / wsum * dwsdx) / wsum;
              double ddy = (taps[k].dwdy - taps[k].w / wsum * dwsdy) / wsum;
              pn->grad[2 * i] += static_cast<T>(
                  gox * ddx * gx2[taps[k].node] + goy * ddx * gy2[taps[k].node]);
              pn->grad[2 * i + 1] += static_cast<T>(
                  gox * ddy * gx2[taps[k].node] + goy * ddy * gy2[taps[k].node]);
            }
          }
        }
      });
}

// P <- P + dt * V
template <typename T>
Tensor<T> euler_step(const Tensor<T>& positions, const Tensor<T>& velocities,
                     T dt) {
  return add_scaled(positions, velocities, dt);
}

// v_t = p_t - p_{t-1}; frame 0 has no velocity
inline std::vector<float> velocities_from_positions(const std::vector<float>& traj,
                                                    int T, int N) {
  if (T < 2) throw TensorError("velocities_from_positions: need T >= 2 frames");
  std::vector<float> out(static_cast<std::size_t>(T - 1) * N * 2);
  for (int t = 1; t < T; ++t)
    for (int i = 0; i < N * 2; ++i)
      out[static_cast<std::size_t>(t - 1) * N * 2 + i] =
          traj[static_cast<std::size_t>(t) * N * 2 + i] -
          traj[static_cast<std::size_t>(t - 1) * N * 2 + i];
  return out;
}

template <typename T>
Tensor<T> clamp_to_domain(const Tensor<T>& positions, const Domain& dom,
                          T margin) {
  return clamp_cols(positions,
                    {static_cast<T>(dom.lo_x) + margin, static_cast<T>(dom.lo_y) + margin},
                    {static_cast<T>(dom.hi_x) - margin, static_cast<T>(dom.hi_y) - margin});
}

}  // namespace nmpm
