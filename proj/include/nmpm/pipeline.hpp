#pragma once

// The 4-step emulator: voxelize the particle state, predict m future grid
// velocity fields in one network call, then interpolate-and-integrate m
// times. Bundles chain into full rollouts on the model's own predictions.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "nmpm/model.hpp"
#include "nmpm/transfer.hpp"

namespace nmpm {

struct EmulatorConfig {
  Domain domain;
  int bundle = 8;  // m
  P2gMode mode = P2gMode::nearest_mean;
  double density_scale = 1.0;
  bool include_boundary = true;
  bool include_gravity = true;
  std::array<double, 2> gravity{0.0, -9.8};
  bool residual = false;        // add input velocity field to each prediction
  bool symmetrize_x = false;    // average the prediction with its x-mirror,
                                // making the emulator exactly mirror-equivariant
  bool vel_from_grid = false;   // inter-bundle velocity from last grid field
                                // instead of frame differences
  double clamp_margin_frac = 1e-6;
  double dt = 1.0;

  double margin_x() const { return clamp_margin_frac * (domain.hi_x - domain.lo_x); }
  double margin_y() const { return clamp_margin_frac * (domain.hi_y - domain.lo_y); }
};

// Emulator state: one position/velocity tensor per dynamic material plus the
// static boundary particles.
template <typename T>
struct EmState {
  std::vector<Material> materials;  // dynamic, in channel order
  std::vector<Tensor<T>> pos;       // per material, N_m x 2
  std::vector<Tensor<T>> vel;
  Tensor<T> boundary_pos;           // undefined when absent

  int total_dynamic() const {
    int n = 0;
    for (const auto& p : pos) n += p.dim(0);
    return n;
  }
};

// Maps a flat ParticleCloud onto per-material tensors and back.
struct CloudLayout {
  std::vector<Material> materials;
  std::vector<std::vector<int>> indices;  // per material, into the flat cloud
  std::vector<int> boundary_indices;
};

inline CloudLayout layout_of(const ParticleCloud& cloud) {
  CloudLayout lay;
  for (int i = 0; i < cloud.count(); ++i) {
    Material m = static_cast<Material>(cloud.material[static_cast<std::size_t>(i)]);
    if (m == Material::boundary) {
      lay.boundary_indices.push_back(i);
      continue;
    }
    std::size_t slot = 0;
    for (; slot < lay.materials.size(); ++slot)
      if (lay.materials[slot] == m) break;
    if (slot == lay.materials.size()) {
      lay.materials.push_back(m);
      lay.indices.emplace_back();
    }
    lay.indices[slot].push_back(i);
  }
  return lay;
}

template <typename T>
EmState<T> make_state(const ParticleCloud& cloud, const CloudLayout& lay,
                      bool requires_grad = false) {
  EmState<T> st;
  st.materials = lay.materials;
  for (std::size_t m = 0; m < lay.materials.size(); ++m) {
    int n = static_cast<int>(lay.indices[m].size());
    std::vector<T> p(static_cast<std::size_t>(n) * 2), v(static_cast<std::size_t>(n) * 2);
    for (int i = 0; i < n; ++i) {
      int src = lay.indices[m][static_cast<std::size_t>(i)];
      p[2 * i] = static_cast<T>(cloud.pos[2 * src]);
      p[2 * i + 1] = static_cast<T>(cloud.pos[2 * src + 1]);
      v[2 * i] = static_cast<T>(cloud.vel[2 * src]);
      v[2 * i + 1] = static_cast<T>(cloud.vel[2 * src + 1]);
    }
    st.pos.push_back(Tensor<T>::from(std::move(p), {n, 2}, requires_grad));
    st.vel.push_back(Tensor<T>::from(std::move(v), {n, 2}, requires_grad));
  }
  if (!lay.boundary_indices.empty()) {
    int nb = static_cast<int>(lay.boundary_indices.size());
    std::vector<T> p(static_cast<std::size_t>(nb) * 2);
    for (int i = 0; i < nb; ++i) {
      int src = lay.boundary_indices[static_cast<std::size_t>(i)];
      p[2 * i] = static_cast<T>(cloud.pos[2 * src]);
      p[2 * i + 1] = static_cast<T>(cloud.pos[2 * src + 1]);
    }
    st.boundary_pos = Tensor<T>::from(std::move(p), {nb, 2});
  }
  return st;
}

// Scatter a state's positions back into a flat frame in the cloud's original
// particle order. Boundary particles keep their (static) positions.
template <typename T>
std::vector<float> state_frame(const EmState<T>& st, const CloudLayout& lay,
                               const ParticleCloud& reference) {
  std::vector<float> frame(reference.pos.size());
  for (std::size_t m = 0; m < lay.materials.size(); ++m)
    for (std::size_t i = 0; i < lay.indices[m].size(); ++i) {
      int dst = lay.indices[m][i];
      frame[2 * dst] = static_cast<float>(st.pos[m].values()[2 * i]);
      frame[2 * dst + 1] = static_cast<float>(st.pos[m].values()[2 * i + 1]);
    }
  for (int src : lay.boundary_indices) {
    frame[2 * src] = reference.pos[2 * src];
    frame[2 * src + 1] = reference.pos[2 * src + 1];
  }
  return frame;
}

inline int input_channel_count(const EmulatorConfig& cfg, int num_materials) {
  return 3 * num_materials + (cfg.include_boundary ? 1 : 0) +
         (cfg.include_gravity ? 2 : 0);
}

inline std::vector<std::string> channel_names(const EmulatorConfig& cfg,
                                              const std::vector<Material>& mats) {
  std::vector<std::string> names;
  for (Material m : mats) {
    std::string base = material_name(m);
    names.push_back(base + ".vx");
    names.push_back(base + ".vy");
    names.push_back(base + ".density");
  }
  if (cfg.include_boundary) names.push_back("boundary.density");
  if (cfg.include_gravity) {
    names.push_back("gravity.x");
    names.push_back("gravity.y");
  }
  return names;
}

// Unnormalized input grid: per material (vel_x, vel_y, density), then the
// boundary density channel, then constant gravity channels.
template <typename T>
Tensor<T> build_raw_grid(const EmState<T>& st, const EmulatorConfig& cfg) {
  const Domain& dom = cfg.domain;
  Tensor<T> grid;
  for (std::size_t m = 0; m < st.materials.size(); ++m) {
    Tensor<T> g = voxelize_p2g(st.pos[m], st.vel[m], dom, cfg.mode,
                               static_cast<T>(cfg.density_scale));
    grid = grid.defined() ? concat_channels(grid, g) : g;
  }
  if (cfg.include_boundary) {
    Tensor<T> bden;
    if (st.boundary_pos.defined() && st.boundary_pos.dim(0) > 0) {
      Tensor<T> zero_v = Tensor<T>::zeros(st.boundary_pos.shape());
      Tensor<T> g = voxelize_p2g(st.boundary_pos, zero_v, dom, cfg.mode,
                                 static_cast<T>(cfg.density_scale));
      bden = slice_channels(g, 2, 1);
    } else {
      bden = Tensor<T>::zeros({1, dom.height, dom.width});
    }
    grid = grid.defined() ? concat_channels(grid, bden) : bden;
  }
  if (cfg.include_gravity) {
    Tensor<T> gx = Tensor<T>::full({1, dom.height, dom.width},
                                   static_cast<T>(cfg.gravity[0]));
    Tensor<T> gy = Tensor<T>::full({1, dom.height, dom.width},
                                   static_cast<T>(cfg.gravity[1]));
    grid = concat_channels(concat_channels(grid, gx), gy);
  }
  return grid;
}

template <typename T>
Tensor<T> normalize_grid(const Tensor<T>& raw, const std::vector<double>& mean,
                         const std::vector<double>& stdev) {
  int C = raw.dim(0);
  if (static_cast<int>(mean.size()) != C || static_cast<int>(stdev.size()) != C)
    throw TensorError("normalize_grid: stats for " + std::to_string(mean.size()) +
                      " channels, grid has " + std::to_string(C));
  std::vector<T> sc(static_cast<std::size_t>(C)), sh(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    double s = std::max(stdev[static_cast<std::size_t>(c)], 1e-6);
    sc[static_cast<std::size_t>(c)] = static_cast<T>(1.0 / s);
    sh[static_cast<std::size_t>(c)] = static_cast<T>(-mean[static_cast<std::size_t>(c)] / s);
  }
  return channel_affine(raw, sc, sh);
}

// Normalized model input for a state.
template <typename T>
Tensor<T> build_input_grid(const EmState<T>& st, const EmulatorConfig& cfg,
                           const NetParams<T>& params) {
  if (params.norm_mean.empty())
    throw TensorError("build_input_grid: normalization stats missing");
  return normalize_grid(build_raw_grid(st, cfg), params.norm_mean, params.norm_std);
}

// The network predicts z-scored velocity fields; map each output channel back
// to raw units with the matching material's input-velocity statistics.
template <typename T>
Tensor<T> denormalize_pred(const Tensor<T>& pred, const NetParams<T>& params,
                           const EmulatorConfig& cfg) {
  if (params.norm_mean.empty())
    throw TensorError("denormalize_pred: normalization stats missing");
  int C = pred.dim(pred.rank() - 3);
  int m = cfg.bundle;
  int M = C / (2 * m);
  std::vector<T> sc(static_cast<std::size_t>(C)), sh(static_cast<std::size_t>(C));
  for (int mi = 0; mi < M; ++mi)
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < 2; ++k) {
        std::size_t c = static_cast<std::size_t>(mi * 2 * m + 2 * j + k);
        std::size_t in_c = static_cast<std::size_t>(3 * mi + k);
        sc[c] = static_cast<T>(std::max(params.norm_std[in_c], 1e-6));
        sh[c] = static_cast<T>(params.norm_mean[in_c]);
      }
  return channel_affine(pred, sc, sh);
}

// One model call advanced into m successive particle states. `pred` is the
// [m*2*M, H, W] output field in raw velocity units; `raw` the unnormalized
// input grid (for residual mode), may be undefined otherwise.
template <typename T>
std::vector<EmState<T>> step_bundle(const EmState<T>& st, const Tensor<T>& pred,
                                    const Tensor<T>& raw,
                                    const EmulatorConfig& cfg) {
  const Domain& dom = cfg.domain;
  int m = cfg.bundle;
  T dt = static_cast<T>(cfg.dt);
  std::vector<T> mlo = {static_cast<T>(dom.lo_x + cfg.margin_x()),
                        static_cast<T>(dom.lo_y + cfg.margin_y())};
  std::vector<T> mhi = {static_cast<T>(dom.hi_x - cfg.margin_x()),
                        static_cast<T>(dom.hi_y - cfg.margin_y())};

  std::vector<EmState<T>> out;
  std::vector<Tensor<T>> cur = st.pos;
  std::vector<Tensor<T>> prev = st.pos;
  for (int j = 0; j < m; ++j) {
    EmState<T> next;
    next.materials = st.materials;
    next.boundary_pos = st.boundary_pos;
    for (std::size_t mi = 0; mi < st.materials.size(); ++mi) {
      int base = static_cast<int>(mi) * 2 * m + 2 * j;
      Tensor<T> v = g2p_bilinear(pred, base, base + 1, cur[mi], dom);
      if (cfg.residual && raw.defined()) {
        Tensor<T> v0 = g2p_bilinear(raw, static_cast<int>(mi) * 3,
                                    static_cast<int>(mi) * 3 + 1, cur[mi], dom);
        v = add(v, v0);
      }
      Tensor<T> p = clamp_cols(euler_step(cur[mi], v, dt), mlo, mhi);
      next.pos.push_back(p);
      // velocity consistent with the frame-difference convention
      next.vel.push_back(scale(sub(p, cur[mi]), T(1) / dt));
    }
    prev = cur;
    cur = next.pos;
    out.push_back(std::move(next));
  }
  if (cfg.vel_from_grid && !out.empty()) {
    // overwrite the last state's velocity with the final predicted field
    EmState<T>& last = out.back();
    for (std::size_t mi = 0; mi < st.materials.size(); ++mi) {
      int base = static_cast<int>(mi) * 2 * m + 2 * (m - 1);
      last.vel[mi] = g2p_bilinear(pred, base, base + 1, last.pos[mi], dom);
    }
  }
  return out;
}

// Raw-unit velocity prediction for one raw input grid. With symmetrize_x the
// network is group-averaged over the x-mirror: 0.5 * (f(g) + M(f(M(g)))),
// where M reverses the width axis and negates x-velocity channels. Applied to
// a mirror-symmetric scene this makes the rollout exactly symmetric, so a
// biased network cannot skew a symmetric design landscape.
template <typename T>
Tensor<T> predict_raw(const Tensor<T>& raw, const NetParams<T>& params,
                      const EmulatorConfig& cfg) {
  auto forward = [&](const Tensor<T>& r) {
    Tensor<T> in = normalize_grid(r, params.norm_mean, params.norm_std);
    Tensor<T> out4 = unet_forward(params, stack0<T>({in}));
    return denormalize_pred(select0(out4, 0), params, cfg);
  };
  Tensor<T> pred = forward(raw);
  if (!cfg.symmetrize_x) return pred;
  int m = cfg.bundle;
  int M = pred.dim(pred.rank() - 3) / (2 * m);
  std::vector<T> sign_in(static_cast<std::size_t>(raw.dim(raw.rank() - 3)), T(1));
  for (int mi = 0; mi < M; ++mi) sign_in[static_cast<std::size_t>(3 * mi)] = T(-1);
  if (cfg.include_gravity) sign_in[sign_in.size() - 2] = T(-1);
  std::vector<T> sign_out(static_cast<std::size_t>(pred.dim(pred.rank() - 3)), T(1));
  for (int mi = 0; mi < M; ++mi)
    for (int j = 0; j < m; ++j)
      sign_out[static_cast<std::size_t>(mi * 2 * m + 2 * j)] = T(-1);
  Tensor<T> mirrored = mirror_x(forward(mirror_x(raw, sign_in)), sign_out);
  return scale(add(pred, mirrored), T(0.5));
}

// Voxelize, predict one bundle, integrate m steps.
template <typename T>
std::vector<EmState<T>> advance_bundle(const EmState<T>& st,
                                       const NetParams<T>& params,
                                       const EmulatorConfig& cfg) {
  Tensor<T> raw = build_raw_grid(st, cfg);
  Tensor<T> pred = predict_raw(raw, params, cfg);
  return step_bundle(st, pred, raw, cfg);
}

// Autoregressive rollout of T states (S^1..S^T), re-voxelizing from the
// model's own last prediction; the final bundle is truncated to end at T.
template <typename T>
std::vector<EmState<T>> rollout(const EmState<T>& initial,
                                const NetParams<T>& params,
                                const EmulatorConfig& cfg, int T_steps) {
  if (T_steps < 1) throw TensorError("rollout: T must be >= 1");
  std::vector<EmState<T>> traj;
  EmState<T> cur = initial;
  while (static_cast<int>(traj.size()) < T_steps) {
    std::vector<EmState<T>> bundle = advance_bundle(cur, params, cfg);
    for (auto& s : bundle) {
      for (const auto& p : s.pos)
        for (T v : p.values())
          if (!std::isfinite(static_cast<double>(v)))
            throw TensorError("rollout: non-finite position at step " +
                              std::to_string(traj.size() + 1));
      traj.push_back(s);
      if (static_cast<int>(traj.size()) == T_steps) break;
    }
    cur = traj.back();
  }
  return traj;
}

}  // namespace nmpm
