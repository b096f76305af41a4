#pragma once

// Adam with bias correction and the warmup / plateau / cosine LR schedule.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "nmpm/tensor.hpp"

namespace nmpm {

struct LrSchedule {
  int warmup_steps = 100;
  double warmup_lo = 1e-5;
  double warmup_hi = 1e-3;
  int plateau_steps = 900;
  int total_steps = 100000;
};

// linear [0, warmup], constant (warmup, warmup+plateau], cosine to 0 at
// total_steps, 0 beyond. lr(warmup) == lr at the start of the plateau.
inline double lr_at(int step, const LrSchedule& s = {}) {
  if (step < 0) throw TensorError("lr_at: negative step");
  if (step < s.warmup_steps)
    return s.warmup_lo + (s.warmup_hi - s.warmup_lo) *
                             static_cast<double>(step) / s.warmup_steps;
  int plateau_end = s.warmup_steps + s.plateau_steps;
  if (step <= plateau_end) return s.warmup_hi;
  if (step >= s.total_steps) return 0.0;
  double u = static_cast<double>(step - plateau_end) / (s.total_steps - plateau_end);
  return s.warmup_hi * 0.5 * (1.0 + std::cos(u * M_PI));
}

template <typename T>
struct AdamState {
  struct Slot {
    std::vector<T> m, v;
  };
  std::map<std::string, Slot> slots;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// One Adam update over a parameter list. Parameters without an accumulated
// gradient this step are skipped (their moments stay put).
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, double lr) {
  state.t += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    auto& slot = state.slots[p.name()];
    if (slot.m.empty()) {
      slot.m.assign(p.size(), T(0));
      slot.v.assign(p.size(), T(0));
    }
    std::vector<T>& g = p.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(static_cast<double>(g[i])))
        throw TensorError("adam_step: non-finite gradient in parameter '" +
                          p.name() + "'");
      slot.m[i] = static_cast<T>(state.beta1 * slot.m[i] + (1.0 - state.beta1) * g[i]);
      slot.v[i] = static_cast<T>(state.beta2 * slot.v[i] +
                                 (1.0 - state.beta2) * g[i] * g[i]);
      double mhat = slot.m[i] / bc1;
      double vhat = slot.v[i] / bc2;
      p.values()[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

// Global-norm gradient clipping; returns the pre-clip norm.
template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) sq += static_cast<double>(g) * g;
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    T s = static_cast<T>(max_norm / norm);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (T& g : p.grad()) g *= s;
    }
  }
  return norm;
}

}  // namespace nmpm
