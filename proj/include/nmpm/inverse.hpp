#pragma once

// Differentiable inverse design of a ramp angle: the ramp is rasterized into
// boundary particles as a differentiable function of alpha, rolled through
// the emulator, and scored by the final water positions. Gradients reach
// alpha through the boundary density channel, so p2g must splat bilinearly.

#include <vector>

#include "nmpm/pipeline.hpp"

namespace nmpm {

struct RampDesign {
  double pivot_x = 0.5, pivot_y = 0.35;  // segment midpoint
  double length = 0.45;
  int particles = 40;  // samples along the segment
  double alpha_min = -0.9, alpha_max = 0.9;  // admissible angles, radians
};

// Nx2 ramp particle positions pivot + t_i * length * (cos a, sin a),
// t_i uniform in [-1/2, 1/2]; differentiable in alpha (a scalar tensor).
Tensor<float> ramp_points(const RampDesign& d, const Tensor<float>& alpha);

enum class InverseMode { autodiff_splat, finite_difference };

struct InverseConfig {
  RampDesign ramp;
  double target_x = 0.5, target_y = 0.08;  // where the water should end up
  int rollout_steps = 24;
  int iters = 40;
  double lr = 0.08;
  InverseMode mode = InverseMode::autodiff_splat;
  double fd_h = 1e-3;
};

struct InverseResult {
  double alpha = 0.0;  // best iterate
  double loss = 0.0;
  double initial_loss = 0.0;
  std::vector<double> alpha_history, loss_history;
};

// Loss of one angle: rollout from the water cloud with the ramp (plus static
// wall particles) as boundary, then mean distance of the final water
// positions to the target. If grad is non-null the autodiff gradient
// d loss / d alpha is written there.
double design_loss(const NetParams<float>& params, const EmulatorConfig& cfg,
                   const ParticleCloud& water, const std::vector<float>& wall_pos,
                   const InverseConfig& inv, double alpha, double* grad);

// Projected sign-gradient descent with decaying steps from alpha0; returns
// the best iterate.
// finite_difference mode uses central differences; autodiff falls back to a
// difference step if its gradient goes non-finite.
InverseResult optimize_angle(const NetParams<float>& params,
                             const EmulatorConfig& cfg,
                             const ParticleCloud& water,
                             const std::vector<float>& wall_pos,
                             const InverseConfig& inv, double alpha0);

}  // namespace nmpm
