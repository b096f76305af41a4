#include "nmpm/inverse.hpp"

#include <algorithm>
#include <cmath>

namespace nmpm {

namespace {

struct NoGrad {
  std::vector<Tensor<float>>& ts;
  explicit NoGrad(const NetParams<float>& p)
      : ts(const_cast<NetParams<float>&>(p).tensors) {
    for (auto& t : ts) t.set_requires_grad(false);
  }
  ~NoGrad() {
    for (auto& t : ts) t.set_requires_grad(true);
  }
};

}  // namespace

Tensor<float> ramp_points(const RampDesign& d, const Tensor<float>& alpha) {
  if (d.particles < 2) throw TensorError("ramp_points: need at least 2 particles");
  int n = d.particles;
  std::vector<float> coeff(static_cast<std::size_t>(n));
  std::vector<float> px(static_cast<std::size_t>(n),
                        static_cast<float>(d.pivot_x));
  std::vector<float> py(static_cast<std::size_t>(n),
                        static_cast<float>(d.pivot_y));
  for (int i = 0; i < n; ++i)
    coeff[static_cast<std::size_t>(i)] = static_cast<float>(
        d.length * (static_cast<double>(i) / (n - 1) - 0.5));
  auto c = Tensor<float>::from(std::move(coeff), {n});
  auto xs = add(mul_scalar(c, cos_op(alpha)), Tensor<float>::from(std::move(px), {n}));
  auto ys = add(mul_scalar(c, sin_op(alpha)), Tensor<float>::from(std::move(py), {n}));
  return stack_cols2(xs, ys);
}

double design_loss(const NetParams<float>& params, const EmulatorConfig& cfg,
                   const ParticleCloud& water, const std::vector<float>& wall_pos,
                   const InverseConfig& inv, double alpha, double* grad) {
  NoGrad guard(params);
  EmulatorConfig em = cfg;
  em.mode = P2gMode::bilinear_splat;  // boundary gradient needs splat weights

  auto a = Tensor<float>::from({static_cast<float>(alpha)}, {1}, grad != nullptr);
  Tensor<float> boundary = ramp_points(inv.ramp, a);
  if (!wall_pos.empty()) {
    std::vector<float> wp = wall_pos;
    int nw = static_cast<int>(wp.size() / 2);
    boundary = concat_rows(Tensor<float>::from(std::move(wp), {nw, 2}), boundary);
  }

  CloudLayout lay = layout_of(water);
  EmState<float> st = make_state<float>(water, lay);
  st.boundary_pos = boundary;

  std::vector<EmState<float>> traj = rollout(st, params, em, inv.rollout_steps);
  // water is material slot 0 by construction of the scene
  Tensor<float> loss =
      mean_distance_to(traj.back().pos[0], static_cast<float>(inv.target_x),
                       static_cast<float>(inv.target_y));
  double lval = loss.item();
  if (grad) {
    loss.backward();
    *grad = a.has_grad() ? static_cast<double>(a.grad()[0]) : 0.0;
  }
  return lval;
}

InverseResult optimize_angle(const NetParams<float>& params,
                             const EmulatorConfig& cfg,
                             const ParticleCloud& water,
                             const std::vector<float>& wall_pos,
                             const InverseConfig& inv, double alpha0) {
  InverseResult res;
  double alpha = std::clamp(alpha0, inv.ramp.alpha_min, inv.ramp.alpha_max);
  for (int it = 0; it < inv.iters; ++it) {
    double g = 0.0;
    double lval;
    if (inv.mode == InverseMode::autodiff_splat) {
      lval = design_loss(params, cfg, water, wall_pos, inv, alpha, &g);
      if (!std::isfinite(g)) {
        double lp = design_loss(params, cfg, water, wall_pos, inv,
                                std::min(alpha + inv.fd_h, inv.ramp.alpha_max), nullptr);
        double lm = design_loss(params, cfg, water, wall_pos, inv,
                                std::max(alpha - inv.fd_h, inv.ramp.alpha_min), nullptr);
        g = (lp - lm) / (2.0 * inv.fd_h);
      }
    } else {
      lval = design_loss(params, cfg, water, wall_pos, inv, alpha, nullptr);
      double lp = design_loss(params, cfg, water, wall_pos, inv,
                              std::min(alpha + inv.fd_h, inv.ramp.alpha_max), nullptr);
      double lm = design_loss(params, cfg, water, wall_pos, inv,
                              std::max(alpha - inv.fd_h, inv.ramp.alpha_min), nullptr);
      g = (lp - lm) / (2.0 * inv.fd_h);
    }
    res.alpha_history.push_back(alpha);
    res.loss_history.push_back(lval);
    if (it == 0) res.initial_loss = lval;
    if (it == 0 || lval < res.loss) {
      res.loss = lval;
      res.alpha = alpha;
    }
    // normalized step with geometric decay: the loss scale (mean distance per
    // radian) varies wildly between scenes, the sign of the gradient does not
    double step = inv.lr * std::pow(0.9, it);
    if (g > 0.0) alpha -= step;
    else if (g < 0.0) alpha += step;
    alpha = std::clamp(alpha, inv.ramp.alpha_min, inv.ramp.alpha_max);
  }
  double final_loss = design_loss(params, cfg, water, wall_pos, inv, alpha, nullptr);
  res.alpha_history.push_back(alpha);
  res.loss_history.push_back(final_loss);
  if (final_loss < res.loss) {
    res.loss = final_loss;
    res.alpha = alpha;
  }
  return res;
}

}  // namespace nmpm
