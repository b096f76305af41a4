#pragma once

// Rollout evaluation: per-step position MSE against the reference trajectory,
// entropic EMD between predicted and reference point clouds, and report files
// (JSON + CSV + raster images).

#include <string>
#include <vector>

#include "nmpm/dataio.hpp"
#include "nmpm/pipeline.hpp"

namespace nmpm {

// Entropy-regularized earth mover's distance between two equal-weight point
// clouds (N x 2 and M x 2, flattened), Euclidean ground cost, log-domain
// updates. Converges to the exact EMD from above as epsilon shrinks.
double sinkhorn_emd(const std::vector<float>& a, const std::vector<float>& b,
                    double epsilon = 2e-3, int max_iters = 2000,
                    double tol = 1e-10);

// Rollout from reference frame `start` (needs start >= 1 for a velocity
// estimate), compared against reference frames start+1 .. start+steps.
// Returns one MSE per step, averaged over dynamic particles.
std::vector<double> rollout_position_mse(const NetParams<float>& params,
                                         const EmulatorConfig& cfg,
                                         const mpm::Trajectory& traj, int steps,
                                         int start = 1);

struct StepMetrics {
  int step = 0;
  double mse_mean = 0.0, mse_p80 = 0.0;
  double emd_mean = 0.0, emd_p80 = 0.0;
};

struct RolloutReport {
  std::vector<StepMetrics> steps;  // aggregated over trajectories
  double final_mse = 0.0;          // last-step means
  double final_emd = 0.0;
  int trajectories = 0;
};

// Rollouts over every trajectory of the dataset. EMD is computed every
// `emd_every` steps on at most `emd_particles` randomly subsampled particles
// (0 disables EMD).
RolloutReport evaluate_rollouts(const NetParams<float>& params,
                                const EmulatorConfig& cfg, const Dataset& data,
                                int steps, int emd_every = 10,
                                int emd_particles = 64,
                                std::uint64_t seed = 0);

// report.json + report.csv (+ final-frame rasters when frames are given)
void emit_report(const std::string& dir, const RolloutReport& report);

// P6 PPM scatter raster of a particle frame, colored by material
void write_frame_ppm(const std::string& path, const std::vector<float>& pos,
                     const std::vector<std::uint8_t>& material,
                     const Domain& dom, int scale = 8);

}  // namespace nmpm
