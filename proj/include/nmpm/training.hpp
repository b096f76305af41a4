#pragma once

// Autoregressive time-bundled training. Each optimizer step draws a batch of
// (trajectory, start frame) samples, runs K chained model calls of m frames
// each (later calls see the model's own predictions), and regresses predicted
// particle positions onto the reference trajectory.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "nmpm/dataio.hpp"
#include "nmpm/optim.hpp"
#include "nmpm/pipeline.hpp"

namespace nmpm {

struct TrainConfig {
  UNetConfig net;
  EmulatorConfig em;
  int iters = 5000;
  int batch = 16;
  int unroll_calls = 2;  // K, total model calls per sample
  double grad_clip = 1.0;
  LrSchedule lr;
  double particle_noise = 0.0;  // std of position jitter, world units
  double grid_noise = 0.0;      // std of additive noise after normalization
  bool mirror_augment = false;  // random x-flip of samples (and their targets)
  int valid_every = 250;
  int valid_samples = 8;
  std::uint64_t seed = 0;
  std::string checkpoint_path;  // best-validation params, empty = don't save

  int horizon() const { return unroll_calls * em.bundle; }
};

// small network / short schedule sized for a 4-core desktop
TrainConfig desk_profile();
// the full-size configuration
TrainConfig paper_profile();

// Per-channel mean/std of raw input grids over sampled frames of the dataset,
// written into params.norm_mean / norm_std.
void compute_norm_stats(NetParams<float>& params, const Dataset& data,
                        const EmulatorConfig& cfg, int frames_per_traj = 8);

struct Sample {
  int traj = 0;
  int t = 0;          // start frame; needs t >= 1 and t + horizon < T
  bool flip = false;  // mirror the sample about the domain's vertical axis
};

std::vector<Sample> draw_samples(const Dataset& data, int count, int horizon,
                                 std::mt19937_64& rng);

// Loss of one batch: K chained bundles per sample, MSE over predicted
// positions of every intermediate frame. noise_rng may be null for
// deterministic (validation) evaluation.
Tensor<float> batch_loss(const NetParams<float>& params, const Dataset& data,
                         const std::vector<Sample>& samples,
                         const TrainConfig& cfg, std::mt19937_64* noise_rng);

struct TrainLog {
  std::vector<double> loss;                    // per iteration
  std::vector<std::pair<int, double>> valid;   // (iteration, valid loss)
  double best_valid = 0.0;
  int best_iter = -1;
};

using ProgressFn = std::function<void(int iter, double loss)>;

TrainLog train_loop(NetParams<float>& params, const Dataset& train,
                    const Dataset& valid, const TrainConfig& cfg,
                    const ProgressFn& progress = {});

// Params + config + normalization stats; tensors go to `path`, config and
// stats to `path`.json.
void save_net(const std::string& path, const NetParams<float>& params);
NetParams<float> load_net(const std::string& path);

}  // namespace nmpm
