#include "nmpm/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

#include "nmpm/checkpoint.hpp"

namespace nmpm {

using nlohmann::json;

TrainConfig desk_profile() {
  TrainConfig cfg;
  cfg.net.hidden = 12;
  cfg.net.mlp_width = 16;
  cfg.net.depth = 3;
  cfg.net.bundle = 4;
  cfg.em.bundle = 4;
  cfg.em.domain.width = 32;
  cfg.em.domain.height = 32;
  cfg.iters = 5000;
  cfg.batch = 16;
  cfg.unroll_calls = 2;
  cfg.lr.total_steps = 5000;  // anneal within the short run
  cfg.particle_noise = 5e-4;
  return cfg;
}

TrainConfig paper_profile() {
  TrainConfig cfg;
  cfg.net.hidden = 64;
  cfg.net.mlp_width = 64;
  cfg.net.depth = 3;
  cfg.net.bundle = 8;
  cfg.em.bundle = 8;
  cfg.em.domain.width = 64;
  cfg.em.domain.height = 64;
  cfg.iters = 100000;
  cfg.batch = 16;
  cfg.unroll_calls = 2;
  cfg.particle_noise = 5e-4;
  return cfg;
}

namespace {

struct TrajCache {
  CloudLayout layout;
  ParticleCloud frame0;
};

TrajCache cache_of(const mpm::Trajectory& traj) {
  TrajCache c;
  c.frame0 = cloud_at(traj, 0);
  c.layout = layout_of(c.frame0);
  return c;
}

// reference positions of material slot mi at one frame, as a constant tensor
Tensor<float> target_positions(const mpm::Trajectory& traj, const CloudLayout& lay,
                               std::size_t mi, int frame, const Domain& dom,
                               bool flip) {
  const auto& idx = lay.indices[mi];
  std::vector<float> p(idx.size() * 2);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::size_t src = (static_cast<std::size_t>(frame) * traj.count +
                       static_cast<std::size_t>(idx[i])) * 2;
    p[2 * i] = flip ? static_cast<float>(dom.lo_x + dom.hi_x) - traj.positions[src]
                    : traj.positions[src];
    p[2 * i + 1] = traj.positions[src + 1];
  }
  return Tensor<float>::from(std::move(p), {static_cast<int>(idx.size()), 2});
}

EmState<float> noisy_state(const mpm::Trajectory& traj, const CloudLayout& lay,
                           int t, const TrainConfig& cfg,
                           std::mt19937_64* noise_rng, bool flip) {
  ParticleCloud cloud = cloud_at(traj, t);
  if (flip) {
    float sx = static_cast<float>(cfg.em.domain.lo_x + cfg.em.domain.hi_x);
    for (int i = 0; i < cloud.count(); ++i) {
      cloud.pos[2 * i] = sx - cloud.pos[2 * i];
      cloud.vel[2 * i] = -cloud.vel[2 * i];
    }
  }
  if (noise_rng && cfg.particle_noise > 0.0) {
    std::normal_distribution<double> dist(0.0, cfg.particle_noise);
    const Domain& dom = cfg.em.domain;
    double mx = cfg.em.margin_x(), my = cfg.em.margin_y();
    for (int i = 0; i < cloud.count(); ++i) {
      if (cloud.material[static_cast<std::size_t>(i)] ==
          static_cast<std::uint8_t>(Material::boundary))
        continue;
      double x = cloud.pos[2 * i] + dist(*noise_rng);
      double y = cloud.pos[2 * i + 1] + dist(*noise_rng);
      cloud.pos[2 * i] = static_cast<float>(std::clamp(x, dom.lo_x + mx, dom.hi_x - mx));
      cloud.pos[2 * i + 1] =
          static_cast<float>(std::clamp(y, dom.lo_y + my, dom.hi_y - my));
    }
  }
  return make_state<float>(cloud, lay);
}

}  // namespace

void compute_norm_stats(NetParams<float>& params, const Dataset& data,
                        const EmulatorConfig& cfg, int frames_per_traj) {
  std::vector<double> sum, sumsq;
  long count = 0;
  for (const auto& traj : data.trajectories) {
    TrajCache cache = cache_of(traj);
    int stride = std::max(1, traj.frames / frames_per_traj);
    for (int t = 1; t < traj.frames; t += stride) {
      ParticleCloud cloud = cloud_at(traj, t);
      EmState<float> st = make_state<float>(cloud, cache.layout);
      Tensor<float> raw = build_raw_grid(st, cfg);
      int C = raw.dim(0);
      std::size_t hw = raw.size() / static_cast<std::size_t>(C);
      if (sum.empty()) {
        sum.assign(static_cast<std::size_t>(C), 0.0);
        sumsq.assign(static_cast<std::size_t>(C), 0.0);
      }
      count += static_cast<long>(hw);
      for (int c = 0; c < C; ++c) {
        const float* p = raw.values().data() + static_cast<std::size_t>(c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          sum[static_cast<std::size_t>(c)] += p[i];
          sumsq[static_cast<std::size_t>(c)] += static_cast<double>(p[i]) * p[i];
        }
      }
    }
  }
  if (count == 0) throw TensorError("compute_norm_stats: dataset has no frames");
  params.norm_mean.resize(sum.size());
  params.norm_std.resize(sum.size());
  for (std::size_t c = 0; c < sum.size(); ++c) {
    double m = sum[c] / count;
    params.norm_mean[c] = m;
    params.norm_std[c] = std::sqrt(std::max(sumsq[c] / count - m * m, 0.0));
  }
}

std::vector<Sample> draw_samples(const Dataset& data, int count, int horizon,
                                 std::mt19937_64& rng) {
  std::vector<Sample> out;
  std::uniform_int_distribution<int> traj_dist(
      0, static_cast<int>(data.trajectories.size()) - 1);
  for (int i = 0; i < count; ++i) {
    Sample s;
    s.traj = traj_dist(rng);
    int T = data.trajectories[static_cast<std::size_t>(s.traj)].frames;
    int hi = T - 1 - horizon;
    if (hi < 1)
      throw TensorError("draw_samples: trajectory too short for horizon " +
                        std::to_string(horizon));
    s.t = std::uniform_int_distribution<int>(1, hi)(rng);
    out.push_back(s);
  }
  return out;
}

Tensor<float> batch_loss(const NetParams<float>& params, const Dataset& data,
                         const std::vector<Sample>& samples,
                         const TrainConfig& cfg, std::mt19937_64* noise_rng) {
  if (samples.empty()) throw TensorError("batch_loss: empty batch");
  const EmulatorConfig& em = cfg.em;
  int B = static_cast<int>(samples.size());
  int m = em.bundle;

  std::vector<TrajCache> caches;
  std::vector<EmState<float>> states;
  std::vector<Sample> flipped(samples);
  for (Sample& s : flipped) {
    if (cfg.mirror_augment && noise_rng) s.flip = ((*noise_rng)() & 1) != 0;
    const auto& traj = data.trajectories[static_cast<std::size_t>(s.traj)];
    caches.push_back(cache_of(traj));
    states.push_back(
        noisy_state(traj, caches.back().layout, s.t, cfg, noise_rng, s.flip));
  }

  Tensor<float> total;
  int terms = 0;
  for (int k = 0; k < cfg.unroll_calls; ++k) {
    std::vector<Tensor<float>> raws, ins;
    for (int b = 0; b < B; ++b) {
      Tensor<float> raw = build_raw_grid(states[static_cast<std::size_t>(b)], em);
      Tensor<float> in = normalize_grid(raw, params.norm_mean, params.norm_std);
      if (noise_rng && cfg.grid_noise > 0.0) {
        std::normal_distribution<double> dist(0.0, cfg.grid_noise);
        std::vector<float> nz(in.size());
        for (auto& v : nz) v = static_cast<float>(dist(*noise_rng));
        in = add(in, Tensor<float>::from(std::move(nz), in.shape()));
      }
      raws.push_back(std::move(raw));
      ins.push_back(std::move(in));
    }
    Tensor<float> out = unet_forward(params, stack0<float>(ins));
    for (int b = 0; b < B; ++b) {
      const Sample& s = flipped[static_cast<std::size_t>(b)];
      const auto& traj = data.trajectories[static_cast<std::size_t>(s.traj)];
      const CloudLayout& lay = caches[static_cast<std::size_t>(b)].layout;
      Tensor<float> pred = denormalize_pred(select0(out, b), params, em);
      std::vector<EmState<float>> bundle = step_bundle(
          states[static_cast<std::size_t>(b)], pred,
          raws[static_cast<std::size_t>(b)], em);
      for (int j = 0; j < m; ++j)
        for (std::size_t mi = 0; mi < lay.materials.size(); ++mi) {
          Tensor<float> target = target_positions(traj, lay, mi,
                                                  s.t + k * m + j + 1,
                                                  em.domain, s.flip);
          Tensor<float> term = mse_loss(bundle[static_cast<std::size_t>(j)].pos[mi], target);
          total = total.defined() ? add(total, term) : term;
          ++terms;
        }
      states[static_cast<std::size_t>(b)] = bundle.back();
    }
  }
  return scale(total, 1.0f / static_cast<float>(terms));
}

TrainLog train_loop(NetParams<float>& params, const Dataset& train,
                    const Dataset& valid, const TrainConfig& cfg,
                    const ProgressFn& progress) {
  std::mt19937_64 rng(cfg.seed);
  std::mt19937_64 valid_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<Sample> valid_samples =
      draw_samples(valid, cfg.valid_samples, cfg.horizon(), valid_rng);

  AdamState<float> opt;
  TrainLog log;
  for (int iter = 0; iter < cfg.iters; ++iter) {
    std::vector<Sample> batch = draw_samples(train, cfg.batch, cfg.horizon(), rng);
    Tensor<float> loss = batch_loss(params, train, batch, cfg, &rng);
    double lval = loss.item();
    params.zero_grads();
    loss.backward();
    clip_grad_norm(params.tensors, cfg.grad_clip);
    adam_step(params.tensors, opt, lr_at(iter, cfg.lr));
    log.loss.push_back(lval);
    if (progress) progress(iter, lval);

    if ((iter + 1) % cfg.valid_every == 0 || iter + 1 == cfg.iters) {
      double v = batch_loss(params, valid, valid_samples, cfg, nullptr).item();
      log.valid.emplace_back(iter, v);
      if (log.best_iter < 0 || v < log.best_valid) {
        log.best_valid = v;
        log.best_iter = iter;
        if (!cfg.checkpoint_path.empty()) save_net(cfg.checkpoint_path, params);
      }
    }
  }
  return log;
}

void save_net(const std::string& path, const NetParams<float>& params) {
  save_tensors(path, params.tensors);
  json j;
  j["config"] = {{"depth", params.config.depth},
                 {"hidden", params.config.hidden},
                 {"kernel", params.config.kernel},
                 {"mlp_width", params.config.mlp_width},
                 {"mlp_layers", params.config.mlp_layers},
                 {"in_channels", params.config.in_channels},
                 {"bundle", params.config.bundle},
                 {"num_materials", params.config.num_materials}};
  j["norm_mean"] = params.norm_mean;
  j["norm_std"] = params.norm_std;
  std::ofstream os(path + ".json");
  if (!os) throw TensorError("save_net: cannot write " + path + ".json");
  os << j.dump(2) << "\n";
}

NetParams<float> load_net(const std::string& path) {
  NetParams<float> p;
  p.tensors = load_tensors<float>(path);
  std::ifstream is(path + ".json");
  if (!is) throw TensorError("load_net: missing sidecar " + path + ".json");
  json j = json::parse(is);
  const json& c = j.at("config");
  p.config.depth = c.at("depth");
  p.config.hidden = c.at("hidden");
  p.config.kernel = c.at("kernel");
  p.config.mlp_width = c.at("mlp_width");
  p.config.mlp_layers = c.at("mlp_layers");
  p.config.in_channels = c.at("in_channels");
  p.config.bundle = c.at("bundle");
  p.config.num_materials = c.at("num_materials");
  p.norm_mean = j.at("norm_mean").get<std::vector<double>>();
  p.norm_std = j.at("norm_std").get<std::vector<double>>();
  for (auto& t : p.tensors) t.set_requires_grad(true);
  return p;
}

}  // namespace nmpm
