#include "nmpm/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace nmpm {

using nlohmann::json;

namespace {

// temporarily detach parameters from the tape: forward passes still compute
// values but no backward graph is built
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

double percentile80(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t idx = static_cast<std::size_t>(0.8 * (v.size() - 1) + 0.5);
  return v[idx];
}

}  // namespace

std::vector<double> rollout_position_mse(const NetParams<float>& params,
                                         const EmulatorConfig& cfg,
                                         const mpm::Trajectory& traj, int steps,
                                         int start) {
  if (start < 1) throw TensorError("rollout_position_mse: start must be >= 1");
  if (start + steps >= traj.frames)
    throw TensorError("rollout_position_mse: rollout overruns the reference (" +
                      std::to_string(start + steps) + " >= " +
                      std::to_string(traj.frames) + " frames)");
  NoGrad guard(params);
  ParticleCloud cloud = cloud_at(traj, start);
  CloudLayout lay = layout_of(cloud);
  EmState<float> st = make_state<float>(cloud, lay);
  std::vector<EmState<float>> pred = rollout(st, params, cfg, steps);

  std::vector<double> mse(static_cast<std::size_t>(steps), 0.0);
  for (int s = 0; s < steps; ++s) {
    std::vector<float> frame = state_frame(pred[static_cast<std::size_t>(s)], lay, cloud);
    const float* ref =
        traj.positions.data() + static_cast<std::size_t>(start + 1 + s) * traj.count * 2;
    double acc = 0.0;
    long n = 0;
    for (int i = 0; i < traj.count; ++i) {
      if (traj.material[static_cast<std::size_t>(i)] ==
          static_cast<std::uint8_t>(Material::boundary))
        continue;
      double dx = frame[2 * i] - ref[2 * i];
      double dy = frame[2 * i + 1] - ref[2 * i + 1];
      acc += dx * dx + dy * dy;
      n += 2;
    }
    mse[static_cast<std::size_t>(s)] = n ? acc / static_cast<double>(n) : 0.0;
  }
  return mse;
}

RolloutReport evaluate_rollouts(const NetParams<float>& params,
                                const EmulatorConfig& cfg, const Dataset& data,
                                int steps, int emd_every, int emd_particles,
                                std::uint64_t seed) {
  RolloutReport rep;
  rep.trajectories = static_cast<int>(data.trajectories.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> mse_by_step(static_cast<std::size_t>(steps));
  std::vector<std::vector<double>> emd_by_step(static_cast<std::size_t>(steps));
  std::mt19937_64 rng(seed);

  for (const auto& traj : data.trajectories) {
    NoGrad guard(params);
    ParticleCloud cloud = cloud_at(traj, 1);
    CloudLayout lay = layout_of(cloud);
    EmState<float> st = make_state<float>(cloud, lay);
    std::vector<EmState<float>> pred = rollout(st, params, cfg, steps);

    std::vector<int> dyn;
    for (int i = 0; i < traj.count; ++i)
      if (traj.material[static_cast<std::size_t>(i)] !=
          static_cast<std::uint8_t>(Material::boundary))
        dyn.push_back(i);
    std::vector<int> sub = dyn;
    if (emd_particles > 0 && static_cast<int>(sub.size()) > emd_particles) {
      std::shuffle(sub.begin(), sub.end(), rng);
      sub.resize(static_cast<std::size_t>(emd_particles));
    }

    for (int s = 0; s < steps; ++s) {
      std::vector<float> frame = state_frame(pred[static_cast<std::size_t>(s)], lay, cloud);
      const float* ref = traj.positions.data() +
                         static_cast<std::size_t>(2 + s) * traj.count * 2;
      double acc = 0.0;
      for (int i : dyn) {
        double dx = frame[2 * i] - ref[2 * i];
        double dy = frame[2 * i + 1] - ref[2 * i + 1];
        acc += dx * dx + dy * dy;
      }
      mse_by_step[static_cast<std::size_t>(s)].push_back(
          acc / (2.0 * static_cast<double>(dyn.size())));

      if (emd_every > 0 && (s + 1) % emd_every == 0) {
        std::vector<float> pa, pb;
        for (int i : sub) {
          pa.push_back(frame[2 * i]);
          pa.push_back(frame[2 * i + 1]);
          pb.push_back(ref[2 * i]);
          pb.push_back(ref[2 * i + 1]);
        }
        emd_by_step[static_cast<std::size_t>(s)].push_back(sinkhorn_emd(pa, pb));
      }
    }
  }

  double last_emd = nan;
  for (int s = 0; s < steps; ++s) {
    StepMetrics sm;
    sm.step = s + 1;
    const auto& ms = mse_by_step[static_cast<std::size_t>(s)];
    sm.mse_mean = std::accumulate(ms.begin(), ms.end(), 0.0) / ms.size();
    sm.mse_p80 = percentile80(ms);
    const auto& es = emd_by_step[static_cast<std::size_t>(s)];
    if (!es.empty()) {
      sm.emd_mean = std::accumulate(es.begin(), es.end(), 0.0) / es.size();
      sm.emd_p80 = percentile80(es);
      last_emd = sm.emd_mean;
    } else {
      sm.emd_mean = sm.emd_p80 = nan;
    }
    rep.steps.push_back(sm);
  }
  rep.final_mse = rep.steps.empty() ? 0.0 : rep.steps.back().mse_mean;
  rep.final_emd = last_emd;
  return rep;
}

void emit_report(const std::string& dir, const RolloutReport& report) {
  std::filesystem::create_directories(dir);

  json j;
  j["trajectories"] = report.trajectories;
  j["final_mse"] = report.final_mse;
  if (std::isfinite(report.final_emd)) j["final_emd"] = report.final_emd;
  for (const auto& s : report.steps) {
    json row{{"step", s.step}, {"mse_mean", s.mse_mean}, {"mse_p80", s.mse_p80}};
    if (std::isfinite(s.emd_mean)) {
      row["emd_mean"] = s.emd_mean;
      row["emd_p80"] = s.emd_p80;
    }
    j["steps"].push_back(row);
  }
  std::ofstream js(dir + "/report.json");
  if (!js) throw TensorError("emit_report: cannot write " + dir + "/report.json");
  js << j.dump(2) << "\n";

  std::ofstream cs(dir + "/report.csv");
  if (!cs) throw TensorError("emit_report: cannot write " + dir + "/report.csv");
  cs << "step,mse_mean,mse_p80,emd_mean,emd_p80\n";
  for (const auto& s : report.steps) {
    cs << s.step << "," << s.mse_mean << "," << s.mse_p80 << ",";
    if (std::isfinite(s.emd_mean))
      cs << s.emd_mean << "," << s.emd_p80;
    else
      cs << ",";
    cs << "\n";
  }
}

void write_frame_ppm(const std::string& path, const std::vector<float>& pos,
                     const std::vector<std::uint8_t>& material,
                     const Domain& dom, int scale) {
  int W = dom.width * scale, H = dom.height * scale;
  std::vector<std::uint8_t> img(static_cast<std::size_t>(W) * H * 3, 255);
  auto put = [&](int x, int y, int r, int g, int b) {
    if (x < 0 || x >= W || y < 0 || y >= H) return;
    std::size_t o = (static_cast<std::size_t>(y) * W + x) * 3;
    img[o] = static_cast<std::uint8_t>(r);
    img[o + 1] = static_cast<std::uint8_t>(g);
    img[o + 2] = static_cast<std::uint8_t>(b);
  };
  int n = static_cast<int>(pos.size() / 2);
  for (int i = 0; i < n; ++i) {
    double u = (pos[2 * i] - dom.lo_x) / (dom.hi_x - dom.lo_x);
    double v = (pos[2 * i + 1] - dom.lo_y) / (dom.hi_y - dom.lo_y);
    int x = static_cast<int>(u * W);
    int y = H - 1 - static_cast<int>(v * H);  // image rows run top-down
    int r = 60, g = 60, b = 60;  // boundary: gray
    switch (static_cast<Material>(material[static_cast<std::size_t>(i)])) {
      case Material::water: r = 40; g = 90; b = 220; break;
      case Material::sand: r = 210; g = 170; b = 60; break;
      case Material::goop: r = 60; g = 180; b = 90; break;
      default: break;
    }
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) put(x + dx, y + dy, r, g, b);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw TensorError("write_frame_ppm: cannot write " + path);
  os << "P6\n" << W << " " << H << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data()),
           static_cast<std::streamsize>(img.size()));
}

}  // namespace nmpm
