// nmpm command line: generate reference data, train, roll out, evaluate,
// and run inverse design. See README.md for worked examples.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "nmpm/eval.hpp"
#include "nmpm/inverse.hpp"
#include "nmpm/training.hpp"

using namespace nmpm;
using nlohmann::json;

namespace {

std::uint64_t resolve_seed(std::uint64_t flag_seed, bool flag_set) {
  if (flag_set) return flag_seed;
  if (const char* env = std::getenv("NMPM_SEED")) return std::strtoull(env, nullptr, 10);
  return 0;
}

// write-then-rename so a crash never leaves a torn manifest
void write_json_atomic(const std::string& path, const json& j) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw TensorError("cannot write " + tmp);
    os << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

bool parse_grid(const std::string& s, int& w, int& h) {
  auto x = s.find('x');
  if (x == std::string::npos) return false;
  try {
    w = std::stoi(s.substr(0, x));
    h = std::stoi(s.substr(x + 1));
  } catch (...) {
    return false;
  }
  return w > 0 && h > 0;
}

mpm::Scenario scenario_for(const std::string& kind, std::uint64_t seed,
                           int particles, int frames) {
  if (kind == "dam_break") return mpm::make_dam_break(seed, particles, frames);
  if (kind == "blob_drop") return mpm::make_blob_drop(seed, particles, frames);
  if (kind == "ramps") return mpm::make_ramps(seed, particles, frames);
  throw TensorError("unknown scenario '" + kind +
                    "' (expected dam_break, blob_drop or ramps)");
}

int cmd_generate(const std::string& out_dir, const std::string& kind, int count,
                 int particles, int frames, std::uint64_t seed, int grid_w,
                 int grid_h) {
  std::filesystem::create_directories(out_dir);
  std::vector<mpm::Trajectory> trajs;
  std::vector<std::string> files;
  for (int i = 0; i < count; ++i) {
    mpm::Scenario sc = scenario_for(kind, seed + static_cast<std::uint64_t>(i),
                                    particles, frames);
    trajs.push_back(mpm::simulate(sc));
    files.push_back(kind + "_" + std::to_string(i) + ".traj");
    std::cout << "simulated " << files.back() << " (" << trajs.back().count
              << " particles)\n";
  }
  double scale = estimate_density_scale(trajs, grid_w, grid_h);
  for (std::size_t i = 0; i < trajs.size(); ++i)
    write_trajectory(out_dir + "/" + files[i], trajs[i], scale);

  // 80/10/10 split, at least one trajectory per non-empty split
  Manifest man;
  int n_valid = std::max(count / 10, count > 2 ? 1 : 0);
  int n_test = n_valid;
  int n_train = count - n_valid - n_test;
  for (int i = 0; i < count; ++i) {
    if (i < n_train)
      man.splits["train"].push_back(files[static_cast<std::size_t>(i)]);
    else if (i < n_train + n_valid)
      man.splits["valid"].push_back(files[static_cast<std::size_t>(i)]);
    else
      man.splits["test"].push_back(files[static_cast<std::size_t>(i)]);
  }
  write_manifest(out_dir + "/manifest.json", man);

  json run{{"command", "generate"}, {"scenario", kind},   {"count", count},
           {"particles", particles}, {"frames", frames},  {"seed", seed},
           {"density_scale", scale}, {"grid", {grid_w, grid_h}}};
  write_json_atomic(out_dir + "/run.json", run);
  std::cout << "wrote " << count << " trajectories, density_scale " << scale
            << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out,
              const std::string& profile, std::uint64_t seed, int iters,
              int batch, int bundle, int unroll, int hidden, int grid_w,
              int grid_h, double noise, const std::string& p2g, bool mirror) {
  TrainConfig cfg = profile == "paper" ? paper_profile() : desk_profile();
  if (p2g == "splat") cfg.em.mode = P2gMode::bilinear_splat;
  cfg.mirror_augment = mirror;
  if (iters > 0) cfg.iters = iters;
  if (batch > 0) cfg.batch = batch;
  if (bundle > 0) {
    cfg.em.bundle = bundle;
    cfg.net.bundle = bundle;
  }
  if (unroll > 0) cfg.unroll_calls = unroll;
  if (hidden > 0) {
    cfg.net.hidden = hidden;
    cfg.net.mlp_width = hidden;
  }
  if (grid_w > 0) {
    cfg.em.domain.width = grid_w;
    cfg.em.domain.height = grid_h;
  }
  if (noise >= 0.0) cfg.particle_noise = noise;
  cfg.seed = seed;
  cfg.lr.total_steps = cfg.iters;
  cfg.checkpoint_path = out;

  Manifest man = read_manifest(data_dir + "/manifest.json");
  Dataset train = load_split(man, "train", data_dir);
  Dataset valid = load_split(man, "valid", data_dir);
  const Domain& sim_dom = train.domain();
  cfg.em.domain.lo_x = sim_dom.lo_x;
  cfg.em.domain.lo_y = sim_dom.lo_y;
  cfg.em.domain.hi_x = sim_dom.hi_x;
  cfg.em.domain.hi_y = sim_dom.hi_y;
  cfg.em.density_scale = train.density_scale;
  cfg.em.gravity = train.trajectories[0].gravity;

  CloudLayout lay = layout_of(cloud_at(train.trajectories[0], 0));
  cfg.net.num_materials = static_cast<int>(lay.materials.size());
  cfg.net.in_channels =
      input_channel_count(cfg.em, cfg.net.num_materials);

  NetParams<float> params = init_params<float>(cfg.net, seed);
  compute_norm_stats(params, train, cfg.em);
  std::cout << "training " << params.param_count() << " parameters, "
            << cfg.iters << " iterations\n";

  TrainLog log = train_loop(params, train, valid, cfg, [&](int it, double l) {
    if ((it + 1) % 100 == 0)
      std::cout << "iter " << it + 1 << " loss " << l << " lr "
                << lr_at(it, cfg.lr) << "\n";
  });
  if (log.best_iter < 0) save_net(out, params);  // otherwise best copy is on disk

  json run{{"command", "train"},
           {"profile", profile},
           {"seed", seed},
           {"iters", cfg.iters},
           {"batch", cfg.batch},
           {"bundle", cfg.em.bundle},
           {"unroll_calls", cfg.unroll_calls},
           {"hidden", cfg.net.hidden},
           {"grid", {cfg.em.domain.width, cfg.em.domain.height}},
           {"final_loss", log.loss.empty() ? 0.0 : log.loss.back()},
           {"best_valid", log.best_valid},
           {"best_iter", log.best_iter},
           {"checkpoint", out}};
  write_json_atomic(out + ".run.json", run);
  std::cout << "best valid loss " << log.best_valid << " at iter "
            << log.best_iter << "\n";
  return 0;
}

EmulatorConfig emulator_for(const NetParams<float>& params, const Dataset& data,
                            int grid_w, int grid_h) {
  EmulatorConfig em;
  em.domain = data.domain();
  em.domain.width = grid_w > 0 ? grid_w : 32;
  em.domain.height = grid_h > 0 ? grid_h : 32;
  em.bundle = params.config.bundle;
  em.density_scale = data.density_scale;
  em.gravity = data.trajectories[0].gravity;
  return em;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir,
             const std::string& split, const std::string& out_dir, int steps,
             int grid_w, int grid_h, std::uint64_t seed) {
  NetParams<float> params = load_net(ckpt);
  Manifest man = read_manifest(data_dir + "/manifest.json");
  Dataset data = load_split(man, split, data_dir);
  EmulatorConfig em = emulator_for(params, data, grid_w, grid_h);
  if (steps <= 0) steps = data.trajectories[0].frames - 2;

  RolloutReport rep = evaluate_rollouts(params, em, data, steps, 10, 64, seed);
  emit_report(out_dir, rep);
  std::cout << "evaluated " << rep.trajectories << " rollouts, final mse "
            << rep.final_mse << "\n";

  json run{{"command", "eval"},     {"checkpoint", ckpt}, {"split", split},
           {"steps", steps},        {"seed", seed},       {"final_mse", rep.final_mse},
           {"report", out_dir + "/report.json"}};
  write_json_atomic(out_dir + "/run.json", run);
  return 0;
}

int cmd_rollout(const std::string& ckpt, const std::string& traj_file,
                const std::string& out_dir, int steps, int grid_w, int grid_h,
                int every) {
  NetParams<float> params = load_net(ckpt);
  double scale = 1.0;
  mpm::Trajectory tr = read_trajectory(traj_file, &scale);
  Dataset data;
  data.trajectories.push_back(tr);
  data.density_scale = scale;
  EmulatorConfig em = emulator_for(params, data, grid_w, grid_h);
  if (steps <= 0) steps = tr.frames - 2;

  ParticleCloud cloud = cloud_at(tr, 1);
  CloudLayout lay = layout_of(cloud);
  EmState<float> st = make_state<float>(cloud, lay);
  for (auto& t : params.tensors) t.set_requires_grad(false);  // no tape needed
  std::vector<EmState<float>> pred = rollout(st, params, em, steps);

  std::filesystem::create_directories(out_dir);
  for (int s = 0; s < steps; s += every) {
    std::vector<float> frame = state_frame(pred[static_cast<std::size_t>(s)], lay, cloud);
    char name[64];
    std::snprintf(name, sizeof name, "frame_%04d.ppm", s + 1);
    write_frame_ppm(out_dir + "/" + name, frame, tr.material, em.domain);
  }
  auto mse = rollout_position_mse(params, em, tr, steps);
  json run{{"command", "rollout"}, {"checkpoint", ckpt}, {"steps", steps},
           {"final_mse", mse.back()}, {"frames_every", every}};
  write_json_atomic(out_dir + "/run.json", run);
  std::cout << "rollout of " << steps << " steps, final mse " << mse.back()
            << "\n";
  return 0;
}

int cmd_invert(const std::string& ckpt, const std::string& traj_file,
               const std::string& out, double alpha0, double target_x,
               double target_y, int iters, int steps, const std::string& mode,
               double lr, bool symmetrize) {
  NetParams<float> params = load_net(ckpt);
  double scale = 1.0;
  mpm::Trajectory tr = read_trajectory(traj_file, &scale);

  // dynamic particles become the design scene; walls stay fixed
  ParticleCloud frame = cloud_at(tr, 1);
  ParticleCloud water;
  std::vector<float> walls;
  for (int i = 0; i < frame.count(); ++i) {
    if (frame.material[static_cast<std::size_t>(i)] ==
        static_cast<std::uint8_t>(Material::boundary)) {
      walls.push_back(frame.pos[2 * i]);
      walls.push_back(frame.pos[2 * i + 1]);
    } else {
      water.pos.push_back(frame.pos[2 * i]);
      water.pos.push_back(frame.pos[2 * i + 1]);
      water.vel.push_back(frame.vel[2 * i]);
      water.vel.push_back(frame.vel[2 * i + 1]);
      water.material.push_back(frame.material[static_cast<std::size_t>(i)]);
    }
  }

  Dataset data;
  data.trajectories.push_back(tr);
  data.density_scale = scale;
  EmulatorConfig em = emulator_for(params, data, 0, 0);
  em.symmetrize_x = symmetrize;

  InverseConfig inv;
  inv.target_x = target_x;
  inv.target_y = target_y;
  inv.iters = iters;
  inv.rollout_steps = steps;
  inv.lr = lr;
  inv.mode = mode == "fd" ? InverseMode::finite_difference
                          : InverseMode::autodiff_splat;

  InverseResult res = optimize_angle(params, em, water, walls, inv, alpha0);
  json run{{"command", "invert"},
           {"alpha0", alpha0},
           {"alpha", res.alpha},
           {"initial_loss", res.initial_loss},
           {"loss", res.loss},
           {"mode", mode},
           {"alpha_history", res.alpha_history},
           {"loss_history", res.loss_history}};
  write_json_atomic(out, run);
  std::cout << "alpha " << alpha0 << " -> " << res.alpha << ", loss "
            << res.initial_loss << " -> " << res.loss << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neural emulation of particle simulations"};
  app.require_subcommand(1);
  app.fallthrough();  // allow --seed/--jobs after the subcommand name

  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 0;
  app.add_flag_callback("--version", [] { std::cout << "nmpm 1.0\n"; std::exit(0); });
  app.add_option("--seed", seed, "RNG seed (or env NMPM_SEED)")
      ->each([&](const std::string&) { seed_set = true; });
  app.add_option("--jobs", jobs, "worker thread cap");

  // generate
  auto* gen = app.add_subcommand("generate", "simulate reference trajectories");
  std::string gen_out = "data", gen_kind = "dam_break", grid;
  int gen_count = 8, gen_particles = 300, gen_frames = 200;
  gen->add_option("-o,--out", gen_out, "output directory");
  gen->add_option("--scenario", gen_kind, "dam_break | blob_drop | ramps");
  gen->add_option("-n,--count", gen_count, "number of trajectories");
  gen->add_option("--particles", gen_particles, "dynamic particles per scene");
  gen->add_option("--frames", gen_frames, "stored frames per trajectory");
  gen->add_option("--grid", grid, "emulation grid WxH (density scale basis)");

  // train
  auto* tr = app.add_subcommand("train", "train an emulator");
  std::string tr_data = "data", tr_out = "model.ckpt", tr_profile = "desk";
  int tr_iters = 0, tr_batch = 0, tr_bundle = 0, tr_unroll = 0, tr_hidden = 0;
  double tr_noise = -1.0;
  std::string tr_p2g = "nearest";
  tr->add_option("-d,--data", tr_data, "dataset directory (with manifest.json)");
  tr->add_option("-o,--out", tr_out, "checkpoint path");
  tr->add_option("--profile", tr_profile, "desk | paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  tr->add_option("--iters", tr_iters, "override iteration count");
  tr->add_option("--batch", tr_batch, "override batch size");
  tr->add_option("--bundle", tr_bundle, "override bundle size m");
  tr->add_option("--unroll", tr_unroll, "override model calls per sample K");
  tr->add_option("--hidden", tr_hidden, "override trunk width");
  tr->add_option("--noise", tr_noise, "override particle noise std");
  tr->add_option("--grid", grid, "emulation grid WxH");
  tr->add_option("--p2g", tr_p2g, "voxelization mode: nearest | splat")
      ->check(CLI::IsMember({"nearest", "splat"}));
  bool tr_mirror = false;
  tr->add_flag("--mirror", tr_mirror, "augment with random x-flips");

  // rollout
  auto* ro = app.add_subcommand("rollout", "roll out one trajectory");
  std::string ro_ckpt = "model.ckpt", ro_traj, ro_out = "rollout";
  int ro_steps = 0, ro_every = 10;
  ro->add_option("-c,--checkpoint", ro_ckpt, "checkpoint path");
  ro->add_option("-t,--trajectory", ro_traj, "reference .traj file")->required();
  ro->add_option("-o,--out", ro_out, "output directory");
  ro->add_option("--steps", ro_steps, "rollout length (default: full)");
  ro->add_option("--every", ro_every, "raster every Nth frame");
  ro->add_option("--grid", grid, "emulation grid WxH");

  // eval
  auto* ev = app.add_subcommand("eval", "metrics over a dataset split");
  std::string ev_ckpt = "model.ckpt", ev_data = "data", ev_split = "test",
              ev_out = "eval";
  int ev_steps = 0;
  ev->add_option("-c,--checkpoint", ev_ckpt, "checkpoint path");
  ev->add_option("-d,--data", ev_data, "dataset directory");
  ev->add_option("--split", ev_split, "train | valid | test");
  ev->add_option("-o,--out", ev_out, "report directory");
  ev->add_option("--steps", ev_steps, "rollout length (default: full)");
  ev->add_option("--grid", grid, "emulation grid WxH");

  // invert
  auto* iv = app.add_subcommand("invert", "ramp angle inverse design");
  std::string iv_ckpt = "model.ckpt", iv_traj, iv_out = "invert.json",
              iv_mode = "autodiff";
  double iv_alpha0 = 0.4, iv_tx = 0.5, iv_ty = 0.08, iv_lr = 0.08;
  int iv_iters = 40, iv_steps = 24;
  iv->add_option("-c,--checkpoint", iv_ckpt, "checkpoint path");
  iv->add_option("-t,--trajectory", iv_traj, "scene .traj file")->required();
  iv->add_option("-o,--out", iv_out, "result JSON path");
  iv->add_option("--alpha0", iv_alpha0, "initial ramp angle (radians)");
  iv->add_option("--target-x", iv_tx, "target x");
  iv->add_option("--target-y", iv_ty, "target y");
  iv->add_option("--iters", iv_iters, "optimization iterations");
  iv->add_option("--steps", iv_steps, "rollout length per evaluation");
  iv->add_option("--lr", iv_lr, "step size");
  iv->add_option("--mode", iv_mode, "autodiff | fd")
      ->check(CLI::IsMember({"autodiff", "fd"}));
  bool iv_sym = false;
  iv->add_flag("--symmetrize", iv_sym,
               "x-mirror-average the net (for symmetric scenes)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

#ifdef _OPENMP
  if (jobs > 0) omp_set_num_threads(jobs);
#endif
  std::uint64_t rseed = resolve_seed(seed, seed_set);

  try {
    int gw = 0, gh = 0;
    if (!grid.empty() && !parse_grid(grid, gw, gh))
      throw TensorError("bad --grid '" + grid + "', expected WxH");
    if (gen->parsed() && gw == 0) gw = gh = 32;  // density-scale basis
    if (gen->parsed())
      return cmd_generate(gen_out, gen_kind, gen_count, gen_particles,
                          gen_frames, rseed, gw, gh);
    if (tr->parsed())
      return cmd_train(tr_data, tr_out, tr_profile, rseed, tr_iters, tr_batch,
                       tr_bundle, tr_unroll, tr_hidden, gw, gh, tr_noise, tr_p2g,
                       tr_mirror);
    if (ro->parsed())
      return cmd_rollout(ro_ckpt, ro_traj, ro_out, ro_steps, gw, gh, ro_every);
    if (ev->parsed())
      return cmd_eval(ev_ckpt, ev_data, ev_split, ev_out, ev_steps, gw, gh,
                      rseed);
    if (iv->parsed())
      return cmd_invert(iv_ckpt, iv_traj, iv_out, iv_alpha0, iv_tx, iv_ty,
                        iv_iters, iv_steps, iv_mode, iv_lr, iv_sym);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
