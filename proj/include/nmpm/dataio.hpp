#pragma once

// On-disk trajectory format: "NMPMTRAJ" magic, u32 version, length-prefixed
// JSON header (domain, materials, density_scale, globals, N, T), then a
// frame-major little-endian f32 position payload. A manifest JSON lists the
// files of each split.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nmpm/mpm_ref.hpp"
#include "nmpm/transfer.hpp"

namespace nmpm {

inline constexpr char kTrajMagic[8] = {'N', 'M', 'P', 'M', 'T', 'R', 'A', 'J'};
inline constexpr std::uint32_t kTrajVersion = 1;

void write_trajectory(const std::string& path, const mpm::Trajectory& traj,
                      double density_scale = 1.0);
mpm::Trajectory read_trajectory(const std::string& path, double* density_scale = nullptr);

struct Manifest {
  std::map<std::string, std::vector<std::string>> splits;  // train/valid/test
};

void write_manifest(const std::string& path, const Manifest& manifest);
Manifest read_manifest(const std::string& path);

// Materialized dataset for one split.
struct Dataset {
  std::vector<mpm::Trajectory> trajectories;
  double density_scale = 1.0;

  const Domain& domain() const;
};

Dataset load_split(const Manifest& manifest, const std::string& split,
                   const std::string& base_dir);

// frame t of a trajectory as a ParticleCloud, with velocity p_t - p_{t-1}
// (zero for t == 0)
ParticleCloud cloud_at(const mpm::Trajectory& traj, int t);

// mean dynamic particles per occupied voxel at a given grid resolution,
// averaged over sampled frames of the trajectory set
double estimate_density_scale(const std::vector<mpm::Trajectory>& trajs,
                              int grid_w, int grid_h);

}  // namespace nmpm
