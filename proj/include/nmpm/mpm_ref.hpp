#pragma once

// Miniature 2D MLS-MPM simulator used as the ground-truth data oracle.
// Quadratic B-spline transfers with APIC, weakly compressible EOS for water,
// a friction clamp for sand, damped elasticity for goop. Parameters are tuned
// for plausibility at desk scale only.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nmpm/transfer.hpp"

namespace nmpm::mpm {

struct MaterialParams {
  double rest_density = 1.0;
  double eos_stiffness = 30.0;   // kappa in p = kappa ((rho/rho0)^7 - 1)
  double eos_exponent = 7.0;
  double friction = 0.4;         // sand: tangential velocity damping at contacts
  double elastic_stiffness = 8.0;  // goop: pull toward rest volume
  double damping = 2.0;            // goop: velocity field damping
  double max_dt = 5e-4;
};

MaterialParams default_params(Material m);

enum class ScenarioKind { dam_break, blob_drop, ramps };

struct Segment {
  double ax, ay, bx, by;
};

struct SeedRegion {
  double lo_x, lo_y, hi_x, hi_y;
  Material material = Material::water;
};

struct Scenario {
  ScenarioKind kind = ScenarioKind::dam_break;
  Domain domain;                // world bounds; width/height = sim grid cells
  std::vector<SeedRegion> regions;
  std::vector<Segment> ramps;
  std::array<double, 2> gravity{0.0, -9.8};
  int frames = 200;             // stored trajectory length T
  int substeps = 8;             // sim steps per stored frame
  double dt = 5e-4;
  int target_particles = 300;   // dynamic particles across all regions
  double boundary_spacing_cells = 1.0;  // wall/ramp particle spacing, in cells
  std::uint64_t seed = 0;
};

// canned scenario builders (domain defaults to the unit square, 64^2 sim grid)
Scenario make_dam_break(std::uint64_t seed, int particles = 300, int frames = 200);
Scenario make_blob_drop(std::uint64_t seed, int particles = 300, int frames = 200);
Scenario make_ramps(std::uint64_t seed, int particles = 300, int frames = 200);

struct MpmState {
  std::vector<double> pos;  // N x 2, dynamic particles only
  std::vector<double> vel;  // N x 2
  std::vector<double> C;    // N x 4 affine velocity field, row-major 2x2
  std::vector<double> J;    // N volume ratios
  std::vector<Material> material;
  double particle_mass = 1.0;
  double particle_volume = 1.0;

  int count() const { return static_cast<int>(J.size()); }
};

// One MLS-MPM update. Throws on a CFL violation (dt * max|v| >= cell size).
void mpm_step(MpmState& state, const Domain& domain,
              const std::array<double, 2>& gravity,
              const std::vector<Segment>& ramps, double dt,
              bool walls = true);

struct Trajectory {
  int frames = 0;
  int count = 0;                    // particles per frame, boundary included
  std::vector<float> positions;     // frames x count x 2
  std::vector<std::uint8_t> material;
  Domain domain;
  std::array<double, 2> gravity{0.0, -9.8};
};

// Full rollout: seeds particles, adds boundary particles along walls and
// ramps, stores every substeps-th state. Deterministic per seed.
Trajectory simulate(const Scenario& scenario);

// wall + ramp boundary particle positions for a scenario
std::vector<double> boundary_particles(const Scenario& scenario);

}  // namespace nmpm::mpm
