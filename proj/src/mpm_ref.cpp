#include "nmpm/mpm_ref.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace nmpm::mpm {

MaterialParams default_params(Material m) {
  MaterialParams p;
  switch (m) {
    case Material::water:
      p.eos_stiffness = 30.0;
      p.friction = 0.0;
      p.damping = 1.5;  // affine-field damping only; pure translation is exact
      break;
    case Material::sand:
      p.eos_stiffness = 40.0;
      p.friction = 0.4;
      break;
    case Material::goop:
      p.eos_stiffness = 0.0;
      p.elastic_stiffness = 10.0;
      p.damping = 4.0;
      p.friction = 0.2;
      break;
    default:
      break;
  }
  return p;
}

namespace {

struct Bspline {
  int base_x, base_y;
  double wx[3], wy[3];
};

// quadratic B-spline stencil around a position, node space with nodes at
// integer corners
inline Bspline stencil(double px, double py, double inv_dx) {
  Bspline s;
  double gx = px * inv_dx, gy = py * inv_dx;
  s.base_x = static_cast<int>(std::floor(gx - 0.5));
  s.base_y = static_cast<int>(std::floor(gy - 0.5));
  double fx = gx - s.base_x, fy = gy - s.base_y;
  s.wx[0] = 0.5 * (1.5 - fx) * (1.5 - fx);
  s.wx[1] = 0.75 - (fx - 1.0) * (fx - 1.0);
  s.wx[2] = 0.5 * (fx - 0.5) * (fx - 0.5);
  s.wy[0] = 0.5 * (1.5 - fy) * (1.5 - fy);
  s.wy[1] = 0.75 - (fy - 1.0) * (fy - 1.0);
  s.wy[2] = 0.5 * (fy - 0.5) * (fy - 0.5);
  return s;
}

inline void project_segment(double nx_, double ny_, double vx, double vy,
                            double friction, double* out_x, double* out_y) {
  double vn = vx * nx_ + vy * ny_;
  if (vn < 0.0) {
    double tx = vx - vn * nx_, ty = vy - vn * ny_;
    *out_x = tx * (1.0 - friction);
    *out_y = ty * (1.0 - friction);
  } else {
    *out_x = vx;
    *out_y = vy;
  }
}

}  // namespace

void mpm_step(MpmState& state, const Domain& domain,
              const std::array<double, 2>& gravity,
              const std::vector<Segment>& ramps, double dt, bool walls) {
  const int n = state.count();
  const int nx = domain.width, ny = domain.height;
  const double dx = domain.cell_x();
  const double inv_dx = 1.0 / dx;

  double vmax = 0.0;
  for (int i = 0; i < 2 * n; ++i) vmax = std::max(vmax, std::abs(state.vel[i]));
  if (dt * vmax >= dx)
    throw TensorError("mpm_step: CFL violation (dt*|v| = " +
                      std::to_string(dt * vmax) + " >= cell " +
                      std::to_string(dx) + "); reduce dt or substep");

  const int gw = nx + 1, gh = ny + 1;
  std::vector<double> grid(static_cast<std::size_t>(gw) * gh * 3, 0.0);  // mvx, mvy, m

  double friction = 0.0;
  for (Material m : state.material)
    friction = std::max(friction, default_params(m).friction);

  // P2G
  for (int i = 0; i < n; ++i) {
    double px = state.pos[2 * i] - domain.lo_x, py = state.pos[2 * i + 1] - domain.lo_y;
    Bspline s = stencil(px, py, inv_dx);
    MaterialParams mp = default_params(state.material[static_cast<std::size_t>(i)]);

    double J = state.J[static_cast<std::size_t>(i)];
    double pressure = 0.0;
    if (mp.eos_stiffness > 0.0)
      pressure = mp.eos_stiffness * (std::pow(1.0 / J, mp.eos_exponent) - 1.0);
    if (state.material[static_cast<std::size_t>(i)] == Material::sand)
      pressure = std::max(pressure, 0.0);  // no cohesion
    if (mp.elastic_stiffness > 0.0) pressure += mp.elastic_stiffness * (1.0 - J);

    double stress_coeff = 4.0 * inv_dx * inv_dx * dt * state.particle_volume * pressure;
    const double* C = &state.C[static_cast<std::size_t>(4 * i)];
    double a00 = state.particle_mass * C[0] + stress_coeff;
    double a01 = state.particle_mass * C[1];
    double a10 = state.particle_mass * C[2];
    double a11 = state.particle_mass * C[3] + stress_coeff;

    for (int jj = 0; jj < 3; ++jj)
      for (int ii = 0; ii < 3; ++ii) {
        int gx = s.base_x + ii, gy = s.base_y + jj;
        if (gx < 0 || gx >= gw || gy < 0 || gy >= gh) continue;
        double w = s.wx[ii] * s.wy[jj];
        double dposx = (gx - px * inv_dx) * dx, dposy = (gy - py * inv_dx) * dx;
        std::size_t g = 3 * (static_cast<std::size_t>(gy) * gw + gx);
        grid[g] += w * (state.particle_mass * state.vel[2 * i] + a00 * dposx + a01 * dposy);
        grid[g + 1] += w * (state.particle_mass * state.vel[2 * i + 1] + a10 * dposx + a11 * dposy);
        grid[g + 2] += w * state.particle_mass;
      }
  }

  // grid update: momentum -> velocity, gravity, boundary conditions
  const int wall_cells = 2;
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      std::size_t g = 3 * (static_cast<std::size_t>(gy) * gw + gx);
      if (grid[g + 2] <= 0.0) continue;
      double vx = grid[g] / grid[g + 2] + dt * gravity[0];
      double vy = grid[g + 1] / grid[g + 2] + dt * gravity[1];
      if (walls) {
        if (gx <= wall_cells && vx < 0.0) {
          vx = 0.0;
          vy *= (1.0 - friction);
        }
        if (gx >= nx - wall_cells && vx > 0.0) {
          vx = 0.0;
          vy *= (1.0 - friction);
        }
        if (gy <= wall_cells && vy < 0.0) {
          vy = 0.0;
          vx *= (1.0 - friction);
        }
        if (gy >= ny - wall_cells && vy > 0.0) {
          vy = 0.0;
          vx *= (1.0 - friction);
        }
      }
      if (!ramps.empty()) {
        double wx = domain.lo_x + gx * dx, wy = domain.lo_y + gy * dx;
        for (const Segment& seg : ramps) {
          double ex = seg.bx - seg.ax, ey = seg.by - seg.ay;
          double len2 = ex * ex + ey * ey;
          double t = len2 > 0.0 ? ((wx - seg.ax) * ex + (wy - seg.ay) * ey) / len2 : 0.0;
          t = std::clamp(t, 0.0, 1.0);
          double cx = seg.ax + t * ex, cy = seg.ay + t * ey;
          double ddx = wx - cx, ddy = wy - cy;
          double dist = std::sqrt(ddx * ddx + ddy * ddy);
          if (dist < 1.5 * dx && dist > 1e-12)
            project_segment(ddx / dist, ddy / dist, vx, vy, friction, &vx, &vy);
        }
      }
      grid[g] = vx;
      grid[g + 1] = vy;
    }

  // G2P + advection
  for (int i = 0; i < n; ++i) {
    double px = state.pos[2 * i] - domain.lo_x, py = state.pos[2 * i + 1] - domain.lo_y;
    Bspline s = stencil(px, py, inv_dx);
    double vx = 0.0, vy = 0.0;
    double c00 = 0.0, c01 = 0.0, c10 = 0.0, c11 = 0.0;
    for (int jj = 0; jj < 3; ++jj)
      for (int ii = 0; ii < 3; ++ii) {
        int gx = s.base_x + ii, gy = s.base_y + jj;
        if (gx < 0 || gx >= gw || gy < 0 || gy >= gh) continue;
        std::size_t g = 3 * (static_cast<std::size_t>(gy) * gw + gx);
        if (grid[g + 2] <= 0.0) continue;
        double w = s.wx[ii] * s.wy[jj];
        double gvx = grid[g], gvy = grid[g + 1];
        double dposx = gx - px * inv_dx, dposy = gy - py * inv_dx;  // node units
        vx += w * gvx;
        vy += w * gvy;
        c00 += 4.0 * inv_dx * w * gvx * dposx * dx * inv_dx;
        c01 += 4.0 * inv_dx * w * gvx * dposy * dx * inv_dx;
        c10 += 4.0 * inv_dx * w * gvy * dposx * dx * inv_dx;
        c11 += 4.0 * inv_dx * w * gvy * dposy * dx * inv_dx;
      }
    MaterialParams mp = default_params(state.material[static_cast<std::size_t>(i)]);
    double damp = std::max(0.0, 1.0 - mp.damping * dt);
    state.vel[2 * i] = vx;
    state.vel[2 * i + 1] = vy;
    state.C[static_cast<std::size_t>(4 * i)] = c00 * damp;
    state.C[static_cast<std::size_t>(4 * i + 1)] = c01 * damp;
    state.C[static_cast<std::size_t>(4 * i + 2)] = c10 * damp;
    state.C[static_cast<std::size_t>(4 * i + 3)] = c11 * damp;
    double& J = state.J[static_cast<std::size_t>(i)];
    J *= 1.0 + dt * (c00 + c11);
    J = std::clamp(J, 0.4, 2.0);
    state.pos[2 * i] += dt * vx;
    state.pos[2 * i + 1] += dt * vy;
    double margin = 0.5 * dx;
    state.pos[2 * i] = std::clamp(state.pos[2 * i], domain.lo_x + margin, domain.hi_x - margin);
    state.pos[2 * i + 1] = std::clamp(state.pos[2 * i + 1], domain.lo_y + margin, domain.hi_y - margin);
  }
}

std::vector<double> boundary_particles(const Scenario& sc) {
  const Domain& dom = sc.domain;
  double dx = dom.cell_x();
  double spacing = sc.boundary_spacing_cells * dx;
  double off = 1.0 * dx;  // one cell inside the walls
  std::vector<double> out;
  auto add_line = [&](double ax, double ay, double bx, double by) {
    double len = std::hypot(bx - ax, by - ay);
    int count = std::max(1, static_cast<int>(std::floor(len / spacing))) + 1;
    for (int i = 0; i < count; ++i) {
      double t = static_cast<double>(i) / (count - 1 > 0 ? count - 1 : 1);
      out.push_back(ax + t * (bx - ax));
      out.push_back(ay + t * (by - ay));
    }
  };
  add_line(dom.lo_x + off, dom.lo_y + off, dom.hi_x - off, dom.lo_y + off);
  add_line(dom.lo_x + off, dom.hi_y - off, dom.hi_x - off, dom.hi_y - off);
  add_line(dom.lo_x + off, dom.lo_y + off, dom.lo_x + off, dom.hi_y - off);
  add_line(dom.hi_x - off, dom.lo_y + off, dom.hi_x - off, dom.hi_y - off);
  for (const Segment& seg : sc.ramps) add_line(seg.ax, seg.ay, seg.bx, seg.by);
  return out;
}

namespace {

// sim grid resolution giving roughly 2.5 seeded particles per occupied cell
int pick_grid(const Scenario& sc) {
  double area = 0.0;
  for (const auto& r : sc.regions)
    area += (r.hi_x - r.lo_x) * (r.hi_y - r.lo_y);
  if (area <= 0.0) return 32;
  double cell = std::sqrt(2.5 * area / sc.target_particles);
  int n = static_cast<int>(std::round((sc.domain.hi_x - sc.domain.lo_x) / cell));
  n = std::clamp(n, 16, 96);
  return (n / 8) * 8;
}

std::vector<double> seed_particles(const Scenario& sc, std::mt19937_64& rng,
                                   std::vector<Material>& materials) {
  double area = 0.0;
  for (const auto& r : sc.regions)
    area += (r.hi_x - r.lo_x) * (r.hi_y - r.lo_y);
  double spacing = std::sqrt(area / sc.target_particles);
  std::uniform_real_distribution<double> jitter(-0.25 * spacing, 0.25 * spacing);
  std::vector<double> pos;
  for (const auto& r : sc.regions) {
    int cols = std::max(1, static_cast<int>(std::floor((r.hi_x - r.lo_x) / spacing)));
    int rows = std::max(1, static_cast<int>(std::floor((r.hi_y - r.lo_y) / spacing)));
    for (int j = 0; j < rows; ++j)
      for (int i = 0; i < cols; ++i) {
        double x = r.lo_x + (i + 0.5) * (r.hi_x - r.lo_x) / cols + jitter(rng);
        double y = r.lo_y + (j + 0.5) * (r.hi_y - r.lo_y) / rows + jitter(rng);
        x = std::clamp(x, r.lo_x, r.hi_x);
        y = std::clamp(y, r.lo_y, r.hi_y);
        pos.push_back(x);
        pos.push_back(y);
        materials.push_back(r.material);
      }
  }
  return pos;
}

}  // namespace

Trajectory simulate(const Scenario& scenario) {
  Scenario sc = scenario;
  if (sc.frames < 2) throw TensorError("simulate: trajectory length must be >= 2");
  int n_grid = pick_grid(sc);
  sc.domain.width = n_grid;
  sc.domain.height = n_grid;
  sc.domain.validate();

  std::mt19937_64 rng(sc.seed);
  MpmState state;
  state.pos = seed_particles(sc, rng, state.material);
  int n = static_cast<int>(state.pos.size() / 2);
  if (n == 0) throw TensorError("simulate: scenario seeded no particles");
  state.vel.assign(static_cast<std::size_t>(n) * 2, 0.0);
  state.C.assign(static_cast<std::size_t>(n) * 4, 0.0);
  state.J.assign(static_cast<std::size_t>(n), 1.0);
  double area = 0.0;
  for (const auto& r : sc.regions)
    area += (r.hi_x - r.lo_x) * (r.hi_y - r.lo_y);
  state.particle_volume = area / n;
  state.particle_mass = state.particle_volume;  // rest density 1

  std::vector<double> bnd = boundary_particles(sc);
  int nb = static_cast<int>(bnd.size() / 2);

  Trajectory out;
  out.frames = sc.frames;
  out.count = n + nb;
  out.domain = sc.domain;
  out.gravity = sc.gravity;
  out.positions.reserve(static_cast<std::size_t>(sc.frames) * out.count * 2);
  out.material.reserve(static_cast<std::size_t>(out.count));
  for (Material m : state.material)
    out.material.push_back(static_cast<std::uint8_t>(m));
  for (int i = 0; i < nb; ++i)
    out.material.push_back(static_cast<std::uint8_t>(Material::boundary));

  auto store_frame = [&]() {
    for (int i = 0; i < 2 * n; ++i)
      out.positions.push_back(static_cast<float>(state.pos[static_cast<std::size_t>(i)]));
    for (int i = 0; i < 2 * nb; ++i)
      out.positions.push_back(static_cast<float>(bnd[static_cast<std::size_t>(i)]));
  };

  store_frame();
  for (int f = 1; f < sc.frames; ++f) {
    for (int s = 0; s < sc.substeps; ++s)
      mpm_step(state, sc.domain, sc.gravity, sc.ramps, sc.dt);
    store_frame();
  }
  return out;
}

Scenario make_dam_break(std::uint64_t seed, int particles, int frames) {
  Scenario sc;
  sc.kind = ScenarioKind::dam_break;
  sc.seed = seed;
  sc.target_particles = particles;
  sc.frames = frames;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> uw(0.22, 0.38), uh(0.40, 0.65);
  std::uniform_int_distribution<int> side(0, 1);
  double w = uw(rng), h = uh(rng);
  SeedRegion r;
  if (side(rng) == 0) {
    r = {0.06, 0.06, 0.06 + w, 0.06 + h, Material::water};
  } else {
    r = {0.94 - w, 0.06, 0.94, 0.06 + h, Material::water};
  }
  sc.regions.push_back(r);
  return sc;
}

Scenario make_blob_drop(std::uint64_t seed, int particles, int frames) {
  Scenario sc;
  sc.kind = ScenarioKind::blob_drop;
  sc.seed = seed;
  sc.target_particles = particles;
  sc.frames = frames;
  std::mt19937_64 rng(seed ^ 0x517cc1b727220a95ull);
  std::uniform_real_distribution<double> ux(0.25, 0.6), uy(0.5, 0.7), us(0.15, 0.25);
  double s = us(rng), x = ux(rng), y = uy(rng);
  sc.regions.push_back({x, y, x + s, y + s, Material::water});
  return sc;
}

Scenario make_ramps(std::uint64_t seed, int particles, int frames) {
  Scenario sc;
  sc.kind = ScenarioKind::ramps;
  sc.seed = seed;
  sc.target_particles = particles;
  sc.frames = frames;
  std::mt19937_64 rng(seed ^ 0x2545f4914f6cdd1dull);
  std::uniform_real_distribution<double> ux(0.2, 0.6), uy(0.55, 0.75), us(0.18, 0.26);
  std::uniform_real_distribution<double> ang(-0.5, 0.5), ry(0.3, 0.5);
  std::uniform_real_distribution<double> dx(-0.06, 0.06), uh(0.12, 0.22);
  double s = us(rng), x = ux(rng), y = uy(rng);
  sc.regions.push_back({x, y, x + s, y + s, Material::water});
  // keep the ramp under the falling block so every scene exercises the
  // water/ramp interaction
  double cx = std::clamp(x + s / 2 + dx(rng), 0.25, 0.75);
  double cy = ry(rng), a = ang(rng), half = uh(rng);
  sc.ramps.push_back({cx - half * std::cos(a), cy - half * std::sin(a),
                      cx + half * std::cos(a), cy + half * std::sin(a)});
  return sc;
}

}  // namespace nmpm::mpm
