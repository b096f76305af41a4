#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "grad_check.hpp"
#include "nmpm/transfer.hpp"

using namespace nmpm;

namespace {

Domain unit_domain(int w = 8, int h = 8) {
  Domain d;
  d.width = w;
  d.height = h;
  return d;
}

// brute-force binning oracle for nearest_mean
std::vector<double> nearest_oracle(const std::vector<double>& pos,
                                   const std::vector<double>& vel,
                                   const Domain& dom, double density_scale) {
  int W = dom.width, H = dom.height;
  std::size_t hw = static_cast<std::size_t>(H) * W;
  std::vector<double> out(3 * hw, 0.0);
  std::vector<int> count(hw, 0);
  int n = static_cast<int>(pos.size() / 2);
  for (int i = 0; i < n; ++i) {
    int cx = std::min(static_cast<int>(std::floor((pos[2 * i] - dom.lo_x) / dom.cell_x())),
                      W - 1);
    int cy = std::min(static_cast<int>(std::floor((pos[2 * i + 1] - dom.lo_y) / dom.cell_y())),
                      H - 1);
    cx = std::max(cx, 0);
    cy = std::max(cy, 0);
    int c = cy * W + cx;
    out[static_cast<std::size_t>(c)] += vel[2 * i];
    out[hw + c] += vel[2 * i + 1];
    count[static_cast<std::size_t>(c)] += 1;
  }
  for (std::size_t c = 0; c < hw; ++c) {
    if (count[c]) {
      out[c] /= count[c];
      out[hw + c] /= count[c];
    }
    out[2 * hw + c] = count[c] / density_scale;
  }
  return out;
}

}  // namespace

TEST_CASE("one particle at a cell center, nearest_mean") {
  Domain dom = unit_domain();
  // center of cell (2,3)
  double x = dom.lo_x + 2.5 * dom.cell_x(), y = dom.lo_y + 3.5 * dom.cell_y();
  auto p = Tensor<double>::from({x, y}, {1, 2});
  auto v = Tensor<double>::from({1.0, 2.0}, {1, 2});
  auto g = voxelize_p2g(p, v, dom, P2gMode::nearest_mean, 1.0);
  std::size_t hw = 64, c = 3 * 8 + 2;
  for (std::size_t i = 0; i < 3 * hw; ++i) {
    if (i == c)
      CHECK(g.values()[i] == doctest::Approx(1.0));
    else if (i == hw + c)
      CHECK(g.values()[i] == doctest::Approx(2.0));
    else if (i == 2 * hw + c)
      CHECK(g.values()[i] == doctest::Approx(1.0));
    else
      CHECK(g.values()[i] == doctest::Approx(0.0));
  }
}

TEST_CASE("k identical-velocity particles in one cell average to v") {
  Domain dom = unit_domain();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> jitter(0.0, dom.cell_x() * 0.99);
  for (int k = 1; k <= 5; ++k) {
    std::vector<double> pos, vel;
    for (int i = 0; i < k; ++i) {
      pos.push_back(dom.lo_x + 4 * dom.cell_x() + jitter(rng));
      pos.push_back(dom.lo_y + 4 * dom.cell_y() + jitter(rng));
      vel.push_back(0.7);
      vel.push_back(-0.2);
    }
    auto g = voxelize_p2g(Tensor<double>::from(pos, {k, 2}),
                          Tensor<double>::from(vel, {k, 2}), dom,
                          P2gMode::nearest_mean, 1.0);
    std::size_t c = 4 * 8 + 4;
    CHECK(g.values()[c] == doctest::Approx(0.7));
    CHECK(g.values()[64 + c] == doctest::Approx(-0.2));
    CHECK(g.values()[128 + c] == doctest::Approx(static_cast<double>(k)));
  }
}

TEST_CASE("nearest_mean matches the binning oracle on random clouds") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    Domain dom = unit_domain();
    int n = 100;
    std::vector<double> pos, vel;
    for (int i = 0; i < 2 * n; ++i) {
      pos.push_back(u(rng));
      vel.push_back(u(rng) - 0.5);
    }
    auto g = voxelize_p2g(Tensor<double>::from(pos, {n, 2}),
                          Tensor<double>::from(vel, {n, 2}), dom,
                          P2gMode::nearest_mean, 2.5);
    auto oracle = nearest_oracle(pos, vel, dom, 2.5);
    for (std::size_t i = 0; i < oracle.size(); ++i)
      CHECK(g.values()[i] == doctest::Approx(oracle[i]));
  }
}

TEST_CASE("particles outside the domain are reported by index") {
  Domain dom = unit_domain();
  auto p = Tensor<double>::from({0.5, 0.5, 1.7, 0.5}, {2, 2});
  auto v = Tensor<double>::zeros({2, 2});
  try {
    voxelize_p2g(p, v, dom, P2gMode::nearest_mean, 1.0);
    FAIL("expected throw");
  } catch (const TensorError& e) {
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
}

TEST_CASE("mass accounting is exact for nearest_mean") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Domain dom = unit_domain(16, 16);
  int n = 257;
  std::vector<double> pos(2 * n);
  for (auto& x : pos) x = u(rng);
  double scale = 3.0;
  auto g = voxelize_p2g(Tensor<double>::from(pos, {n, 2}),
                        Tensor<double>::zeros({n, 2}), dom,
                        P2gMode::nearest_mean, scale);
  double total = 0.0;
  for (int c = 0; c < 16 * 16; ++c) total += g.values()[2 * 16 * 16 + c] * scale;
  CHECK(total == doctest::Approx(static_cast<double>(n)));
}

TEST_CASE("splat partition of unity and momentum accounting") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(0.001, 0.999);
  Domain dom = unit_domain(12, 10);
  int n = 200;
  std::vector<double> pos(2 * n), vel(2 * n);
  for (auto& x : pos) x = u(rng);
  for (auto& x : vel) x = u(rng) - 0.5;
  auto g = voxelize_p2g(Tensor<double>::from(pos, {n, 2}),
                        Tensor<double>::from(vel, {n, 2}), dom,
                        P2gMode::bilinear_splat, 1.0);
  std::size_t hw = 120;
  // total splat weight equals N (partition of unity per particle)
  double wtot = 0.0, px = 0.0, py = 0.0, vx = 0.0, vy = 0.0;
  for (std::size_t c = 0; c < hw; ++c) {
    double w = g.values()[2 * hw + c];
    wtot += w;
    px += w * g.values()[c];
    py += w * g.values()[hw + c];
  }
  for (int i = 0; i < n; ++i) {
    vx += vel[2 * i];
    vy += vel[2 * i + 1];
  }
  CHECK(wtot == doctest::Approx(static_cast<double>(n)).epsilon(1e-6));
  CHECK(px == doctest::Approx(vx).epsilon(1e-5));
  CHECK(py == doctest::Approx(vy).epsilon(1e-5));
}

TEST_CASE("g2p at a node and at a cell-center") {
  Domain dom = unit_domain(4, 4);
  std::vector<double> gv(3 * 16, 0.0);
  // channel 0 field: value = node index
  for (int i = 0; i < 16; ++i) gv[static_cast<std::size_t>(i)] = i;
  auto grid = Tensor<double>::from(gv, {3, 4, 4});
  // exactly at node (1,2): value = 2*4+1 = 9
  double nx = dom.lo_x + 1.5 * dom.cell_x(), ny = dom.lo_y + 2.5 * dom.cell_y();
  auto out = g2p_bilinear(grid, 0, 1, Tensor<double>::from({nx, ny}, {1, 2}), dom);
  CHECK(out.values()[0] == doctest::Approx(9.0));
  // midpoint of 4 nodes (1,1),(2,1),(1,2),(2,2): mean of 5,6,9,10 = 7.5
  double mx = dom.lo_x + 2.0 * dom.cell_x(), my = dom.lo_y + 2.0 * dom.cell_y();
  auto out2 = g2p_bilinear(grid, 0, 1, Tensor<double>::from({mx, my}, {1, 2}), dom);
  CHECK(out2.values()[0] == doctest::Approx(7.5));
}

TEST_CASE("g2p matches the closed-form two-axis interpolation") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Domain dom = unit_domain(8, 8);
  std::vector<double> gv(2 * 64);
  for (auto& x : gv) x = u(rng) - 0.5;
  auto grid = Tensor<double>::from(gv, {2, 8, 8});
  for (int trial = 0; trial < 50; ++trial) {
    // interior positions (all 4 neighbors in-grid)
    double x = dom.lo_x + (0.5 + 7.0 * u(rng)) * dom.cell_x();
    double y = dom.lo_y + (0.5 + 7.0 * u(rng)) * dom.cell_y();
    auto out = g2p_bilinear(grid, 0, 1, Tensor<double>::from({x, y}, {1, 2}), dom);
    double ux = (x - dom.lo_x) / dom.cell_x() - 0.5;
    double uy = (y - dom.lo_y) / dom.cell_y() - 0.5;
    int i0 = static_cast<int>(std::floor(ux)), j0 = static_cast<int>(std::floor(uy));
    double fx = ux - i0, fy = uy - j0;
    for (int ch = 0; ch < 2; ++ch) {
      auto at = [&](int i, int j) { return gv[static_cast<std::size_t>(ch) * 64 + j * 8 + i]; };
      double a = at(i0, j0) * (1 - fx) + at(i0 + 1, j0) * fx;
      double b = at(i0, j0 + 1) * (1 - fx) + at(i0 + 1, j0 + 1) * fx;
      CHECK(std::abs(out.values()[static_cast<std::size_t>(ch)] -
                     (a * (1 - fy) + b * fy)) < 1e-6);
    }
  }
}

TEST_CASE("g2p reproduces linear fields exactly (round trip)") {
  Domain dom = unit_domain(8, 8);
  std::vector<double> gv(2 * 64);
  for (int j = 0; j < 8; ++j)
    for (int i = 0; i < 8; ++i) {
      double nx = dom.lo_x + (i + 0.5) * dom.cell_x();
      double ny = dom.lo_y + (j + 0.5) * dom.cell_y();
      gv[static_cast<std::size_t>(j * 8 + i)] = 2.0 * nx - 0.5 * ny + 0.1;
      gv[static_cast<std::size_t>(64 + j * 8 + i)] = -nx + 3.0 * ny;
    }
  auto grid = Tensor<double>::from(gv, {2, 8, 8});
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    double x = dom.lo_x + (0.5 + 7.0 * u(rng)) * dom.cell_x();
    double y = dom.lo_y + (0.5 + 7.0 * u(rng)) * dom.cell_y();
    auto out = g2p_bilinear(grid, 0, 1, Tensor<double>::from({x, y}, {1, 2}), dom);
    CHECK(std::abs(out.values()[0] - (2.0 * x - 0.5 * y + 0.1)) < 1e-6);
    CHECK(std::abs(out.values()[1] - (-x + 3.0 * y)) < 1e-6);
  }
}

TEST_CASE("g2p is differentiable w.r.t. grid and positions") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Domain dom = unit_domain(6, 6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> gv(2 * 36), pv(8);
    for (auto& x : gv) x = u(rng) - 0.5;
    for (int i = 0; i < 4; ++i) {
      // keep away from tap-switch boundaries so fd is valid
      pv[2 * i] = dom.lo_x + (0.55 + (i % 2) + 3.4 * u(rng) * 0) * dom.cell_x() +
                  3.0 * u(rng) * dom.cell_x() * 0.27;
      pv[2 * i + 1] = dom.lo_y + (0.55 + 3.0 * u(rng) * 0.27) * dom.cell_y() +
                      dom.cell_y() * (i % 3);
    }
    auto grid = Tensor<double>::from(gv, {2, 6, 6}, true);
    auto pos = Tensor<double>::from(pv, {4, 2}, true);
    auto rep = testutil::fd_check<double>(
        {grid, pos}, [dom](std::vector<Tensor<double>>& in) {
          auto out = g2p_bilinear(in[0], 0, 1, in[1], dom);
          return sum(mul(out, out));
        });
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("splat is differentiable w.r.t. positions and velocities") {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  Domain dom = unit_domain(6, 6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> pv(10), vv(10);
    for (auto& x : pv) x = u(rng);
    for (auto& x : vv) x = u(rng) - 0.5;
    auto pos = Tensor<double>::from(pv, {5, 2}, true);
    auto vel = Tensor<double>::from(vv, {5, 2}, true);
    auto rep = testutil::fd_check<double>(
        {pos, vel}, [dom](std::vector<Tensor<double>>& in) {
          auto g = voxelize_p2g(in[0], in[1], dom, P2gMode::bilinear_splat, 2.0);
          return sum(mul(g, g));
        },
        1e-6);
    CHECK(rep.max_rel_err < 1e-3);
  }
}

TEST_CASE("euler step basics") {
  auto p = Tensor<double>::from({0.0, 0.0}, {1, 2});
  auto v = Tensor<double>::from({1.0, 0.0}, {1, 2});
  auto p1 = euler_step(p, v, 0.1);
  CHECK(p1.values()[0] == doctest::Approx(0.1));
  CHECK(p1.values()[1] == doctest::Approx(0.0));

  // zero velocity leaves positions unchanged
  auto p2 = euler_step(p, Tensor<double>::zeros({1, 2}), 0.5);
  CHECK(p2.values() == p.values());

  // two half-steps equal one full step under constant velocity
  auto half = euler_step(euler_step(p, v, 0.05), v, 0.05);
  auto full = euler_step(p, v, 0.1);
  CHECK(half.values()[0] == doctest::Approx(full.values()[0]));
}

TEST_CASE("velocities_from_positions") {
  // static trajectory -> zeros; uniform drift -> constant
  int T = 5, N = 3;
  std::vector<float> staticTraj(static_cast<std::size_t>(T) * N * 2, 0.25f);
  auto v = velocities_from_positions(staticTraj, T, N);
  for (float x : v) CHECK(x == 0.0f);

  std::vector<float> drift(static_cast<std::size_t>(T) * N * 2);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < N; ++i) {
      drift[static_cast<std::size_t>(t) * N * 2 + 2 * i] = 0.1f * t;
      drift[static_cast<std::size_t>(t) * N * 2 + 2 * i + 1] = -0.2f * t;
    }
  auto vd = velocities_from_positions(drift, T, N);
  for (int t = 0; t < T - 1; ++t)
    for (int i = 0; i < N; ++i) {
      CHECK(vd[static_cast<std::size_t>(t) * N * 2 + 2 * i] == doctest::Approx(0.1f));
      CHECK(vd[static_cast<std::size_t>(t) * N * 2 + 2 * i + 1] == doctest::Approx(-0.2f));
    }

  std::vector<float> tooShort(static_cast<std::size_t>(N) * 2);
  CHECK_THROWS_AS(velocities_from_positions(tooShort, 1, N), TensorError);
}

TEST_CASE("clamp_to_domain") {
  Domain dom = unit_domain();
  auto p = Tensor<double>::from({0.5, 0.5, 1.4, -0.2}, {2, 2});
  auto c = clamp_to_domain(p, dom, 0.01);
  CHECK(c.values()[0] == doctest::Approx(0.5));
  CHECK(c.values()[1] == doctest::Approx(0.5));
  CHECK(c.values()[2] == doctest::Approx(0.99));
  CHECK(c.values()[3] == doctest::Approx(0.01));
  // idempotence
  auto cc = clamp_to_domain(c, dom, 0.01);
  CHECK(cc.values() == c.values());
}
