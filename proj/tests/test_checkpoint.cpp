#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <random>

#include "grad_check.hpp"
#include "nmpm/checkpoint.hpp"

using namespace nmpm;

namespace {
std::string temp_path(const char* name) {
  return std::string("/tmp/nmpm_test_") + name;
}
}  // namespace

TEST_CASE("tensor round trip") {
  std::mt19937_64 rng(5);
  auto a = Tensor<float>::from(testutil::random_vec<float>(24, rng), {2, 3, 4});
  a.set_name("layer.w");
  auto b = Tensor<float>::from(testutil::random_vec<float>(3, rng), {3});
  b.set_name("layer.b");
  std::string path = temp_path("ckpt_rt.bin");
  save_tensors<float>(path, {a, b});
  auto loaded = load_tensors<float>(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].name() == "layer.w");
  CHECK(loaded[0].shape() == std::vector<int>{2, 3, 4});
  CHECK(loaded[0].values() == a.values());
  CHECK(loaded[1].values() == b.values());
  std::remove(path.c_str());
}

TEST_CASE("f32 checkpoint loads into f64 tensors") {
  auto a = Tensor<float>::from({1.5f, -2.25f}, {2});
  a.set_name("x");
  std::string path = temp_path("ckpt_cast.bin");
  save_tensors<float>(path, {a});
  auto loaded = load_tensors<double>(path);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].values()[0] == doctest::Approx(1.5));
  CHECK(loaded[0].values()[1] == doctest::Approx(-2.25));
  std::remove(path.c_str());
}

TEST_CASE("bad magic is rejected") {
  std::string path = temp_path("ckpt_bad.bin");
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTACKPTxxxxxxxxxxxx";
  }
  CHECK_THROWS_AS(load_tensors<float>(path), TensorError);
  std::remove(path.c_str());
}

TEST_CASE("missing file is rejected") {
  CHECK_THROWS_AS(load_tensors<float>("/tmp/nmpm_no_such_file.bin"), TensorError);
}
