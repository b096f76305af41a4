#pragma once

// Grid-to-grid processor: pixel-wise encoder MLP, U-Net trunk with skip
// connections, pixel-wise decoder MLP emitting m bundled velocity fields.
// Fully convolutional, so one parameter set serves any grid size whose
// H and W are divisible by 2^depth.

#include <map>
#include <random>
#include <string>
#include <vector>

#include "nmpm/nn.hpp"
#include "nmpm/tensor.hpp"

namespace nmpm {

struct UNetConfig {
  int depth = 3;          // downsampling blocks, factor 2 each
  int hidden = 64;        // trunk channels
  int kernel = 3;
  int mlp_width = 64;     // encoder/decoder MLP hidden width
  int mlp_layers = 3;     // hidden layers in each MLP
  int in_channels = 6;
  int bundle = 8;         // m
  int num_materials = 1;  // dynamic materials M

  int out_channels() const { return bundle * 2 * num_materials; }
  int divisor() const { return 1 << depth; }
};

template <typename T>
struct NetParams {
  UNetConfig config;
  std::vector<Tensor<T>> tensors;  // ordered, named
  std::vector<double> norm_mean;   // per input channel
  std::vector<double> norm_std;

  Tensor<T>& at(const std::string& name) {
    for (auto& t : tensors)
      if (t.name() == name) return t;
    throw TensorError("NetParams: no parameter named '" + name + "'");
  }
  const Tensor<T>& at(const std::string& name) const {
    return const_cast<NetParams*>(this)->at(name);
  }
  bool has(const std::string& name) const {
    for (auto& t : tensors)
      if (t.name() == name) return true;
    return false;
  }
  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }
  void zero_grads() {
    for (auto& t : tensors) t.zero_grad();
  }

  template <typename U>
  NetParams<U> cast() const {
    NetParams<U> out;
    out.config = config;
    out.norm_mean = norm_mean;
    out.norm_std = norm_std;
    for (const auto& t : tensors) {
      std::vector<U> v(t.size());
      for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = static_cast<U>(t.values()[i]);
      Tensor<U> u = Tensor<U>::from(std::move(v), t.shape(), t.requires_grad());
      u.set_name(t.name());
      out.tensors.push_back(std::move(u));
    }
    return out;
  }
};

namespace detail {

template <typename T>
Tensor<T> kaiming_conv(int cout, int cin, int k, std::mt19937_64& rng) {
  double fan_in = static_cast<double>(cin) * k * k;
  double limit = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<T> v(static_cast<std::size_t>(cout) * cin * k * k);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::from(std::move(v), {cout, cin, k, k}, true);
}

template <typename T>
void push_conv(NetParams<T>& p, const std::string& name, int cout, int cin,
               int k, std::mt19937_64& rng) {
  Tensor<T> w = kaiming_conv<T>(cout, cin, k, rng);
  w.set_name(name + ".w");
  p.tensors.push_back(std::move(w));
  Tensor<T> b = Tensor<T>::zeros({cout}, true);
  b.set_name(name + ".b");
  p.tensors.push_back(std::move(b));
}

}  // namespace detail

template <typename T>
NetParams<T> init_params(const UNetConfig& cfg, std::uint64_t seed) {
  NetParams<T> p;
  p.config = cfg;
  std::mt19937_64 rng(seed);
  int h = cfg.hidden, k = cfg.kernel, mw = cfg.mlp_width;

  // encoder MLP (1x1 convs): in -> mw (x mlp_layers hidden) -> hidden
  int prev = cfg.in_channels;
  for (int i = 0; i < cfg.mlp_layers; ++i) {
    detail::push_conv(p, "enc" + std::to_string(i), mw, prev, 1, rng);
    prev = mw;
  }
  detail::push_conv(p, "enc_out", h, prev, 1, rng);

  for (int d = 0; d < cfg.depth; ++d) {
    detail::push_conv(p, "down" + std::to_string(d) + "a", h, h, k, rng);
    detail::push_conv(p, "down" + std::to_string(d) + "b", h, h, k, rng);
  }
  detail::push_conv(p, "bottom_a", h, h, k, rng);
  detail::push_conv(p, "bottom_b", h, h, k, rng);
  for (int d = 0; d < cfg.depth; ++d) {
    detail::push_conv(p, "up" + std::to_string(d) + "a", h, 2 * h, k, rng);
    detail::push_conv(p, "up" + std::to_string(d) + "b", h, h, k, rng);
  }

  prev = h;
  for (int i = 0; i < cfg.mlp_layers; ++i) {
    detail::push_conv(p, "dec" + std::to_string(i), mw, prev, 1, rng);
    prev = mw;
  }
  detail::push_conv(p, "dec_out", cfg.out_channels(), prev, 1, rng);
  return p;
}

// x: [B,C_in,H,W] -> [B, m*2*M, H, W]
template <typename T>
Tensor<T> unet_forward(const NetParams<T>& params, const Tensor<T>& x) {
  const UNetConfig& cfg = params.config;
  if (x.rank() != 4) throw TensorError("unet_forward: input must be [B,C,H,W]");
  if (x.dim(1) != cfg.in_channels)
    throw TensorError("unet_forward: expected " + std::to_string(cfg.in_channels) +
                      " input channels, got " + std::to_string(x.dim(1)));
  int div = cfg.divisor();
  if (x.dim(2) % div || x.dim(3) % div)
    throw TensorError("unet_forward: H and W must be multiples of " +
                      std::to_string(div) + ", got " + std::to_string(x.dim(2)) +
                      "x" + std::to_string(x.dim(3)));

  auto conv = [&](const Tensor<T>& in, const std::string& name) {
    return conv2d(in, params.at(name + ".w"), params.at(name + ".b"));
  };

  Tensor<T> hcur = x;
  for (int i = 0; i < cfg.mlp_layers; ++i)
    hcur = relu(conv(hcur, "enc" + std::to_string(i)));
  hcur = conv(hcur, "enc_out");

  std::vector<Tensor<T>> skips;
  for (int d = 0; d < cfg.depth; ++d) {
    hcur = relu(conv(hcur, "down" + std::to_string(d) + "a"));
    hcur = relu(conv(hcur, "down" + std::to_string(d) + "b"));
    skips.push_back(hcur);
    hcur = avg_pool2(hcur);
  }
  hcur = relu(conv(hcur, "bottom_a"));
  hcur = relu(conv(hcur, "bottom_b"));
  for (int d = cfg.depth - 1; d >= 0; --d) {
    hcur = upsample_nearest2(hcur);
    hcur = concat_channels(hcur, skips[static_cast<std::size_t>(d)]);
    hcur = relu(conv(hcur, "up" + std::to_string(d) + "a"));
    hcur = relu(conv(hcur, "up" + std::to_string(d) + "b"));
  }

  for (int i = 0; i < cfg.mlp_layers; ++i)
    hcur = relu(conv(hcur, "dec" + std::to_string(i)));
  return conv(hcur, "dec_out");
}

}  // namespace nmpm
