#pragma once

// Central finite-difference oracle for gradient tests. Independent of the
// autodiff path: it only calls the forward function.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "nmpm/tensor.hpp"

namespace testutil {

struct FdReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
};

// f maps the current contents of `inputs` to a scalar loss tensor. For every
// entry of every input with requires_grad, compares autodiff gradient against
// (f(x+h) - f(x-h)) / 2h.
template <typename T>
FdReport fd_check(std::vector<nmpm::Tensor<T>> inputs,
                  const std::function<nmpm::Tensor<T>(std::vector<nmpm::Tensor<T>>&)>& f,
                  double h = 1e-5, double floor_scale = 1e-6) {
  for (auto& in : inputs) in.zero_grad();
  nmpm::Tensor<T> loss = f(inputs);
  loss.backward();
  std::vector<std::vector<T>> grads;
  for (auto& in : inputs)
    grads.push_back(in.requires_grad() ? in.grad() : std::vector<T>());

  FdReport rep;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].requires_grad()) continue;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      T orig = inputs[k].values()[i];
      inputs[k].values()[i] = orig + static_cast<T>(h);
      double up = static_cast<double>(f(inputs).item());
      inputs[k].values()[i] = orig - static_cast<T>(h);
      double dn = static_cast<double>(f(inputs).item());
      inputs[k].values()[i] = orig;
      double fd = (up - dn) / (2.0 * h);
      double ad = static_cast<double>(grads[k][i]);
      double abs_err = std::abs(fd - ad);
      double denom = std::max(std::max(std::abs(fd), std::abs(ad)), floor_scale);
      rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
      rep.max_rel_err = std::max(rep.max_rel_err, abs_err / denom);
    }
  }
  return rep;
}

template <typename T>
std::vector<T> random_vec(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                          double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(d(rng));
  return v;
}

}  // namespace testutil
