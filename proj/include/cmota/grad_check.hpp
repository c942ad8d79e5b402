#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cmota/rng.hpp"
#include "cmota/tensor.hpp"

namespace cmota::nn {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  size_t worst_index = 0;
  size_t probes = 0;
};

// Compares reverse-mode gradients of a scalar-valued composite against central
// finite differences with step h. Every parameter tensor is probed; when
// probes_per_tensor > 0 a deterministic random subset of coordinates per
// tensor is used instead of all of them (the full model is too expensive to
// probe exhaustively). Relative error is |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& f,
                           const std::vector<std::pair<std::string, Tensor<T>>>& params, double h = 1e-5,
                           int probes_per_tensor = 0, uint64_t probe_seed = 17) {
  for (auto& [name, p] : params) {
    const_cast<Tensor<T>&>(p).zero_grad();
  }
  Tensor<T> loss = f();
  backward(loss);

  GradCheckResult result;
  Rng rng(probe_seed);
  for (auto& [name, p] : params) {
    Tensor<T>& param = const_cast<Tensor<T>&>(p);
    const size_t n = param.numel();
    std::vector<size_t> coords;
    if (probes_per_tensor <= 0 || static_cast<size_t>(probes_per_tensor) >= n) {
      coords.resize(n);
      for (size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (int i = 0; i < probes_per_tensor; ++i) coords.push_back(rng.next_below(n));
    }
    for (size_t ix : coords) {
      const T saved = (*param.data)[ix];
      (*param.data)[ix] = saved + static_cast<T>(h);
      const double up = static_cast<double>([&] {
        NoGradGuard ng;
        return f().item();
      }());
      (*param.data)[ix] = saved - static_cast<T>(h);
      const double down = static_cast<double>([&] {
        NoGradGuard ng;
        return f().item();
      }());
      (*param.data)[ix] = saved;
      const double g_fd = (up - down) / (2.0 * h);
      const double g_ad = param.grad ? static_cast<double>((*param.grad)[ix]) : 0.0;
      const double rel = std::abs(g_ad - g_fd) / std::max({1.0, std::abs(g_ad), std::abs(g_fd)});
      ++result.probes;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = name;
        result.worst_index = ix;
      }
    }
  }
  return result;
}

}  // namespace cmota::nn
