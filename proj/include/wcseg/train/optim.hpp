#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "wcseg/tensor/tensor.hpp"

namespace wcseg {

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;  // aligned with the parameter list
  std::uint64_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::uint64_t skipped = 0;  // steps rejected for non-finite gradients
};

/// Bias-corrected Adam. Returns false and leaves everything untouched when any gradient is non-finite.
template <typename T>
bool adam_step(std::vector<Tensor<T>>& params, const std::vector<std::vector<T>>& grads, AdamState<T>& s,
               double lr) {
  if (params.size() != grads.size()) throw ValidationError("adam_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].numel() != grads[i].size()) throw ValidationError("adam_step: gradient shape mismatch");
  if (s.m.empty()) {
    s.m.resize(params.size());
    s.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      s.m[i].assign(params[i].numel(), T(0));
      s.v[i].assign(params[i].numel(), T(0));
    }
  }
  if (s.m.size() != params.size()) throw ValidationError("adam_step: state does not match parameters");
  for (const auto& g : grads)
    for (T x : g)
      if (!std::isfinite(static_cast<double>(x))) {
        ++s.skipped;
        return false;
      }
  ++s.t;
  const double c1 = 1 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1 - std::pow(s.beta2, static_cast<double>(s.t));
  const T b1 = static_cast<T>(s.beta1), b2 = static_cast<T>(s.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* w = params[i].data().data();
    T* m = s.m[i].data();
    T* v = s.v[i].data();
    const T* g = grads[i].data();
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      m[j] = b1 * m[j] + (1 - b1) * g[j];
      v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
      const double mh = m[j] / c1, vh = v[j] / c2;
      w[j] = static_cast<T>(w[j] - lr * mh / (std::sqrt(vh) + s.eps));
    }
  }
  return true;
}

/// Uses each parameter's accumulated gradient (zeros where none was produced).
template <typename T>
bool adam_step(std::vector<Tensor<T>>& params, AdamState<T>& s, double lr) {
  std::vector<std::vector<T>> grads;
  grads.reserve(params.size());
  for (auto& p : params) {
    if (p.has_grad())
      grads.emplace_back(p.grad().begin(), p.grad().end());
    else
      grads.emplace_back(p.numel(), T(0));
  }
  return adam_step(params, grads, s, lr);
}

enum class Schedule { Constant, Exponential };

inline std::string schedule_name(Schedule s) { return s == Schedule::Constant ? "constant" : "exponential"; }
inline Schedule parse_schedule(const std::string& s) {
  if (s == "constant") return Schedule::Constant;
  if (s == "exponential") return Schedule::Exponential;
  throw ValidationError("unknown schedule '" + s + "' (expected constant|exponential)");
}

struct LrSchedule {
  double learning_rate = 2e-3;
  Schedule schedule = Schedule::Constant;
  double decay_factor = 0.9;
  std::size_t restart_period = 20;

  void validate() const {
    if (!(learning_rate > 0)) throw ValidationError("learning_rate must be > 0");
    if (!(decay_factor > 0 && decay_factor <= 1)) throw ValidationError("decay_factor must lie in (0, 1]");
    if (restart_period < 1) throw ValidationError("restart_period must be >= 1");
  }
};

/// Constant, or lr * decay^(epoch mod restart_period); restarts touch the rate only.
inline double lr_schedule(std::size_t epoch, const LrSchedule& s) {
  if (s.schedule == Schedule::Constant) return s.learning_rate;
  return s.learning_rate * std::pow(s.decay_factor, static_cast<double>(epoch % s.restart_period));
}

}  // namespace wcseg
