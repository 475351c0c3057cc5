#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "lmprior/numerics/autodiff.hpp"

namespace lmprior::trainer {

using numerics::GradientMap;
using numerics::ParameterSet;
using numerics::Tensor;

// base * min(step/warmup, sqrt(warmup/step)); warmup = 0 gives a constant rate.
double lr_schedule(std::size_t step, double base = 2e-4, std::size_t warmup = 8000);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Bias-corrected update. NumericalError names the first non-finite gradient.
  void step(ParameterSet<T>& params, const GradientMap<T>& grads, double lr);

  std::uint64_t steps() const { return steps_; }
  const std::map<std::string, Tensor<T>>& first_moments() const { return m_; }
  const std::map<std::string, Tensor<T>>& second_moments() const { return v_; }
  void restore(std::uint64_t steps, std::map<std::string, Tensor<T>> m, std::map<std::string, Tensor<T>> v);

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Tensor<T>> m_, v_;
};

template <typename T>
double global_norm(const GradientMap<T>& grads);

// Rescales every gradient by max_norm / norm when norm exceeds max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_global_norm(GradientMap<T>& grads, double max_norm);

}  // namespace lmprior::trainer
