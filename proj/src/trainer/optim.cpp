#include "lmprior/trainer/optim.hpp"

#include <algorithm>
#include <cmath>

#include "lmprior/errors.hpp"

namespace lmprior::trainer {

double lr_schedule(std::size_t step, double base, std::size_t warmup) {
  if (step == 0) throw InvalidInput("learning-rate steps start at 1");
  if (warmup == 0) return base;
  const double s = static_cast<double>(step), w = static_cast<double>(warmup);
  return base * std::min(s / w, std::sqrt(w / s));
}

template <typename T>
void Adam<T>::step(ParameterSet<T>& params, const GradientMap<T>& grads, double lr) {
  for (const auto& [name, g] : grads)
    for (T x : g.values())
      if (!std::isfinite(static_cast<double>(x)))
        throw NumericalError("non-finite gradient in parameter '" + name + "' at step " +
                             std::to_string(steps_ + 1));
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (auto& [name, var] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const auto& g = it->second;
    auto& w = var.mutable_value();
    if (g.shape() != w.shape()) throw InvalidInput("gradient shape mismatch for " + name);
    auto& m = m_.try_emplace(name, w.shape()).first->second;
    auto& v = v_.try_emplace(name, w.shape()).first->second;
    T* wp = w.data();
    T* mp = m.data();
    T* vp = v.data();
    const T* gp = g.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = gp[i];
      const double mi = b1 * mp[i] + (1.0 - b1) * gi;
      const double vi = b2 * vp[i] + (1.0 - b2) * gi * gi;
      mp[i] = static_cast<T>(mi);
      vp[i] = static_cast<T>(vi);
      wp[i] = static_cast<T>(wp[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + config_.eps));
    }
  }
}

template <typename T>
void Adam<T>::restore(std::uint64_t steps, std::map<std::string, Tensor<T>> m, std::map<std::string, Tensor<T>> v) {
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

template <typename T>
double global_norm(const GradientMap<T>& grads) {
  double total = 0.0;
  for (const auto& [name, g] : grads)
    for (T x : g.values()) total += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(total);
}

template <typename T>
double clip_global_norm(GradientMap<T>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [name, g] : grads)
      for (auto& x : g.values()) x = static_cast<T>(x * factor);
  }
  return norm;
}

template class Adam<float>;
template class Adam<double>;
template double global_norm<float>(const GradientMap<float>&);
template double global_norm<double>(const GradientMap<double>&);
template double clip_global_norm<float>(GradientMap<float>&, double);
template double clip_global_norm<double>(GradientMap<double>&, double);

}  // namespace lmprior::trainer
