#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "lmprior/numerics/distribution.hpp"
#include "lmprior/numerics/ops.hpp"

namespace lmprior::objectives {

using numerics::Distribution;
using numerics::Tensor;
using numerics::Var;

enum class Objective { mle, ls, prior, prior_ls, postnorm, postnorm_ls };

Objective parse_objective(std::string_view name);  // ConfigError on unknown names
std::string to_string(Objective o);
bool uses_lm(Objective o);
bool uses_smoothing(Objective o);
bool is_postnorm(Objective o);

struct ObjectiveConfig {
  Objective objective = Objective::prior;
  double lambda = 0.5;
  double tau = 2.0;
  double alpha = 0.1;  // only for the *ls objectives
  void validate() const;
  // Smoothing actually applied to the MT term.
  double effective_alpha() const { return uses_smoothing(objective) ? alpha : 0.0; }
};

// total = mt_term + lambda * kl_term. Terms are per-token means.
template <typename T>
struct LossBreakdown {
  Var<T> total;
  double mt_term = 0.0;
  double kl_term = 0.0;
  std::size_t token_count = 0;
};

// All losses below take row-major logits [rows, K] and per-row gold ids with
// a mask; masked rows are ignored and the mean runs over unmasked rows.
// A fully masked input is an InvalidInput error.

template <typename T>
LossBreakdown<T> mle_loss(const Var<T>& logits, std::span<const int> gold,
                          std::span<const std::uint8_t> mask);

// Cross-entropy against y(1 - alpha) + alpha/K.
template <typename T>
LossBreakdown<T> label_smoothed_loss(const Var<T>& logits, std::span<const int> gold,
                                     std::span<const std::uint8_t> mask, double alpha);

// MT term at temperature 1 (smoothed when alpha > 0) plus
// lambda * tau^2 * mean KL(p_LM(tau) || p_TM(tau)). lm_logits is a constant,
// so nothing flows back into the LM. lambda = 0 skips the KL term entirely.
template <typename T>
LossBreakdown<T> lm_prior_loss(const Var<T>& tm_logits, const Tensor<T>& lm_logits,
                               std::span<const int> gold, std::span<const std::uint8_t> mask,
                               double lambda, double tau, double alpha = 0.0);

// NLL of gold under softmax(log p_TM + log p_LM).
template <typename T>
LossBreakdown<T> postnorm_train_loss(const Var<T>& tm_logits, const Tensor<T>& lm_logits,
                                     std::span<const int> gold, std::span<const std::uint8_t> mask,
                                     double alpha = 0.0);

// Dispatch on the configured objective; lm_logits may be null for mle/ls.
template <typename T>
LossBreakdown<T> compute_loss(const ObjectiveConfig& config, const Var<T>& tm_logits,
                              const Tensor<T>* lm_logits, std::span<const int> gold,
                              std::span<const std::uint8_t> mask);

// y(1 - alpha) + alpha/K around a gold index.
Distribution label_smoothed_targets(std::size_t gold, double alpha, std::size_t k);

// Normalized elementwise product (log inputs floored).
Distribution postnorm_combine(const Distribution& tm, const Distribution& lm);

}  // namespace lmprior::objectives
