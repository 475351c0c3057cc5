#include "lmprior/objectives/losses.hpp"

#include <cmath>

#include "lmprior/errors.hpp"

namespace lmprior::objectives {

namespace {

template <typename T>
std::vector<T> mean_weights(std::span<const std::uint8_t> mask, std::size_t& count) {
  count = 0;
  for (auto m : mask) count += m != 0;
  if (count == 0) throw InvalidInput("batch has no target tokens (all padding)");
  std::vector<T> w(mask.size());
  const T inv = T(1) / static_cast<T>(count);
  for (std::size_t i = 0; i < mask.size(); ++i) w[i] = mask[i] ? inv : T(0);
  return w;
}

template <typename T>
void check_shapes(const Var<T>& logits, std::span<const int> gold, std::span<const std::uint8_t> mask) {
  if (gold.size() != logits.rows() || mask.size() != logits.rows())
    throw InvalidInput("gold/mask length does not match logits rows");
}

template <typename T>
void check_lm(const Var<T>& tm_logits, const Tensor<T>& lm_logits) {
  if (lm_logits.cols() != tm_logits.cols())
    throw ConfigError("LM vocabulary size " + std::to_string(lm_logits.cols()) +
                      " differs from TM vocabulary size " + std::to_string(tm_logits.cols()));
  if (lm_logits.rows() != tm_logits.rows())
    throw InvalidInput("LM and TM logits cover different positions");
}

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("label smoothing alpha must lie in [0, 1)");
}

}  // namespace

Objective parse_objective(std::string_view name) {
  if (name == "mle") return Objective::mle;
  if (name == "ls") return Objective::ls;
  if (name == "prior") return Objective::prior;
  if (name == "prior+ls") return Objective::prior_ls;
  if (name == "postnorm") return Objective::postnorm;
  if (name == "postnorm+ls") return Objective::postnorm_ls;
  throw ConfigError("unknown objective '" + std::string(name) +
                    "' (expected mle, ls, prior, prior+ls, postnorm, postnorm+ls)");
}

std::string to_string(Objective o) {
  switch (o) {
    case Objective::mle: return "mle";
    case Objective::ls: return "ls";
    case Objective::prior: return "prior";
    case Objective::prior_ls: return "prior+ls";
    case Objective::postnorm: return "postnorm";
    case Objective::postnorm_ls: return "postnorm+ls";
  }
  return "?";
}

bool uses_lm(Objective o) { return o != Objective::mle && o != Objective::ls; }
bool uses_smoothing(Objective o) {
  return o == Objective::ls || o == Objective::prior_ls || o == Objective::postnorm_ls;
}
bool is_postnorm(Objective o) { return o == Objective::postnorm || o == Objective::postnorm_ls; }

void ObjectiveConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0");
  if (!(tau >= 1.0) || !std::isfinite(tau)) throw ConfigError("tau must be finite and >= 1");
  check_alpha(alpha);
}

template <typename T>
LossBreakdown<T> mle_loss(const Var<T>& logits, std::span<const int> gold,
                          std::span<const std::uint8_t> mask) {
  return label_smoothed_loss(logits, gold, mask, 0.0);
}

template <typename T>
LossBreakdown<T> label_smoothed_loss(const Var<T>& logits, std::span<const int> gold,
                                     std::span<const std::uint8_t> mask, double alpha) {
  check_alpha(alpha);
  check_shapes(logits, gold, mask);
  LossBreakdown<T> out;
  const auto w = mean_weights<T>(mask, out.token_count);
  out.total = numerics::smoothed_nll(numerics::log_softmax(logits), gold, std::span<const T>(w),
                                     static_cast<T>(alpha));
  out.mt_term = static_cast<double>(out.total.item());
  return out;
}

template <typename T>
LossBreakdown<T> lm_prior_loss(const Var<T>& tm_logits, const Tensor<T>& lm_logits,
                               std::span<const int> gold, std::span<const std::uint8_t> mask,
                               double lambda, double tau, double alpha) {
  check_lm(tm_logits, lm_logits);
  auto out = label_smoothed_loss(tm_logits, gold, mask, alpha);
  if (lambda == 0.0) return out;
  if (!(tau >= 1.0)) throw ConfigError("tau must be >= 1");
  const auto w = mean_weights<T>(mask, out.token_count);
  Tensor<T> lm_probs;
  {
    numerics::NoGradGuard guard;
    lm_probs = numerics::softmax(Var<T>::constant(lm_logits), static_cast<T>(tau)).value();
  }
  auto kl = numerics::kl_from_constant(lm_probs, numerics::log_softmax(tm_logits, static_cast<T>(tau)),
                                       std::span<const T>(w));
  out.kl_term = tau * tau * static_cast<double>(kl.item());
  out.total = numerics::add(out.total, numerics::scale(kl, static_cast<T>(lambda * tau * tau)));
  return out;
}

template <typename T>
LossBreakdown<T> postnorm_train_loss(const Var<T>& tm_logits, const Tensor<T>& lm_logits,
                                     std::span<const int> gold, std::span<const std::uint8_t> mask,
                                     double alpha) {
  check_lm(tm_logits, lm_logits);
  Tensor<T> lm_logp;
  {
    numerics::NoGradGuard guard;
    lm_logp = numerics::log_softmax(Var<T>::constant(lm_logits)).value();
  }
  auto combined = numerics::add(numerics::log_softmax(tm_logits), Var<T>::constant(std::move(lm_logp)));
  return label_smoothed_loss(combined, gold, mask, alpha);
}

template <typename T>
LossBreakdown<T> compute_loss(const ObjectiveConfig& config, const Var<T>& tm_logits,
                              const Tensor<T>* lm_logits, std::span<const int> gold,
                              std::span<const std::uint8_t> mask) {
  const double alpha = config.effective_alpha();
  if (!uses_lm(config.objective)) return label_smoothed_loss(tm_logits, gold, mask, alpha);
  if (!lm_logits) {
    if (!is_postnorm(config.objective) && config.lambda == 0.0)
      return label_smoothed_loss(tm_logits, gold, mask, alpha);
    throw ConfigError("objective " + to_string(config.objective) + " needs LM logits");
  }
  if (is_postnorm(config.objective)) return postnorm_train_loss(tm_logits, *lm_logits, gold, mask, alpha);
  return lm_prior_loss(tm_logits, *lm_logits, gold, mask, config.lambda, config.tau, alpha);
}

Distribution label_smoothed_targets(std::size_t gold, double alpha, std::size_t k) {
  check_alpha(alpha);
  if (gold >= k) throw InvalidInput("gold index outside the vocabulary");
  std::vector<double> p(k, alpha / static_cast<double>(k));
  p[gold] = (1.0 - alpha) + alpha / static_cast<double>(k);
  return Distribution(std::move(p));
}

Distribution postnorm_combine(const Distribution& tm, const Distribution& lm) {
  if (tm.size() != lm.size()) throw ConfigError("TM and LM distributions differ in vocabulary size");
  auto a = tm.log_probs();
  const auto b = lm.log_probs();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return Distribution::from_log_scores(a);
}

#define LMPRIOR_INSTANTIATE(T)                                                                      \
  template LossBreakdown<T> mle_loss<T>(const Var<T>&, std::span<const int>,                        \
                                        std::span<const std::uint8_t>);                             \
  template LossBreakdown<T> label_smoothed_loss<T>(const Var<T>&, std::span<const int>,             \
                                                   std::span<const std::uint8_t>, double);          \
  template LossBreakdown<T> lm_prior_loss<T>(const Var<T>&, const Tensor<T>&, std::span<const int>, \
                                             std::span<const std::uint8_t>, double, double, double); \
  template LossBreakdown<T> postnorm_train_loss<T>(const Var<T>&, const Tensor<T>&,                 \
                                                   std::span<const int>,                            \
                                                   std::span<const std::uint8_t>, double);          \
  template LossBreakdown<T> compute_loss<T>(const ObjectiveConfig&, const Var<T>&, const Tensor<T>*, \
                                            std::span<const int>, std::span<const std::uint8_t>);

LMPRIOR_INSTANTIATE(float)
LMPRIOR_INSTANTIATE(double)
#undef LMPRIOR_INSTANTIATE

}  // namespace lmprior::objectives
