#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lmprior::numerics {

// A probability vector over a vocabulary of size K >= 2.
//
// Construction validates non-negativity and |sum - 1| <= 1e-6. Log
// probabilities are computed with the kLogFloor floor.
class Distribution {
 public:
  explicit Distribution(std::vector<double> probs);

  static Distribution uniform(std::size_t k);
  static Distribution one_hot(std::size_t k, std::size_t index);
  // Normalizes exp(log_scores); used for log-domain products.
  static Distribution from_log_scores(std::span<const double> log_scores);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const { return probs_; }
  std::vector<double> log_probs() const;
  std::size_t argmax() const;
  // Indices of the k largest entries, ties broken by lower index.
  std::vector<std::size_t> top_k(std::size_t k) const;

 private:
  std::vector<double> probs_;
};

// p_i = exp(s_i/tau) / sum_j exp(s_j/tau), tau >= 1.
Distribution softmax_with_temperature(std::span<const double> logits, double tau = 1.0);

// Shannon entropy in nats, 0 ln 0 = 0.
double entropy(const Distribution& d);

// D_KL(p || q) in nats with q floored before the log.
double kl_divergence(const Distribution& p, const Distribution& q);

}  // namespace lmprior::numerics
