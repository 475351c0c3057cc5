#include "lmprior/numerics/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lmprior/errors.hpp"
#include "lmprior/numerics/ops.hpp"

namespace lmprior::numerics {

Distribution::Distribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.size() < 2) throw InvalidInput("distribution needs at least two outcomes");
  double total = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p))
      throw InvalidInput("distribution entries must be finite and non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6)
    throw InvalidInput("distribution does not sum to one (sum=" + std::to_string(total) + ")");
}

Distribution Distribution::uniform(std::size_t k) {
  return Distribution(std::vector<double>(k, 1.0 / static_cast<double>(k)));
}

Distribution Distribution::one_hot(std::size_t k, std::size_t index) {
  if (index >= k) throw InvalidInput("one_hot index outside vocabulary");
  std::vector<double> p(k, 0.0);
  p[index] = 1.0;
  return Distribution(std::move(p));
}

Distribution Distribution::from_log_scores(std::span<const double> log_scores) {
  if (log_scores.empty()) throw InvalidInput("empty score vector");
  const double mx = *std::max_element(log_scores.begin(), log_scores.end());
  if (!std::isfinite(mx)) throw InvalidInput("log scores must contain a finite maximum");
  std::vector<double> p(log_scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(log_scores[i] - mx);
    total += p[i];
  }
  for (auto& v : p) v /= total;
  return Distribution(std::move(p));
}

std::vector<double> Distribution::log_probs() const {
  std::vector<double> out(probs_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(probs_[i], kLogFloor));
  return out;
}

std::size_t Distribution::argmax() const {
  return static_cast<std::size_t>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

std::vector<std::size_t> Distribution::top_k(std::size_t k) const {
  std::vector<std::size_t> idx(probs_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return probs_[a] > probs_[b] || (probs_[a] == probs_[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

Distribution softmax_with_temperature(std::span<const double> logits, double tau) {
  if (!(tau >= 1.0)) throw InvalidInput("softmax temperature must be >= 1");
  for (double s : logits)
    if (!std::isfinite(s)) throw InvalidInput("non-finite logit");
  std::vector<double> scaled(logits.begin(), logits.end());
  for (auto& s : scaled) s /= tau;
  return Distribution::from_log_scores(scaled);
}

double entropy(const Distribution& d) {
  double h = 0.0;
  for (double p : d.probs())
    if (p > 0.0) h -= p * std::log(p);
  return std::max(h, 0.0);
}

double kl_divergence(const Distribution& p, const Distribution& q) {
  if (p.size() != q.size())
    throw InvalidInput("kl_divergence: dimension mismatch " + std::to_string(p.size()) +
                       " vs " + std::to_string(q.size()));
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) d += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kLogFloor)));
  return std::max(d, 0.0);
}

}  // namespace lmprior::numerics
