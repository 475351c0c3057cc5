#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "lmprior/numerics/autodiff.hpp"

namespace lmprior::numerics {

// Floor applied to probabilities before any log.
inline constexpr double kLogFloor = 1e-12;

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
// a [n,k] times b[m,k] transposed -> [n,m]
template <typename T> Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
// Adds a length-cols vector to every row.
template <typename T> Var<T> add_bias(const Var<T>& x, const Var<T>& bias);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& x, T factor);
template <typename T> Var<T> relu(const Var<T>& x);
// Elementwise log with the argument floored at kLogFloor.
template <typename T> Var<T> log(const Var<T>& x);
template <typename T> Var<T> sum(const Var<T>& x);

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  T eps = T(1e-5));

// Gathers rows of table[V,d] for each id, multiplied by factor.
template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const int> ids, T factor = T(1));

// Inverted dropout; identity when p == 0.
template <typename T>
Var<T> dropout(const Var<T>& x, double p, std::mt19937_64& rng);

// Row-wise softmax / log-softmax of x / tau.
template <typename T> Var<T> softmax(const Var<T>& x, T tau = T(1));
template <typename T> Var<T> log_softmax(const Var<T>& x, T tau = T(1));

// Layout of a batch of sequences packed as [batch*len, width] matrices.
struct AttentionLayout {
  std::size_t batch = 1;
  std::size_t query_len = 1;
  std::size_t key_len = 1;
  std::size_t heads = 1;
  bool causal = false;
  // batch*key_len entries, nonzero where the key is a real token.
  std::vector<std::uint8_t> key_mask;
};

// Multi-head scaled dot-product attention on projected q/k/v.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 const AttentionLayout& layout);

// -sum_r w_r [(1-alpha) logp[r,gold_r] + alpha/K sum_i logp[r,i]].
// alpha = 0 is the plain weighted negative log-likelihood.
template <typename T>
Var<T> smoothed_nll(const Var<T>& logp, std::span<const int> gold,
                    std::span<const T> weights, T alpha = T(0));

// sum_r w_r sum_i q[r,i] (log q[r,i] - logp[r,i]) for a constant target q.
template <typename T>
Var<T> kl_from_constant(const Tensor<T>& target_probs, const Var<T>& logp,
                        std::span<const T> weights);

}  // namespace lmprior::numerics
