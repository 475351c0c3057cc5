#pragma once

#include <random>
#include <span>
#include <string>

#include "lmprior/numerics/ops.hpp"
#include "lmprior/seqmodels/architecture.hpp"

namespace lmprior::seqmodels::layers {

using numerics::AttentionLayout;
using numerics::ParameterSet;
using numerics::Var;

template <typename T>
void add_linear(ParameterSet<T>& params, const std::string& prefix, std::size_t in,
                std::size_t out, std::mt19937_64& rng);
template <typename T>
void add_layer_norm(ParameterSet<T>& params, const std::string& prefix, std::size_t width);
template <typename T>
void add_attention(ParameterSet<T>& params, const std::string& prefix, std::size_t width,
                   std::mt19937_64& rng);
template <typename T>
void add_feed_forward(ParameterSet<T>& params, const std::string& prefix, std::size_t width,
                      std::size_t hidden, std::mt19937_64& rng);

template <typename T>
Var<T> linear(const ParameterSet<T>& params, const std::string& prefix, const Var<T>& x);
template <typename T>
Var<T> layer_norm(const ParameterSet<T>& params, const std::string& prefix, const Var<T>& x);
template <typename T>
Var<T> attention(const ParameterSet<T>& params, const std::string& prefix, const Var<T>& query,
                 const Var<T>& memory, const AttentionLayout& layout);
template <typename T>
Var<T> feed_forward(const ParameterSet<T>& params, const std::string& prefix, const Var<T>& x);

// sqrt(d) * E[ids] + positional encoding, with dropout when rng is set.
template <typename T>
Var<T> embed(const Var<T>& table, std::span<const int> ids, std::size_t rows, std::size_t len,
             double dropout, std::mt19937_64* rng);

// Tied output projection: h E^T / sqrt(d).
template <typename T>
Var<T> tied_logits(const Var<T>& hidden, const Var<T>& table);

template <typename T>
Var<T> maybe_dropout(const Var<T>& x, double p, std::mt19937_64* rng) {
  return rng ? numerics::dropout(x, p, *rng) : x;
}

}  // namespace lmprior::seqmodels::layers
