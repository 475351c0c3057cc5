#include "lmprior/seqmodels/layers.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

namespace lmprior::seqmodels::layers {

using numerics::Tensor;

template <typename T>
void add_linear(ParameterSet<T>& params, const std::string& prefix, std::size_t in,
                std::size_t out, std::mt19937_64& rng) {
  params.add(prefix + ".weight", glorot_uniform<T>(in, out, rng));
  params.add(prefix + ".bias", Tensor<T>({out}));
}

template <typename T>
void add_layer_norm(ParameterSet<T>& params, const std::string& prefix, std::size_t width) {
  params.add(prefix + ".gain", Tensor<T>({width}, T(1)));
  params.add(prefix + ".bias", Tensor<T>({width}));
}

template <typename T>
void add_attention(ParameterSet<T>& params, const std::string& prefix, std::size_t width,
                   std::mt19937_64& rng) {
  for (const char* name : {".query", ".key", ".value", ".out"})
    add_linear(params, prefix + name, width, width, rng);
}

template <typename T>
void add_feed_forward(ParameterSet<T>& params, const std::string& prefix, std::size_t width,
                      std::size_t hidden, std::mt19937_64& rng) {
  add_linear(params, prefix + ".in", width, hidden, rng);
  add_linear(params, prefix + ".out", hidden, width, rng);
}

template <typename T>
Var<T> linear(const ParameterSet<T>& params, const std::string& prefix, const Var<T>& x) {
  return numerics::add_bias(numerics::matmul(x, params.get(prefix + ".weight")),
                            params.get(prefix + ".bias"));
}

template <typename T>
Var<T> layer_norm(const ParameterSet<T>& params, const std::string& prefix, const Var<T>& x) {
  return numerics::layer_norm(x, params.get(prefix + ".gain"), params.get(prefix + ".bias"));
}

template <typename T>
Var<T> attention(const ParameterSet<T>& params, const std::string& prefix, const Var<T>& query,
                 const Var<T>& memory, const AttentionLayout& layout) {
  auto q = linear(params, prefix + ".query", query);
  auto k = linear(params, prefix + ".key", memory);
  auto v = linear(params, prefix + ".value", memory);
  return linear(params, prefix + ".out", numerics::attention(q, k, v, layout));
}

template <typename T>
Var<T> feed_forward(const ParameterSet<T>& params, const std::string& prefix, const Var<T>& x) {
  return linear(params, prefix + ".out", numerics::relu(linear(params, prefix + ".in", x)));
}

namespace {

// Positional tables are immutable once built; one per (length, width).
template <typename T>
const Tensor<T>& positions(std::size_t len, std::size_t width) {
  static std::mutex mutex;
  static std::map<std::pair<std::size_t, std::size_t>, std::unique_ptr<Tensor<T>>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[{len, width}];
  if (!slot) slot = std::make_unique<Tensor<T>>(sinusoidal_positions<T>(len, width));
  return *slot;
}

}  // namespace

template <typename T>
Var<T> embed(const Var<T>& table, std::span<const int> ids, std::size_t rows, std::size_t len,
             double dropout, std::mt19937_64* rng) {
  const std::size_t width = table.cols();
  auto x = numerics::embedding(table, ids, static_cast<T>(std::sqrt(static_cast<double>(width))));
  const auto& pe = positions<T>(len, width);
  Tensor<T> tiled({rows * len, width});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(pe.values().begin(), pe.values().end(), tiled.data() + r * len * width);
  return maybe_dropout(numerics::add(x, Var<T>::constant(std::move(tiled))), dropout, rng);
}

template <typename T>
Var<T> tied_logits(const Var<T>& hidden, const Var<T>& table) {
  const T factor = static_cast<T>(1.0 / std::sqrt(static_cast<double>(table.cols())));
  return numerics::matmul_nt(numerics::scale(hidden, factor), table);
}

#define LMPRIOR_INSTANTIATE(T)                                                                   \
  template void add_linear<T>(ParameterSet<T>&, const std::string&, std::size_t, std::size_t,    \
                              std::mt19937_64&);                                                 \
  template void add_layer_norm<T>(ParameterSet<T>&, const std::string&, std::size_t);            \
  template void add_attention<T>(ParameterSet<T>&, const std::string&, std::size_t,              \
                                 std::mt19937_64&);                                              \
  template void add_feed_forward<T>(ParameterSet<T>&, const std::string&, std::size_t,           \
                                    std::size_t, std::mt19937_64&);                              \
  template Var<T> linear<T>(const ParameterSet<T>&, const std::string&, const Var<T>&);          \
  template Var<T> layer_norm<T>(const ParameterSet<T>&, const std::string&, const Var<T>&);      \
  template Var<T> attention<T>(const ParameterSet<T>&, const std::string&, const Var<T>&,        \
                               const Var<T>&, const AttentionLayout&);                           \
  template Var<T> feed_forward<T>(const ParameterSet<T>&, const std::string&, const Var<T>&);    \
  template Var<T> embed<T>(const Var<T>&, std::span<const int>, std::size_t, std::size_t, double, \
                           std::mt19937_64*);                                                    \
  template Var<T> tied_logits<T>(const Var<T>&, const Var<T>&);

LMPRIOR_INSTANTIATE(float)
LMPRIOR_INSTANTIATE(double)
#undef LMPRIOR_INSTANTIATE

}  // namespace lmprior::seqmodels::layers
