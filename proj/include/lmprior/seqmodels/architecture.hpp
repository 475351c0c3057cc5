#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "lmprior/numerics/autodiff.hpp"

namespace lmprior::seqmodels {

// Toy-scale defaults. The reference large-scale setup used 6 layers with
// width 512 / FFN 1024 / 8 heads for the translation model and width 1024 /
// FFN 4096 / 16 heads for the language model, dropout 0.3 everywhere.
struct ArchitectureConfig {
  std::size_t vocab_size = 0;      // target side; shared by LM and TM
  std::size_t src_vocab_size = 0;  // TM only
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t ff = 128;
  double dropout = 0.1;
  std::size_t max_positions = 512;
  std::uint64_t target_vocab_hash = 0;  // 0 when unknown

  void validate(bool needs_source) const;
  bool operator==(const ArchitectureConfig&) const = default;
};

// Independent, reproducible stream for a named purpose ("init", "shuffle", ...).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

// U(-a, a) with a = sqrt(6 / (rows + cols)).
template <typename T>
numerics::Tensor<T> glorot_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

template <typename T>
numerics::Tensor<T> sinusoidal_positions(std::size_t length, std::size_t width);

}  // namespace lmprior::seqmodels
