#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "lmprior/numerics/distribution.hpp"
#include "lmprior/numerics/ops.hpp"
#include "lmprior/seqmodels/architecture.hpp"
#include "lmprior/textdata/batch.hpp"

namespace lmprior::seqmodels {

using numerics::Distribution;
using numerics::ParameterSet;
using numerics::Tensor;
using numerics::Var;
using textdata::Batch;
using textdata::TokenIds;

// Decoder-only language model p(y_t | y_<t): pre-norm causal transformer
// blocks with the embedding tied to the output projection.
template <typename T>
class LanguageModel {
 public:
  LanguageModel(ArchitectureConfig config, std::uint64_t seed);

  const ArchitectureConfig& config() const { return config_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  // ids is row-major [rows, len]; returns logits [rows*len, K]. Dropout is
  // applied only when dropout_rng is non-null.
  Var<T> forward(std::span<const int> ids, std::size_t rows, std::size_t len,
                 std::span<const std::uint8_t> mask, std::mt19937_64* dropout_rng) const;

  // Teacher-forced logits for the batch's gold positions, [rows*steps, K].
  Var<T> batch_logits(const Batch& batch, std::mt19937_64* dropout_rng = nullptr) const;

  // Logits for the token after each prefix, [n, K]. No graph is recorded.
  Tensor<T> next_logits(std::span<const TokenIds> prefixes) const;

 private:
  ArchitectureConfig config_;
  ParameterSet<T> params_;
};

// Encoder-decoder translation model p(y_t | y_<t, x).
template <typename T>
class TranslationModel {
 public:
  struct Memory {
    Var<T> states;  // [rows*len, d]
    std::size_t rows = 0;
    std::size_t len = 0;
    std::vector<std::uint8_t> mask;
  };

  TranslationModel(ArchitectureConfig config, std::uint64_t seed);

  const ArchitectureConfig& config() const { return config_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  // Throws InvalidInput when any row has no source token.
  Memory encode(std::span<const int> src, std::size_t rows, std::size_t len,
                std::span<const std::uint8_t> mask, std::mt19937_64* dropout_rng) const;
  Var<T> decode(const Memory& memory, std::span<const int> ids, std::size_t rows, std::size_t len,
                std::span<const std::uint8_t> mask, std::mt19937_64* dropout_rng) const;

  Var<T> batch_logits(const Batch& batch, std::mt19937_64* dropout_rng = nullptr) const;

  Memory encode_sentence(const TokenIds& source) const;
  // memory holds either one sentence (shared by all prefixes) or one per prefix.
  Tensor<T> next_logits(const Memory& memory, std::span<const TokenIds> prefixes) const;

 private:
  ArchitectureConfig config_;
  ParameterSet<T> params_;
};

// One distribution per gold (non-pad) position, row-major over the batch.
template <typename T>
std::vector<Distribution> lm_step_distributions(const LanguageModel<T>& lm, const Batch& batch,
                                                double tau = 1.0);
template <typename T>
std::vector<Distribution> tm_step_distributions(const TranslationModel<T>& tm, const Batch& batch,
                                                double tau = 1.0);

// Row r of logits as a distribution at temperature tau.
template <typename T>
Distribution row_distribution(const Tensor<T>& logits, std::size_t row, double tau = 1.0);

// ConfigError unless both models share the target vocabulary.
void check_vocab_compatible(const ArchitectureConfig& lm, const ArchitectureConfig& tm);

// Deep copies of parameter values, for best-checkpoint snapshots.
template <typename T>
std::vector<Tensor<T>> snapshot(const ParameterSet<T>& params);
template <typename T>
void restore(ParameterSet<T>& params, const std::vector<Tensor<T>>& values);

}  // namespace lmprior::seqmodels
