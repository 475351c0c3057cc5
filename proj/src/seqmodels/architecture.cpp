#include "lmprior/seqmodels/architecture.hpp"

#include <cmath>

#include "lmprior/errors.hpp"
#include "lmprior/textdata/vocabulary.hpp"

namespace lmprior::seqmodels {

void ArchitectureConfig::validate(bool needs_source) const {
  if (vocab_size < 2) throw ConfigError("target vocabulary must have at least two entries");
  if (needs_source && src_vocab_size < 2)
    throw ConfigError("source vocabulary must have at least two entries");
  if (d_model == 0 || layers == 0 || heads == 0 || ff == 0)
    throw ConfigError("architecture sizes must be positive");
  if (d_model % heads != 0)
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (max_positions == 0) throw ConfigError("max_positions must be positive");
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  // splitmix64 finalizer over the seed mixed with the stream name
  std::uint64_t z = seed ^ textdata::fnv1a(stream);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <typename T>
numerics::Tensor<T> glorot_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  numerics::Tensor<T> t({rows, cols});
  for (auto& v : t.values()) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v = static_cast<T>(a * (2.0 * u - 1.0));
  }
  return t;
}

template <typename T>
numerics::Tensor<T> sinusoidal_positions(std::size_t length, std::size_t width) {
  numerics::Tensor<T> pe({length, width});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < width; ++i) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      const double angle = static_cast<double>(pos) * rate;
      pe.at(pos, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

template numerics::Tensor<float> glorot_uniform<float>(std::size_t, std::size_t, std::mt19937_64&);
template numerics::Tensor<double> glorot_uniform<double>(std::size_t, std::size_t, std::mt19937_64&);
template numerics::Tensor<float> sinusoidal_positions<float>(std::size_t, std::size_t);
template numerics::Tensor<double> sinusoidal_positions<double>(std::size_t, std::size_t);

}  // namespace lmprior::seqmodels
