#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lmprior/textdata/corpus.hpp"

namespace lmprior::cli {

enum class ToyTask { copy, reverse, digits_to_words };
ToyTask parse_toy_task(std::string_view name);  // UsageError when unknown
std::string to_string(ToyTask t);

struct ToyOptions {
  ToyTask task = ToyTask::digits_to_words;
  std::size_t n_pairs = 500;
  std::size_t n_dev = 200;
  std::size_t n_test = 200;
  std::size_t n_mono = 10000;
  std::size_t n_mono_dev = 500;
  std::size_t min_len = 3;
  std::size_t max_len = 10;
  std::uint64_t seed = 1;
};

struct ToyCorpus {
  std::vector<textdata::TextPair> train, dev, test;
  std::vector<std::string> mono, mono_dev;  // target side only
};

// The digit sequences follow a fixed sparse Markov chain (identical for
// every seed) so the target side carries structure a language model can
// pick up from monolingual text alone. Sampling uses the seed.
ToyCorpus generate_toy(const ToyOptions& options);

// Single-sentence mapping used by the generator: "3 1" -> "three one".
std::string toy_target(ToyTask task, std::string_view source);

// Writes train/dev/test .src/.tgt plus mono.txt and mono.dev.txt.
void write_toy(const ToyCorpus& corpus, const std::string& dir);

}  // namespace lmprior::cli
