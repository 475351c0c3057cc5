#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lmprior/seqmodels/models.hpp"
#include "lmprior/textdata/corpus.hpp"

namespace lmprior::evaluation {

struct BleuScore {
  double score = 0.0;  // 0..100
  std::vector<double> precisions;
  std::vector<std::size_t> matches, totals;
  double brevity_penalty = 0.0;
  std::size_t hyp_length = 0, ref_length = 0;
  bool smoothed = false;
};

// Corpus BLEU over whitespace tokens, clipped n-gram counts and
// BP = min(1, exp(1 - r/c)). With smooth, n >= 2 precisions use add-one.
BleuScore corpus_bleu(std::span<const std::string> hypotheses, std::span<const std::string> references,
                      std::size_t max_n = 4, bool smooth = false);

// exp(mean teacher-forced NLL per target token, EOS included).
template <typename T>
double perplexity(const seqmodels::LanguageModel<T>& lm, const textdata::ParallelCorpus& corpus,
                  std::size_t max_rows = 64);
template <typename T>
double perplexity(const seqmodels::TranslationModel<T>& tm, const textdata::ParallelCorpus& corpus,
                  std::size_t max_rows = 64);

enum class EntropyMode { tm, lm, postnorm };
EntropyMode parse_entropy_mode(std::string_view name);
std::string to_string(EntropyMode m);

struct EntropyProfile {
  std::vector<double> entropies;  // nats, one per gold target token
  std::size_t vocab_size = 0;
  double mean = 0.0;
  double median = 0.0;

  static EntropyProfile from_entropies(std::vector<double> values, std::size_t vocab_size);
  // Counts per [i*w, (i+1)*w) bin covering [0, ln K].
  std::vector<std::size_t> histogram(double bin_width = 0.2) const;
};

// Teacher-forced on the corpus targets. tm mode needs tm, lm mode needs lm,
// postnorm needs both (and profiles softmax(log p_TM + log p_LM)).
template <typename T>
EntropyProfile entropy_profile(const seqmodels::TranslationModel<T>* tm,
                               const seqmodels::LanguageModel<T>* lm,
                               const textdata::ParallelCorpus& corpus, EntropyMode mode,
                               std::size_t max_rows = 64);

// bin_low,bin_high,count,model_tag
struct TaggedProfile {
  std::string tag;
  const EntropyProfile* profile;
};
std::string histogram_csv(std::span<const TaggedProfile> profiles, double bin_width = 0.2);

struct SweepCell {
  double lambda = 0.0;
  double tau = 1.0;
  std::uint64_t seed = 0;
  std::optional<double> dev_bleu;  // empty marks a failed run
  std::string error;
};

struct SensitivityGrid {
  std::vector<double> lambdas, taus;
  std::vector<std::uint64_t> seeds;
  std::vector<SweepCell> cells;  // lambda-major, then tau, then seed

  // Mean over the seeds that succeeded; empty if none did.
  std::optional<double> mean(double lambda, double tau) const;
  bool complete() const;
  std::string csv() const;  // lambda,tau,seed,dev_bleu ("hole" when failed)
};

using SweepRunner = std::function<double(double lambda, double tau, std::uint64_t seed)>;

// Runs every (lambda, tau, seed) cell; exceptions turn into holes.
SensitivityGrid sensitivity_sweep(std::span<const double> lambdas, std::span<const double> taus,
                                  std::span<const std::uint64_t> seeds, const SweepRunner& run);

}  // namespace lmprior::evaluation
