#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lmprior/numerics/distribution.hpp"
#include "lmprior/seqmodels/models.hpp"
#include "lmprior/textdata/vocabulary.hpp"

namespace lmprior::decoding {

using numerics::Distribution;
using textdata::TokenIds;

// Anything that yields p(next | prefix) for a batch of BOS-led prefixes.
class StepModel {
 public:
  virtual ~StepModel() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<Distribution> next(std::span<const TokenIds> prefixes) = 0;
};

// TM conditioned on one source sentence (encoded once).
template <typename T>
class TranslationStep : public StepModel {
 public:
  TranslationStep(const seqmodels::TranslationModel<T>& tm, const TokenIds& source);
  std::size_t vocab_size() const override { return tm_.config().vocab_size; }
  std::vector<Distribution> next(std::span<const TokenIds> prefixes) override;

 private:
  const seqmodels::TranslationModel<T>& tm_;
  typename seqmodels::TranslationModel<T>::Memory memory_;
};

template <typename T>
class LanguageStep : public StepModel {
 public:
  explicit LanguageStep(const seqmodels::LanguageModel<T>& lm) : lm_(lm) {}
  std::size_t vocab_size() const override { return lm_.config().vocab_size; }
  std::vector<Distribution> next(std::span<const TokenIds> prefixes) override;
  std::size_t calls() const { return calls_; }

 private:
  const seqmodels::LanguageModel<T>& lm_;
  std::size_t calls_ = 0;
};

enum class FusionMode { plain, shallow, postnorm };
FusionMode parse_fusion_mode(std::string_view name);
std::string to_string(FusionMode m);

struct FusionScorer {
  FusionMode mode = FusionMode::plain;
  double beta = 0.1;          // shallow only
  StepModel* lm = nullptr;    // required unless plain; never queried when plain

  void validate() const;
};

// plain: log p_TM; shallow: (1-beta) log p_TM + beta log p_LM;
// postnorm: log of the normalized product. ConfigError when the LM
// distribution is missing in a fusion mode.
std::vector<double> step_score(const FusionScorer& scorer, const Distribution& tm,
                               const Distribution* lm);

struct Hypothesis {
  TokenIds tokens;  // BOS first; EOS last when finished
  double score = 0.0;
  bool finished = false;
  // Generated tokens (EOS included, BOS not).
  std::size_t length() const { return tokens.empty() ? 0 : tokens.size() - 1; }
};

struct SearchOptions {
  std::size_t beam = 5;
  std::size_t max_len = 0;  // whole hypothesis incl. BOS/EOS; 0 -> 2*|src| + 10
  bool length_normalize = true;
  int bos = textdata::kBos;
  int eos = textdata::kEos;
};

std::size_t default_max_len(std::size_t source_length);

Hypothesis greedy_decode(StepModel& tm, const FusionScorer& scorer, const SearchOptions& options);
Hypothesis beam_search(StepModel& tm, const FusionScorer& scorer, const SearchOptions& options);

// Greedy decoding of many sentences at once (dev evaluation). Fusion modes
// other than plain need lm.
template <typename T>
std::vector<TokenIds> greedy_batch(const seqmodels::TranslationModel<T>& tm,
                                   std::span<const TokenIds> sources, std::size_t max_rows = 64,
                                   const seqmodels::LanguageModel<T>* lm = nullptr,
                                   FusionMode mode = FusionMode::plain, double beta = 0.0);

// Strips BOS and EOS.
TokenIds strip_markers(const TokenIds& tokens, int bos = textdata::kBos, int eos = textdata::kEos);

struct StepTrace {
  std::size_t position = 0;
  int gold = -1;  // token that follows in the gold sequence (-1 when unknown)
  std::vector<std::size_t> tm_top, lm_top, combined_top;
  Distribution tm, lm, combined;
  bool flipped = false;  // argmax(combined) != argmax(tm)
};

// Normalized distribution the scorer decodes with.
Distribution fused_distribution(const FusionScorer& scorer, const Distribution& tm,
                                const Distribution& lm);

StepTrace trace_step(const FusionScorer& scorer, const Distribution& tm, const Distribution& lm,
                     std::size_t top_k = 3);

// Teacher-forced along BOS + gold; one record per predicted position (the
// last predicts EOS).
std::vector<StepTrace> trace_disagreement(StepModel& tm, StepModel& lm, const TokenIds& gold,
                                          const FusionScorer& scorer, std::size_t top_k = 3);

}  // namespace lmprior::decoding
