#include "lmprior/decoding/search.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "lmprior/errors.hpp"
#include "lmprior/objectives/losses.hpp"

namespace lmprior::decoding {

template <typename T>
TranslationStep<T>::TranslationStep(const seqmodels::TranslationModel<T>& tm, const TokenIds& source)
    : tm_(tm), memory_(tm.encode_sentence(source)) {}

template <typename T>
std::vector<Distribution> TranslationStep<T>::next(std::span<const TokenIds> prefixes) {
  auto logits = tm_.next_logits(memory_, prefixes);
  std::vector<Distribution> out;
  for (std::size_t r = 0; r < prefixes.size(); ++r) out.push_back(seqmodels::row_distribution(logits, r));
  return out;
}

template <typename T>
std::vector<Distribution> LanguageStep<T>::next(std::span<const TokenIds> prefixes) {
  ++calls_;
  auto logits = lm_.next_logits(prefixes);
  std::vector<Distribution> out;
  for (std::size_t r = 0; r < prefixes.size(); ++r) out.push_back(seqmodels::row_distribution(logits, r));
  return out;
}

FusionMode parse_fusion_mode(std::string_view name) {
  if (name == "plain" || name == "none") return FusionMode::plain;
  if (name == "shallow") return FusionMode::shallow;
  if (name == "postnorm") return FusionMode::postnorm;
  throw ConfigError("unknown fusion mode '" + std::string(name) + "' (expected plain, shallow, postnorm)");
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::plain: return "plain";
    case FusionMode::shallow: return "shallow";
    case FusionMode::postnorm: return "postnorm";
  }
  return "?";
}

void FusionScorer::validate() const {
  if (mode == FusionMode::plain) return;
  if (!lm) throw ConfigError(to_string(mode) + " fusion needs a language model");
  if (mode == FusionMode::shallow && !(beta >= 0.0 && beta <= 1.0))
    throw ConfigError("shallow fusion beta must lie in [0, 1]");
}

std::vector<double> step_score(const FusionScorer& scorer, const Distribution& tm, const Distribution* lm) {
  if (scorer.mode == FusionMode::plain) return tm.log_probs();
  if (!lm) throw ConfigError(to_string(scorer.mode) + " fusion needs an LM distribution");
  if (lm->size() != tm.size()) throw ConfigError("TM and LM distributions differ in vocabulary size");
  if (scorer.mode == FusionMode::postnorm) return objectives::postnorm_combine(tm, *lm).log_probs();
  auto a = tm.log_probs();
  const auto b = lm->log_probs();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = (1.0 - scorer.beta) * a[i] + scorer.beta * b[i];
  return a;
}

std::size_t default_max_len(std::size_t source_length) { return 2 * source_length + 10; }

namespace {

std::vector<std::vector<double>> score_prefixes(StepModel& tm, const FusionScorer& scorer,
                                                std::span<const TokenIds> prefixes) {
  auto tm_dists = tm.next(prefixes);
  std::vector<Distribution> lm_dists;
  if (scorer.mode != FusionMode::plain) lm_dists = scorer.lm->next(prefixes);
  std::vector<std::vector<double>> out;
  for (std::size_t r = 0; r < prefixes.size(); ++r)
    out.push_back(step_score(scorer, tm_dists[r], lm_dists.empty() ? nullptr : &lm_dists[r]));
  return out;
}

void check_options(const SearchOptions& o) {
  if (o.beam == 0) throw ConfigError("beam size must be at least 1");
  if (o.max_len < 2) throw ConfigError("max_len must leave room for BOS and EOS");
}

double final_score(const Hypothesis& h, bool normalize) {
  return normalize ? h.score / static_cast<double>(std::max<std::size_t>(1, h.length())) : h.score;
}

}  // namespace

Hypothesis greedy_decode(StepModel& tm, const FusionScorer& scorer, const SearchOptions& options) {
  check_options(options);
  scorer.validate();
  Hypothesis h{{options.bos}, 0.0, false};
  while (!h.finished) {
    std::vector<TokenIds> prefix = {h.tokens};
    const auto scores = score_prefixes(tm, scorer, prefix)[0];
    int best = options.eos;
    if (h.tokens.size() + 1 < options.max_len) {
      best = 0;
      for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    }
    h.tokens.push_back(best);
    h.score += scores[static_cast<std::size_t>(best)];
    h.finished = best == options.eos;
  }
  return h;
}

Hypothesis beam_search(StepModel& tm, const FusionScorer& scorer, const SearchOptions& options) {
  check_options(options);
  scorer.validate();
  std::vector<Hypothesis> live = {Hypothesis{{options.bos}, 0.0, false}};
  std::vector<Hypothesis> finished;
  while (!live.empty() && finished.size() < options.beam) {
    std::vector<TokenIds> prefixes;
    for (const auto& h : live) prefixes.push_back(h.tokens);
    const auto scores = score_prefixes(tm, scorer, prefixes);
    const bool must_end = live.front().tokens.size() + 1 >= options.max_len;

    struct Candidate {
      double score;
      std::size_t hyp;
      int token;
    };
    std::vector<Candidate> candidates;
    for (std::size_t h = 0; h < live.size(); ++h) {
      if (must_end) {
        candidates.push_back({live[h].score + scores[h][static_cast<std::size_t>(options.eos)], h, options.eos});
        continue;
      }
      for (std::size_t i = 0; i < scores[h].size(); ++i)
        candidates.push_back({live[h].score + scores[h][i], h, static_cast<int>(i)});
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      return std::tie(a.hyp, a.token) < std::tie(b.hyp, b.token);
    });

    std::vector<Hypothesis> next;
    for (const auto& c : candidates) {
      if (next.size() >= options.beam) break;
      Hypothesis h = live[c.hyp];
      h.tokens.push_back(c.token);
      h.score = c.score;
      if (c.token == options.eos) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }
  // live is empty here unless enough hypotheses finished early
  const Hypothesis* best = nullptr;
  for (const auto& h : finished)
    if (!best || final_score(h, options.length_normalize) > final_score(*best, options.length_normalize))
      best = &h;
  return *best;
}

template <typename T>
std::vector<TokenIds> greedy_batch(const seqmodels::TranslationModel<T>& tm,
                                   std::span<const TokenIds> sources, std::size_t max_rows,
                                   const seqmodels::LanguageModel<T>* lm, FusionMode mode, double beta) {
  if (mode != FusionMode::plain && !lm) throw ConfigError(to_string(mode) + " fusion needs a language model");
  numerics::NoGradGuard guard;
  std::vector<TokenIds> out(sources.size());
  max_rows = std::max<std::size_t>(1, max_rows);
  for (std::size_t start = 0; start < sources.size(); start += max_rows) {
    const std::size_t n = std::min(max_rows, sources.size() - start);
    std::size_t src_len = 0;
    for (std::size_t r = 0; r < n; ++r) src_len = std::max(src_len, sources[start + r].size());
    std::vector<int> ids(n * src_len, textdata::kPad);
    std::vector<std::uint8_t> mask(n * src_len, 0);
    std::vector<std::size_t> limit(n);
    for (std::size_t r = 0; r < n; ++r) {
      const auto& s = sources[start + r];
      std::copy(s.begin(), s.end(), ids.begin() + static_cast<long>(r * src_len));
      std::fill_n(mask.begin() + static_cast<long>(r * src_len), s.size(), 1);
      limit[r] = default_max_len(s.size());
    }
    auto memory = tm.encode(ids, n, src_len, mask, nullptr);
    std::vector<TokenIds> prefixes(n, TokenIds{textdata::kBos});
    std::vector<bool> done(n, false);
    std::size_t remaining = n;
    while (remaining > 0) {
      auto logits = tm.next_logits(memory, prefixes);
      numerics::Tensor<T> lm_logits;
      if (mode != FusionMode::plain) lm_logits = lm->next_logits(prefixes);
      for (std::size_t r = 0; r < n; ++r) {
        if (done[r]) {
          prefixes[r].push_back(textdata::kPad);
          continue;
        }
        int best = textdata::kEos;
        if (prefixes[r].size() + 1 < limit[r]) {
          if (mode == FusionMode::plain) {
            auto row = logits.row(r);
            best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
          } else {
            FusionScorer scorer{mode, beta, nullptr};
            const auto lm_d = seqmodels::row_distribution(lm_logits, r);
            const auto s = step_score(scorer, seqmodels::row_distribution(logits, r), &lm_d);
            best = static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
          }
        }
        prefixes[r].push_back(best);
        if (best == textdata::kEos) {
          done[r] = true;
          --remaining;
        }
      }
    }
    for (std::size_t r = 0; r < n; ++r) {
      auto& p = prefixes[r];
      auto eos = std::find(p.begin(), p.end(), textdata::kEos);
      out[start + r] = TokenIds(p.begin() + 1, eos);
    }
  }
  return out;
}

TokenIds strip_markers(const TokenIds& tokens, int bos, int eos) {
  auto begin = tokens.begin();
  if (begin != tokens.end() && *begin == bos) ++begin;
  auto end = std::find(begin, tokens.end(), eos);
  return TokenIds(begin, end);
}

Distribution fused_distribution(const FusionScorer& scorer, const Distribution& tm, const Distribution& lm) {
  if (scorer.mode == FusionMode::plain) return tm;
  const auto s = step_score(scorer, tm, &lm);
  return Distribution::from_log_scores(s);
}

StepTrace trace_step(const FusionScorer& scorer, const Distribution& tm, const Distribution& lm,
                     std::size_t top_k) {
  auto combined = fused_distribution(scorer, tm, lm);
  const std::size_t k = std::min(top_k, tm.size());
  return StepTrace{.position = 0,
                   .gold = -1,
                   .tm_top = tm.top_k(k),
                   .lm_top = lm.top_k(k),
                   .combined_top = combined.top_k(k),
                   .tm = tm,
                   .lm = lm,
                   .combined = combined,
                   .flipped = combined.argmax() != tm.argmax()};
}

std::vector<StepTrace> trace_disagreement(StepModel& tm, StepModel& lm, const TokenIds& gold,
                                          const FusionScorer& scorer, std::size_t top_k) {
  if (scorer.mode == FusionMode::plain) throw ConfigError("disagreement traces need shallow or postnorm fusion");
  std::vector<TokenIds> prefixes;
  TokenIds prefix = {textdata::kBos};
  for (std::size_t t = 0; t <= gold.size(); ++t) {
    prefixes.push_back(prefix);
    if (t < gold.size()) prefix.push_back(gold[t]);
  }
  auto tm_d = tm.next(prefixes);
  auto lm_d = lm.next(prefixes);
  std::vector<StepTrace> out;
  for (std::size_t t = 0; t < prefixes.size(); ++t) {
    auto s = trace_step(scorer, tm_d[t], lm_d[t], top_k);
    s.position = t;
    s.gold = t < gold.size() ? gold[t] : textdata::kEos;
    out.push_back(std::move(s));
  }
  return out;
}

template class TranslationStep<float>;
template class TranslationStep<double>;
template class LanguageStep<float>;
template class LanguageStep<double>;
template std::vector<TokenIds> greedy_batch<float>(const seqmodels::TranslationModel<float>&,
                                                   std::span<const TokenIds>, std::size_t,
                                                   const seqmodels::LanguageModel<float>*, FusionMode, double);
template std::vector<TokenIds> greedy_batch<double>(const seqmodels::TranslationModel<double>&,
                                                    std::span<const TokenIds>, std::size_t,
                                                    const seqmodels::LanguageModel<double>*, FusionMode, double);

}  // namespace lmprior::decoding
