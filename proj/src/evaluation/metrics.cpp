#include "lmprior/evaluation/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "lmprior/errors.hpp"

namespace lmprior::evaluation {

namespace {

std::vector<std::string> split_words(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::map<std::vector<std::string>, std::size_t> ngram_counts(const std::vector<std::string>& words, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i)
    ++counts[std::vector<std::string>(words.begin() + static_cast<long>(i), words.begin() + static_cast<long>(i + n))];
  return counts;
}

// log-softmax of one row, in double
std::vector<double> row_log_softmax(std::span<const double> row) {
  const double m = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (double v : row) z += std::exp(v - m);
  const double lz = m + std::log(z);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lz;
  return out;
}

template <typename Row>
std::vector<double> to_double(const Row& row) {
  return std::vector<double>(row.begin(), row.end());
}

double entropy_of_log_probs(const std::vector<double>& lp) {
  double h = 0.0;
  for (double v : lp)
    if (v > -700.0) h -= std::exp(v) * v;
  return std::max(0.0, h);
}

template <typename Logits>
double corpus_perplexity(const textdata::ParallelCorpus& corpus, std::size_t max_rows, Logits&& logits_for) {
  if (corpus.empty()) throw InvalidInput("perplexity of an empty corpus");
  numerics::NoGradGuard guard;
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& batch : textdata::make_ordered_batches(corpus, max_rows)) {
    const auto logits = logits_for(batch);
    const auto gold = batch.gold();
    const auto mask = batch.gold_mask();
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      const auto lp = row_log_softmax(to_double((logits.row(i))));
      nll -= lp[static_cast<std::size_t>(gold[i])];
      ++count;
    }
  }
  return std::exp(nll / static_cast<double>(count));
}

}  // namespace

BleuScore corpus_bleu(std::span<const std::string> hypotheses, std::span<const std::string> references,
                      std::size_t max_n, bool smooth) {
  if (references.empty()) throw InvalidInput("BLEU needs at least one reference");
  if (hypotheses.size() != references.size())
    throw InvalidInput("BLEU needs one hypothesis per reference (" + std::to_string(hypotheses.size()) +
                       " vs " + std::to_string(references.size()) + ")");
  if (max_n == 0) throw InvalidInput("max_n must be positive");
  BleuScore b;
  b.smoothed = smooth;
  b.matches.assign(max_n, 0);
  b.totals.assign(max_n, 0);
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto hyp = split_words(hypotheses[s]);
    const auto ref = split_words(references[s]);
    b.hyp_length += hyp.size();
    b.ref_length += ref.size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto hc = ngram_counts(hyp, n);
      const auto rc = ngram_counts(ref, n);
      for (const auto& [gram, c] : hc) {
        auto it = rc.find(gram);
        if (it != rc.end()) b.matches[n - 1] += std::min(c, it->second);
      }
      if (hyp.size() >= n) b.totals[n - 1] += hyp.size() - n + 1;
    }
  }
  // orders with no hypothesis n-grams at all are left out of the mean
  double log_sum = 0.0;
  std::size_t orders = 0;
  bool zero = false;
  for (std::size_t n = 0; n < max_n; ++n) {
    double m = static_cast<double>(b.matches[n]);
    double t = static_cast<double>(b.totals[n]);
    if (b.totals[n] == 0) {
      b.precisions.push_back(0.0);
      continue;
    }
    if (smooth && n > 0) m += 1.0, t += 1.0;
    const double p = m / t;
    b.precisions.push_back(p);
    ++orders;
    if (p <= 0.0) zero = true;
    else log_sum += std::log(p);
  }
  if (b.hyp_length == 0) {
    b.brevity_penalty = b.ref_length == 0 ? 1.0 : 0.0;
    b.score = b.ref_length == 0 ? 100.0 : 0.0;
    return b;
  }
  const double r = static_cast<double>(b.ref_length), c = static_cast<double>(b.hyp_length);
  b.brevity_penalty = c >= r ? 1.0 : std::exp(1.0 - r / c);
  b.score = zero ? 0.0 : 100.0 * b.brevity_penalty * std::exp(log_sum / static_cast<double>(orders));
  return b;
}

template <typename T>
double perplexity(const seqmodels::LanguageModel<T>& lm, const textdata::ParallelCorpus& corpus,
                  std::size_t max_rows) {
  return corpus_perplexity(corpus, max_rows, [&](const textdata::Batch& b) { return lm.batch_logits(b).value(); });
}

template <typename T>
double perplexity(const seqmodels::TranslationModel<T>& tm, const textdata::ParallelCorpus& corpus,
                  std::size_t max_rows) {
  return corpus_perplexity(corpus, max_rows, [&](const textdata::Batch& b) { return tm.batch_logits(b).value(); });
}

EntropyMode parse_entropy_mode(std::string_view name) {
  if (name == "tm") return EntropyMode::tm;
  if (name == "lm") return EntropyMode::lm;
  if (name == "postnorm") return EntropyMode::postnorm;
  throw ConfigError("unknown entropy mode '" + std::string(name) + "' (expected tm, lm, postnorm)");
}

std::string to_string(EntropyMode m) {
  switch (m) {
    case EntropyMode::tm: return "tm";
    case EntropyMode::lm: return "lm";
    case EntropyMode::postnorm: return "postnorm";
  }
  return "?";
}

EntropyProfile EntropyProfile::from_entropies(std::vector<double> values, std::size_t vocab_size) {
  EntropyProfile p;
  p.vocab_size = vocab_size;
  p.entropies = std::move(values);
  if (p.entropies.empty()) return p;
  double total = 0.0;
  for (double v : p.entropies) total += v;
  p.mean = total / static_cast<double>(p.entropies.size());
  auto sorted = p.entropies;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  p.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return p;
}

std::vector<std::size_t> EntropyProfile::histogram(double bin_width) const {
  if (!(bin_width > 0)) throw InvalidInput("bin width must be positive");
  const double top = std::log(static_cast<double>(std::max<std::size_t>(vocab_size, 2)));
  const auto bins = static_cast<std::size_t>(std::ceil(top / bin_width - 1e-12));
  std::vector<std::size_t> counts(std::max<std::size_t>(bins, 1), 0);
  for (double h : entropies) {
    auto i = static_cast<std::size_t>(std::max(0.0, h) / bin_width);
    counts[std::min(i, counts.size() - 1)]++;
  }
  return counts;
}

template <typename T>
EntropyProfile entropy_profile(const seqmodels::TranslationModel<T>* tm, const seqmodels::LanguageModel<T>* lm,
                               const textdata::ParallelCorpus& corpus, EntropyMode mode, std::size_t max_rows) {
  if ((mode != EntropyMode::lm && !tm) || (mode != EntropyMode::tm && !lm))
    throw ConfigError("entropy mode " + to_string(mode) + " is missing a model");
  if (tm && lm) seqmodels::check_vocab_compatible(lm->config(), tm->config());
  numerics::NoGradGuard guard;
  std::vector<double> values;
  const std::size_t k = tm ? tm->config().vocab_size : lm->config().vocab_size;
  for (const auto& batch : textdata::make_ordered_batches(corpus, max_rows)) {
    numerics::Tensor<T> tl, ll;
    if (mode != EntropyMode::lm) tl = tm->batch_logits(batch).value();
    if (mode != EntropyMode::tm) ll = lm->batch_logits(batch).value();
    const auto mask = batch.gold_mask();
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      std::vector<double> lp;
      if (mode == EntropyMode::tm) {
        lp = row_log_softmax(to_double(tl.row(i)));
      } else if (mode == EntropyMode::lm) {
        lp = row_log_softmax(to_double((ll.row(i))));
      } else {
        auto a = row_log_softmax(to_double(tl.row(i)));
        const auto b = row_log_softmax(to_double((ll.row(i))));
        for (std::size_t j = 0; j < a.size(); ++j) a[j] += b[j];
        lp = row_log_softmax(a);
      }
      values.push_back(entropy_of_log_probs(lp));
    }
  }
  return EntropyProfile::from_entropies(std::move(values), k);
}

std::string histogram_csv(std::span<const TaggedProfile> profiles, double bin_width) {
  std::ostringstream out;
  out.precision(6);
  out << "bin_low,bin_high,count,model_tag\n";
  for (const auto& [tag, profile] : profiles) {
    const auto counts = profile->histogram(bin_width);
    for (std::size_t i = 0; i < counts.size(); ++i)
      out << std::fixed << bin_width * double(i) << ',' << bin_width * double(i + 1) << ',' << counts[i] << ','
          << tag << '\n';
  }
  return out.str();
}

std::optional<double> SensitivityGrid::mean(double lambda, double tau) const {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& c : cells)
    if (c.lambda == lambda && c.tau == tau && c.dev_bleu) total += *c.dev_bleu, ++n;
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

bool SensitivityGrid::complete() const {
  if (cells.size() != lambdas.size() * taus.size() * seeds.size()) return false;
  return std::all_of(cells.begin(), cells.end(), [](const SweepCell& c) { return c.dev_bleu.has_value(); });
}

std::string SensitivityGrid::csv() const {
  std::ostringstream out;
  out << "lambda,tau,seed,dev_bleu\n";
  for (const auto& c : cells) {
    out << c.lambda << ',' << c.tau << ',' << c.seed << ',';
    if (c.dev_bleu) {
      std::ostringstream v;
      v.precision(4);
      v << std::fixed << *c.dev_bleu;
      out << v.str();
    } else {
      out << "hole";
    }
    out << '\n';
  }
  return out.str();
}

SensitivityGrid sensitivity_sweep(std::span<const double> lambdas, std::span<const double> taus,
                                  std::span<const std::uint64_t> seeds, const SweepRunner& run) {
  if (lambdas.empty() || taus.empty() || seeds.empty()) throw ConfigError("sweep axes must be non-empty");
  SensitivityGrid grid{{lambdas.begin(), lambdas.end()}, {taus.begin(), taus.end()}, {seeds.begin(), seeds.end()}, {}};
  for (double lambda : lambdas)
    for (double tau : taus)
      for (auto seed : seeds) {
        SweepCell cell{lambda, tau, seed, std::nullopt, {}};
        try {
          const double bleu = run(lambda, tau, seed);
          if (std::isfinite(bleu)) cell.dev_bleu = bleu;
          else cell.error = "non-finite BLEU";
        } catch (const std::exception& e) {
          cell.error = e.what();
        }
        grid.cells.push_back(std::move(cell));
      }
  return grid;
}

#define LMPRIOR_INSTANTIATE(T)                                                                              \
  template double perplexity<T>(const seqmodels::LanguageModel<T>&, const textdata::ParallelCorpus&,        \
                                std::size_t);                                                               \
  template double perplexity<T>(const seqmodels::TranslationModel<T>&, const textdata::ParallelCorpus&,     \
                                std::size_t);                                                               \
  template EntropyProfile entropy_profile<T>(const seqmodels::TranslationModel<T>*,                         \
                                             const seqmodels::LanguageModel<T>*,                            \
                                             const textdata::ParallelCorpus&, EntropyMode, std::size_t);

LMPRIOR_INSTANTIATE(float)
LMPRIOR_INSTANTIATE(double)
#undef LMPRIOR_INSTANTIATE

}  // namespace lmprior::evaluation
