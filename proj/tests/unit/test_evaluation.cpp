#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "lmprior/errors.hpp"
#include "lmprior/evaluation/metrics.hpp"
#include "lmprior/objectives/losses.hpp"

using namespace lmprior;
using namespace lmprior::evaluation;

namespace {

// Independent BLEU oracle: string-keyed n-gram maps, explicit formula.
double oracle_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  auto words = [](const std::string& s) {
    std::vector<std::string> w;
    std::istringstream in(s);
    for (std::string x; in >> x;) w.push_back(x);
    return w;
  };
  double m[4] = {0, 0, 0, 0}, t[4] = {0, 0, 0, 0}, c = 0, r = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    auto h = words(hyps[s]), g = words(refs[s]);
    c += double(h.size());
    r += double(g.size());
    for (int n = 1; n <= 4; ++n) {
      std::unordered_map<std::string, int> hc, gc;
      auto key = [&](const std::vector<std::string>& v, std::size_t i) {
        std::string k;
        for (int j = 0; j < n; ++j) k += v[i + j] + "\x01";
        return k;
      };
      for (std::size_t i = 0; i + n <= h.size(); ++i) hc[key(h, i)]++;
      for (std::size_t i = 0; i + n <= g.size(); ++i) gc[key(g, i)]++;
      for (auto& [k, v] : hc) m[n - 1] += std::min(v, gc[k]);
      t[n - 1] += h.size() >= std::size_t(n) ? double(h.size() - n + 1) : 0.0;
    }
  }
  if (c == 0) return r == 0 ? 100.0 : 0.0;
  double logp = 0;
  int orders = 0;
  for (int n = 0; n < 4; ++n) {
    if (t[n] == 0) continue;  // order absent from every hypothesis
    if (m[n] == 0) return 0.0;
    logp += std::log(m[n] / t[n]);
    ++orders;
  }
  logp /= orders;
  const double bp = c >= r ? 1.0 : std::exp(1 - r / c);
  return 100 * bp * std::exp(logp);
}

seqmodels::ArchitectureConfig small_config(std::size_t k = 10) {
  seqmodels::ArchitectureConfig c;
  c.vocab_size = k;
  c.src_vocab_size = 8;
  c.d_model = 8;
  c.layers = 1;
  c.heads = 2;
  c.ff = 8;
  c.dropout = 0.0;
  return c;
}

textdata::ParallelCorpus random_corpus(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  textdata::ParallelCorpus c;
  for (std::size_t i = 0; i < n; ++i) {
    textdata::SentencePair p;
    for (std::size_t j = 0, m = 1 + rng() % 5; j < m; ++j) p.source.push_back(int(4 + rng() % 4));
    for (std::size_t j = 0, m = 1 + rng() % 6; j < m; ++j) p.target.push_back(int(4 + rng() % (k - 4)));
    c.pairs.push_back(p);
  }
  return c;
}

}  // namespace

TEST_CASE("BLEU hand-computed cases") {
  auto one = [](std::string h, std::string r) {
    return corpus_bleu(std::vector<std::string>{h}, std::vector<std::string>{r});
  };
  auto b = one("a b c d e", "a b c d f");
  CHECK(b.precisions[0] == doctest::Approx(0.8));
  CHECK(b.precisions[1] == doctest::Approx(0.75));
  CHECK(b.precisions[2] == doctest::Approx(2.0 / 3.0));
  CHECK(b.precisions[3] == doctest::Approx(0.5));
  CHECK(b.brevity_penalty == 1.0);
  CHECK(b.score == doctest::Approx(66.87).epsilon(1e-3));
  CHECK(std::abs(b.score - 100 * std::pow(0.2, 0.25)) < 1e-9);

  CHECK(one("a b c d", "a b c d").score == 100.0);
  CHECK(one("the the the the", "the cat").score == 0.0);
  CHECK(one("the the the the", "the cat").precisions[0] == doctest::Approx(0.25));
  CHECK(one("a b c d", "a b c d e f").score == doctest::Approx(100 * std::exp(-0.5)));

  std::vector<std::string> hyps = {"a b c d", ""}, refs = {"a b c d", "x y"};
  auto e = corpus_bleu(hyps, refs);
  CHECK(e.hyp_length == 4);
  CHECK(e.ref_length == 6);
  CHECK(e.score == doctest::Approx(100 * std::exp(-0.5)));

  std::vector<std::string> empty_h = {""}, some_r = {"a"};
  CHECK(corpus_bleu(empty_h, some_r).score == 0.0);
  CHECK(corpus_bleu(empty_h, empty_h).score == 100.0);
  // short hypotheses: only the orders that exist count, BP does the rest
  CHECK(one("a", "a b c d").score == doctest::Approx(100 * std::exp(-3.0)));
  CHECK(one("a b", "a b").score == 100.0);
  CHECK_THROWS_AS(corpus_bleu(std::vector<std::string>{}, std::vector<std::string>{}), InvalidInput);
  CHECK_THROWS_AS(corpus_bleu(hyps, some_r), InvalidInput);

  // smoothing rescues missing higher-order matches
  auto s = corpus_bleu(std::vector<std::string>{"a b x c"}, std::vector<std::string>{"a b y c"}, 4, true);
  CHECK(s.smoothed);
  CHECK(s.precisions[3] == doctest::Approx(1.0 / 2.0));
  CHECK(s.score > 0.0);
}

TEST_CASE("BLEU against the oracle on random corpora, identity, permutation") {
  std::mt19937_64 rng(5);
  const std::vector<std::string> words = {"a", "b", "c", "d", "e", "f"};
  auto sentence = [&](std::size_t len) {
    std::string s;
    for (std::size_t i = 0; i < len; ++i) s += (i ? " " : "") + words[rng() % words.size()];
    return s;
  };
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> h, r;
    for (std::size_t i = 0, n = 1 + rng() % 5; i < n; ++i) {
      r.push_back(sentence(1 + rng() % 12));
      h.push_back(rng() % 3 == 0 ? r.back() : sentence(rng() % 12));
    }
    const double got = corpus_bleu(h, r).score;
    CHECK(got == doctest::Approx(oracle_bleu(h, r)).epsilon(1e-9));
    CHECK(corpus_bleu(r, r).score == doctest::Approx(100.0).epsilon(1e-12));
    auto hp = h, rp = r;
    std::vector<std::size_t> order(h.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); ++i) hp[i] = h[order[i]], rp[i] = r[order[i]];
    CHECK(corpus_bleu(hp, rp).score == doctest::Approx(got).epsilon(1e-12));
    CHECK(got >= 0.0);
    CHECK(got <= 100.0);
  }
}

TEST_CASE("perplexity agrees with the MLE loss and uniform models") {
  std::mt19937_64 rng(3);
  auto corpus = random_corpus(rng, 12, 10);
  seqmodels::TranslationModel<double> tm(small_config(), 1);
  seqmodels::LanguageModel<double> lm(small_config(), 1);

  std::vector<std::size_t> all(corpus.size());
  std::iota(all.begin(), all.end(), 0);
  auto batch = textdata::make_batch(corpus, all);
  auto l = objectives::mle_loss(tm.batch_logits(batch), batch.gold(), batch.gold_mask());
  CHECK(std::exp(l.mt_term) == doctest::Approx(perplexity(tm, corpus, 5)).epsilon(1e-9));
  auto ll = objectives::mle_loss(lm.batch_logits(batch), batch.gold(), batch.gold_mask());
  CHECK(std::exp(ll.mt_term) == doctest::Approx(perplexity(lm, corpus, 4)).epsilon(1e-9));

  seqmodels::LanguageModel<double> flat(small_config(100), 1);
  flat.params().get("embed").mutable_value().fill(0.0);
  CHECK(perplexity(flat, corpus) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK_THROWS_AS(perplexity(flat, textdata::ParallelCorpus{}), InvalidInput);
}

TEST_CASE("entropy profiles") {
  std::mt19937_64 rng(4);
  auto corpus = random_corpus(rng, 10, 10);
  seqmodels::LanguageModel<double> flat(small_config(), 1);
  flat.params().get("embed").mutable_value().fill(0.0);
  auto p = entropy_profile<double>(nullptr, &flat, corpus, EntropyMode::lm);
  for (double h : p.entropies) CHECK(h == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  std::size_t tokens = 0;
  for (const auto& pair : corpus.pairs) tokens += pair.target.size() + 1;
  CHECK(p.entropies.size() == tokens);

  seqmodels::TranslationModel<double> tm(small_config(), 2);
  seqmodels::LanguageModel<double> lm(small_config(), 3);
  auto t = entropy_profile<double>(&tm, nullptr, corpus, EntropyMode::tm);
  for (double h : t.entropies) {
    CHECK(h >= 0.0);
    CHECK(h <= std::log(10.0) + 1e-12);
  }
  // postnorm with a flat LM equals the TM profile
  auto pf = entropy_profile<double>(&tm, &flat, corpus, EntropyMode::postnorm);
  for (std::size_t i = 0; i < t.entropies.size(); ++i) CHECK(pf.entropies[i] == doctest::Approx(t.entropies[i]).epsilon(1e-10));
  auto pn = entropy_profile<double>(&tm, &lm, corpus, EntropyMode::postnorm);
  CHECK(pn.entropies.size() == t.entropies.size());
  CHECK_THROWS_AS(entropy_profile<double>(&tm, nullptr, corpus, EntropyMode::postnorm), ConfigError);

  auto hist = t.histogram(0.2);
  CHECK(hist.size() == std::size_t(std::ceil(std::log(10.0) / 0.2)));
  std::size_t total = 0;
  for (auto c : hist) total += c;
  CHECK(total == t.entropies.size());

  auto sharp = EntropyProfile::from_entropies({0.0, 0.0, 0.1, 0.5}, 4);
  CHECK(sharp.mean == doctest::Approx(0.15));
  CHECK(sharp.median == doctest::Approx(0.05));
  CHECK(sharp.histogram(0.2)[0] == 3);
  std::vector<TaggedProfile> tagged = {{"a", &sharp}, {"b", &sharp}};
  auto csv = histogram_csv(tagged);
  CHECK(csv.rfind("bin_low,bin_high,count,model_tag\n", 0) == 0);
  CHECK(csv.find("0.000000,0.200000,3,a\n") != std::string::npos);
  CHECK(csv.find("0.000000,0.200000,3,b\n") != std::string::npos);
  CHECK(parse_entropy_mode("lm") == EntropyMode::lm);
}

TEST_CASE("sensitivity sweep grid") {
  std::vector<double> lambdas = {0.1, 0.5}, taus = {1.0, 2.0};
  std::vector<std::uint64_t> seeds = {1, 2};
  auto grid = sensitivity_sweep(lambdas, taus, seeds, [](double l, double t, std::uint64_t s) {
    return 10 * l + t + double(s);
  });
  CHECK(grid.complete());
  CHECK(grid.cells.size() == 8);
  CHECK(*grid.mean(0.5, 2.0) == doctest::Approx(5 + 2 + 1.5));
  CHECK(grid.csv().rfind("lambda,tau,seed,dev_bleu\n", 0) == 0);

  auto holes = sensitivity_sweep(lambdas, taus, seeds, [](double l, double t, std::uint64_t s) -> double {
    if (l == 0.5 && t == 1.0 && s == 2) throw std::runtime_error("diverged");
    return 1.0;
  });
  CHECK_FALSE(holes.complete());
  CHECK(holes.mean(0.5, 1.0).value() == 1.0);
  CHECK(holes.csv().find("0.5,1,2,hole") != std::string::npos);
  CHECK_THROWS_AS(sensitivity_sweep(std::vector<double>{}, taus, seeds, nullptr), ConfigError);
}
