#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "gradcheck.hpp"
#include "lmprior/errors.hpp"
#include "lmprior/seqmodels/checkpoint.hpp"
#include "lmprior/seqmodels/models.hpp"

using namespace lmprior;
using namespace lmprior::seqmodels;
using numerics::Tensor;
using textdata::ParallelCorpus;
using textdata::SentencePair;

namespace {

ArchitectureConfig tiny_config(std::size_t k = 11, std::size_t src_k = 9) {
  ArchitectureConfig c;
  c.vocab_size = k;
  c.src_vocab_size = src_k;
  c.d_model = 8;
  c.layers = 2;
  c.heads = 2;
  c.ff = 12;
  c.dropout = 0.0;
  return c;
}

int random_token(std::mt19937_64& rng, std::size_t k) {
  return static_cast<int>(textdata::kNumSpecials + rng() % (k - textdata::kNumSpecials));
}

ParallelCorpus random_corpus(std::mt19937_64& rng, std::size_t n, std::size_t src_k, std::size_t tgt_k) {
  ParallelCorpus c;
  for (std::size_t i = 0; i < n; ++i) {
    SentencePair p;
    for (std::size_t j = 0, m = 1 + rng() % 5; j < m; ++j) p.source.push_back(random_token(rng, src_k));
    for (std::size_t j = 0, m = 1 + rng() % 5; j < m; ++j) p.target.push_back(random_token(rng, tgt_k));
    c.pairs.push_back(p);
  }
  return c;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a.data()[i]) - double(b.data()[i])));
  return m;
}

}  // namespace

TEST_CASE("glorot bound and zero biases") {
  std::mt19937_64 rng(3);
  auto w = glorot_uniform<double>(2, 3, rng);
  const double a = std::sqrt(6.0 / 5.0);
  CHECK(a == doctest::Approx(1.0954).epsilon(1e-4));
  for (double v : w.values()) CHECK(std::abs(v) < a);

  LanguageModel<double> lm(tiny_config(), 1);
  for (const auto& [name, v] : lm.params()) {
    if (name.ends_with(".bias")) {
      for (double x : v.value().values()) CHECK(x == 0.0);
    }
    if (name.ends_with(".weight")) {
      const auto& s = v.value().shape();
      const double bound = std::sqrt(6.0 / double(s[0] + s[1]));
      for (double x : v.value().values()) CHECK(std::abs(x) < bound);
    }
  }
}

TEST_CASE("same seed gives identical parameters, different seed differs") {
  TranslationModel<float> a(tiny_config(), 42), b(tiny_config(), 42), c(tiny_config(), 43);
  bool any_diff = false;
  auto ib = b.params().begin();
  auto ic = c.params().begin();
  for (auto ia = a.params().begin(); ia != a.params().end(); ++ia, ++ib, ++ic) {
    CHECK(ia->first == ib->first);
    CHECK(ia->second.value() == ib->second.value());
    if (!(ia->second.value() == ic->second.value())) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("LM causal probe over random perturbations") {
  LanguageModel<double> lm(tiny_config(), 5);
  std::mt19937_64 rng(17);
  const std::size_t len = 7;
  std::vector<std::uint8_t> mask(len, 1);
  for (int probe = 0; probe < 100; ++probe) {
    std::vector<int> ids(len);
    for (auto& id : ids) id = random_token(rng, 11);
    const std::size_t t = rng() % len;
    auto before = lm.forward(ids, 1, len, mask, nullptr).value();
    auto changed = ids;
    for (std::size_t j = t + 1; j < len; ++j) changed[j] = random_token(rng, 11);
    auto after = lm.forward(changed, 1, len, mask, nullptr).value();
    for (std::size_t i = 0; i < 11; ++i) REQUIRE(after.at(t, i) == doctest::Approx(before.at(t, i)).epsilon(1e-12));
  }
}

TEST_CASE("TM decoder is causal and depends on the source") {
  TranslationModel<double> tm(tiny_config(), 6);
  std::mt19937_64 rng(23);
  TokenIds src = {4, 5, 6, 7};
  std::vector<std::uint8_t> smask(src.size(), 1);
  auto memory = tm.encode(src, 1, src.size(), smask, nullptr);
  const std::size_t len = 6;
  std::vector<std::uint8_t> mask(len, 1);
  for (int probe = 0; probe < 100; ++probe) {
    std::vector<int> ids(len);
    for (auto& id : ids) id = random_token(rng, 11);
    const std::size_t t = rng() % len;
    auto before = tm.decode(memory, ids, 1, len, mask, nullptr).value();
    auto changed = ids;
    for (std::size_t j = t + 1; j < len; ++j) changed[j] = random_token(rng, 11);
    auto after = tm.decode(memory, changed, 1, len, mask, nullptr).value();
    for (std::size_t i = 0; i < 11; ++i) REQUIRE(after.at(t, i) == doctest::Approx(before.at(t, i)).epsilon(1e-12));
  }
  std::vector<int> ids = {1, 5, 6};
  std::vector<std::uint8_t> m3(3, 1);
  auto a = tm.decode(memory, ids, 1, 3, m3, nullptr).value();
  TokenIds other = {8, 5, 6, 7};
  auto memory2 = tm.encode(other, 1, other.size(), smask, nullptr);
  auto b = tm.decode(memory2, ids, 1, 3, m3, nullptr).value();
  CHECK(max_abs_diff(a, b) > 1e-6);
}

TEST_CASE("empty source is rejected") {
  TranslationModel<double> tm(tiny_config(), 1);
  CHECK_THROWS_AS(tm.encode_sentence({}), InvalidInput);
  std::vector<int> src = {4, 0, 0, 0};
  std::vector<std::uint8_t> mask = {1, 0, 0, 0};
  CHECK_THROWS_AS(tm.encode(src, 2, 2, mask, nullptr), InvalidInput);
}

TEST_CASE("output projection shares storage with the embedding") {
  LanguageModel<double> lm(tiny_config(), 2);
  CHECK_FALSE(lm.params().contains("output.weight"));
  std::vector<TokenIds> prefixes = {{1, 5, 6}};
  auto before = lm.next_logits(prefixes);
  CHECK(before.at(0, 7) != 0.0);
  // zeroing row 7 of the embedding must zero its logit everywhere
  auto& table = lm.params().get("embed").mutable_value();
  for (auto& v : table.row(7)) v = 0.0;
  auto after = lm.next_logits(prefixes);
  CHECK(after.at(0, 7) == 0.0);
}

TEST_CASE("fresh models are near-uniform") {
  for (std::size_t k : {50, 200}) {
    auto cfg = tiny_config(k, k);
    cfg.d_model = 64;
    cfg.ff = 128;
    LanguageModel<float> lm(cfg, 9);
    TranslationModel<float> tm(cfg, 9);
    std::mt19937_64 rng(4);
    auto corpus = random_corpus(rng, 16, k, k);
    auto batch = textdata::make_batch(corpus, std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
    for (const auto& dists : {lm_step_distributions(lm, batch), tm_step_distributions(tm, batch)}) {
      CHECK(dists.size() == batch.token_count);
      double mean = 0;
      for (const auto& d : dists) mean += numerics::entropy(d);
      mean /= double(dists.size());
      CHECK(std::abs(mean - std::log(double(k))) <= 0.1 * std::log(double(k)));
    }
  }
}

TEST_CASE("step distributions keep argmax across temperatures") {
  LanguageModel<double> lm(tiny_config(), 8);
  std::mt19937_64 rng(1);
  auto corpus = random_corpus(rng, 4, 9, 11);
  auto batch = textdata::make_batch(corpus, std::vector<std::size_t>{0, 1, 2, 3});
  auto d1 = lm_step_distributions(lm, batch, 1.0);
  auto d2 = lm_step_distributions(lm, batch, 2.0);
  REQUIRE(d1.size() == d2.size());
  for (std::size_t i = 0; i < d1.size(); ++i) {
    CHECK(d1[i].argmax() == d2[i].argmax());
    CHECK(numerics::entropy(d2[i]) >= numerics::entropy(d1[i]) - 1e-12);
  }
}

TEST_CASE("batched next_logits matches teacher forcing") {
  TranslationModel<double> tm(tiny_config(), 12);
  LanguageModel<double> lm(tiny_config(), 12);
  TokenIds src = {4, 6, 8};
  auto memory = tm.encode_sentence(src);
  std::vector<TokenIds> prefixes = {{1}, {1, 5, 9, 10}, {1, 7}};
  auto tm_batched = tm.next_logits(memory, prefixes);
  auto lm_batched = lm.next_logits(prefixes);
  for (std::size_t r = 0; r < prefixes.size(); ++r) {
    std::vector<TokenIds> one = {prefixes[r]};
    auto tm_single = tm.next_logits(memory, one);
    auto lm_single = lm.next_logits(one);
    for (std::size_t i = 0; i < 11; ++i) {
      CHECK(tm_batched.at(r, i) == doctest::Approx(tm_single.at(0, i)).epsilon(1e-10));
      CHECK(lm_batched.at(r, i) == doctest::Approx(lm_single.at(0, i)).epsilon(1e-10));
    }
  }
}

TEST_CASE("out-of-vocabulary ids are a configuration error") {
  LanguageModel<double> lm(tiny_config(7), 1);
  std::mt19937_64 rng(1);
  auto corpus = random_corpus(rng, 3, 9, 11);
  auto batch = textdata::make_batch(corpus, std::vector<std::size_t>{0, 1, 2});
  bool large = false;
  for (int id : batch.tgt_ids) large = large || id >= 7;
  if (large) CHECK_THROWS_AS(lm_step_distributions(lm, batch), ConfigError);
  auto a = tiny_config(11), b = tiny_config(12);
  CHECK_THROWS_AS(check_vocab_compatible(a, b), ConfigError);
  b = a;
  a.target_vocab_hash = 1;
  b.target_vocab_hash = 2;
  CHECK_THROWS_AS(check_vocab_compatible(a, b), ConfigError);
}

TEST_CASE("invalid architectures are rejected") {
  auto c = tiny_config();
  c.heads = 3;
  CHECK_THROWS_AS(LanguageModel<float>(c, 1), ConfigError);
  c = tiny_config();
  c.src_vocab_size = 0;
  CHECK_NOTHROW(LanguageModel<float>(c, 1));
  CHECK_THROWS_AS(TranslationModel<float>(c, 1), ConfigError);
}

TEST_CASE("checkpoint round trip is bitwise") {
  const auto dir = std::filesystem::temp_directory_path() / "lmprior_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "tm.ckpt").string();
  auto cfg = tiny_config();
  cfg.target_vocab_hash = 1234;
  TranslationModel<float> tm(cfg, 77);
  std::mt19937_64 rng(2);
  auto corpus = random_corpus(rng, 5, 9, 11);
  auto batch = textdata::make_batch(corpus, std::vector<std::size_t>{0, 1, 2, 3, 4});
  auto before = tm.batch_logits(batch).value();

  CheckpointMeta meta;
  meta.kind = "tm";
  meta.arch = cfg;
  meta.step = 314;
  meta.dev_history = {{{"step", 200}, {"dev_bleu", 12.5}}};
  meta.target_tokenizer = textdata::SubwordModel::train(std::vector<std::string>{"a b c", "abc ab"}, 12);
  save_checkpoint(path, tm.params(), meta);

  auto loaded = load_checkpoint<float>(path);
  CHECK(loaded.meta.kind == "tm");
  CHECK(loaded.meta.dtype == "f32");
  CHECK(loaded.meta.arch == cfg);
  CHECK(loaded.meta.step == 314);
  CHECK(loaded.meta.dev_history[0]["dev_bleu"] == 12.5);
  REQUIRE(loaded.meta.target_tokenizer);
  CHECK(loaded.meta.target_tokenizer->encode("abc") == meta.target_tokenizer->encode("abc"));
  CHECK_FALSE(loaded.meta.source_tokenizer);

  TranslationModel<float> fresh(loaded.meta.arch, 1);
  assign_parameters(fresh.params(), loaded.tensors);
  auto after = fresh.batch_logits(batch).value();
  CHECK(before == after);

  // conversion to the other precision is allowed and close
  auto wide = load_checkpoint<double>(path);
  TranslationModel<double> tm64(wide.meta.arch, 1);
  assign_parameters(tm64.params(), wide.tensors);
  auto after64 = tm64.batch_logits(batch).value();
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(after64.data()[i] == doctest::Approx(before.data()[i]).epsilon(1e-4));

  // mismatched architecture
  auto other = cfg;
  other.d_model = 16;
  TranslationModel<float> wrong(other, 1);
  CHECK_THROWS_AS(assign_parameters(wrong.params(), loaded.tensors), ConfigError);

  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_checkpoint<float>(path), InvalidInput);
}

TEST_CASE("model gradients match finite differences") {
  auto cfg = tiny_config(7, 6);
  cfg.d_model = 4;
  cfg.ff = 6;
  cfg.layers = 1;
  std::mt19937_64 rng(31);
  auto corpus = random_corpus(rng, 3, 6, 7);
  auto batch = textdata::make_batch(corpus, std::vector<std::size_t>{0, 1, 2});
  const auto gold = batch.gold();
  const auto gm = batch.gold_mask();
  std::vector<double> weights(gm.begin(), gm.end());

  LanguageModel<double> lm(cfg, 3);
  auto lm_loss = [&] {
    return numerics::smoothed_nll(numerics::log_softmax(lm.batch_logits(batch)), gold,
                                  std::span<const double>(weights), 0.1);
  };
  auto r = testing::gradcheck(lm.params(), lm_loss);
  INFO(r.worst_name);
  CHECK(r.worst_relative_error < 1e-5);

  TranslationModel<double> tm(cfg, 3);
  auto tm_loss = [&] {
    return numerics::smoothed_nll(numerics::log_softmax(tm.batch_logits(batch)), gold,
                                  std::span<const double>(weights), 0.0);
  };
  auto r2 = testing::gradcheck(tm.params(), tm_loss);
  INFO(r2.worst_name);
  CHECK(r2.worst_relative_error < 1e-5);
}

TEST_CASE("snapshot and restore") {
  LanguageModel<float> lm(tiny_config(), 1);
  auto snap = snapshot(lm.params());
  lm.params().get("embed").mutable_value().fill(0.5f);
  restore(lm.params(), snap);
  LanguageModel<float> ref(tiny_config(), 1);
  CHECK(lm.params().get("embed").value() == ref.params().get("embed").value());
}
