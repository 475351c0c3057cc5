#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "lmprior/errors.hpp"
#include "lmprior/evaluation/metrics.hpp"
#include "lmprior/trainer/loop.hpp"

using namespace lmprior;
using namespace lmprior::trainer;
namespace fs = std::filesystem;

namespace {

seqmodels::ArchitectureConfig tiny(std::size_t k = 12, double dropout = 0.1) {
  seqmodels::ArchitectureConfig c;
  c.vocab_size = k;
  c.src_vocab_size = 10;
  c.d_model = 8;
  c.layers = 1;
  c.heads = 2;
  c.ff = 16;
  c.dropout = dropout;
  return c;
}

// target = source shifted into the target id range
textdata::ParallelCorpus copy_corpus(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  textdata::ParallelCorpus c;
  for (std::size_t i = 0; i < n; ++i) {
    textdata::SentencePair p;
    for (std::size_t j = 0, m = 1 + rng() % 4; j < m; ++j) {
      const int t = int(4 + rng() % 6);
      p.source.push_back(t);
      p.target.push_back(t + 2);
    }
    c.pairs.push_back(p);
  }
  return c;
}

std::string ids_text(const textdata::TokenIds& ids) {
  std::string s;
  for (int t : ids) s += (s.empty() ? "" : " ") + std::to_string(t);
  return s;
}

struct Fixture {
  textdata::ParallelCorpus train = copy_corpus(1, 40);
  textdata::ParallelCorpus dev = copy_corpus(2, 8);
  TranslationData data;
  fs::path dir;

  Fixture() {
    data.train = &train;
    data.dev = &dev;
    for (const auto& p : dev.pairs) data.dev_references.push_back(ids_text(p.target));
    data.detokenize = ids_text;
    dir = fs::temp_directory_path() / ("lmprior_trainer_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
  }
  ~Fixture() { fs::remove_all(dir); }

  TrainConfig config() const {
    TrainConfig c;
    c.lr = 3e-3;
    c.warmup = 4;
    c.tokens_per_batch = 40;
    c.max_steps = 12;
    c.eval_every = 4;
    c.patience = 100;
    c.eval_rows = 8;
    return c;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename T>
bool same_tensor(const numerics::Tensor<T>& a, const numerics::Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

template <typename T>
bool same_params(const numerics::ParameterSet<T>& a, const numerics::ParameterSet<T>& b) {
  auto ia = a.begin();
  for (auto ib = b.begin(); ib != b.end(); ++ia, ++ib) {
    if (ia->first != ib->first) return false;
    const auto& x = ia->second.value().values();
    const auto& y = ib->second.value().values();
    if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return ia == a.end();
}

}  // namespace

TEST_CASE("inverse square root schedule") {
  CHECK(lr_schedule(4000) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_schedule(8000) == doctest::Approx(2e-4).epsilon(1e-12));
  CHECK(lr_schedule(32000) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_schedule(7, 0.5, 0) == 0.5);
  CHECK_THROWS_AS(lr_schedule(0), InvalidInput);
  double prev = 0;
  for (std::size_t s = 1; s <= 8000; s += 97) {
    CHECK(lr_schedule(s) > prev);
    prev = lr_schedule(s);
  }
  for (std::size_t s = 8001; s < 40000; s += 997) CHECK(lr_schedule(s) < lr_schedule(s - 1));
}

TEST_CASE("adam single step and zero gradient") {
  numerics::ParameterSet<double> p;
  p.add("w", numerics::Tensor<double>({1}, {1.0}));
  p.add("u", numerics::Tensor<double>({2}, {0.5, -2.0}));
  Adam<double> adam;
  GradientMap<double> g;
  g.emplace("w", numerics::Tensor<double>({1}, {1.0}));
  g.emplace("u", numerics::Tensor<double>({2}, {0.0, 0.0}));
  adam.step(p, g, 0.1);
  CHECK(p.get("w").value().values()[0] == doctest::Approx(0.9).epsilon(1e-9));
  CHECK(p.get("u").value().values()[0] == 0.5);
  CHECK(p.get("u").value().values()[1] == -2.0);
  CHECK(adam.steps() == 1);
}

TEST_CASE("non-finite gradient names the parameter") {
  numerics::ParameterSet<float> p;
  p.add("enc.0.ff.w1", numerics::Tensor<float>({2}, {1, 2}));
  GradientMap<float> g;
  g.emplace("enc.0.ff.w1", numerics::Tensor<float>({2}, {1, std::numeric_limits<float>::quiet_NaN()}));
  Adam<float> adam;
  try {
    adam.step(p, g, 0.1);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("enc.0.ff.w1") != std::string::npos);
  }
  CHECK(p.get("enc.0.ff.w1").value().values()[0] == 1.0f);
}

TEST_CASE("global norm clipping keeps direction") {
  GradientMap<double> g;
  g.emplace("a", numerics::Tensor<double>({1}, {3.0}));
  g.emplace("b", numerics::Tensor<double>({1}, {4.0}));
  CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g.at("a").values()[0] == doctest::Approx(0.6));
  CHECK(g.at("b").values()[0] == doctest::Approx(0.8));
  CHECK(global_norm(g) == doctest::Approx(1.0));
  CHECK(clip_global_norm(g, 2.0) == doctest::Approx(1.0));
  CHECK(g.at("a").values()[0] == doctest::Approx(0.6));
}

TEST_CASE("zero learning rate stops after patience non-improving evals") {
  Fixture f;
  auto cfg = f.config();
  cfg.lr = 0.0;
  cfg.max_steps = 1000;
  cfg.eval_every = 2;
  cfg.patience = 3;
  cfg.objective.objective = objectives::Objective::mle;
  seqmodels::TranslationModel<float> tm(tiny(), 5);
  const auto before = seqmodels::snapshot(tm.params());
  const auto r = train_translation(cfg, tm, static_cast<const seqmodels::LanguageModel<float>*>(nullptr), f.data);
  CHECK(r.stopped_early);
  CHECK(r.evals == cfg.patience + 1);
  CHECK(r.steps == (cfg.patience + 1) * cfg.eval_every);
  CHECK(r.best_step == cfg.eval_every);
  const auto after = seqmodels::snapshot(tm.params());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(same_tensor(before[i], after[i]));
}

TEST_CASE("prior with lambda 0 logs exactly like mle") {
  Fixture f;
  seqmodels::LanguageModel<float> lm(tiny(), 9);
  auto run = [&](objectives::Objective o, const seqmodels::LanguageModel<float>* prior, const char* name) {
    auto cfg = f.config();
    cfg.objective.objective = o;
    cfg.objective.lambda = 0.0;
    cfg.metrics_path = (f.dir / name).string();
    seqmodels::TranslationModel<float> tm(tiny(), 5);
    train_translation(cfg, tm, prior, f.data);
    return std::make_pair(slurp(cfg.metrics_path), seqmodels::snapshot(tm.params()));
  };
  const auto a = run(objectives::Objective::mle, nullptr, "mle.csv");
  const auto b = run(objectives::Objective::prior, &lm, "prior.csv");
  CHECK(a.first == b.first);
  REQUIRE(a.second.size() == b.second.size());
  for (std::size_t i = 0; i < a.second.size(); ++i) CHECK(same_tensor(a.second[i], b.second[i]));
  CHECK(a.first.rfind(metrics_header() + "\n", 0) == 0);
}

TEST_CASE("training is deterministic and resumes bitwise") {
  Fixture f;
  seqmodels::LanguageModel<float> lm(tiny(), 9);
  auto cfg = f.config();
  cfg.objective.objective = objectives::Objective::prior;
  cfg.objective.lambda = 0.5;
  cfg.objective.tau = 2.0;

  auto full = [&](const char* name) {
    auto c = cfg;
    c.metrics_path = (f.dir / name).string();
    seqmodels::TranslationModel<float> tm(tiny(), 5);
    const auto r = train_translation(c, tm, &lm, f.data);
    return std::make_tuple(slurp(c.metrics_path), seqmodels::snapshot(tm.params()), r.best_step);
  };
  const auto a = full("a.csv");
  const auto b = full("b.csv");
  CHECK(std::get<0>(a) == std::get<0>(b));
  for (std::size_t i = 0; i < std::get<1>(a).size(); ++i) CHECK(same_tensor(std::get<1>(a)[i], std::get<1>(b)[i]));

  auto c = cfg;
  c.metrics_path = (f.dir / "c.csv").string();
  c.state_path = (f.dir / "state.bin").string();
  c.stop_after = 6;  // mid-window, between evals
  {
    seqmodels::TranslationModel<float> tm(tiny(), 5);
    const auto r = train_translation(c, tm, &lm, f.data);
    CHECK(r.interrupted);
    CHECK(r.steps == 6);
  }
  c.stop_after = 0;
  seqmodels::TranslationModel<float> tm(tiny(), 77);  // weights come from the state file
  const auto r = train_translation(c, tm, &lm, f.data);
  CHECK_FALSE(r.interrupted);
  CHECK(r.steps == cfg.max_steps);
  CHECK(r.best_step == std::get<2>(a));
  CHECK(slurp(c.metrics_path) == std::get<0>(a));
  const auto resumed = seqmodels::snapshot(tm.params());
  for (std::size_t i = 0; i < resumed.size(); ++i) CHECK(same_tensor(resumed[i], std::get<1>(a)[i]));
}

TEST_CASE("language model mismatch is rejected before any step") {
  Fixture f;
  auto cfg = f.config();
  cfg.metrics_path = (f.dir / "m.csv").string();
  seqmodels::TranslationModel<float> tm(tiny(12), 5);
  const auto before = seqmodels::snapshot(tm.params());
  seqmodels::LanguageModel<float> other(tiny(13), 9);
  CHECK_THROWS_AS(train_translation(cfg, tm, &other, f.data), ConfigError);
  CHECK_THROWS_AS(train_translation(cfg, tm, static_cast<const seqmodels::LanguageModel<float>*>(nullptr), f.data),
                  ConfigError);
  cfg.objective.objective = objectives::Objective::postnorm;
  CHECK_THROWS_AS(train_translation(cfg, tm, static_cast<const seqmodels::LanguageModel<float>*>(nullptr), f.data),
                  ConfigError);
  CHECK_FALSE(fs::exists(cfg.metrics_path));
  const auto after = seqmodels::snapshot(tm.params());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(same_tensor(before[i], after[i]));
}

TEST_CASE("best checkpoint carries the dev history") {
  Fixture f;
  auto cfg = f.config();
  cfg.objective.objective = objectives::Objective::ls;
  cfg.checkpoint_path = (f.dir / "best.ckpt").string();
  seqmodels::TranslationModel<float> tm(tiny(), 5);
  const auto r = train_translation(cfg, tm, static_cast<const seqmodels::LanguageModel<float>*>(nullptr), f.data);
  const auto ck = seqmodels::load_checkpoint<float>(cfg.checkpoint_path);
  CHECK(ck.meta.kind == "tm");
  CHECK(ck.meta.step == r.best_step);
  CHECK(ck.meta.extra.at("objective") == "ls");
  CHECK_FALSE(ck.meta.dev_history.empty());
  seqmodels::TranslationModel<float> loaded(ck.meta.arch, 1);
  seqmodels::assign_parameters(loaded.params(), ck.tensors);
  CHECK(same_params(loaded.params(), tm.params()));
}

TEST_CASE("language model training lowers dev perplexity") {
  Fixture f;
  auto cfg = f.config();
  cfg.lr = 1e-2;
  cfg.max_steps = 60;
  cfg.eval_every = 10;
  textdata::ParallelCorpus mono;
  for (const auto& p : f.train.pairs) mono.pairs.push_back({{}, p.target});
  textdata::ParallelCorpus dev;
  for (const auto& p : f.dev.pairs) dev.pairs.push_back({{}, p.target});
  seqmodels::LanguageModel<float> lm(tiny(12, 0.0), 3);
  const double initial = evaluation::perplexity(lm, dev);
  const auto r = train_language(cfg, lm, mono, dev);
  REQUIRE(r.history.size() == 6);
  CHECK(r.history.front().dev_ppl.has_value());
  CHECK_FALSE(r.history.front().dev_bleu.has_value());
  const double final_ppl = evaluation::perplexity(lm, dev);
  CHECK(final_ppl == doctest::Approx(-r.best_score).epsilon(1e-9));
  CHECK(final_ppl < 0.8 * initial);
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.eval_every = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.stop_after = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lr = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.objective.tau = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
