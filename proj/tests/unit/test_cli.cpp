#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "lmprior/cli/commands.hpp"
#include "lmprior/errors.hpp"

using namespace lmprior;
using namespace lmprior::cli;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path = fs::temp_directory_path() / ("lmprior_cli_" + std::to_string(std::random_device{}()));
  TempDir() { fs::create_directories(path); }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

ExperimentConfig tiny(const TempDir& dir) {
  ExperimentConfig c;
  c.data_dir = dir / "data";
  c.out_dir = dir / "run";
  c.n_pairs = 40;
  c.n_dev = 8;
  c.n_test = 8;
  c.n_mono = 120;
  c.n_mono_dev = 16;
  c.d_model = c.lm_d_model = 8;
  c.ff = c.lm_ff = 16;
  c.layers = c.lm_layers = 1;
  c.max_steps = c.lm_max_steps = 6;
  c.eval_every = c.lm_eval_every = 3;
  c.warmup = 2;
  c.tokens_per_batch = 120;
  c.beam = 2;
  return c;
}

}  // namespace

TEST_CASE("toy task mappings") {
  CHECK(toy_target(ToyTask::copy, "c f a") == "c f a");
  CHECK(toy_target(ToyTask::reverse, "a b c") == "c b a");
  CHECK(toy_target(ToyTask::digits_to_words, "3 1") == "three one");
  // lookup-table oracle for the first two positions, which never vary
  const char* words[] = {"zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"};
  for (int a = 0; a < 10; ++a)
    for (int b = 0; b < 10; ++b)
      CHECK(toy_target(ToyTask::digits_to_words, std::to_string(a) + " " + std::to_string(b)) ==
            std::string(words[a]) + " " + words[b]);
  CHECK_THROWS_AS(parse_toy_task("sort"), UsageError);
  CHECK_THROWS_AS(toy_target(ToyTask::digits_to_words, "3 x"), InvalidInput);
}

TEST_CASE("variant spellings depend only on the two preceding digits") {
  std::set<std::string> seen;
  for (int a = 0; a < 10; ++a)
    for (int b = 0; b < 10; ++b)
      for (int d : {0, 4, 8}) {
        const auto ctx = std::to_string(a) + " " + std::to_string(b) + " " + std::to_string(d);
        const auto w = toy_target(ToyTask::digits_to_words, ctx);
        const auto last = w.substr(w.rfind(' ') + 1);
        seen.insert(last);
        // same context further into a sentence gives the same spelling
        const auto longer = toy_target(ToyTask::digits_to_words, "5 5 " + ctx);
        CHECK(longer.substr(longer.rfind(' ') + 1) == last);
      }
  CHECK(seen == std::set<std::string>{"zero", "oh", "four", "quad", "eight", "ocho"});
}

TEST_CASE("toy generation is deterministic and seed dependent") {
  ToyOptions o;
  o.n_pairs = 30;
  o.n_mono = 50;
  const auto a = generate_toy(o), b = generate_toy(o);
  CHECK(a.mono == b.mono);
  REQUIRE(a.train.size() == 30);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].source == b.train[i].source);
    CHECK(a.train[i].target == toy_target(o.task, a.train[i].source));
  }
  o.seed = 2;
  CHECK(generate_toy(o).mono != a.mono);
  o.n_pairs = 0;
  CHECK_THROWS_AS(generate_toy(o), UsageError);
}

TEST_CASE("config parsing") {
  auto c = parse_config("# comment\nlambda = 0.25\n tau=4 # trailing\n\nobjective = prior+ls\nlowercase = yes\n");
  CHECK(c.objective.lambda == 0.25);
  CHECK(c.objective.tau == 4.0);
  CHECK(c.objective.objective == objectives::Objective::prior_ls);
  CHECK(c.lowercase);
  CHECK_THROWS_AS(parse_config("lamda = 0.5\n"), UsageError);
  CHECK_THROWS_AS(parse_config("lambda = half\n"), UsageError);
  CHECK_THROWS_AS(parse_config("lambda\n"), UsageError);
  CHECK_THROWS_AS(parse_config("lambda = 1\nlambda = 2\n"), UsageError);
  CHECK_THROWS_AS(parse_config("objective = map\n"), UsageError);
  CHECK_THROWS_AS(parse_config("max_steps = -3\n"), UsageError);
}

TEST_CASE("resolved config round trips every key") {
  ExperimentConfig c;
  c.objective.lambda = 0.1;
  c.objective.tau = 1.0 / 3.0;
  c.lr = 1e-7;
  c.fusion = decoding::FusionMode::shallow;
  c.task = ToyTask::reverse;
  c.tgt_subword = textdata::SubwordMode::chars;
  c.checkpoints = "a.ckpt,b.ckpt";
  const auto text = resolved_text(c);
  CHECK(resolved_text(parse_config(text)) == text);
  const auto back = parse_config(text);
  CHECK(back.objective.tau == c.objective.tau);
  CHECK(back.lr == c.lr);
  std::set<std::string> keys;
  for (const auto& f : config_fields()) CHECK(keys.insert(f.key).second);
  CHECK(std::count(text.begin(), text.end(), '\n') == long(config_fields().size()));
}

TEST_CASE("list parsing") {
  CHECK(parse_doubles("0.1, 0.5,1") == std::vector<double>{0.1, 0.5, 1.0});
  CHECK(parse_seeds("1,2,3") == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(split_list(" a , ,b") == std::vector<std::string>{"a", "b"});
}

TEST_CASE("exit codes") {
  TempDir dir;
  std::string out, err;
  CHECK(run({}, &out, &err) == 1);
  CHECK(run({"frobnicate"}) == 1);
  CHECK(run({"train-tm", "--no-such-key", "1"}) == 1);
  CHECK(run({"gen-toy", "--task", "sort", "--data-dir", dir / "d"}, &out, &err) == 1);
  CHECK(err.find("sort") != std::string::npos);
  // prior without an LM fails before touching the (missing) data
  CHECK(run({"train-tm", "--objective", "prior", "--data-dir", dir / "missing"}, &out, &err) == 1);
  CHECK(err.find("lm-checkpoint") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "missing"));
  CHECK(run({"train-tm", "--objective", "postnorm", "--data-dir", dir / "missing"}) == 1);
  // missing data is a runtime failure
  CHECK(run({"train-tm", "--objective", "mle", "--data-dir", dir / "missing", "--out-dir", dir / "o"}) == 2);
  CHECK(run({"train-tm", "--help"}, &out) == 0);
  CHECK(out.find("--lm-checkpoint") != std::string::npos);
}

TEST_CASE("config file plus flag overrides") {
  TempDir dir;
  {
    std::ofstream f(dir / "exp.cfg");
    f << "n_pairs = 12\nn_mono = 30\nn_dev = 2\nn_test = 2\nn_mono_dev = 3\ntask = reverse\n";
  }
  CHECK(run({"gen-toy", "-c", dir / "exp.cfg", "--data-dir", dir / "d", "--n-pairs", "7"}) == 0);
  CHECK(textdata::read_lines(dir / "d/train.src").size() == 7);
  CHECK(textdata::read_lines(dir / "d/mono.txt").size() == 30);
  const auto resolved = load_config(dir / "d/gen-toy.cfg");
  CHECK(resolved.n_pairs == 7);
  CHECK(resolved.task == ToyTask::reverse);
}

TEST_CASE("pipeline end to end with reproducible outputs") {
  TempDir dir;
  auto c = tiny(dir);
  std::ostringstream log;
  gen_toy(c, log);

  auto lm_cfg = c;
  lm_cfg.out_dir = dir / "lm";
  const auto lm = train_lm(lm_cfg, log);
  CHECK(fs::exists(lm.at("checkpoint").get<std::string>()));

  auto tm_cfg = c;
  tm_cfg.objective.objective = objectives::Objective::prior;
  tm_cfg.lm_checkpoint = lm.at("checkpoint");
  tm_cfg.out_dir = dir / "tm1";
  const auto r1 = train_tm(tm_cfg, log);
  tm_cfg.out_dir = dir / "tm2";
  const auto r2 = train_tm(tm_cfg, log);
  CHECK(slurp(dir / "tm1/metrics.csv") == slurp(dir / "tm2/metrics.csv"));
  CHECK(r1.at("dev_bleu") == r2.at("dev_bleu"));

  // the resolved config alone reproduces the run
  auto replay = load_config(dir / "tm1/train-tm.cfg");
  replay.out_dir = dir / "tm3";
  train_tm(replay, log);
  CHECK(slurp(dir / "tm1/metrics.csv") == slurp(dir / "tm3/metrics.csv"));

  auto mle_cfg = c;
  mle_cfg.objective.objective = objectives::Objective::mle;
  mle_cfg.lm_checkpoint = lm.at("checkpoint");
  mle_cfg.out_dir = dir / "mle";
  std::ostringstream warn;
  train_tm(mle_cfg, warn);
  CHECK(warn.str().find("warning") != std::string::npos);

  auto use = c;
  use.checkpoint = r1.at("checkpoint");
  use.out_dir = dir / "eval";
  const auto ev = evaluate(use, log);
  CHECK(ev.contains("translate"));
  CHECK(ev.at("bleu").get<double>() >= 0.0);
  CHECK(ev.at("test_ppl").get<double>() > 1.0);
  CHECK(textdata::read_lines(dir / "eval/translations.txt").size() == c.n_test);

  auto shallow = use;
  shallow.fusion = decoding::FusionMode::shallow;
  CHECK_THROWS_AS(translate(shallow, log), UsageError);
  shallow.lm_checkpoint = lm.at("checkpoint");
  shallow.output = dir / "eval/shallow.txt";
  CHECK(translate(shallow, log).at("fusion") == "shallow");

  auto an = c;
  an.out_dir = dir / "an";
  an.checkpoints = r1.at("checkpoint").get<std::string>() + "," + r1.at("checkpoint").get<std::string>() + "," +
                   lm.at("checkpoint").get<std::string>();
  an.lm_checkpoint = lm.at("checkpoint");
  an.trace_sentences = 2;
  const auto a = analyze_entropy(an, log);
  REQUIRE(a.at("models").size() == 3);
  CHECK(a.at("models")[0].at("mean") == a.at("models")[1].at("mean"));
  CHECK(a.at("models")[2].at("mode") == "lm");
  CHECK(a.at("trace_steps").get<std::size_t>() > 0);
  // identical checkpoints produce identical histogram rows
  std::map<std::string, std::vector<std::string>> rows;
  for (const auto& line : textdata::read_lines(an.out_dir + "/entropy.csv")) {
    const auto comma = line.rfind(',');
    rows[line.substr(comma + 1)].push_back(line.substr(0, comma));
  }
  CHECK(rows.at("tm1/tm") == rows.at("tm1/tm#2"));

  auto sw = c;
  sw.out_dir = dir / "sweep";
  sw.lm_checkpoint = lm.at("checkpoint");
  sw.sweep_lambdas = "0.5";
  sw.sweep_taus = "1,2";
  sw.sweep_seeds = "1";
  const auto s = sweep(sw, log);
  CHECK(s.at("complete").get<bool>());
  CHECK(textdata::read_lines(sw.out_dir + "/sweep.csv").size() == 3);
}

TEST_CASE("analysis rejects checkpoints with different target vocabularies") {
  TempDir dir;
  auto c = tiny(dir);
  std::ostringstream log;
  gen_toy(c, log);
  auto a = c;
  a.objective.objective = objectives::Objective::mle;
  a.out_dir = dir / "a";
  const auto ra = train_tm(a, log);
  auto b = a;
  b.out_dir = dir / "b";
  b.tgt_vocab_size = 30;
  const auto rb = train_tm(b, log);
  auto an = c;
  an.out_dir = dir / "an";
  an.checkpoints = ra.at("checkpoint").get<std::string>() + "," + rb.at("checkpoint").get<std::string>();
  CHECK_THROWS_AS(analyze_entropy(an, log), ConfigError);
}
