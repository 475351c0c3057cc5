#include "lmprior/cli/config.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "lmprior/errors.hpp"

namespace lmprior::cli {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string show(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename N>
N parse_number(const std::string& key, const std::string& value) {
  N out{};
  const char* first = value.data();
  const char* last = first + value.size();
  if (!value.empty() && value[0] == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last || value.empty())
    throw UsageError("bad value '" + value + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw UsageError("bad boolean '" + value + "' for " + key);
}

// wraps parse errors of enum-like values into usage errors
template <typename F>
auto as_usage(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(key + ": " + e.what());
  }
}

using C = ExperimentConfig;

ConfigField text(std::string key, std::string C::*m, std::string help) {
  return {key, std::move(help), [m](C& c, const std::string& v) { c.*m = v; },
          [m](const C& c) { return c.*m; }};
}

ConfigField count(std::string key, std::size_t C::*m, std::string help) {
  return {key, std::move(help), [m, key](C& c, const std::string& v) { c.*m = parse_number<std::size_t>(key, v); },
          [m](const C& c) { return std::to_string(c.*m); }};
}

ConfigField real(std::string key, double C::*m, std::string help) {
  return {key, std::move(help), [m, key](C& c, const std::string& v) { c.*m = parse_number<double>(key, v); },
          [m](const C& c) { return show(c.*m); }};
}

ConfigField flag(std::string key, bool C::*m, std::string help) {
  return {key, std::move(help), [m, key](C& c, const std::string& v) { c.*m = parse_bool(key, v); },
          [m](const C& c) { return std::string(c.*m ? "true" : "false"); }};
}

ConfigField subword(std::string key, textdata::SubwordMode C::*m, std::string help) {
  return {key, std::move(help),
          [m, key](C& c, const std::string& v) { c.*m = as_usage(key, [&] { return textdata::parse_subword_mode(v); }); },
          [m](const C& c) { return std::string(textdata::to_string(c.*m)); }};
}

std::vector<ConfigField> build_fields() {
  std::vector<ConfigField> f = {
      text("data_dir", &C::data_dir, "directory holding the corpus files"),
      text("train_src", &C::train_src, "training source text (default data_dir/train.src)"),
      text("train_tgt", &C::train_tgt, "training target text (default data_dir/train.tgt)"),
      text("dev_src", &C::dev_src, "dev source text (default data_dir/dev.src)"),
      text("dev_tgt", &C::dev_tgt, "dev target text (default data_dir/dev.tgt)"),
      text("test_src", &C::test_src, "test source text (default data_dir/test.src)"),
      text("test_tgt", &C::test_tgt, "test target text (default data_dir/test.tgt)"),
      text("mono", &C::mono, "monolingual target text for the LM (default data_dir/mono.txt)"),
      text("mono_dev", &C::mono_dev, "LM dev text (default data_dir/mono.dev.txt)"),
      count("filter_max_len", &C::filter_max_len, "max words per side of a parallel pair"),
      real("filter_max_ratio", &C::filter_max_ratio, "max long/short word ratio of a pair"),
      count("mono_max_len", &C::mono_max_len, "max words per monolingual line"),
      flag("lowercase", &C::lowercase, "lowercase all text on ingestion"),
      subword("src_subword", &C::src_subword, "source tokenizer: bpe or chars"),
      subword("tgt_subword", &C::tgt_subword, "target tokenizer: bpe or chars"),
      count("src_vocab_size", &C::src_vocab_size, "source vocabulary cap"),
      count("tgt_vocab_size", &C::tgt_vocab_size, "target vocabulary cap (shared by LM and TM)"),
      count("d_model", &C::d_model, "TM width"),
      count("layers", &C::layers, "TM encoder and decoder layers"),
      count("heads", &C::heads, "TM attention heads"),
      count("ff", &C::ff, "TM feed-forward width"),
      real("dropout", &C::dropout, "TM dropout"),
      count("max_positions", &C::max_positions, "longest sequence either model accepts"),
      count("lm_d_model", &C::lm_d_model, "LM width"),
      count("lm_layers", &C::lm_layers, "LM layers"),
      count("lm_heads", &C::lm_heads, "LM attention heads"),
      count("lm_ff", &C::lm_ff, "LM feed-forward width"),
      real("lm_dropout", &C::lm_dropout, "LM dropout"),
      {"objective", "mle, ls, prior, prior+ls, postnorm or postnorm+ls",
       [](C& c, const std::string& v) {
         c.objective.objective = as_usage("objective", [&] { return objectives::parse_objective(v); });
       },
       [](const C& c) { return objectives::to_string(c.objective.objective); }},
      {"lambda", "weight of the LM-prior term",
       [](C& c, const std::string& v) { c.objective.lambda = parse_number<double>("lambda", v); },
       [](const C& c) { return show(c.objective.lambda); }},
      {"tau", "softmax temperature of the LM-prior term",
       [](C& c, const std::string& v) { c.objective.tau = parse_number<double>("tau", v); },
       [](const C& c) { return show(c.objective.tau); }},
      {"alpha", "label smoothing mass for the +ls objectives",
       [](C& c, const std::string& v) { c.objective.alpha = parse_number<double>("alpha", v); },
       [](const C& c) { return show(c.objective.alpha); }},
      {"fusion", "decode-time scorer: plain, shallow or postnorm",
       [](C& c, const std::string& v) {
         c.fusion = as_usage("fusion", [&] { return decoding::parse_fusion_mode(v); });
       },
       [](const C& c) { return decoding::to_string(c.fusion); }},
      real("beta", &C::beta, "shallow-fusion LM weight"),
      count("beam", &C::beam, "beam size for translate"),
      flag("length_normalize", &C::length_normalize, "pick the final beam hypothesis by score per token"),
      real("lr", &C::lr, "peak learning rate"),
      count("warmup", &C::warmup, "linear warmup steps"),
      count("tokens_per_batch", &C::tokens_per_batch, "padded tokens per batch"),
      count("max_steps", &C::max_steps, "TM step budget"),
      count("eval_every", &C::eval_every, "TM steps between dev evaluations"),
      count("patience", &C::patience, "non-improving evaluations tolerated"),
      real("clip_norm", &C::clip_norm, "global gradient norm cap (0 disables)"),
      count("eval_rows", &C::eval_rows, "sentences per evaluation batch"),
      flag("bleu_smoothing", &C::bleu_smoothing, "add-one smoothing of higher-order BLEU precisions"),
      count("lm_max_steps", &C::lm_max_steps, "LM step budget"),
      count("lm_eval_every", &C::lm_eval_every, "LM steps between dev evaluations"),
      {"seed", "root seed; init, shuffle, dropout and toy-gen streams derive from it",
       [](C& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); },
       [](const C& c) { return std::to_string(c.seed); }},
      text("precision", &C::precision, "float or double"),
      text("out_dir", &C::out_dir, "run directory for every artifact"),
      text("lm_checkpoint", &C::lm_checkpoint, "frozen LM checkpoint"),
      text("checkpoint", &C::checkpoint, "TM checkpoint for translate and evaluate"),
      text("checkpoints", &C::checkpoints, "comma-separated checkpoints for analyze-entropy"),
      text("input", &C::input, "translate input (default test_src)"),
      text("output", &C::output, "translate output / evaluate hypotheses (default out_dir/translations.txt)"),
      text("resume_state", &C::resume_state, "training state file to resume from and save to"),
      count("stop_after", &C::stop_after, "halt training at this step and save resume_state"),
      {"task", "toy task: copy, reverse or digits-to-words",
       [](C& c, const std::string& v) { c.task = parse_toy_task(v); },
       [](const C& c) { return to_string(c.task); }},
      count("n_pairs", &C::n_pairs, "toy training pairs"),
      count("n_dev", &C::n_dev, "toy dev pairs"),
      count("n_test", &C::n_test, "toy test pairs"),
      count("n_mono", &C::n_mono, "toy monolingual sentences"),
      count("n_mono_dev", &C::n_mono_dev, "toy LM dev sentences"),
      count("toy_min_len", &C::toy_min_len, "shortest toy sentence in words"),
      count("toy_max_len", &C::toy_max_len, "longest toy sentence in words"),
      count("trace_sentences", &C::trace_sentences, "postnorm flip traces written by analyze-entropy"),
      count("top_k", &C::top_k, "candidates listed per traced step"),
      real("bin_width", &C::bin_width, "entropy histogram bin width in nats"),
      text("sweep_lambdas", &C::sweep_lambdas, "comma list of lambda values"),
      text("sweep_taus", &C::sweep_taus, "comma list of tau values"),
      text("sweep_seeds", &C::sweep_seeds, "comma list of seeds"),
  };
  return f;
}

}  // namespace

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = build_fields();
  return fields;
}

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  for (const auto& f : config_fields())
    if (f.key == key) return f.set(config, value);
  throw UsageError("unknown config key '" + key + "'");
}

ExperimentConfig parse_config(std::string_view text, ExperimentConfig base) {
  std::istringstream in{std::string(text)};
  std::set<std::string> seen;
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(n) + ": expected key = value");
    const auto key = trim(std::string_view(body).substr(0, eq));
    if (!seen.insert(key).second) throw UsageError("config key '" + key + "' given twice");
    set_config_value(base, key, trim(std::string_view(body).substr(eq + 1)));
  }
  return base;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string resolved_text(const ExperimentConfig& config) {
  std::string out;
  for (const auto& f : config_fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

void write_resolved(const ExperimentConfig& config, const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << resolved_text(config);
}

std::vector<std::string> split_list(std::string_view list) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in{std::string(list)};
  while (std::getline(in, cur, ',')) {
    auto t = trim(cur);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

std::vector<double> parse_doubles(std::string_view list) {
  std::vector<double> out;
  for (const auto& s : split_list(list)) out.push_back(parse_number<double>("list", s));
  return out;
}

std::vector<std::uint64_t> parse_seeds(std::string_view list) {
  std::vector<std::uint64_t> out;
  for (const auto& s : split_list(list)) out.push_back(parse_number<std::uint64_t>("seed list", s));
  return out;
}

std::string ExperimentConfig::path(std::string_view key) const {
  static const std::map<std::string, std::pair<std::string C::*, std::string>, std::less<>> files = {
      {"train_src", {&C::train_src, "train.src"}}, {"train_tgt", {&C::train_tgt, "train.tgt"}},
      {"dev_src", {&C::dev_src, "dev.src"}},       {"dev_tgt", {&C::dev_tgt, "dev.tgt"}},
      {"test_src", {&C::test_src, "test.src"}},    {"test_tgt", {&C::test_tgt, "test.tgt"}},
      {"mono", {&C::mono, "mono.txt"}},            {"mono_dev", {&C::mono_dev, "mono.dev.txt"}}};
  auto it = files.find(key);
  if (it == files.end()) throw std::logic_error("no data path named " + std::string(key));
  const auto& explicit_path = this->*(it->second.first);
  return explicit_path.empty() ? (std::filesystem::path(data_dir) / it->second.second).string() : explicit_path;
}

trainer::TrainConfig ExperimentConfig::train_config(bool language_model) const {
  trainer::TrainConfig t;
  t.lr = lr;
  t.warmup = warmup;
  t.tokens_per_batch = tokens_per_batch;
  t.max_steps = language_model ? lm_max_steps : max_steps;
  t.eval_every = language_model ? lm_eval_every : eval_every;
  t.patience = patience;
  t.clip_norm = clip_norm;
  t.seed = seed;
  t.objective = objective;
  t.eval_rows = eval_rows;
  t.bleu_smoothing = bleu_smoothing;
  t.stop_after = stop_after;
  t.state_path = resume_state;
  return t;
}

seqmodels::ArchitectureConfig ExperimentConfig::tm_architecture(std::size_t src_vocab, std::size_t tgt_vocab,
                                                                std::uint64_t tgt_hash) const {
  seqmodels::ArchitectureConfig a;
  a.vocab_size = tgt_vocab;
  a.src_vocab_size = src_vocab;
  a.d_model = d_model;
  a.layers = layers;
  a.heads = heads;
  a.ff = ff;
  a.dropout = dropout;
  a.max_positions = max_positions;
  a.target_vocab_hash = tgt_hash;
  return a;
}

seqmodels::ArchitectureConfig ExperimentConfig::lm_architecture(std::size_t tgt_vocab, std::uint64_t tgt_hash) const {
  seqmodels::ArchitectureConfig a;
  a.vocab_size = tgt_vocab;
  a.d_model = lm_d_model;
  a.layers = lm_layers;
  a.heads = lm_heads;
  a.ff = lm_ff;
  a.dropout = lm_dropout;
  a.max_positions = max_positions;
  a.target_vocab_hash = tgt_hash;
  return a;
}

ToyOptions ExperimentConfig::toy_options() const {
  ToyOptions o;
  o.task = task;
  o.n_pairs = n_pairs;
  o.n_dev = n_dev;
  o.n_test = n_test;
  o.n_mono = n_mono;
  o.n_mono_dev = n_mono_dev;
  o.min_len = toy_min_len;
  o.max_len = toy_max_len;
  o.seed = seed;
  return o;
}

void ExperimentConfig::validate() const {
  if (precision != "float" && precision != "double") throw UsageError("precision must be float or double");
  if (beam == 0) throw UsageError("beam must be positive");
  if (bin_width <= 0) throw UsageError("bin_width must be positive");
  objective.validate();
  train_config(false).validate();
  train_config(true).validate();
}

}  // namespace lmprior::cli
