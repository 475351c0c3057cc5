#include "lmprior/cli/commands.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>

#include "lmprior/decoding/search.hpp"
#include "lmprior/errors.hpp"
#include "lmprior/evaluation/metrics.hpp"
#include "lmprior/seqmodels/checkpoint.hpp"
#include "lmprior/textdata/batch.hpp"

namespace lmprior::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string under(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void prepare_out(const ExperimentConfig& c, const std::string& dir, const std::string& command) {
  fs::create_directories(dir);
  write_resolved(c, under(dir, command + ".cfg"));
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

std::vector<std::string> lines_of(const ExperimentConfig& c, const std::string& path) {
  auto lines = textdata::read_lines(path);
  if (c.lowercase)
    for (auto& l : lines) l = textdata::lowercase(l);
  return lines;
}

// Training pairs get the length/ratio filter; evaluation pairs only lose
// empty sides.
std::vector<textdata::TextPair> pairs_of(const ExperimentConfig& c, const std::string& split, bool filter) {
  auto src = lines_of(c, c.path(split + "_src"));
  auto tgt = lines_of(c, c.path(split + "_tgt"));
  if (src.size() != tgt.size())
    throw InvalidInput(split + " source and target have " + std::to_string(src.size()) + " vs " +
                       std::to_string(tgt.size()) + " lines");
  std::vector<textdata::TextPair> pairs;
  for (std::size_t i = 0; i < src.size(); ++i)
    if (textdata::word_count(src[i]) > 0 && textdata::word_count(tgt[i]) > 0) pairs.push_back({src[i], tgt[i]});
  if (filter) pairs = textdata::filter_parallel(pairs, c.filter_max_len, c.filter_max_ratio);
  if (pairs.empty()) throw InvalidInput("no usable " + split + " pairs");
  return pairs;
}

std::vector<std::string> mono_of(const ExperimentConfig& c, const std::string& key) {
  auto lines = textdata::filter_mono(lines_of(c, c.path(key)), c.mono_max_len);
  if (lines.empty()) throw InvalidInput("no usable lines in " + c.path(key));
  return lines;
}

// Monolingual text plus training targets, so LM and TM runs build the same
// target vocabulary from the same config.
textdata::SubwordModel target_tokenizer(const ExperimentConfig& c) {
  std::vector<std::string> lines;
  if (fs::exists(c.path("mono"))) lines = mono_of(c, "mono");
  if (fs::exists(c.path("train_tgt")))
    for (const auto& p : pairs_of(c, "train", true)) lines.push_back(p.target);
  if (lines.empty()) throw InvalidInput("no target text to build a vocabulary from");
  return textdata::SubwordModel::train(lines, c.tgt_vocab_size, c.tgt_subword);
}

textdata::SubwordModel source_tokenizer(const ExperimentConfig& c, const std::vector<textdata::TextPair>& train) {
  std::vector<std::string> lines;
  for (const auto& p : train) lines.push_back(p.source);
  return textdata::SubwordModel::train(lines, c.src_vocab_size, c.src_subword);
}

std::vector<std::string> targets(const std::vector<textdata::TextPair>& pairs) {
  std::vector<std::string> out;
  for (const auto& p : pairs) out.push_back(p.target);
  return out;
}

json history_json(const std::vector<trainer::MetricsRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    json j = {{"step", r.step}, {"loss_total", r.loss_total}, {"mean_entropy", r.mean_entropy}};
    if (r.dev_bleu) j["dev_bleu"] = *r.dev_bleu;
    if (r.dev_ppl) j["dev_ppl"] = *r.dev_ppl;
    out.push_back(j);
  }
  return out;
}

template <typename T>
struct LoadedLM {
  std::unique_ptr<seqmodels::LanguageModel<T>> model;
  textdata::SubwordModel tokenizer;
  seqmodels::CheckpointMeta meta;
};

template <typename T>
LoadedLM<T> load_lm(const std::string& path) {
  auto ck = seqmodels::load_checkpoint<T>(path);
  if (ck.meta.kind != "lm") throw ConfigError(path + " is not a language-model checkpoint");
  if (!ck.meta.target_tokenizer) throw ConfigError(path + " lacks its tokenizer");
  LoadedLM<T> out;
  out.model = std::make_unique<seqmodels::LanguageModel<T>>(ck.meta.arch, 0);
  seqmodels::assign_parameters(out.model->params(), ck.tensors);
  out.tokenizer = *ck.meta.target_tokenizer;
  out.meta = std::move(ck.meta);
  return out;
}

template <typename T>
struct LoadedTM {
  std::unique_ptr<seqmodels::TranslationModel<T>> model;
  textdata::SubwordModel source, target;
  seqmodels::CheckpointMeta meta;
  objectives::Objective objective = objectives::Objective::mle;
};

template <typename T>
LoadedTM<T> load_tm(const std::string& path) {
  auto ck = seqmodels::load_checkpoint<T>(path);
  if (ck.meta.kind != "tm") throw ConfigError(path + " is not a translation-model checkpoint");
  if (!ck.meta.target_tokenizer || !ck.meta.source_tokenizer) throw ConfigError(path + " lacks its tokenizers");
  LoadedTM<T> out;
  out.model = std::make_unique<seqmodels::TranslationModel<T>>(ck.meta.arch, 0);
  seqmodels::assign_parameters(out.model->params(), ck.tensors);
  out.source = *ck.meta.source_tokenizer;
  out.target = *ck.meta.target_tokenizer;
  if (ck.meta.extra.contains("objective"))
    out.objective = objectives::parse_objective(ck.meta.extra.at("objective").template get<std::string>());
  out.meta = std::move(ck.meta);
  return out;
}

template <typename T>
json train_lm_impl(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  prepare_out(c, c.out_dir, "train-lm");
  const auto tokenizer = target_tokenizer(c);
  const auto train = textdata::encode_mono(mono_of(c, "mono"), tokenizer);
  const auto dev = textdata::encode_mono(mono_of(c, "mono_dev"), tokenizer);
  seqmodels::LanguageModel<T> lm(c.lm_architecture(tokenizer.vocab().size(), tokenizer.vocab().hash()), c.seed);
  log << "train-lm: " << train.size() << " sentences, vocab " << tokenizer.vocab().size() << ", "
      << lm.params().scalar_count() << " parameters\n";

  auto tc = c.train_config(true);
  tc.metrics_path = under(c.out_dir, "lm_metrics.csv");
  tc.checkpoint_path = under(c.out_dir, "lm.ckpt");
  seqmodels::CheckpointMeta meta;
  meta.kind = "lm";
  meta.target_tokenizer = tokenizer;
  meta.extra["config"] = resolved_text(c);
  const auto r = trainer::train_language(tc, lm, train, dev, meta);
  if (r.interrupted) return {{"interrupted", true}, {"steps", r.steps}, {"state", tc.state_path}};
  return {{"checkpoint", tc.checkpoint_path}, {"metrics", tc.metrics_path}, {"steps", r.steps},
          {"best_step", r.best_step},         {"dev_ppl", -r.best_score},  {"stopped_early", r.stopped_early},
          {"history", history_json(r.history)}};
}

template <typename T>
json train_tm_impl(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  const auto obj = c.objective.objective;
  if (objectives::uses_lm(obj) && c.lm_checkpoint.empty())
    throw UsageError("objective " + objectives::to_string(obj) + " needs --lm-checkpoint");
  if (!objectives::uses_lm(obj) && !c.lm_checkpoint.empty())
    log << "warning: objective " << objectives::to_string(obj) << " ignores lm_checkpoint " << c.lm_checkpoint
        << '\n';
  prepare_out(c, c.out_dir, "train-tm");

  std::optional<LoadedLM<T>> lm;
  if (objectives::uses_lm(obj)) lm = load_lm<T>(c.lm_checkpoint);
  const auto tgt = lm ? lm->tokenizer : target_tokenizer(c);
  const auto train_text = pairs_of(c, "train", true);
  const auto dev_text = pairs_of(c, "dev", false);
  const auto src = source_tokenizer(c, train_text);
  const auto train = textdata::encode_parallel(train_text, src, tgt);
  const auto dev = textdata::encode_parallel(dev_text, src, tgt);

  seqmodels::TranslationModel<T> tm(c.tm_architecture(src.vocab().size(), tgt.vocab().size(), tgt.vocab().hash()),
                                    c.seed);
  log << "train-tm: " << objectives::to_string(obj) << ", " << train.size() << " pairs, "
      << tm.params().scalar_count() << " parameters\n";

  trainer::TranslationData data;
  data.train = &train;
  data.dev = &dev;
  data.dev_references = targets(dev_text);
  data.detokenize = [&tgt](const textdata::TokenIds& ids) { return tgt.decode(ids); };

  auto tc = c.train_config(false);
  tc.metrics_path = under(c.out_dir, "metrics.csv");
  tc.checkpoint_path = under(c.out_dir, "tm.ckpt");
  seqmodels::CheckpointMeta meta;
  meta.kind = "tm";
  meta.source_tokenizer = src;
  meta.target_tokenizer = tgt;
  meta.extra["config"] = resolved_text(c);
  if (lm) meta.extra["lm_checkpoint"] = c.lm_checkpoint;
  const auto r = trainer::train_translation(tc, tm, lm ? lm->model.get() : nullptr, data, meta);
  if (r.interrupted) return {{"interrupted", true}, {"steps", r.steps}, {"state", tc.state_path}};
  double entropy = 0;
  for (const auto& h : r.history)
    if (h.step == r.best_step) entropy = h.mean_entropy;
  return {{"checkpoint", tc.checkpoint_path},
          {"metrics", tc.metrics_path},
          {"objective", objectives::to_string(obj)},
          {"steps", r.steps},
          {"best_step", r.best_step},
          {"dev_bleu", r.best_score},
          {"dev_mean_entropy", entropy},
          {"stopped_early", r.stopped_early},
          {"history", history_json(r.history)}};
}

template <typename T>
json translate_impl(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  if (c.checkpoint.empty()) throw UsageError("translate needs --checkpoint");
  auto mode = c.fusion;
  auto tm = load_tm<T>(c.checkpoint);
  if (objectives::is_postnorm(tm.objective) && mode != decoding::FusionMode::postnorm) {
    log << "note: postnorm-trained model, decoding with postnorm fusion\n";
    mode = decoding::FusionMode::postnorm;
  }
  if (mode != decoding::FusionMode::plain && c.lm_checkpoint.empty())
    throw UsageError(decoding::to_string(mode) + " decoding needs --lm-checkpoint");
  prepare_out(c, c.out_dir, "translate");
  std::optional<LoadedLM<T>> lm;
  if (mode != decoding::FusionMode::plain) {
    lm = load_lm<T>(c.lm_checkpoint);
    seqmodels::check_vocab_compatible(lm->model->config(), tm.model->config());
  }
  const auto input = c.input.empty() ? c.path("test_src") : c.input;
  const auto output = c.output.empty() ? under(c.out_dir, "translations.txt") : c.output;
  const auto lines = lines_of(c, input);

  std::optional<decoding::LanguageStep<T>> lm_step;
  if (lm) lm_step.emplace(*lm->model);
  decoding::FusionScorer scorer{mode, c.beta, lm_step ? &*lm_step : nullptr};
  scorer.validate();
  std::vector<std::string> out;
  std::size_t tokens = 0;
  for (const auto& line : lines) {
    const auto ids = tm.source.encode(line);
    if (ids.empty()) {
      out.emplace_back();
      continue;
    }
    decoding::TranslationStep<T> step(*tm.model, ids);
    decoding::SearchOptions opt;
    opt.beam = c.beam;
    opt.length_normalize = c.length_normalize;
    opt.max_len = std::min(decoding::default_max_len(ids.size()), c.max_positions);
    const auto best = decoding::beam_search(step, scorer, opt);
    const auto words = decoding::strip_markers(best.tokens);
    tokens += words.size();
    out.push_back(tm.target.decode(words));
  }
  textdata::write_lines(output, out);
  log << "translate: " << out.size() << " sentences -> " << output << '\n';
  return {{"output", output}, {"sentences", out.size()}, {"fusion", decoding::to_string(mode)},
          {"beam", c.beam},   {"target_tokens", tokens}};
}

template <typename T>
json evaluate_impl(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  const auto hyp_path = c.output.empty() ? under(c.out_dir, "translations.txt") : c.output;
  json summary;
  if (!fs::exists(hyp_path)) {
    if (c.checkpoint.empty()) throw UsageError("no hypotheses at " + hyp_path + " and no --checkpoint to translate with");
    summary["translate"] = translate_impl<T>(c, log);
  }
  prepare_out(c, c.out_dir, "evaluate");
  const auto hyps = lines_of(c, hyp_path);
  const auto refs = lines_of(c, c.path("test_tgt"));
  if (hyps.size() != refs.size())
    throw InvalidInput("hypotheses and references differ in length: " + std::to_string(hyps.size()) + " vs " +
                       std::to_string(refs.size()));
  const auto bleu = evaluation::corpus_bleu(hyps, refs, 4, c.bleu_smoothing);
  summary["bleu"] = bleu.score;
  summary["precisions"] = bleu.precisions;
  summary["brevity_penalty"] = bleu.brevity_penalty;
  summary["hyp_length"] = bleu.hyp_length;
  summary["ref_length"] = bleu.ref_length;
  if (!c.checkpoint.empty()) {
    auto tm = load_tm<T>(c.checkpoint);
    const auto test = textdata::encode_parallel(pairs_of(c, "test", false), tm.source, tm.target);
    summary["test_ppl"] = evaluation::perplexity(*tm.model, test, c.eval_rows);
  }
  write_json(summary, under(c.out_dir, "eval.json"));
  log << "evaluate: BLEU " << bleu.score << '\n';
  return summary;
}

template <typename T>
json analyze_impl(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  auto paths = split_list(c.checkpoints);
  if (paths.empty() && !c.checkpoint.empty()) paths.push_back(c.checkpoint);
  if (paths.empty()) throw UsageError("analyze-entropy needs at least one checkpoint");
  prepare_out(c, c.out_dir, "analyze-entropy");

  std::optional<LoadedLM<T>> prior;
  if (!c.lm_checkpoint.empty()) prior = load_lm<T>(c.lm_checkpoint);
  const auto test_text = pairs_of(c, "test", false);

  std::vector<evaluation::EntropyProfile> profiles;
  std::vector<std::string> tags;
  json models = json::array();
  std::optional<seqmodels::ArchitectureConfig> reference;
  std::optional<LoadedTM<T>> first_tm;
  std::map<std::string, int> seen;
  for (const auto& path : paths) {
    const auto kind = seqmodels::read_checkpoint_meta(path).kind;
    evaluation::EntropyProfile profile;
    std::string mode;
    seqmodels::ArchitectureConfig arch;
    if (kind == "lm") {
      auto lm = load_lm<T>(path);
      arch = lm.model->config();
      const auto corpus = textdata::encode_mono(targets(test_text), lm.tokenizer);
      profile = evaluation::entropy_profile<T>(nullptr, lm.model.get(), corpus, evaluation::EntropyMode::lm, c.eval_rows);
      mode = "lm";
    } else {
      auto tm = load_tm<T>(path);
      arch = tm.model->config();
      const auto corpus = textdata::encode_parallel(test_text, tm.source, tm.target);
      auto m = evaluation::EntropyMode::tm;
      if (objectives::is_postnorm(tm.objective)) {
        if (!prior) throw UsageError(path + " was trained with postnorm; pass --lm-checkpoint");
        seqmodels::check_vocab_compatible(prior->model->config(), arch);
        m = evaluation::EntropyMode::postnorm;
      }
      profile = evaluation::entropy_profile(tm.model.get(), prior ? prior->model.get() : nullptr, corpus, m, c.eval_rows);
      mode = evaluation::to_string(m);
      if (!first_tm) first_tm = std::move(tm);
    }
    if (!reference) reference = arch;
    if (arch.vocab_size != reference->vocab_size || arch.target_vocab_hash != reference->target_vocab_hash)
      throw ConfigError(path + " uses a different target vocabulary than " + paths.front());
    auto tag = fs::path(path).parent_path().filename().string() + "/" + fs::path(path).stem().string();
    if (int n = ++seen[tag]; n > 1) tag += "#" + std::to_string(n);
    models.push_back({{"tag", tag},
                      {"checkpoint", path},
                      {"mode", mode},
                      {"mean", profile.mean},
                      {"median", profile.median},
                      {"tokens", profile.entropies.size()},
                      {"ln_k", std::log(double(profile.vocab_size))}});
    log << "analyze-entropy: " << tag << " (" << mode << ") mean " << profile.mean << '\n';
    profiles.push_back(std::move(profile));
    tags.push_back(tag);
  }
  std::vector<evaluation::TaggedProfile> tagged;
  for (std::size_t i = 0; i < profiles.size(); ++i) tagged.push_back({tags[i], &profiles[i]});
  const auto csv_path = under(c.out_dir, "entropy.csv");
  {
    std::ofstream out(csv_path);
    out << evaluation::histogram_csv(tagged, c.bin_width);
  }
  json summary = {{"histograms", csv_path}, {"models", models}};

  if (c.trace_sentences > 0) {
    if (!prior || !first_tm) throw UsageError("traces need --lm-checkpoint and a translation checkpoint");
    seqmodels::check_vocab_compatible(prior->model->config(), first_tm->model->config());
    decoding::LanguageStep<T> lm_step(*prior->model);
    decoding::FusionScorer scorer{decoding::FusionMode::postnorm, 0.0, &lm_step};
    const auto trace_path = under(c.out_dir, "traces.jsonl");
    std::ofstream out(trace_path);
    std::size_t flips = 0, steps = 0;
    const auto& tok = first_tm->target.vocab();
    auto names = [&](const std::vector<std::size_t>& ids) {
      json a = json::array();
      for (auto i : ids) a.push_back(tok.token(static_cast<int>(i)));
      return a;
    };
    for (std::size_t s = 0; s < std::min(c.trace_sentences, test_text.size()); ++s) {
      const auto src = first_tm->source.encode(test_text[s].source);
      const auto gold = first_tm->target.encode(test_text[s].target);
      decoding::TranslationStep<T> tm_step(*first_tm->model, src);
      for (const auto& t : decoding::trace_disagreement(tm_step, lm_step, gold, scorer, c.top_k)) {
        ++steps;
        flips += t.flipped;
        out << json{{"sentence", s},
                    {"position", t.position},
                    {"gold", t.gold >= 0 ? json(tok.token(t.gold)) : json(nullptr)},
                    {"tm_top", names(t.tm_top)},
                    {"lm_top", names(t.lm_top)},
                    {"combined_top", names(t.combined_top)},
                    {"flipped", t.flipped}}
                   .dump()
            << '\n';
      }
    }
    summary["traces"] = trace_path;
    summary["trace_steps"] = steps;
    summary["flips"] = flips;
  }
  write_json(summary, under(c.out_dir, "entropy.json"));
  return summary;
}

template <typename T>
json sweep_impl(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  if (c.lm_checkpoint.empty()) throw UsageError("sweep needs --lm-checkpoint");
  const auto lambdas = parse_doubles(c.sweep_lambdas);
  const auto taus = parse_doubles(c.sweep_taus);
  const auto seeds = parse_seeds(c.sweep_seeds);
  if (lambdas.empty() || taus.empty() || seeds.empty()) throw UsageError("sweep lists must be non-empty");
  prepare_out(c, c.out_dir, "sweep");
  auto cell_dir = [&](double l, double t, std::uint64_t s) {
    std::ostringstream name;
    name << "lambda" << l << "_tau" << t << "_seed" << s;
    return under(under(c.out_dir, "sweep"), name.str());
  };
  const auto grid = evaluation::sensitivity_sweep(lambdas, taus, seeds, [&](double l, double t, std::uint64_t s) {
    auto cell = c;
    cell.objective.objective = objectives::Objective::prior;
    cell.objective.lambda = l;
    cell.objective.tau = t;
    cell.seed = s;
    cell.out_dir = cell_dir(l, t, s);
    cell.resume_state.clear();
    cell.stop_after = 0;
    log << "sweep: lambda " << l << " tau " << t << " seed " << s << '\n';
    return train_tm_impl<T>(cell, log).at("dev_bleu").template get<double>();
  });
  const auto csv_path = under(c.out_dir, "sweep.csv");
  {
    std::ofstream out(csv_path);
    out << grid.csv();
  }
  json means = json::array();
  for (double l : lambdas)
    for (double t : taus) {
      const auto m = grid.mean(l, t);
      means.push_back({{"lambda", l}, {"tau", t}, {"mean_dev_bleu", m ? json(*m) : json(nullptr)}});
    }
  json holes = json::array();
  for (const auto& cell : grid.cells)
    if (!cell.dev_bleu) holes.push_back({{"lambda", cell.lambda}, {"tau", cell.tau}, {"seed", cell.seed}, {"error", cell.error}});
  json cells = json::array();
  for (const auto& cell : grid.cells)
    cells.push_back({{"lambda", cell.lambda}, {"tau", cell.tau}, {"seed", cell.seed},
                     {"dev_bleu", cell.dev_bleu ? json(*cell.dev_bleu) : json(nullptr)}});
  json summary = {{"csv", csv_path}, {"complete", grid.complete()}, {"means", means}, {"cells", cells}, {"holes", holes}};
  write_json(summary, under(c.out_dir, "sweep.json"));
  return summary;
}

template <template <typename> class Impl>
json dispatch(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  return c.precision == "double" ? Impl<double>::run(c, log) : Impl<float>::run(c, log);
}

#define LMPRIOR_COMMAND(name, fn)                                                          \
  template <typename T>                                                                    \
  struct name {                                                                            \
    static json run(const ExperimentConfig& c, std::ostream& log) { return fn<T>(c, log); } \
  };
LMPRIOR_COMMAND(TrainLm, train_lm_impl)
LMPRIOR_COMMAND(TrainTm, train_tm_impl)
LMPRIOR_COMMAND(Translate, translate_impl)
LMPRIOR_COMMAND(Evaluate, evaluate_impl)
LMPRIOR_COMMAND(Analyze, analyze_impl)
LMPRIOR_COMMAND(Sweep, sweep_impl)
#undef LMPRIOR_COMMAND

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

}  // namespace

json gen_toy(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  const auto corpus = generate_toy(c.toy_options());
  write_toy(corpus, c.data_dir);
  write_resolved(c, under(c.data_dir, "gen-toy.cfg"));
  log << "gen-toy: " << to_string(c.task) << " -> " << c.data_dir << '\n';
  return {{"data_dir", c.data_dir}, {"task", to_string(c.task)}, {"train", corpus.train.size()},
          {"dev", corpus.dev.size()}, {"test", corpus.test.size()},  {"mono", corpus.mono.size()},
          {"mono_dev", corpus.mono_dev.size()}};
}

json train_lm(const ExperimentConfig& c, std::ostream& log) { return dispatch<TrainLm>(c, log); }
json train_tm(const ExperimentConfig& c, std::ostream& log) { return dispatch<TrainTm>(c, log); }
json translate(const ExperimentConfig& c, std::ostream& log) { return dispatch<Translate>(c, log); }
json evaluate(const ExperimentConfig& c, std::ostream& log) { return dispatch<Evaluate>(c, log); }
json analyze_entropy(const ExperimentConfig& c, std::ostream& log) { return dispatch<Analyze>(c, log); }
json sweep(const ExperimentConfig& c, std::ostream& log) { return dispatch<Sweep>(c, log); }

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  using Command = json (*)(const ExperimentConfig&, std::ostream&);
  const std::vector<std::pair<std::string, std::pair<Command, std::string>>> commands = {
      {"gen-toy", {gen_toy, "write a synthetic parallel + monolingual corpus"}},
      {"train-lm", {train_lm, "train the target-side language model"}},
      {"train-tm", {train_tm, "train a translation model"}},
      {"translate", {translate, "beam-search translation of a text file"}},
      {"evaluate", {evaluate, "BLEU (and perplexity) on the test set"}},
      {"analyze-entropy", {analyze_entropy, "output-entropy histograms and postnorm traces"}},
      {"sweep", {sweep, "lambda x tau sensitivity grid"}},
  };

  CLI::App app{"LM-prior translation lab"};
  app.require_subcommand(1);
  std::string config_path;
  std::map<std::string, std::string> overrides;
  for (const auto& [name, cmd] : commands) {
    auto* sub = app.add_subcommand(name, cmd.second);
    sub->add_option("-c,--config", config_path, "key = value config file");
    for (const auto& f : config_fields()) sub->add_option("--" + dashed(f.key), overrides[f.key], f.help);
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    ExperimentConfig c;
    if (!config_path.empty()) c = load_config(config_path);
    for (const auto& f : config_fields()) {
      const auto it = overrides.find(f.key);
      if (it != overrides.end() && !it->second.empty()) f.set(c, it->second);
    }
    for (const auto& [name, cmd] : commands)
      if (app.got_subcommand(name)) {
        out << cmd.first(c, err).dump(2) << '\n';
        return 0;
      }
    return 1;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace lmprior::cli
