#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "lmprior/cli/toy.hpp"
#include "lmprior/decoding/search.hpp"
#include "lmprior/objectives/losses.hpp"
#include "lmprior/seqmodels/architecture.hpp"
#include "lmprior/textdata/subword.hpp"
#include "lmprior/trainer/loop.hpp"

namespace lmprior::cli {

// Everything one experiment needs. Defaults are the toy-scale recipe.
struct ExperimentConfig {
  // data
  std::string data_dir = "data";
  std::string train_src, train_tgt, dev_src, dev_tgt, test_src, test_tgt, mono, mono_dev;  // empty: data_dir/<name>
  std::size_t filter_max_len = 60;
  double filter_max_ratio = 1.5;
  std::size_t mono_max_len = 50;
  bool lowercase = false;

  // tokenizers
  textdata::SubwordMode src_subword = textdata::SubwordMode::bpe;
  textdata::SubwordMode tgt_subword = textdata::SubwordMode::bpe;
  std::size_t src_vocab_size = 2000;
  std::size_t tgt_vocab_size = 40;

  // translation model
  std::size_t d_model = 32, layers = 2, heads = 2, ff = 64;
  double dropout = 0.1;
  std::size_t max_positions = 256;
  // language model
  std::size_t lm_d_model = 32, lm_layers = 2, lm_heads = 2, lm_ff = 64;
  double lm_dropout = 0.1;

  // objective and decoding
  objectives::ObjectiveConfig objective;
  decoding::FusionMode fusion = decoding::FusionMode::plain;
  double beta = 0.1;
  std::size_t beam = 5;
  bool length_normalize = true;

  // optimization
  double lr = 3e-3;
  std::size_t warmup = 200;
  std::size_t tokens_per_batch = 400;
  std::size_t max_steps = 3000;
  std::size_t eval_every = 250;
  std::size_t patience = 10;
  double clip_norm = 1.0;
  std::size_t eval_rows = 64;
  bool bleu_smoothing = false;
  std::size_t lm_max_steps = 3000;
  std::size_t lm_eval_every = 250;

  std::uint64_t seed = 1;
  std::string precision = "float";  // float | double

  // outputs and artifacts
  std::string out_dir = "runs/default";
  std::string lm_checkpoint;  // train-tm prior/postnorm, fusion, analysis
  std::string checkpoint;     // TM for translate / evaluate
  std::string checkpoints;    // comma list for analyze-entropy
  std::string input, output;  // translate; evaluate uses output vs test_tgt
  std::string resume_state;   // training state to resume from / save to
  std::size_t stop_after = 0;

  // toy generation
  ToyTask task = ToyTask::digits_to_words;
  std::size_t n_pairs = 500, n_dev = 200, n_test = 200, n_mono = 10000, n_mono_dev = 500;
  std::size_t toy_min_len = 3, toy_max_len = 10;

  // analysis and sweep
  std::size_t trace_sentences = 0;
  std::size_t top_k = 3;
  double bin_width = 0.2;
  std::string sweep_lambdas = "0.1,0.5,1.0";
  std::string sweep_taus = "1,2";
  std::string sweep_seeds = "1,2,3";

  std::string path(std::string_view key) const;  // resolved data path ("train_src", ...)
  trainer::TrainConfig train_config(bool language_model) const;
  seqmodels::ArchitectureConfig tm_architecture(std::size_t src_vocab, std::size_t tgt_vocab,
                                                std::uint64_t tgt_hash) const;
  seqmodels::ArchitectureConfig lm_architecture(std::size_t tgt_vocab, std::uint64_t tgt_hash) const;
  ToyOptions toy_options() const;
  void validate() const;
};

struct ConfigField {
  std::string key;
  std::string help;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

// Every key, in documentation order.
const std::vector<ConfigField>& config_fields();

// UsageError on an unknown key or unparsable value.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);

// "key = value" lines; '#' starts a comment; blank lines ignored.
ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {});

// Every key with its effective value; parse_config(resolved_text(c)) == c.
std::string resolved_text(const ExperimentConfig& config);
void write_resolved(const ExperimentConfig& config, const std::string& path);

std::vector<double> parse_doubles(std::string_view list);
std::vector<std::uint64_t> parse_seeds(std::string_view list);
std::vector<std::string> split_list(std::string_view list);

}  // namespace lmprior::cli
