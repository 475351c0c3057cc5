#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmprior/cli/config.hpp"

namespace lmprior::cli {

// Each command writes its artifacts and "<command>.cfg" (the resolved
// config) under out_dir (gen-toy: data_dir) and returns a summary that is
// also printed by the executable. Diagnostics go to log.

nlohmann::json gen_toy(const ExperimentConfig& config, std::ostream& log);

// lm.ckpt, lm_metrics.csv
nlohmann::json train_lm(const ExperimentConfig& config, std::ostream& log);

// tm.ckpt, metrics.csv. prior/postnorm without lm_checkpoint is a
// UsageError raised before any data is read.
nlohmann::json train_tm(const ExperimentConfig& config, std::ostream& log);

// Beam search over input (default test_src) into output.
nlohmann::json translate(const ExperimentConfig& config, std::ostream& log);

// BLEU of output against test_tgt (translating first when output is
// missing), plus test perplexity when a checkpoint is given.
nlohmann::json evaluate(const ExperimentConfig& config, std::ostream& log);

// entropy.csv histograms over test_tgt for every checkpoint, optional
// traces.jsonl with postnorm argmax flips.
nlohmann::json analyze_entropy(const ExperimentConfig& config, std::ostream& log);

// prior-objective grid over sweep_lambdas x sweep_taus x sweep_seeds;
// sweep.csv. Failed cells are recorded as holes.
nlohmann::json sweep(const ExperimentConfig& config, std::ostream& log);

// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lmprior::cli
