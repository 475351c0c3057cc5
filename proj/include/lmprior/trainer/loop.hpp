#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lmprior/objectives/losses.hpp"
#include "lmprior/seqmodels/checkpoint.hpp"
#include "lmprior/seqmodels/models.hpp"
#include "lmprior/textdata/batch.hpp"
#include "lmprior/trainer/optim.hpp"

namespace lmprior::trainer {

// Toy-scale defaults; the large-scale recipe evaluated every 5000 batches
// with warmup 8000.
struct TrainConfig {
  double lr = 2e-4;
  std::size_t warmup = 8000;
  std::size_t tokens_per_batch = 2000;
  std::size_t max_steps = 20000;
  std::size_t eval_every = 200;
  std::size_t patience = 10;
  double clip_norm = 1.0;  // 0 disables clipping
  std::uint64_t seed = 1;
  objectives::ObjectiveConfig objective;  // TM runs only
  std::size_t eval_rows = 64;
  bool bleu_smoothing = false;
  std::string metrics_path;     // CSV, empty to skip
  std::string checkpoint_path;  // best checkpoint, empty to skip
  std::size_t stop_after = 0;   // > 0: halt at this step and save state_path
  std::string state_path;

  void validate() const;
};

struct MetricsRow {
  std::size_t step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_mt = 0.0;
  double loss_kl = 0.0;
  std::optional<double> dev_bleu;
  double mean_entropy = 0.0;
  std::optional<double> dev_ppl;
};

std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);

struct EvalResult {
  double score = 0.0;  // higher is better; drives early stopping
  std::optional<double> dev_bleu;
  std::optional<double> dev_ppl;
  double mean_entropy = 0.0;
};

struct TrainResult {
  std::size_t steps = 0;
  std::size_t best_step = 0;
  double best_score = 0.0;
  std::size_t evals = 0;
  bool stopped_early = false;
  bool interrupted = false;  // halted by stop_after
  std::vector<MetricsRow> history;
};

// Generic loop over length-bucketed batches with Adam, clipping, periodic
// evaluation, early stopping and resumable state. On return the parameters
// hold the best evaluated snapshot.
template <typename T>
class Trainer {
 public:
  using LossFn = std::function<objectives::LossBreakdown<T>(const textdata::Batch&, std::mt19937_64*)>;
  using EvalFn = std::function<EvalResult()>;

  Trainer(TrainConfig config, numerics::ParameterSet<T>& params, const textdata::ParallelCorpus& train,
          LossFn loss, EvalFn eval, seqmodels::CheckpointMeta checkpoint_meta, bool use_dropout);

  TrainResult run();
  void save_state(const std::string& path) const;
  void load_state(const std::string& path);

 private:
  void next_epoch();
  void evaluate();
  void write_metrics(bool rewrite) const;

  TrainConfig config_;
  numerics::ParameterSet<T>& params_;
  const textdata::ParallelCorpus& train_;
  LossFn loss_;
  EvalFn eval_;
  seqmodels::CheckpointMeta meta_;
  bool use_dropout_;

  Adam<T> adam_;
  std::mt19937_64 dropout_rng_;
  std::vector<textdata::Batch> batches_;
  std::size_t step_ = 0, epoch_ = 0, batch_pos_ = 0;
  double sum_total_ = 0, sum_mt_ = 0, sum_kl_ = 0;
  std::size_t window_ = 0;
  double best_score_ = 0;
  std::size_t best_step_ = 0, bad_evals_ = 0;
  bool have_best_ = false, stop_ = false;
  std::vector<Tensor<T>> best_;
  std::vector<MetricsRow> history_;
};

// Target-side text for BLEU.
using Detokenizer = std::function<std::string(const textdata::TokenIds&)>;

struct TranslationData {
  const textdata::ParallelCorpus* train = nullptr;
  const textdata::ParallelCorpus* dev = nullptr;
  std::vector<std::string> dev_references;
  Detokenizer detokenize;
};

// lm is required for prior (lambda > 0) and postnorm objectives and must
// share the target vocabulary (ConfigError before any step otherwise).
template <typename T>
TrainResult train_translation(const TrainConfig& config, seqmodels::TranslationModel<T>& tm,
                              const seqmodels::LanguageModel<T>* lm, const TranslationData& data,
                              seqmodels::CheckpointMeta meta = {});

// Early stopping on dev perplexity; no label smoothing.
template <typename T>
TrainResult train_language(const TrainConfig& config, seqmodels::LanguageModel<T>& lm,
                           const textdata::ParallelCorpus& train, const textdata::ParallelCorpus& dev,
                           seqmodels::CheckpointMeta meta = {});

// BLEU of greedy (or postnorm-fused greedy) dev translations.
template <typename T>
double dev_bleu(const seqmodels::TranslationModel<T>& tm, const seqmodels::LanguageModel<T>* lm,
                bool postnorm, const TranslationData& data, std::size_t rows, bool smooth);

}  // namespace lmprior::trainer
