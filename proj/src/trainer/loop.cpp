#include "lmprior/trainer/loop.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lmprior/decoding/search.hpp"
#include "lmprior/errors.hpp"
#include "lmprior/evaluation/metrics.hpp"

namespace lmprior::trainer {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
  if (tokens_per_batch == 0) throw ConfigError("tokens_per_batch must be positive");
  if (eval_every == 0) throw ConfigError("eval_every must be positive");
  if (max_steps == 0) throw ConfigError("max_steps must be positive");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
  if (stop_after > 0 && state_path.empty()) throw ConfigError("stop_after needs state_path");
  objective.validate();
}

namespace {

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << v;
  return out.str();
}

json row_to_json(const MetricsRow& r) {
  json j = {{"step", r.step},       {"lr", r.lr},          {"loss_total", r.loss_total},
            {"loss_mt", r.loss_mt}, {"loss_kl", r.loss_kl}, {"mean_entropy", r.mean_entropy}};
  j["dev_bleu"] = r.dev_bleu ? json(*r.dev_bleu) : json(nullptr);
  j["dev_ppl"] = r.dev_ppl ? json(*r.dev_ppl) : json(nullptr);
  return j;
}

MetricsRow row_from_json(const json& j) {
  MetricsRow r;
  r.step = j.at("step");
  r.lr = j.at("lr");
  r.loss_total = j.at("loss_total");
  r.loss_mt = j.at("loss_mt");
  r.loss_kl = j.at("loss_kl");
  r.mean_entropy = j.at("mean_entropy");
  if (!j.at("dev_bleu").is_null()) r.dev_bleu = j.at("dev_bleu").get<double>();
  if (!j.at("dev_ppl").is_null()) r.dev_ppl = j.at("dev_ppl").get<double>();
  return r;
}

}  // namespace

std::string metrics_header() { return "step,lr,loss_total,loss_mt,loss_kl,dev_bleu,mean_entropy,dev_ppl"; }

std::string format_metrics_row(const MetricsRow& r) {
  std::ostringstream out;
  out << r.step << ',';
  {
    std::ostringstream lr;
    lr.precision(6);
    lr << std::scientific << r.lr;
    out << lr.str();
  }
  out << ',' << fmt(r.loss_total) << ',' << fmt(r.loss_mt) << ',' << fmt(r.loss_kl) << ','
      << (r.dev_bleu ? fmt(*r.dev_bleu) : "") << ',' << fmt(r.mean_entropy) << ','
      << (r.dev_ppl ? fmt(*r.dev_ppl) : "");
  return out.str();
}

template <typename T>
Trainer<T>::Trainer(TrainConfig config, numerics::ParameterSet<T>& params, const textdata::ParallelCorpus& train,
                    LossFn loss, EvalFn eval, seqmodels::CheckpointMeta checkpoint_meta, bool use_dropout)
    : config_(std::move(config)),
      params_(params),
      train_(train),
      loss_(std::move(loss)),
      eval_(std::move(eval)),
      meta_(std::move(checkpoint_meta)),
      use_dropout_(use_dropout),
      dropout_rng_(seqmodels::derive_seed(config_.seed, "dropout")) {
  config_.validate();
  if (train_.empty()) throw InvalidInput("training corpus is empty");
}

template <typename T>
void Trainer<T>::next_epoch() {
  ++epoch_;
  batches_ = textdata::make_batches(train_, config_.tokens_per_batch,
                                    seqmodels::derive_seed(config_.seed, "shuffle") + epoch_);
  batch_pos_ = 0;
}

template <typename T>
void Trainer<T>::write_metrics(bool rewrite) const {
  if (config_.metrics_path.empty()) return;
  const std::filesystem::path path(config_.metrics_path);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, rewrite ? std::ios::trunc : std::ios::app);
  if (!out) throw InvalidInput("cannot write metrics log " + config_.metrics_path);
  if (rewrite) {
    out << metrics_header() << '\n';
    for (const auto& r : history_) out << format_metrics_row(r) << '\n';
  } else {
    out << format_metrics_row(history_.back()) << '\n';
  }
}

template <typename T>
void Trainer<T>::evaluate() {
  MetricsRow row;
  row.step = step_;
  row.lr = step_ ? lr_schedule(step_, config_.lr, config_.warmup) : 0.0;
  if (window_) {
    row.loss_total = sum_total_ / static_cast<double>(window_);
    row.loss_mt = sum_mt_ / static_cast<double>(window_);
    row.loss_kl = sum_kl_ / static_cast<double>(window_);
  }
  sum_total_ = sum_mt_ = sum_kl_ = 0;
  window_ = 0;
  const auto result = eval_();
  row.dev_bleu = result.dev_bleu;
  row.dev_ppl = result.dev_ppl;
  row.mean_entropy = result.mean_entropy;
  history_.push_back(row);
  write_metrics(false);

  if (!have_best_ || result.score > best_score_) {
    have_best_ = true;
    best_score_ = result.score;
    best_step_ = step_;
    bad_evals_ = 0;
    best_ = seqmodels::snapshot(params_);
    if (!config_.checkpoint_path.empty()) {
      auto meta = meta_;
      meta.step = step_;
      meta.dev_history = json::array();
      for (const auto& r : history_) meta.dev_history.push_back(row_to_json(r));
      seqmodels::save_checkpoint(config_.checkpoint_path, params_, meta);
    }
  } else if (++bad_evals_ >= config_.patience) {
    stop_ = true;
  }
}

template <typename T>
TrainResult Trainer<T>::run() {
  if (step_ == 0 && history_.empty()) write_metrics(true);
  TrainResult result;
  while (!stop_ && step_ < config_.max_steps) {
    if (batch_pos_ >= batches_.size()) next_epoch();
    const auto& batch = batches_[batch_pos_++];
    auto loss = loss_(batch, use_dropout_ ? &dropout_rng_ : nullptr);
    auto grads = numerics::backward(loss.total, params_);
    if (config_.clip_norm > 0.0) clip_global_norm(grads, config_.clip_norm);
    ++step_;
    adam_.step(params_, grads, lr_schedule(step_, config_.lr, config_.warmup));
    sum_total_ += static_cast<double>(loss.total.item());
    sum_mt_ += loss.mt_term;
    sum_kl_ += loss.kl_term;
    ++window_;
    if (step_ % config_.eval_every == 0) evaluate();
    if (config_.stop_after > 0 && step_ == config_.stop_after && !stop_ && step_ < config_.max_steps) {
      save_state(config_.state_path);
      result.interrupted = true;
      result.steps = step_;
      result.history = history_;
      return result;
    }
  }
  if (!stop_ && (history_.empty() || history_.back().step != step_)) evaluate();
  if (have_best_) seqmodels::restore(params_, best_);
  result.steps = step_;
  result.best_step = best_step_;
  result.best_score = best_score_;
  result.evals = history_.size();
  result.stopped_early = stop_;
  result.history = history_;
  return result;
}

template <typename T>
void Trainer<T>::save_state(const std::string& path) const {
  numerics::ParameterSet<T> state;
  for (const auto& [name, v] : params_) state.add("param/" + name, v.value());
  for (const auto& [name, t] : adam_.first_moments()) state.add("adam_m/" + name, t);
  for (const auto& [name, t] : adam_.second_moments()) state.add("adam_v/" + name, t);
  for (std::size_t i = 0; i < best_.size(); ++i) state.add("best/" + std::to_string(i), best_[i]);
  std::ostringstream rng;
  rng << dropout_rng_;
  json history = json::array();
  for (const auto& r : history_) history.push_back(row_to_json(r));
  seqmodels::CheckpointMeta meta = meta_;
  meta.kind = "state";
  meta.step = step_;
  meta.extra = {{"epoch", epoch_},       {"batch_pos", batch_pos_},   {"adam_steps", adam_.steps()},
                {"rng", rng.str()},      {"sum_total", sum_total_},   {"sum_mt", sum_mt_},
                {"sum_kl", sum_kl_},     {"window", window_},         {"best_score", best_score_},
                {"best_step", best_step_}, {"bad_evals", bad_evals_}, {"have_best", have_best_},
                {"best_count", best_.size()}, {"history", history}};
  seqmodels::save_checkpoint(path, state, meta);
}

template <typename T>
void Trainer<T>::load_state(const std::string& path) {
  auto loaded = seqmodels::load_checkpoint<T>(path);
  if (loaded.meta.kind != "state") throw InvalidInput(path + " is not a training state");
  const auto& x = loaded.meta.extra;
  auto take = [&](const std::string& key) {
    auto it = loaded.tensors.find(key);
    if (it == loaded.tensors.end()) throw InvalidInput("training state lacks " + key);
    return it->second;
  };
  std::map<std::string, Tensor<T>> m, v;
  for (auto& [name, var] : params_) {
    auto value = take("param/" + name);
    if (value.shape() != var.value().shape()) throw ConfigError("training state shape mismatch for " + name);
    var.mutable_value() = std::move(value);
    if (loaded.tensors.count("adam_m/" + name)) {
      m.emplace(name, take("adam_m/" + name));
      v.emplace(name, take("adam_v/" + name));
    }
  }
  adam_.restore(x.at("adam_steps"), std::move(m), std::move(v));
  best_.clear();
  for (std::size_t i = 0, n = x.at("best_count"); i < n; ++i) best_.push_back(take("best/" + std::to_string(i)));
  std::istringstream rng(x.at("rng").template get<std::string>());
  rng >> dropout_rng_;
  step_ = loaded.meta.step;
  epoch_ = x.at("epoch");
  batch_pos_ = x.at("batch_pos");
  batches_.clear();
  if (epoch_ > 0) {
    batches_ = textdata::make_batches(train_, config_.tokens_per_batch,
                                      seqmodels::derive_seed(config_.seed, "shuffle") + epoch_);
  }
  sum_total_ = x.at("sum_total");
  sum_mt_ = x.at("sum_mt");
  sum_kl_ = x.at("sum_kl");
  window_ = x.at("window");
  best_score_ = x.at("best_score");
  best_step_ = x.at("best_step");
  bad_evals_ = x.at("bad_evals");
  have_best_ = x.at("have_best");
  history_.clear();
  for (const auto& r : x.at("history")) history_.push_back(row_from_json(r));
  stop_ = false;
  write_metrics(true);
}

template <typename T>
double dev_bleu(const seqmodels::TranslationModel<T>& tm, const seqmodels::LanguageModel<T>* lm, bool postnorm,
                const TranslationData& data, std::size_t rows, bool smooth) {
  std::vector<textdata::TokenIds> sources;
  for (const auto& p : data.dev->pairs) sources.push_back(p.source);
  auto outputs = decoding::greedy_batch(tm, sources, rows, postnorm ? lm : nullptr,
                                        postnorm ? decoding::FusionMode::postnorm : decoding::FusionMode::plain);
  std::vector<std::string> hyps;
  for (const auto& ids : outputs) hyps.push_back(data.detokenize(ids));
  return evaluation::corpus_bleu(hyps, data.dev_references, 4, smooth).score;
}

template <typename T>
TrainResult train_translation(const TrainConfig& config, seqmodels::TranslationModel<T>& tm,
                              const seqmodels::LanguageModel<T>* lm, const TranslationData& data,
                              seqmodels::CheckpointMeta meta) {
  config.validate();
  if (!data.train || !data.dev || !data.detokenize) throw ConfigError("translation data is incomplete");
  if (data.dev->size() != data.dev_references.size()) throw ConfigError("dev references do not match dev corpus");
  const auto& obj = config.objective;
  const bool postnorm = objectives::is_postnorm(obj.objective);
  const bool needs_lm = objectives::uses_lm(obj.objective) && (postnorm || obj.lambda > 0.0);
  if (needs_lm && !lm) throw ConfigError("objective " + objectives::to_string(obj.objective) + " needs a language model");
  if (lm) seqmodels::check_vocab_compatible(lm->config(), tm.config());
  const auto* prior = needs_lm ? lm : nullptr;

  auto loss = [&tm, prior, obj](const textdata::Batch& batch, std::mt19937_64* rng) {
    auto logits = tm.batch_logits(batch, rng);
    numerics::Tensor<T> lm_logits;
    if (prior) {
      numerics::NoGradGuard guard;
      lm_logits = prior->batch_logits(batch).value();
    }
    return objectives::compute_loss(obj, logits, prior ? &lm_logits : nullptr, batch.gold(), batch.gold_mask());
  };
  auto eval = [&tm, prior, postnorm, &data, &config]() {
    EvalResult r;
    r.dev_bleu = dev_bleu(tm, prior, postnorm, data, config.eval_rows, config.bleu_smoothing);
    r.score = *r.dev_bleu;
    r.mean_entropy = evaluation::entropy_profile(&tm, prior, *data.dev,
                                                 postnorm ? evaluation::EntropyMode::postnorm : evaluation::EntropyMode::tm,
                                                 config.eval_rows)
                         .mean;
    return r;
  };
  if (meta.kind.empty()) meta.kind = "tm";
  meta.arch = tm.config();
  meta.extra["objective"] = objectives::to_string(obj.objective);
  meta.extra["lambda"] = obj.lambda;
  meta.extra["tau"] = obj.tau;
  meta.extra["alpha"] = obj.alpha;
  Trainer<T> trainer(config, tm.params(), *data.train, loss, eval, std::move(meta), tm.config().dropout > 0.0);
  if (!config.state_path.empty() && config.stop_after == 0 && std::filesystem::exists(config.state_path))
    trainer.load_state(config.state_path);
  return trainer.run();
}

template <typename T>
TrainResult train_language(const TrainConfig& config, seqmodels::LanguageModel<T>& lm,
                           const textdata::ParallelCorpus& train, const textdata::ParallelCorpus& dev,
                           seqmodels::CheckpointMeta meta) {
  config.validate();
  if (dev.empty()) throw ConfigError("language-model dev corpus is empty");
  auto loss = [&lm](const textdata::Batch& batch, std::mt19937_64* rng) {
    return objectives::mle_loss(lm.batch_logits(batch, rng), batch.gold(), batch.gold_mask());
  };
  auto eval = [&lm, &dev, &config]() {
    EvalResult r;
    r.dev_ppl = evaluation::perplexity(lm, dev, config.eval_rows);
    r.score = -*r.dev_ppl;
    r.mean_entropy = evaluation::entropy_profile<T>(nullptr, &lm, dev, evaluation::EntropyMode::lm, config.eval_rows).mean;
    return r;
  };
  if (meta.kind.empty()) meta.kind = "lm";
  meta.arch = lm.config();
  Trainer<T> trainer(config, lm.params(), train, loss, eval, std::move(meta), lm.config().dropout > 0.0);
  if (!config.state_path.empty() && config.stop_after == 0 && std::filesystem::exists(config.state_path))
    trainer.load_state(config.state_path);
  return trainer.run();
}

#define LMPRIOR_INSTANTIATE(T)                                                                                  \
  template class Trainer<T>;                                                                                    \
  template TrainResult train_translation<T>(const TrainConfig&, seqmodels::TranslationModel<T>&,                \
                                            const seqmodels::LanguageModel<T>*, const TranslationData&,         \
                                            seqmodels::CheckpointMeta);                                         \
  template TrainResult train_language<T>(const TrainConfig&, seqmodels::LanguageModel<T>&,                      \
                                         const textdata::ParallelCorpus&, const textdata::ParallelCorpus&,      \
                                         seqmodels::CheckpointMeta);                                            \
  template double dev_bleu<T>(const seqmodels::TranslationModel<T>&, const seqmodels::LanguageModel<T>*, bool,  \
                              const TranslationData&, std::size_t, bool);

LMPRIOR_INSTANTIATE(float)
LMPRIOR_INSTANTIATE(double)
#undef LMPRIOR_INSTANTIATE

}  // namespace lmprior::trainer
