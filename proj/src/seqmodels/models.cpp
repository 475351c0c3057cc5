#include "lmprior/seqmodels/models.hpp"

#include <algorithm>

#include "lmprior/errors.hpp"
#include "lmprior/seqmodels/layers.hpp"

namespace lmprior::seqmodels {

namespace {

using numerics::AttentionLayout;

template <typename T>
Var<T> residual_block(const ParameterSet<T>& params, const std::string& prefix, Var<T> x,
                      const Var<T>* memory, const AttentionLayout& self_layout,
                      const AttentionLayout* cross_layout, double dropout, std::mt19937_64* rng) {
  auto h = layers::layer_norm(params, prefix + ".ln1", x);
  x = numerics::add(x, layers::maybe_dropout(layers::attention(params, prefix + ".self", h, h, self_layout),
                                             dropout, rng));
  std::string ff_norm = prefix + ".ln2";
  if (memory) {
    h = layers::layer_norm(params, prefix + ".ln2", x);
    x = numerics::add(x, layers::maybe_dropout(
                             layers::attention(params, prefix + ".cross", h, *memory, *cross_layout),
                             dropout, rng));
    ff_norm = prefix + ".ln3";
  }
  h = layers::layer_norm(params, ff_norm, x);
  return numerics::add(x, layers::maybe_dropout(layers::feed_forward(params, prefix + ".ff", h),
                                                dropout, rng));
}

void check_ids(std::span<const int> ids, std::size_t vocab, const char* what) {
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw ConfigError(std::string(what) + " id " + std::to_string(id) +
                        " is outside the model vocabulary of size " + std::to_string(vocab));
}

void check_length(std::size_t len, const ArchitectureConfig& config) {
  if (len == 0) throw InvalidInput("sequence length must be positive");
  if (len > config.max_positions)
    throw InvalidInput("sequence length " + std::to_string(len) + " exceeds max_positions " +
                       std::to_string(config.max_positions));
}

struct PaddedPrefixes {
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;
  std::size_t len = 0;
};

PaddedPrefixes pad_prefixes(std::span<const TokenIds> prefixes) {
  PaddedPrefixes out;
  for (const auto& p : prefixes) {
    if (p.empty()) throw InvalidInput("decoding prefix must contain at least BOS");
    out.len = std::max(out.len, p.size());
  }
  out.ids.assign(prefixes.size() * out.len, textdata::kPad);
  out.mask.assign(prefixes.size() * out.len, 0);
  for (std::size_t r = 0; r < prefixes.size(); ++r)
    for (std::size_t t = 0; t < prefixes[r].size(); ++t) {
      out.ids[r * out.len + t] = prefixes[r][t];
      out.mask[r * out.len + t] = 1;
    }
  return out;
}

template <typename T>
Tensor<T> gather_last(const Tensor<T>& logits, std::span<const TokenIds> prefixes, std::size_t len) {
  const std::size_t k = logits.cols();
  Tensor<T> out({prefixes.size(), k});
  for (std::size_t r = 0; r < prefixes.size(); ++r) {
    auto src = logits.row(r * len + prefixes[r].size() - 1);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace

template <typename T>
LanguageModel<T>::LanguageModel(ArchitectureConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  config_.validate(false);
  std::mt19937_64 rng(derive_seed(seed, "init"));
  const std::size_t d = config_.d_model;
  params_.add("embed", glorot_uniform<T>(config_.vocab_size, d, rng));
  for (std::size_t i = 0; i < config_.layers; ++i) {
    const std::string p = "dec." + std::to_string(i);
    layers::add_layer_norm(params_, p + ".ln1", d);
    layers::add_attention(params_, p + ".self", d, rng);
    layers::add_layer_norm(params_, p + ".ln2", d);
    layers::add_feed_forward(params_, p + ".ff", d, config_.ff, rng);
  }
  layers::add_layer_norm(params_, "dec.ln", d);
}

template <typename T>
Var<T> LanguageModel<T>::forward(std::span<const int> ids, std::size_t rows, std::size_t len,
                                 std::span<const std::uint8_t> mask,
                                 std::mt19937_64* dropout_rng) const {
  check_length(len, config_);
  check_ids(ids, config_.vocab_size, "target");
  const auto& table = params_.get("embed");
  auto x = layers::embed(table, ids, rows, len, config_.dropout, dropout_rng);
  AttentionLayout layout{rows, len, len, config_.heads, true, {mask.begin(), mask.end()}};
  for (std::size_t i = 0; i < config_.layers; ++i)
    x = residual_block<T>(params_, "dec." + std::to_string(i), x, nullptr, layout, nullptr,
                          config_.dropout, dropout_rng);
  return layers::tied_logits(layers::layer_norm(params_, "dec.ln", x), table);
}

template <typename T>
Var<T> LanguageModel<T>::batch_logits(const Batch& batch, std::mt19937_64* dropout_rng) const {
  return forward(batch.decoder_input(), batch.rows, batch.steps(), batch.decoder_input_mask(),
                 dropout_rng);
}

template <typename T>
Tensor<T> LanguageModel<T>::next_logits(std::span<const TokenIds> prefixes) const {
  numerics::NoGradGuard guard;
  auto padded = pad_prefixes(prefixes);
  auto logits = forward(padded.ids, prefixes.size(), padded.len, padded.mask, nullptr);
  return gather_last(logits.value(), prefixes, padded.len);
}

template <typename T>
TranslationModel<T>::TranslationModel(ArchitectureConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  config_.validate(true);
  std::mt19937_64 rng(derive_seed(seed, "init"));
  const std::size_t d = config_.d_model;
  params_.add("src_embed", glorot_uniform<T>(config_.src_vocab_size, d, rng));
  params_.add("tgt_embed", glorot_uniform<T>(config_.vocab_size, d, rng));
  for (std::size_t i = 0; i < config_.layers; ++i) {
    const std::string p = "enc." + std::to_string(i);
    layers::add_layer_norm(params_, p + ".ln1", d);
    layers::add_attention(params_, p + ".self", d, rng);
    layers::add_layer_norm(params_, p + ".ln2", d);
    layers::add_feed_forward(params_, p + ".ff", d, config_.ff, rng);
  }
  layers::add_layer_norm(params_, "enc.ln", d);
  for (std::size_t i = 0; i < config_.layers; ++i) {
    const std::string p = "dec." + std::to_string(i);
    layers::add_layer_norm(params_, p + ".ln1", d);
    layers::add_attention(params_, p + ".self", d, rng);
    layers::add_layer_norm(params_, p + ".ln2", d);
    layers::add_attention(params_, p + ".cross", d, rng);
    layers::add_layer_norm(params_, p + ".ln3", d);
    layers::add_feed_forward(params_, p + ".ff", d, config_.ff, rng);
  }
  layers::add_layer_norm(params_, "dec.ln", d);
}

template <typename T>
typename TranslationModel<T>::Memory TranslationModel<T>::encode(
    std::span<const int> src, std::size_t rows, std::size_t len, std::span<const std::uint8_t> mask,
    std::mt19937_64* dropout_rng) const {
  if (len == 0) throw InvalidInput("empty source sentence");
  for (std::size_t r = 0; r < rows; ++r)
    if (!std::any_of(mask.begin() + static_cast<long>(r * len),
                     mask.begin() + static_cast<long>((r + 1) * len), [](auto m) { return m != 0; }))
      throw InvalidInput("empty source sentence in row " + std::to_string(r));
  check_length(len, config_);
  check_ids(src, config_.src_vocab_size, "source");
  auto x = layers::embed(params_.get("src_embed"), src, rows, len, config_.dropout, dropout_rng);
  AttentionLayout layout{rows, len, len, config_.heads, false, {mask.begin(), mask.end()}};
  for (std::size_t i = 0; i < config_.layers; ++i)
    x = residual_block<T>(params_, "enc." + std::to_string(i), x, nullptr, layout, nullptr,
                          config_.dropout, dropout_rng);
  return Memory{layers::layer_norm(params_, "enc.ln", x), rows, len, layout.key_mask};
}

template <typename T>
Var<T> TranslationModel<T>::decode(const Memory& memory, std::span<const int> ids,
                                   std::size_t rows, std::size_t len,
                                   std::span<const std::uint8_t> mask,
                                   std::mt19937_64* dropout_rng) const {
  if (memory.rows != rows) throw InvalidInput("decoder rows differ from encoded rows");
  check_length(len, config_);
  check_ids(ids, config_.vocab_size, "target");
  const auto& table = params_.get("tgt_embed");
  auto x = layers::embed(table, ids, rows, len, config_.dropout, dropout_rng);
  AttentionLayout self_layout{rows, len, len, config_.heads, true, {mask.begin(), mask.end()}};
  AttentionLayout cross_layout{rows, len, memory.len, config_.heads, false, memory.mask};
  for (std::size_t i = 0; i < config_.layers; ++i)
    x = residual_block<T>(params_, "dec." + std::to_string(i), x, &memory.states, self_layout,
                          &cross_layout, config_.dropout, dropout_rng);
  return layers::tied_logits(layers::layer_norm(params_, "dec.ln", x), table);
}

template <typename T>
Var<T> TranslationModel<T>::batch_logits(const Batch& batch, std::mt19937_64* dropout_rng) const {
  auto memory = encode(batch.src_ids, batch.rows, batch.src_len, batch.src_mask, dropout_rng);
  return decode(memory, batch.decoder_input(), batch.rows, batch.steps(),
                batch.decoder_input_mask(), dropout_rng);
}

template <typename T>
typename TranslationModel<T>::Memory TranslationModel<T>::encode_sentence(
    const TokenIds& source) const {
  numerics::NoGradGuard guard;
  std::vector<std::uint8_t> mask(source.size(), 1);
  return encode(source, 1, source.size(), mask, nullptr);
}

template <typename T>
Tensor<T> TranslationModel<T>::next_logits(const Memory& memory,
                                           std::span<const TokenIds> prefixes) const {
  numerics::NoGradGuard guard;
  const std::size_t n = prefixes.size();
  Memory tiled;
  const Memory* use = &memory;
  if (memory.rows == 1 && n > 1) {
    const auto& states = memory.states.value();
    Tensor<T> rep({n * memory.len, states.cols()});
    for (std::size_t r = 0; r < n; ++r)
      std::copy(states.values().begin(), states.values().end(), rep.data() + r * states.size());
    tiled.states = Var<T>::constant(std::move(rep));
    tiled.rows = n;
    tiled.len = memory.len;
    for (std::size_t r = 0; r < n; ++r) tiled.mask.insert(tiled.mask.end(), memory.mask.begin(), memory.mask.end());
    use = &tiled;
  } else if (memory.rows != n) {
    throw InvalidInput("memory must hold one sentence or one per prefix");
  }
  auto padded = pad_prefixes(prefixes);
  auto logits = decode(*use, padded.ids, n, padded.len, padded.mask, nullptr);
  return gather_last(logits.value(), prefixes, padded.len);
}

template <typename T>
Distribution row_distribution(const Tensor<T>& logits, std::size_t row, double tau) {
  auto src = logits.row(row);
  std::vector<double> s(src.begin(), src.end());
  return numerics::softmax_with_temperature(s, tau);
}

namespace {
template <typename T>
std::vector<Distribution> gold_distributions(const Tensor<T>& logits, const Batch& batch, double tau) {
  const auto mask = batch.gold_mask();
  std::vector<Distribution> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(row_distribution(logits, i, tau));
  return out;
}
}  // namespace

template <typename T>
std::vector<Distribution> lm_step_distributions(const LanguageModel<T>& lm, const Batch& batch,
                                                double tau) {
  numerics::NoGradGuard guard;
  return gold_distributions(lm.batch_logits(batch).value(), batch, tau);
}

template <typename T>
std::vector<Distribution> tm_step_distributions(const TranslationModel<T>& tm, const Batch& batch,
                                                double tau) {
  numerics::NoGradGuard guard;
  return gold_distributions(tm.batch_logits(batch).value(), batch, tau);
}

void check_vocab_compatible(const ArchitectureConfig& lm, const ArchitectureConfig& tm) {
  if (lm.vocab_size != tm.vocab_size)
    throw ConfigError("LM vocabulary size " + std::to_string(lm.vocab_size) +
                      " differs from TM target vocabulary size " + std::to_string(tm.vocab_size));
  if (lm.target_vocab_hash && tm.target_vocab_hash && lm.target_vocab_hash != tm.target_vocab_hash)
    throw ConfigError("LM and TM were built with different target vocabularies");
}

template <typename T>
std::vector<Tensor<T>> snapshot(const ParameterSet<T>& params) {
  std::vector<Tensor<T>> out;
  out.reserve(params.size());
  for (const auto& [name, v] : params) out.push_back(v.value());
  return out;
}

template <typename T>
void restore(ParameterSet<T>& params, const std::vector<Tensor<T>>& values) {
  if (values.size() != params.size()) throw InvalidInput("snapshot size mismatch");
  std::size_t i = 0;
  for (auto& [name, v] : params) {
    if (values[i].shape() != v.shape()) throw InvalidInput("snapshot shape mismatch for " + name);
    v.mutable_value() = values[i++];
  }
}

#define LMPRIOR_INSTANTIATE(T)                                                                  \
  template class LanguageModel<T>;                                                              \
  template class TranslationModel<T>;                                                           \
  template std::vector<Distribution> lm_step_distributions<T>(const LanguageModel<T>&,          \
                                                              const Batch&, double);            \
  template std::vector<Distribution> tm_step_distributions<T>(const TranslationModel<T>&,       \
                                                              const Batch&, double);            \
  template Distribution row_distribution<T>(const Tensor<T>&, std::size_t, double);             \
  template std::vector<Tensor<T>> snapshot<T>(const ParameterSet<T>&);                          \
  template void restore<T>(ParameterSet<T>&, const std::vector<Tensor<T>>&);

LMPRIOR_INSTANTIATE(float)
LMPRIOR_INSTANTIATE(double)
#undef LMPRIOR_INSTANTIATE

}  // namespace lmprior::seqmodels
