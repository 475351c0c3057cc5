#include "lmprior/textdata/batch.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "lmprior/errors.hpp"

namespace lmprior::textdata {

std::vector<int> Batch::decoder_input() const {
  std::vector<int> out;
  out.reserve(rows * steps());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t + 1 < tgt_len; ++t) out.push_back(tgt_ids[r * tgt_len + t]);
  return out;
}

std::vector<int> Batch::gold() const {
  std::vector<int> out;
  out.reserve(rows * steps());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 1; t < tgt_len; ++t) out.push_back(tgt_ids[r * tgt_len + t]);
  return out;
}

std::vector<std::uint8_t> Batch::gold_mask() const {
  std::vector<std::uint8_t> out;
  out.reserve(rows * steps());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 1; t < tgt_len; ++t) out.push_back(tgt_mask[r * tgt_len + t]);
  return out;
}

std::vector<std::uint8_t> Batch::decoder_input_mask() const {
  std::vector<std::uint8_t> out;
  out.reserve(rows * steps());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t + 1 < tgt_len; ++t) out.push_back(tgt_mask[r * tgt_len + t]);
  return out;
}

Batch make_batch(const ParallelCorpus& corpus, std::span<const std::size_t> indices) {
  if (indices.empty()) throw InvalidInput("make_batch: no rows");
  Batch b;
  b.rows = indices.size();
  b.indices.assign(indices.begin(), indices.end());
  for (auto i : indices) {
    const auto& p = corpus.pairs.at(i);
    b.src_len = std::max(b.src_len, p.source.size());
    b.tgt_len = std::max(b.tgt_len, p.target.size() + 2);
  }
  b.src_ids.assign(b.rows * b.src_len, kPad);
  b.src_mask.assign(b.rows * b.src_len, 0);
  b.tgt_ids.assign(b.rows * b.tgt_len, kPad);
  b.tgt_mask.assign(b.rows * b.tgt_len, 0);
  for (std::size_t r = 0; r < b.rows; ++r) {
    const auto& p = corpus.pairs[indices[r]];
    for (std::size_t t = 0; t < p.source.size(); ++t) {
      b.src_ids[r * b.src_len + t] = p.source[t];
      b.src_mask[r * b.src_len + t] = 1;
    }
    auto* row = &b.tgt_ids[r * b.tgt_len];
    auto* mask = &b.tgt_mask[r * b.tgt_len];
    row[0] = kBos;
    for (std::size_t t = 0; t < p.target.size(); ++t) row[t + 1] = p.target[t];
    row[p.target.size() + 1] = kEos;
    std::fill(mask, mask + p.target.size() + 2, std::uint8_t{1});
    b.token_count += p.target.size() + 1;
  }
  return b;
}

namespace {
std::size_t length_key(const SentencePair& p) { return std::max(p.source.size(), p.target.size()); }
}  // namespace

std::vector<Batch> make_batches(const ParallelCorpus& corpus, std::size_t tokens_per_batch,
                                std::uint64_t shuffle_seed) {
  if (corpus.empty()) throw InvalidInput("make_batches: empty corpus");
  if (tokens_per_batch == 0) throw ConfigError("tokens_per_batch must be positive");
  std::mt19937_64 rng(shuffle_seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return length_key(corpus.pairs[a]) < length_key(corpus.pairs[b]);
  });

  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> current;
  std::size_t current_max = 0;
  for (auto idx : order) {
    const std::size_t len = std::max<std::size_t>(length_key(corpus.pairs[idx]), 1);
    const std::size_t new_max = std::max(current_max, len);
    if (!current.empty() && (current.size() + 1) * new_max > tokens_per_batch) {
      groups.push_back(std::move(current));
      current.clear();
      current_max = 0;
    }
    current.push_back(idx);
    current_max = std::max(current_max, len);
  }
  if (!current.empty()) groups.push_back(std::move(current));
  std::shuffle(groups.begin(), groups.end(), rng);

  std::vector<Batch> batches;
  batches.reserve(groups.size());
  for (const auto& g : groups) batches.push_back(make_batch(corpus, g));
  return batches;
}

std::vector<Batch> make_ordered_batches(const ParallelCorpus& corpus, std::size_t max_rows) {
  if (max_rows == 0) throw ConfigError("max_rows must be positive");
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < corpus.size(); start += max_rows) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(corpus.size(), start + max_rows); ++i) idx.push_back(i);
    batches.push_back(make_batch(corpus, idx));
  }
  return batches;
}

}  // namespace lmprior::textdata
