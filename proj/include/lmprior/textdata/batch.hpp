#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lmprior/textdata/corpus.hpp"

namespace lmprior::textdata {

// Padded id matrices for one mini-batch.
//
// Target rows are BOS y_1..y_n EOS PAD..., so the decoder input is columns
// [0, tgt_len-1) and the gold sequence columns [1, tgt_len). Source rows
// carry the raw ids; src_len is 0 for target-only batches.
struct Batch {
  std::size_t rows = 0;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  std::vector<int> src_ids;
  std::vector<int> tgt_ids;
  std::vector<std::uint8_t> src_mask;
  std::vector<std::uint8_t> tgt_mask;
  std::size_t token_count = 0;  // gold tokens (non-pad), EOS included
  std::vector<std::size_t> indices;  // corpus positions of the rows

  std::size_t steps() const { return tgt_len - 1; }
  std::vector<int> decoder_input() const;
  std::vector<int> gold() const;
  std::vector<std::uint8_t> gold_mask() const;
  std::vector<std::uint8_t> decoder_input_mask() const;
};

Batch make_batch(const ParallelCorpus& corpus, std::span<const std::size_t> indices);

// Length-bucketed batches whose padded size rows * max_len stays within
// tokens_per_batch (a single over-long sentence forms its own batch).
// The same seed always yields the same batches in the same order.
std::vector<Batch> make_batches(const ParallelCorpus& corpus, std::size_t tokens_per_batch,
                                std::uint64_t shuffle_seed);

// Batches in corpus order, no shuffling; used for evaluation.
std::vector<Batch> make_ordered_batches(const ParallelCorpus& corpus, std::size_t max_rows);

}  // namespace lmprior::textdata
