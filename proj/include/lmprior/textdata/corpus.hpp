#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lmprior/textdata/subword.hpp"

namespace lmprior::textdata {

struct TextPair {
  std::string source;
  std::string target;
};

struct SentencePair {
  TokenIds source;
  TokenIds target;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

std::size_t word_count(std::string_view line);

// Drops pairs with an empty side, a side above max_len whitespace words, or
// a long/short word ratio above max_ratio.
std::vector<TextPair> filter_parallel(std::span<const TextPair> pairs, std::size_t max_len = 60,
                                      double max_ratio = 1.5);

// Drops empty lines and lines above max_len whitespace words.
std::vector<std::string> filter_mono(std::span<const std::string> lines, std::size_t max_len = 50);

std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, std::span<const std::string> lines);
std::vector<TextPair> read_parallel(const std::string& source_path, const std::string& target_path);

std::string lowercase(std::string_view s);

ParallelCorpus encode_parallel(std::span<const TextPair> pairs, const SubwordModel& source,
                               const SubwordModel& target);
// Target-only corpus for language-model training; sources stay empty.
ParallelCorpus encode_mono(std::span<const std::string> lines, const SubwordModel& target);

}  // namespace lmprior::textdata
