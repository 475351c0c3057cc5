#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lmprior/textdata/vocabulary.hpp"

namespace lmprior::textdata {

// U+2581, stands in for a space (and marks the start of the line).
inline constexpr std::string_view kSpaceMarker = "\xE2\x96\x81";

enum class SubwordMode { bpe, chars };

SubwordMode parse_subword_mode(std::string_view name);
std::string_view to_string(SubwordMode mode);

// Splits UTF-8 text into code points (invalid bytes become single units).
std::vector<std::string> utf8_chars(std::string_view text);

// Line -> marker-prefixed word pieces: "a b" -> {"▁a", "▁b"}.
std::vector<std::string> pre_tokenize(std::string_view line);

using MergePair = std::pair<std::string, std::string>;

// Byte-pair-encoding (or plain character) tokenizer.
//
// Training is deterministic: pair counts are taken over unique marker
// words weighted by frequency, and ties go to the lexicographically smallest
// pair. Encoding replays merges in priority order per word. Decoding is
// exact for text whose characters were seen in training and that does not
// contain the marker itself.
class SubwordModel {
 public:
  static SubwordModel train(std::span<const std::string> lines, std::size_t vocab_size,
                            SubwordMode mode = SubwordMode::bpe);

  SubwordModel() = default;
  SubwordModel(Vocabulary vocab, std::vector<MergePair> merges);

  std::vector<std::string> pieces(std::string_view line) const;
  TokenIds encode(std::string_view line) const;
  // Special ids are skipped.
  std::string decode(std::span<const int> ids) const;

  const Vocabulary& vocab() const { return vocab_; }
  const std::vector<MergePair>& merges() const { return merges_; }

  std::string merges_text() const;
  static std::vector<MergePair> merges_from_text(std::string_view text);
  void save(const std::string& vocab_path, const std::string& merges_path) const;
  static SubwordModel load(const std::string& vocab_path, const std::string& merges_path);

 private:
  Vocabulary vocab_;
  std::vector<MergePair> merges_;
  std::map<MergePair, std::size_t> ranks_;
};

}  // namespace lmprior::textdata
