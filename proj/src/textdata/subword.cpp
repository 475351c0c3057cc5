#include "lmprior/textdata/subword.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "lmprior/errors.hpp"

namespace lmprior::textdata {

SubwordMode parse_subword_mode(std::string_view name) {
  if (name == "bpe") return SubwordMode::bpe;
  if (name == "char" || name == "chars") return SubwordMode::chars;
  throw ConfigError("unknown tokenizer mode '" + std::string(name) + "' (expected bpe or char)");
}

std::string_view to_string(SubwordMode mode) {
  return mode == SubwordMode::bpe ? "bpe" : "char";
}

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    if (i + len > text.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k)
      if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) len = 1;
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

std::vector<std::string> pre_tokenize(std::string_view line) {
  std::vector<std::string> pieces;
  std::string current(kSpaceMarker);
  for (const auto& ch : utf8_chars(line)) {
    if (ch == " ") {
      pieces.push_back(std::move(current));
      current = std::string(kSpaceMarker);
    } else {
      current += ch;
    }
  }
  pieces.push_back(std::move(current));
  return pieces;
}

namespace {

using Symbols = std::vector<std::string>;

void merge_in_place(Symbols& symbols, const MergePair& pair) {
  Symbols out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == pair.first && symbols[i + 1] == pair.second) {
      out.push_back(symbols[i] + symbols[i + 1]);
      ++i;
    } else {
      out.push_back(symbols[i]);
    }
  }
  symbols = std::move(out);
}

}  // namespace

SubwordModel SubwordModel::train(std::span<const std::string> lines, std::size_t vocab_size,
                                 SubwordMode mode) {
  if (lines.empty()) throw ConfigError("cannot train a tokenizer on an empty corpus");

  std::map<Symbols, long> words;
  std::set<std::string> alphabet;
  for (const auto& line : lines) {
    for (const auto& piece : pre_tokenize(line)) {
      auto symbols = utf8_chars(piece);
      alphabet.insert(symbols.begin(), symbols.end());
      ++words[std::move(symbols)];
    }
  }

  if (vocab_size < kNumSpecials + alphabet.size())
    throw ConfigError("vocab_size " + std::to_string(vocab_size) + " is too small: need at least " +
                      std::to_string(kNumSpecials + alphabet.size()) +
                      " for the specials and base characters");

  Vocabulary vocab;
  for (const auto& ch : alphabet) vocab.add(ch);
  std::vector<MergePair> merges;
  if (mode == SubwordMode::chars) return SubwordModel(std::move(vocab), std::move(merges));

  std::vector<std::pair<Symbols, long>> table(words.begin(), words.end());
  while (vocab.size() < vocab_size) {
    std::map<MergePair, long> counts;
    for (const auto& [symbols, freq] : table)
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i)
        counts[{symbols[i], symbols[i + 1]}] += freq;
    // std::map iterates pairs in lexicographic order, so strict '>' keeps
    // the smallest pair among equal counts.
    const MergePair* best = nullptr;
    long best_count = 0;
    for (const auto& [pair, count] : counts)
      if (count > best_count) {
        best = &pair;
        best_count = count;
      }
    if (!best || best_count < 2) break;
    const MergePair chosen = *best;
    merges.push_back(chosen);
    vocab.add(chosen.first + chosen.second);
    for (auto& [symbols, freq] : table) merge_in_place(symbols, chosen);
  }
  return SubwordModel(std::move(vocab), std::move(merges));
}

SubwordModel::SubwordModel(Vocabulary vocab, std::vector<MergePair> merges)
    : vocab_(std::move(vocab)), merges_(std::move(merges)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) ranks_.emplace(merges_[i], i);
}

std::vector<std::string> SubwordModel::pieces(std::string_view line) const {
  std::vector<std::string> out;
  for (const auto& word : pre_tokenize(line)) {
    auto symbols = utf8_chars(word);
    while (symbols.size() > 1) {
      std::size_t best_rank = merges_.size();
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        auto it = ranks_.find({symbols[i], symbols[i + 1]});
        if (it != ranks_.end()) best_rank = std::min(best_rank, it->second);
      }
      if (best_rank == merges_.size()) break;
      merge_in_place(symbols, merges_[best_rank]);
    }
    out.insert(out.end(), std::make_move_iterator(symbols.begin()),
               std::make_move_iterator(symbols.end()));
  }
  return out;
}

TokenIds SubwordModel::encode(std::string_view line) const {
  TokenIds ids;
  for (const auto& piece : pieces(line)) ids.push_back(vocab_.id(piece));
  return ids;
}

std::string SubwordModel::decode(std::span<const int> ids) const {
  std::string joined;
  for (int id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    joined += vocab_.token(id);
  }
  std::string out;
  out.reserve(joined.size());
  for (std::size_t i = 0; i < joined.size();) {
    if (joined.compare(i, kSpaceMarker.size(), kSpaceMarker) == 0) {
      out += ' ';
      i += kSpaceMarker.size();
    } else {
      out += joined[i++];
    }
  }
  if (!out.empty() && out.front() == ' ') out.erase(out.begin());
  return out;
}

std::string SubwordModel::merges_text() const {
  std::string out;
  for (const auto& [a, b] : merges_) out += escape_field(a) + '\t' + escape_field(b) + '\n';
  return out;
}

std::vector<MergePair> SubwordModel::merges_from_text(std::string_view text) {
  std::vector<MergePair> merges;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw InvalidInput("merge line without tab: " + line);
    merges.emplace_back(unescape_field(std::string_view(line).substr(0, tab)),
                        unescape_field(std::string_view(line).substr(tab + 1)));
  }
  return merges;
}

void SubwordModel::save(const std::string& vocab_path, const std::string& merges_path) const {
  vocab_.save(vocab_path);
  std::ofstream out(merges_path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + merges_path);
  out << merges_text();
}

SubwordModel SubwordModel::load(const std::string& vocab_path, const std::string& merges_path) {
  std::ifstream in(merges_path, std::ios::binary);
  if (!in) throw InvalidInput("cannot read " + merges_path);
  std::stringstream ss;
  ss << in.rdbuf();
  return SubwordModel(Vocabulary::load(vocab_path), merges_from_text(ss.str()));
}

}  // namespace lmprior::textdata
