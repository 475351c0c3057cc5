#include "lmprior/textdata/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "lmprior/errors.hpp"

namespace lmprior::textdata {

std::size_t word_count(std::string_view line) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : line) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

std::vector<TextPair> filter_parallel(std::span<const TextPair> pairs, std::size_t max_len,
                                      double max_ratio) {
  std::vector<TextPair> kept;
  for (const auto& p : pairs) {
    const std::size_t ls = word_count(p.source), lt = word_count(p.target);
    if (ls == 0 || lt == 0) continue;
    if (ls > max_len || lt > max_len) continue;
    const double ratio =
        static_cast<double>(std::max(ls, lt)) / static_cast<double>(std::min(ls, lt));
    if (ratio > max_ratio) continue;
    kept.push_back(p);
  }
  return kept;
}

std::vector<std::string> filter_mono(std::span<const std::string> lines, std::size_t max_len) {
  std::vector<std::string> kept;
  for (const auto& line : lines) {
    const std::size_t n = word_count(line);
    if (n == 0 || n > max_len) continue;
    kept.push_back(line);
  }
  return kept;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot read " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::string& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path);
  for (const auto& line : lines) out << line << '\n';
}

std::vector<TextPair> read_parallel(const std::string& source_path,
                                    const std::string& target_path) {
  auto src = read_lines(source_path);
  auto tgt = read_lines(target_path);
  if (src.size() != tgt.size())
    throw InvalidInput("parallel files differ in line count: " + source_path + " (" +
                       std::to_string(src.size()) + ") vs " + target_path + " (" +
                       std::to_string(tgt.size()) + ")");
  std::vector<TextPair> pairs(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) pairs[i] = {std::move(src[i]), std::move(tgt[i])};
  return pairs;
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

ParallelCorpus encode_parallel(std::span<const TextPair> pairs, const SubwordModel& source,
                               const SubwordModel& target) {
  ParallelCorpus corpus;
  corpus.pairs.reserve(pairs.size());
  for (const auto& p : pairs) corpus.pairs.push_back({source.encode(p.source), target.encode(p.target)});
  return corpus;
}

ParallelCorpus encode_mono(std::span<const std::string> lines, const SubwordModel& target) {
  ParallelCorpus corpus;
  corpus.pairs.reserve(lines.size());
  for (const auto& line : lines) corpus.pairs.push_back({{}, target.encode(line)});
  return corpus;
}

}  // namespace lmprior::textdata
