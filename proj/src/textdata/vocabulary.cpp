#include "lmprior/textdata/vocabulary.hpp"

#include <fstream>
#include <sstream>

#include "lmprior/errors.hpp"

namespace lmprior::textdata {

std::string escape_field(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape_field(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 == s.size()) {
      out += s[i];
      continue;
    }
    switch (s[++i]) {
      case 't': out += '\t'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      default: out += s[i];
    }
  }
  return out;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Vocabulary::Vocabulary() {
  for (const char* s : {"<pad>", "<s>", "</s>", "<unk>"}) add(s);
}

int Vocabulary::add(const std::string& token) {
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return ids_.count(std::string(token)) != 0;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw InvalidInput("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(tokens_.size()));
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    out += escape_field(tokens_[i]) + '\t' + std::to_string(i) + '\n';
  return out;
}

Vocabulary Vocabulary::from_text(std::string_view text) {
  Vocabulary v;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t expected = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw InvalidInput("vocabulary line without tab: " + line);
    const std::string token = unescape_field(std::string_view(line).substr(0, tab));
    const std::size_t id = std::stoul(line.substr(tab + 1));
    if (id != expected) throw InvalidInput("vocabulary ids must be dense and ordered");
    if (id < kNumSpecials) {
      if (v.tokens_[id] != token) throw InvalidInput("special token mismatch at id " + std::to_string(id));
    } else if (v.add(token) != static_cast<int>(id)) {
      throw InvalidInput("duplicate vocabulary token: " + token);
    }
    ++expected;
  }
  return v;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path);
  out << to_text();
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

std::uint64_t Vocabulary::hash() const { return fnv1a(to_text()); }

}  // namespace lmprior::textdata
