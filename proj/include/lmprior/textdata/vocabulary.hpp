#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lmprior::textdata {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kNumSpecials = 4;

using TokenIds = std::vector<int>;

// Bijection between token strings and ids; ids 0..3 are the specials.
class Vocabulary {
 public:
  Vocabulary();

  int add(const std::string& token);
  int id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

  // "token TAB id" per line; tab, newline and backslash are escaped.
  std::string to_text() const;
  static Vocabulary from_text(std::string_view text);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  // FNV-1a over the serialized form.
  std::uint64_t hash() const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

std::string escape_field(std::string_view s);
std::string unescape_field(std::string_view s);
std::uint64_t fnv1a(std::string_view bytes);

}  // namespace lmprior::textdata
