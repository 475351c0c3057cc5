#include "lmprior/cli/toy.hpp"

#include <algorithm>
#include <array>
#include <filesystem>
#include <random>
#include <sstream>

#include "lmprior/errors.hpp"
#include "lmprior/seqmodels/architecture.hpp"

namespace lmprior::cli {

namespace {

constexpr std::array<const char*, 10> kDigitWords = {"zero", "one", "two",   "three", "four",
                                                     "five", "six", "seven", "eight", "nine"};

// Digits 0, 4 and 8 switch to a second spelling depending on the two digits
// before them, via a fixed table. Sparse in a few hundred pairs, dense in
// thousands of monolingual sentences.
constexpr std::array<const char*, 10> kVariantWords = {"oh", nullptr, nullptr, nullptr, "quad",
                                                       nullptr, nullptr, nullptr, "ocho", nullptr};

bool use_variant(std::size_t d, std::size_t prev2, std::size_t prev1) {
  static const auto table = [] {
    std::mt19937_64 rng(0xa17ULL);
    std::array<bool, 1000> t{};
    for (auto& x : t) x = (rng() & 1) != 0;
    return t;
  }();
  return kVariantWords[d] && table[d * 100 + prev2 * 10 + prev1];
}

std::size_t alphabet_size(ToyTask t) { return t == ToyTask::digits_to_words ? 10 : 20; }

std::string symbol(ToyTask t, std::size_t i) {
  if (t == ToyTask::digits_to_words) return std::to_string(i);
  return std::string(1, static_cast<char>('a' + i));
}

// Row s: three preferred successors plus a small uniform floor.
std::vector<std::vector<double>> chain(std::size_t n) {
  std::mt19937_64 rng(0x70bULL);
  std::vector<std::vector<double>> rows(n, std::vector<double>(n, 0.05 / static_cast<double>(n)));
  for (auto& row : rows) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    row[order[0]] += 0.6;
    row[order[1]] += 0.25;
    row[order[2]] += 0.1;
  }
  return rows;
}

class Sampler {
 public:
  Sampler(ToyTask task, std::uint64_t seed) : task_(task), rng_(seed), rows_(chain(alphabet_size(task))) {}

  std::string sentence(std::size_t lo, std::size_t hi) {
    const std::size_t len = std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
    const std::size_t n = alphabet_size(task_);
    std::size_t s = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_);
    std::string out = symbol(task_, s);
    for (std::size_t i = 1; i < len; ++i) {
      s = std::discrete_distribution<std::size_t>(rows_[s].begin(), rows_[s].end())(rng_);
      out += ' ' + symbol(task_, s);
    }
    return out;
  }

 private:
  ToyTask task_;
  std::mt19937_64 rng_;
  std::vector<std::vector<double>> rows_;
};

std::vector<std::string> words(std::string_view line) {
  std::vector<std::string> w;
  std::istringstream in{std::string(line)};
  for (std::string x; in >> x;) w.push_back(x);
  return w;
}

}  // namespace

ToyTask parse_toy_task(std::string_view name) {
  if (name == "copy") return ToyTask::copy;
  if (name == "reverse") return ToyTask::reverse;
  if (name == "digits-to-words") return ToyTask::digits_to_words;
  throw UsageError("unknown toy task '" + std::string(name) + "' (copy, reverse, digits-to-words)");
}

std::string to_string(ToyTask t) {
  switch (t) {
    case ToyTask::copy: return "copy";
    case ToyTask::reverse: return "reverse";
    case ToyTask::digits_to_words: return "digits-to-words";
  }
  return "?";
}

std::string toy_target(ToyTask task, std::string_view source) {
  auto w = words(source);
  if (task == ToyTask::reverse) std::reverse(w.begin(), w.end());
  std::string out;
  std::vector<std::size_t> digits;
  for (const auto& x : w) {
    std::string t = x;
    if (task == ToyTask::digits_to_words) {
      if (x.size() != 1 || x[0] < '0' || x[0] > '9') throw InvalidInput("not a digit: " + x);
      const auto d = static_cast<std::size_t>(x[0] - '0');
      const auto n = digits.size();
      t = n >= 2 && use_variant(d, digits[n - 2], digits[n - 1]) ? kVariantWords[d] : kDigitWords[d];
      digits.push_back(d);
    }
    out += (out.empty() ? "" : " ") + t;
  }
  return out;
}

ToyCorpus generate_toy(const ToyOptions& o) {
  if (o.n_pairs == 0 || o.n_mono == 0) throw UsageError("n_pairs and n_mono must be positive");
  if (o.min_len == 0 || o.min_len > o.max_len) throw UsageError("toy lengths need 1 <= min_len <= max_len");
  Sampler sample(o.task, seqmodels::derive_seed(o.seed, "toy-gen"));
  ToyCorpus c;
  auto pairs = [&](std::size_t n, std::vector<textdata::TextPair>& out) {
    for (std::size_t i = 0; i < n; ++i) {
      auto src = sample.sentence(o.min_len, o.max_len);
      out.push_back({src, toy_target(o.task, src)});
    }
  };
  pairs(o.n_pairs, c.train);
  pairs(o.n_dev, c.dev);
  pairs(o.n_test, c.test);
  // monolingual text covers a slightly wider length range than the pairs
  const std::size_t lo = std::max<std::size_t>(1, o.min_len - 1);
  for (std::size_t i = 0; i < o.n_mono; ++i) c.mono.push_back(toy_target(o.task, sample.sentence(lo, o.max_len + 2)));
  for (std::size_t i = 0; i < o.n_mono_dev; ++i)
    c.mono_dev.push_back(toy_target(o.task, sample.sentence(lo, o.max_len + 2)));
  return c;
}

void write_toy(const ToyCorpus& c, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto side = [&](const std::vector<textdata::TextPair>& pairs, const std::string& name) {
    std::vector<std::string> s, t;
    for (const auto& p : pairs) {
      s.push_back(p.source);
      t.push_back(p.target);
    }
    textdata::write_lines(dir + "/" + name + ".src", s);
    textdata::write_lines(dir + "/" + name + ".tgt", t);
  };
  side(c.train, "train");
  side(c.dev, "dev");
  side(c.test, "test");
  textdata::write_lines(dir + "/mono.txt", c.mono);
  textdata::write_lines(dir + "/mono.dev.txt", c.mono_dev);
}

}  // namespace lmprior::cli
