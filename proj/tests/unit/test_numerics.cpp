#include <doctest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "lmprior/numerics/distribution.hpp"
#include "lmprior/numerics/ops.hpp"

using namespace lmprior;
using namespace lmprior::numerics;

namespace {

// Direct-formula oracle, independent of the max-subtraction path.
std::vector<double> naive_softmax(const std::vector<double>& s, double tau) {
  double z = 0.0;
  for (double v : s) z += std::exp(v / tau);
  std::vector<double> p;
  for (double v : s) p.push_back(std::exp(v / tau) / z);
  return p;
}

double naive_kl(const std::vector<double>& p, const std::vector<double>& q) {
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0) d += p[i] * std::log(p[i] / q[i]);
  return d;
}

Distribution random_distribution(std::mt19937_64& rng, std::size_t k) {
  std::gamma_distribution<double> g(0.5, 1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (auto& v : p) total += (v = g(rng) + 1e-300);
  for (auto& v : p) v /= total;
  return Distribution(p);
}

Tensor<double> random_tensor(std::mt19937_64& rng, Shape shape, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = n(rng);
  return t;
}

}  // namespace

TEST_CASE("tensor invariants") {
  Tensor<double> t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK_THROWS_AS(Tensor<double>({2, 0}), InvalidInput);
  CHECK_THROWS_AS(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), InvalidInput);
}

TEST_CASE("softmax_with_temperature examples") {
  auto uniform = softmax_with_temperature(std::vector<double>{0, 0, 0}, 1.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(uniform[i] == doctest::Approx(1.0 / 3));

  const std::vector<double> logits{2, 0};
  auto oracle1 = naive_softmax(logits, 1.0);
  auto oracle2 = naive_softmax(logits, 2.0);
  auto p1 = softmax_with_temperature(logits, 1.0);
  auto p2 = softmax_with_temperature(logits, 2.0);
  CHECK(oracle1[0] == doctest::Approx(0.8808).epsilon(1e-4));
  CHECK(oracle2[0] == doctest::Approx(0.7311).epsilon(1e-4));
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(p1[i] == doctest::Approx(oracle1[i]).epsilon(1e-12));
    CHECK(p2[i] == doctest::Approx(oracle2[i]).epsilon(1e-12));
  }
  CHECK(p2[0] < p1[0]);

  // Large logits stay finite thanks to max subtraction.
  auto big = softmax_with_temperature(std::vector<double>{1000, 999}, 1.0);
  CHECK(big[0] == doctest::Approx(naive_softmax({1, 0}, 1.0)[0]));

  CHECK_THROWS_AS(softmax_with_temperature(std::vector<double>{1, NAN}, 1.0), InvalidInput);
  CHECK_THROWS_AS(softmax_with_temperature(std::vector<double>{1, INFINITY}, 1.0), InvalidInput);
  CHECK_THROWS_AS(softmax_with_temperature(std::vector<double>{1, 2}, 0.5), InvalidInput);
}

TEST_CASE("entropy examples") {
  CHECK(entropy(Distribution::one_hot(4, 2)) == 0.0);
  CHECK(entropy(Distribution::uniform(4)) == doctest::Approx(std::log(4.0)));
  CHECK(entropy(Distribution({0.5, 0.5, 0, 0})) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("kl_divergence examples") {
  CHECK(kl_divergence(Distribution({0.5, 0.5}), Distribution({0.5, 0.5})) == 0.0);
  const double oracle = naive_kl({0.8, 0.2}, {0.5, 0.5});
  CHECK(oracle == doctest::Approx(0.1927).epsilon(1e-3));
  CHECK(kl_divergence(Distribution({0.8, 0.2}), Distribution({0.5, 0.5})) ==
        doctest::Approx(oracle).epsilon(1e-12));
  CHECK(kl_divergence(Distribution({1, 0}), Distribution({0.5, 0.5})) ==
        doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(kl_divergence(Distribution({0.5, 0.5}), Distribution::uniform(3)), InvalidInput);
}

TEST_CASE("distribution validation") {
  CHECK_THROWS_AS(Distribution({1.0}), InvalidInput);
  CHECK_THROWS_AS(Distribution({0.7, 0.7}), InvalidInput);
  CHECK_THROWS_AS(Distribution({1.1, -0.1}), InvalidInput);
  auto d = Distribution({0.1, 0.5, 0.4});
  CHECK(d.argmax() == 1);
  CHECK(d.top_k(2) == std::vector<std::size_t>{1, 2});
}

TEST_CASE("distribution properties over random inputs") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = 2 + rng() % 30;
    auto p = random_distribution(rng, k);
    auto q = random_distribution(rng, k);
    CHECK(std::abs(kl_divergence(p, p)) <= 1e-9);
    CHECK(kl_divergence(p, q) >= 0.0);
    const double h = entropy(p);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(static_cast<double>(k)) + 1e-12);

    std::normal_distribution<double> n(0.0, 3.0);
    std::vector<double> logits(k);
    for (auto& s : logits) s = n(rng);
    double previous = -1.0;
    const auto top = softmax_with_temperature(logits, 1.0).argmax();
    for (double tau : {1.0, 1.5, 2.0, 4.0, 10.0, 50.0}) {
      auto d = softmax_with_temperature(logits, tau);
      const double ht = entropy(d);
      CHECK(ht >= previous - 1e-12);
      previous = ht;
      CHECK(d.argmax() == top);
    }
  }
}

TEST_CASE("backward on a quadratic") {
  ParameterSet<double> params;
  auto& w = params.add("w", Tensor<double>({2}, {1.0, 2.0}));
  auto grads = backward(sum(mul(w, w)), params);
  CHECK(grads.at("w")[0] == doctest::Approx(2.0));
  CHECK(grads.at("w")[1] == doctest::Approx(4.0));
}

TEST_CASE("backward rejects a non-scalar") {
  auto w = Var<double>::parameter(Tensor<double>({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(backward(mul(w, w)), InvalidInput);
}

TEST_CASE("cross-entropy gradient equals probs minus one-hot") {
  ParameterSet<double> params;
  auto& logits = params.add("logits", Tensor<double>({1, 4}, {0.3, -1.2, 2.0, 0.5}));
  const std::vector<int> gold{2};
  const std::vector<double> weights{1.0};
  auto loss_fn = [&] {
    return smoothed_nll<double>(log_softmax(logits), gold, weights);
  };
  auto grads = backward(loss_fn(), params);
  auto probs = naive_softmax({0.3, -1.2, 2.0, 0.5}, 1.0);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(grads.at("logits")[i] ==
          doctest::Approx(probs[i] - (i == 2 ? 1.0 : 0.0)).epsilon(1e-10));
  CHECK(testing::gradcheck(params, loss_fn).worst_relative_error < 1e-4);
}

TEST_CASE("every op matches finite differences") {
  std::mt19937_64 rng(11);
  ParameterSet<double> params;
  auto& a = params.add("a", random_tensor(rng, {3, 4}));
  auto& b = params.add("b", random_tensor(rng, {4, 5}));
  auto& c = params.add("c", random_tensor(rng, {6, 4}));
  auto& bias = params.add("bias", random_tensor(rng, {5}));
  auto& gain = params.add("gain", random_tensor(rng, {4}, 0.5));
  auto& shift = params.add("shift", random_tensor(rng, {4}));
  auto& table = params.add("table", random_tensor(rng, {7, 4}));
  auto& pos = params.add("pos", random_tensor(rng, {3, 4}));
  auto target = random_tensor(rng, {3, 5});
  for (std::size_t r = 0; r < 3; ++r) {
    auto row = softmax_with_temperature(
        std::vector<double>(target.row(r).begin(), target.row(r).end()), 1.0);
    for (std::size_t k = 0; k < 5; ++k) target.at(r, k) = row[k];
  }
  const std::vector<int> ids{1, 5, 1};
  const std::vector<int> gold{0, 3, 4};
  const std::vector<double> weights{0.5, 0.0, 0.5};

  SUBCASE("matmul, add_bias, log_softmax, smoothed_nll") {
    auto fn = [&] {
      auto h = add_bias(matmul(a, b), bias);
      return smoothed_nll<double>(log_softmax(h, 2.0), gold, weights, 0.1);
    };
    CHECK(testing::gradcheck(params, fn).worst_relative_error < 1e-4);
  }
  SUBCASE("matmul_nt, layer_norm, relu, scale") {
    auto fn = [&] {
      auto h = layer_norm(add(a, pos), gain, shift);
      auto logits = matmul_nt(scale(relu(h), 0.7), c);
      return sum(mul(logits, logits));
    };
    CHECK(testing::gradcheck(params, fn).worst_relative_error < 1e-4);
  }
  SUBCASE("embedding, softmax, log, kl_from_constant") {
    auto fn = [&] {
      auto e = embedding<double>(table, ids, 1.5);
      auto p = softmax(matmul(add(e, a), b), 1.0);
      auto lp = log(p);
      return add(kl_from_constant<double>(target, log_softmax(matmul(e, b), 2.0), weights),
                 sum(mul(lp, lp)));
    };
    CHECK(testing::gradcheck(params, fn).worst_relative_error < 1e-4);
  }
  SUBCASE("attention with causal and key masks") {
    auto& q = params.add("q", random_tensor(rng, {2 * 3, 4}));
    auto& k = params.add("k", random_tensor(rng, {2 * 3, 4}));
    auto& v = params.add("v", random_tensor(rng, {2 * 3, 4}));
    AttentionLayout layout;
    layout.batch = 2;
    layout.query_len = 3;
    layout.key_len = 3;
    layout.heads = 2;
    layout.causal = true;
    layout.key_mask = {1, 1, 1, 1, 1, 0};
    auto fn = [&] {
      auto o = attention(q, k, v, layout);
      return sum(mul(o, o));
    };
    CHECK(testing::gradcheck(params, fn).worst_relative_error < 1e-4);
    layout.causal = false;
    CHECK(testing::gradcheck(params, fn).worst_relative_error < 1e-4);
  }
}

TEST_CASE("attention respects the causal mask") {
  std::mt19937_64 rng(3);
  auto q = Var<double>::constant(random_tensor(rng, {4, 4}));
  auto k = Var<double>::constant(random_tensor(rng, {4, 4}));
  auto v = Var<double>::constant(random_tensor(rng, {4, 4}));
  AttentionLayout layout{1, 4, 4, 2, true, {}};
  auto base = attention(q, k, v, layout).value();
  auto k2 = k.value();
  auto v2 = v.value();
  for (std::size_t c = 0; c < 4; ++c) {
    k2.at(3, c) += 5.0;
    v2.at(3, c) -= 2.0;
  }
  auto perturbed = attention(q, Var<double>::constant(k2), Var<double>::constant(v2), layout).value();
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(base.at(r, c) == perturbed.at(r, c));
}

TEST_CASE("no-grad guard records nothing") {
  auto w = Var<double>::parameter(Tensor<double>({2}, {1.0, 2.0}));
  NoGradGuard guard;
  auto y = sum(mul(w, w));
  CHECK_FALSE(y.requires_grad());
  CHECK(y.item() == doctest::Approx(5.0));
}
