#include "lmprior/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace lmprior::numerics {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
ConstMatMap<T> as_matrix(const Tensor<T>& t) {
  return ConstMatMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}
template <typename T>
MatMap<T> as_matrix(Tensor<T>& t) {
  return MatMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
Node<T>& input(Node<T>& self, std::size_t i) {
  return *self.inputs[i];
}

void require(bool cond, const std::string& message) {
  if (!cond) throw InvalidInput(message);
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.value().size() == b.value().size() && a.cols() == b.cols(),
          std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
              shape_string(b.shape()));
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ " + shape_string(a.shape()) +
                                    " x " + shape_string(b.shape()));
  Tensor<T> out({a.rows(), b.cols()});
  as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value());
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& na = input(self, 0);
    auto& nb = input(self, 1);
    auto g = as_matrix(static_cast<const Tensor<T>&>(self.grad));
    if (na.requires_grad)
      as_matrix(na.ensure_grad()).noalias() += g * as_matrix(nb.value).transpose();
    if (nb.requires_grad)
      as_matrix(nb.ensure_grad()).noalias() += as_matrix(na.value).transpose() * g;
  });
}

template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ " +
                                    shape_string(a.shape()) + " x " + shape_string(b.shape()) +
                                    "^T");
  Tensor<T> out({a.rows(), b.rows()});
  as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value()).transpose();
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& na = input(self, 0);
    auto& nb = input(self, 1);
    auto g = as_matrix(static_cast<const Tensor<T>&>(self.grad));
    if (na.requires_grad) as_matrix(na.ensure_grad()).noalias() += g * as_matrix(nb.value);
    if (nb.requires_grad)
      as_matrix(nb.ensure_grad()).noalias() += g.transpose() * as_matrix(na.value);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& n = input(self, k);
      if (!n.requires_grad) continue;
      auto& g = n.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  require(bias.value().size() == x.cols(), "add_bias: bias length must equal column count");
  Tensor<T> out = x.value();
  const std::size_t cols = x.cols();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += bias.value()[c];
  return make_result<T>(std::move(out), {x, bias}, [cols](Node<T>& self) {
    auto& nx = input(self, 0);
    auto& nb = input(self, 1);
    if (nx.requires_grad) {
      auto& g = nx.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t r = 0; r < self.grad.rows(); ++r)
        for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad.at(r, c);
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& na = input(self, 0);
    auto& nb = input(self, 1);
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v *= factor;
  return make_result<T>(std::move(out), {x}, [factor](Node<T>& self) {
    auto& g = input(self, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& nx = input(self, 0);
    auto& g = nx.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (nx.value[i] > T(0)) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  const T floor = static_cast<T>(kLogFloor);
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = std::log(std::max(v, floor));
  return make_result<T>(std::move(out), {x}, [floor](Node<T>& self) {
    auto& nx = input(self, 0);
    auto& g = nx.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (nx.value[i] > floor) g[i] += self.grad[i] / nx.value[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  double total = 0.0;
  for (auto v : x.value().values()) total += v;
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(total)), {x}, [](Node<T>& self) {
    auto& g = input(self, 0).ensure_grad();
    for (auto& v : g.values()) v += self.grad[0];
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  const std::size_t rows = x.rows(), cols = x.cols();
  require(gain.value().size() == cols && bias.value().size() == cols,
          "layer_norm: gain/bias length must equal column count");
  Tensor<T> out(x.shape());
  auto normalized = std::make_shared<std::vector<T>>(x.value().size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = x.value().row(r);
    T mean = T(0);
    for (auto v : in) mean += v;
    mean /= static_cast<T>(cols);
    T var = T(0);
    for (auto v : in) var += (v - mean) * (v - mean);
    var /= static_cast<T>(cols);
    const T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t c = 0; c < cols; ++c) {
      const T xh = (in[c] - mean) * inv;
      (*normalized)[r * cols + c] = xh;
      out.at(r, c) = xh * gain.value()[c] + bias.value()[c];
    }
  }
  return make_result<T>(std::move(out), {x, gain, bias},
                        [rows, cols, normalized, inv_std](Node<T>& self) {
    auto& nx = input(self, 0);
    auto& ng = input(self, 1);
    auto& nb = input(self, 2);
    const auto& xh = *normalized;
    if (ng.requires_grad) {
      auto& g = ng.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad.at(r, c) * xh[r * cols + c];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad.at(r, c);
    }
    if (nx.requires_grad) {
      auto& g = nx.ensure_grad();
      std::vector<T> dxh(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_d = T(0), mean_dx = T(0);
        for (std::size_t c = 0; c < cols; ++c) {
          dxh[c] = self.grad.at(r, c) * ng.value[c];
          mean_d += dxh[c];
          mean_dx += dxh[c] * xh[r * cols + c];
        }
        mean_d /= static_cast<T>(cols);
        mean_dx /= static_cast<T>(cols);
        for (std::size_t c = 0; c < cols; ++c)
          g.at(r, c) += (*inv_std)[r] * (dxh[c] - mean_d - xh[r * cols + c] * mean_dx);
      }
    }
  });
}

template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const int> ids, T factor) {
  const std::size_t vocab = table.rows(), width = table.cols();
  require(!ids.empty(), "embedding: empty id list");
  Tensor<T> out({ids.size(), width});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    require(ids[r] >= 0 && static_cast<std::size_t>(ids[r]) < vocab,
            "embedding: id " + std::to_string(ids[r]) + " outside vocabulary of size " +
                std::to_string(vocab));
    auto src = table.value().row(static_cast<std::size_t>(ids[r]));
    for (std::size_t c = 0; c < width; ++c) out.at(r, c) = src[c] * factor;
  }
  std::vector<int> kept(ids.begin(), ids.end());
  return make_result<T>(std::move(out), {table},
                        [kept = std::move(kept), width, factor](Node<T>& self) {
    auto& g = input(self, 0).ensure_grad();
    for (std::size_t r = 0; r < kept.size(); ++r) {
      auto dst = g.row(static_cast<std::size_t>(kept[r]));
      for (std::size_t c = 0; c < width; ++c) dst[c] += self.grad.at(r, c) * factor;
    }
  });
}

template <typename T>
Var<T> dropout(const Var<T>& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  require(p < 1.0, "dropout: probability must be below 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(x.value().size());
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    (*mask)[i] = u < p ? T(0) : keep_scale;
    out[i] *= (*mask)[i];
  }
  return make_result<T>(std::move(out), {x}, [mask](Node<T>& self) {
    auto& g = input(self, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

namespace {
template <typename T>
void log_softmax_rows(const Tensor<T>& x, T tau, Tensor<T>& out) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto o = out.row(r);
    T mx = -std::numeric_limits<T>::infinity();
    for (auto v : in) mx = std::max(mx, v / tau);
    T total = T(0);
    for (std::size_t c = 0; c < in.size(); ++c) total += std::exp(in[c] / tau - mx);
    const T lse = mx + std::log(total);
    for (std::size_t c = 0; c < in.size(); ++c) o[c] = in[c] / tau - lse;
  }
}
}  // namespace

template <typename T>
Var<T> log_softmax(const Var<T>& x, T tau) {
  require(tau > T(0), "log_softmax: temperature must be positive");
  Tensor<T> out(x.shape());
  log_softmax_rows(x.value(), tau, out);
  return make_result<T>(std::move(out), {x}, [tau](Node<T>& self) {
    auto& g = input(self, 0).ensure_grad();
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      auto y = self.value.row(r);
      auto dy = self.grad.row(r);
      T total = T(0);
      for (auto v : dy) total += v;
      auto dx = g.row(r);
      for (std::size_t c = 0; c < y.size(); ++c) dx[c] += (dy[c] - std::exp(y[c]) * total) / tau;
    }
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x, T tau) {
  require(tau > T(0), "softmax: temperature must be positive");
  Tensor<T> out(x.shape());
  log_softmax_rows(x.value(), tau, out);
  for (auto& v : out.values()) v = std::exp(v);
  return make_result<T>(std::move(out), {x}, [tau](Node<T>& self) {
    auto& g = input(self, 0).ensure_grad();
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      auto y = self.value.row(r);
      auto dy = self.grad.row(r);
      T dot = T(0);
      for (std::size_t c = 0; c < y.size(); ++c) dot += dy[c] * y[c];
      auto dx = g.row(r);
      for (std::size_t c = 0; c < y.size(); ++c) dx[c] += y[c] * (dy[c] - dot) / tau;
    }
  });
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 const AttentionLayout& layout) {
  const std::size_t B = layout.batch, Tq = layout.query_len, Tk = layout.key_len,
                    H = layout.heads, d = q.cols();
  require(H > 0 && d % H == 0, "attention: width must be divisible by head count");
  require(q.rows() == B * Tq && k.rows() == B * Tk && v.rows() == B * Tk &&
              k.cols() == d && v.cols() == d,
          "attention: q/k/v shapes do not match layout");
  require(layout.key_mask.empty() || layout.key_mask.size() == B * Tk,
          "attention: key mask length must be batch*key_len");
  require(!layout.causal || Tq == Tk, "attention: causal mask needs equal query/key lengths");
  const std::size_t dh = d / H;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(dh));
  const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(d));
  const auto eTq = static_cast<Eigen::Index>(Tq), eTk = static_cast<Eigen::Index>(Tk),
             edh = static_cast<Eigen::Index>(dh);

  auto probs = std::make_shared<std::vector<T>>(B * H * Tq * Tk, T(0));
  Tensor<T> out({B * Tq, d});
  RowMat<T> scores(eTq, eTk);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      ConstStridedMap<T> Q(q.value().data() + b * Tq * d + h * dh, eTq, edh, stride);
      ConstStridedMap<T> K(k.value().data() + b * Tk * d + h * dh, eTk, edh, stride);
      ConstStridedMap<T> V(v.value().data() + b * Tk * d + h * dh, eTk, edh, stride);
      scores.noalias() = (Q * K.transpose()) * scale_factor;
      MatMap<T> P(probs->data() + (b * H + h) * Tq * Tk, eTq, eTk);
      for (std::size_t i = 0; i < Tq; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < Tk; ++j) {
          const bool visible = (layout.key_mask.empty() || layout.key_mask[b * Tk + j]) &&
                               (!layout.causal || j <= i);
          if (!visible) scores(i, j) = -std::numeric_limits<T>::infinity();
          mx = std::max(mx, scores(i, j));
        }
        if (mx == -std::numeric_limits<T>::infinity()) continue;  // row stays zero
        T total = T(0);
        for (std::size_t j = 0; j < Tk; ++j) {
          const T e = std::exp(scores(i, j) - mx);
          P(i, j) = e;
          total += e;
        }
        for (std::size_t j = 0; j < Tk; ++j) P(i, j) /= total;
      }
      StridedMap<T> O(out.data() + b * Tq * d + h * dh, eTq, edh, stride);
      O.noalias() = P * V;
    }
  }

  return make_result<T>(std::move(out), {q, k, v},
                        [=](Node<T>& self) {
    auto& nq = input(self, 0);
    auto& nk = input(self, 1);
    auto& nv = input(self, 2);
    T* gq = nq.requires_grad ? nq.ensure_grad().data() : nullptr;
    T* gk = nk.requires_grad ? nk.ensure_grad().data() : nullptr;
    T* gv = nv.requires_grad ? nv.ensure_grad().data() : nullptr;
    RowMat<T> dP(eTq, eTk), dS(eTq, eTk);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t qoff = b * Tq * d + h * dh, koff = b * Tk * d + h * dh;
        ConstStridedMap<T> G(self.grad.data() + qoff, eTq, edh, stride);
        ConstStridedMap<T> Q(nq.value.data() + qoff, eTq, edh, stride);
        ConstStridedMap<T> K(nk.value.data() + koff, eTk, edh, stride);
        ConstStridedMap<T> V(nv.value.data() + koff, eTk, edh, stride);
        ConstMatMap<T> P(probs->data() + (b * H + h) * Tq * Tk, eTq, eTk);
        if (gv) {
          StridedMap<T> dV(gv + koff, eTk, edh, stride);
          dV.noalias() += P.transpose() * G;
        }
        if (!gq && !gk) continue;
        dP.noalias() = G * V.transpose();
        for (Eigen::Index i = 0; i < eTq; ++i) {
          const T dot = (dP.row(i).array() * P.row(i).array()).sum();
          dS.row(i) = (P.row(i).array() * (dP.row(i).array() - dot)) * scale_factor;
        }
        if (gq) {
          StridedMap<T> dQ(gq + qoff, eTq, edh, stride);
          dQ.noalias() += dS * K;
        }
        if (gk) {
          StridedMap<T> dK(gk + koff, eTk, edh, stride);
          dK.noalias() += dS.transpose() * Q;
        }
      }
    }
  });
}

template <typename T>
Var<T> smoothed_nll(const Var<T>& logp, std::span<const int> gold, std::span<const T> weights,
                    T alpha) {
  const std::size_t rows = logp.rows(), K = logp.cols();
  require(gold.size() == rows && weights.size() == rows,
          "smoothed_nll: gold/weights must have one entry per row");
  require(alpha >= T(0) && alpha < T(1), "smoothed_nll: alpha must lie in [0, 1)");
  const T uniform_share = alpha / static_cast<T>(K);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (weights[r] == T(0)) continue;
    require(gold[r] >= 0 && static_cast<std::size_t>(gold[r]) < K,
            "smoothed_nll: gold id outside vocabulary");
    auto lp = logp.value().row(r);
    T row_sum = T(0);
    if (alpha > T(0))
      for (auto v : lp) row_sum += v;
    const T target_term = (T(1) - alpha) * lp[static_cast<std::size_t>(gold[r])] +
                          uniform_share * row_sum;
    total -= static_cast<double>(weights[r] * target_term);
  }
  std::vector<int> g(gold.begin(), gold.end());
  std::vector<T> w(weights.begin(), weights.end());
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(total)), {logp},
                        [g = std::move(g), w = std::move(w), alpha, uniform_share](Node<T>& self) {
    auto& grad = input(self, 0).ensure_grad();
    const T upstream = self.grad[0];
    for (std::size_t r = 0; r < w.size(); ++r) {
      if (w[r] == T(0)) continue;
      auto row = grad.row(r);
      if (alpha > T(0))
        for (auto& v : row) v -= upstream * w[r] * uniform_share;
      row[static_cast<std::size_t>(g[r])] -= upstream * w[r] * (T(1) - alpha);
    }
  });
}

template <typename T>
Var<T> kl_from_constant(const Tensor<T>& target_probs, const Var<T>& logp,
                        std::span<const T> weights) {
  require(target_probs.rows() == logp.rows() && target_probs.cols() == logp.cols(),
          "kl_from_constant: target and student shapes differ");
  require(weights.size() == logp.rows(), "kl_from_constant: one weight per row required");
  const T floor = static_cast<T>(kLogFloor);
  double total = 0.0;
  for (std::size_t r = 0; r < logp.rows(); ++r) {
    if (weights[r] == T(0)) continue;
    auto q = target_probs.row(r);
    auto lp = logp.value().row(r);
    T row_total = T(0);
    for (std::size_t c = 0; c < q.size(); ++c)
      if (q[c] > T(0)) row_total += q[c] * (std::log(std::max(q[c], floor)) - lp[c]);
    total += static_cast<double>(weights[r] * row_total);
  }
  std::vector<T> w(weights.begin(), weights.end());
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(total)), {logp},
                        [target_probs, w = std::move(w)](Node<T>& self) {
    auto& grad = input(self, 0).ensure_grad();
    const T upstream = self.grad[0];
    for (std::size_t r = 0; r < w.size(); ++r) {
      if (w[r] == T(0)) continue;
      auto q = target_probs.row(r);
      auto row = grad.row(r);
      for (std::size_t c = 0; c < q.size(); ++c) row[c] -= upstream * w[r] * q[c];
    }
  });
}

#define LMPRIOR_INSTANTIATE(T)                                                              \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> matmul_nt<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                     \
  template Var<T> add_bias<T>(const Var<T>&, const Var<T>&);                                \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                     \
  template Var<T> scale<T>(const Var<T>&, T);                                               \
  template Var<T> relu<T>(const Var<T>&);                                                   \
  template Var<T> log<T>(const Var<T>&);                                                    \
  template Var<T> sum<T>(const Var<T>&);                                                    \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);            \
  template Var<T> embedding<T>(const Var<T>&, std::span<const int>, T);                     \
  template Var<T> dropout<T>(const Var<T>&, double, std::mt19937_64&);                      \
  template Var<T> softmax<T>(const Var<T>&, T);                                             \
  template Var<T> log_softmax<T>(const Var<T>&, T);                                         \
  template Var<T> attention<T>(const Var<T>&, const Var<T>&, const Var<T>&,                 \
                               const AttentionLayout&);                                     \
  template Var<T> smoothed_nll<T>(const Var<T>&, std::span<const int>, std::span<const T>, \
                                  T);                                                       \
  template Var<T> kl_from_constant<T>(const Tensor<T>&, const Var<T>&, std::span<const T>);

LMPRIOR_INSTANTIATE(float)
LMPRIOR_INSTANTIATE(double)
#undef LMPRIOR_INSTANTIATE

}  // namespace lmprior::numerics
