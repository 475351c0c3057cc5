#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lmprior/numerics/tensor.hpp"

namespace lmprior::numerics {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor<T>& ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

// Handle to a node of the recorded computation. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value);
  static Var parameter(Tensor<T> value);

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad() { node_->grad = Tensor<T>(); }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  T item() const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// While alive, new ops record no graph (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Builds a result node. When any input requires a gradient the backward
// closure and the inputs are kept; otherwise the node is a plain value.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward);

// Reverse sweep from a scalar. Throws InvalidInput on a non-scalar loss.
template <typename T>
void backward(const Var<T>& loss);

// Insertion-ordered collection of named trainable tensors.
template <typename T>
class ParameterSet {
 public:
  Var<T>& add(const std::string& name, Tensor<T> value);
  Var<T>& get(const std::string& name);
  const Var<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();

 private:
  std::deque<std::pair<std::string, Var<T>>> entries_;  // stable references
  std::map<std::string, std::size_t> index_;
};

template <typename T>
using GradientMap = std::map<std::string, Tensor<T>>;

// Runs the reverse sweep and collects gradients for every parameter.
// Parameters the loss does not reach get a zero gradient.
template <typename T>
GradientMap<T> backward(const Var<T>& loss, ParameterSet<T>& params);

}  // namespace lmprior::numerics
