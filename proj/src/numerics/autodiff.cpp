#include "lmprior/numerics/autodiff.hpp"

#include <unordered_set>

namespace lmprior::numerics {

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

template <typename T>
Var<T> Var<T>::constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::parameter(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

template <typename T>
T Var<T>::item() const {
  if (node_->value.size() != 1)
    throw InvalidInput("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.shared());
    node->backward = std::move(backward_fn);
  }
  return Var<T>(std::move(node));
}

template <typename T>
void backward(const Var<T>& loss) {
  if (loss.value().size() != 1)
    throw InvalidInput("backward requires a scalar loss, got shape " +
                       shape_string(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && node->grad.size() == node->value.size()) node->backward(*node);
  }
  // Interior nodes keep no gradient once consumed.
  for (Node<T>* node : order)
    if (!node->inputs.empty()) node->grad = Tensor<T>();
}

template <typename T>
Var<T>& ParameterSet<T>::add(const std::string& name, Tensor<T> value) {
  if (index_.count(name)) throw InvalidInput("duplicate parameter name: " + name);
  index_[name] = entries_.size();
  entries_.emplace_back(name, Var<T>::parameter(std::move(value)));
  return entries_.back().second;
}

template <typename T>
Var<T>& ParameterSet<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidInput("unknown parameter: " + name);
  return entries_[it->second].second;
}

template <typename T>
const Var<T>& ParameterSet<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidInput("unknown parameter: " + name);
  return entries_[it->second].second;
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v.value().size();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& [name, v] : entries_) v.zero_grad();
}

template <typename T>
GradientMap<T> backward(const Var<T>& loss, ParameterSet<T>& params) {
  params.zero_grad();
  backward(loss);
  GradientMap<T> grads;
  for (auto& [name, v] : params)
    grads.emplace(name, v.has_grad() ? v.grad() : Tensor<T>(v.shape()));
  return grads;
}

#define LMPRIOR_INSTANTIATE(T)                                                          \
  template class Var<T>;                                                                \
  template class ParameterSet<T>;                                                       \
  template Var<T> make_result<T>(Tensor<T>, std::vector<Var<T>>,                        \
                                 std::function<void(Node<T>&)>);                        \
  template void backward<T>(const Var<T>&);                                             \
  template GradientMap<T> backward<T>(const Var<T>&, ParameterSet<T>&);

LMPRIOR_INSTANTIATE(float)
LMPRIOR_INSTANTIATE(double)
#undef LMPRIOR_INSTANTIATE

}  // namespace lmprior::numerics
