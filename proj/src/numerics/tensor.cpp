#include "lmprior/numerics/tensor.hpp"

#include <sstream>

namespace lmprior::numerics {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
void check_shape(const Shape& shape) {
  if (shape.empty()) throw InvalidInput("tensor shape must have at least one dimension");
  for (auto d : shape)
    if (d == 0) throw InvalidInput("tensor dimensions must be positive: " + shape_string(shape));
}
}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  check_shape(shape_);
  if (data_.size() != shape_size(shape_))
    throw InvalidInput("value count " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace lmprior::numerics
