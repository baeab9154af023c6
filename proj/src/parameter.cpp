#include "scvm/parameter.hpp"

#include <cmath>
#include <stdexcept>

namespace scvm {

template <typename T>
Tensor<T> ParameterStore<T>::add(const std::string& name, Shape shape, Init init, bool decay) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  std::vector<T> values(numel(shape));
  double range = init.value;
  if (init.kind == InitKind::kXavier) {
    if (shape.size() != 2) throw ShapeError("xavier init needs a matrix: " + name);
    range = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
  }
  for (auto& v : values) {
    switch (init.kind) {
      case InitKind::kZeros: v = T(0); break;
      case InitKind::kConstant: v = static_cast<T>(init.value); break;
      case InitKind::kUniform:
      case InitKind::kXavier: v = static_cast<T>(rng_.uniform(-range, range)); break;
    }
  }
  auto tensor = Tensor<T>::from(std::move(shape), std::move(values));
  tensor.set_requires_grad(true);
  index_.emplace(name, params_.size());
  params_.push_back({name, tensor, false, decay});
  return tensor;
}

template <typename T>
Parameter<T>& ParameterStore<T>::get(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return params_[it->second];
}

template <typename T>
const Parameter<T>& ParameterStore<T>::get(std::string_view name) const {
  return const_cast<ParameterStore*>(this)->get(name);
}

template <typename T>
void ParameterStore<T>::set_frozen(std::string_view prefix, bool frozen) {
  for (auto& p : params_) {
    if (p.name.starts_with(prefix)) {
      p.frozen = frozen;
      p.tensor.set_requires_grad(!frozen);
    }
  }
}

template <typename T>
std::size_t ParameterStore<T>::count_trainable() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.frozen ? 0 : 1;
  return n;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace scvm
