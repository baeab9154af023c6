#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "scvm/rng.hpp"
#include "scvm/tensor.hpp"

namespace scvm {

enum class InitKind { kZeros, kConstant, kUniform, kXavier };

struct Init {
  InitKind kind = InitKind::kZeros;
  double value = 0.0;  // constant value, or the uniform half-range

  static Init zeros() { return {InitKind::kZeros, 0.0}; }
  static Init ones() { return {InitKind::kConstant, 1.0}; }
  static Init constant(double v) { return {InitKind::kConstant, v}; }
  static Init uniform(double range) { return {InitKind::kUniform, range}; }
  /// Uniform(+-sqrt(6 / (fan_in + fan_out))) on an [in x out] matrix.
  static Init xavier() { return {InitKind::kXavier, 0.0}; }
};

/// A named trainable tensor. Frozen parameters are detached from the graph
/// (requires_grad = false) and skipped by the optimizer.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  bool frozen = false;
  bool decay = false;  // receives decoupled weight decay
};

/// Ordered registry of a model's parameters. Initial values are drawn from
/// one Rng stream in registration order, so a seed fixes every value.
template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed) : rng_(seed) {}

  Tensor<T> add(const std::string& name, Shape shape, Init init, bool decay = false);

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  bool contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }
  Parameter<T>& get(std::string_view name);
  const Parameter<T>& get(std::string_view name) const;

  /// Freezes or unfreezes every parameter whose name starts with `prefix`.
  void set_frozen(std::string_view prefix, bool frozen);
  std::size_t count_trainable() const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  Rng rng_;
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace scvm
