#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "scvm/parameter.hpp"

namespace scvm {

/// Linear warmup to lr_max over `warmup_steps`, then half-cosine decay to 0
/// at `total_steps`.
double cosine_lr(std::size_t step, double lr_max, std::size_t warmup_steps, std::size_t total_steps);

struct AdamWConfig {
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
};

/// AdamW with bias-corrected moments and decoupled weight decay, applied
/// only to parameters registered with decay = true. Frozen parameters and
/// parameters that received no gradient are skipped.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  /// One update at learning rate `lr`. If any gradient is non-finite the
  /// whole step is aborted before touching a parameter.
  void step(ParameterStore<T>& params, double lr);

  std::size_t steps() const { return steps_; }
  void set_steps(std::size_t steps) { steps_ = steps; }
  const AdamWConfig& config() const { return config_; }
  std::map<std::string, AdamMoments<T>>& state() { return state_; }
  const std::map<std::string, AdamMoments<T>>& state() const { return state_; }

 private:
  AdamWConfig config_;
  std::size_t steps_ = 0;
  std::map<std::string, AdamMoments<T>> state_;
};

}  // namespace scvm
