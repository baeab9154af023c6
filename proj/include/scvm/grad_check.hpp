#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scvm/tensor.hpp"

namespace scvm {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Seed of the fixed random weights that reduce a non-scalar output to a
  // scalar before differentiation.
  std::uint64_t projection_seed = 0x5ca1ab1eull;
};

enum class GradCheckStatus { kPassed, kFailed, kNonFinite, kOutOfCheck };

struct GradCheckResult {
  std::string name;
  GradCheckStatus status = GradCheckStatus::kPassed;
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
  std::string detail;

  bool passed() const { return status == GradCheckStatus::kPassed; }
};

const char* to_string(GradCheckStatus status);

using TensorFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients of `f` against central finite
/// differences over every coordinate of every input. The error per
/// coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
///
/// Inputs are marked as requiring grad and perturbed in place (and
/// restored), so parameter handles may be passed directly. A graph that
/// passes through a non-differentiable point (tied max-pool) is reported
/// as out-of-check rather than compared.
GradCheckResult grad_check(const TensorFn& f, const std::vector<Tensor<double>>& inputs,
                           std::string name = "f", const GradCheckOptions& options = {});

/// Adds a small deterministic jitter so that no two entries of `x` are
/// equal, moving max-pool inputs away from ties.
void break_ties(Tensor<double>& x, double magnitude = 1e-3, std::uint64_t seed = 7);

}  // namespace scvm
