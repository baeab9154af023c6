#include "scvm/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "scvm/ops.hpp"
#include "scvm/rng.hpp"

namespace scvm {

const char* to_string(GradCheckStatus status) {
  switch (status) {
    case GradCheckStatus::kPassed: return "passed";
    case GradCheckStatus::kFailed: return "FAILED";
    case GradCheckStatus::kNonFinite: return "NON-FINITE";
    case GradCheckStatus::kOutOfCheck: return "out-of-check";
  }
  return "?";
}

namespace {

Tensor<double> reduce_to_scalar(const Tensor<double>& out, std::uint64_t seed) {
  if (out.shape().empty()) return out;
  Rng rng(seed);
  std::vector<double> w(out.size());
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return ops::sum(ops::mul(out, Tensor<double>::from(out.shape(), std::move(w))));
}

}  // namespace

GradCheckResult grad_check(const TensorFn& f, const std::vector<Tensor<double>>& inputs,
                           std::string name, const GradCheckOptions& options) {
  GradCheckResult result;
  result.name = std::move(name);
  std::vector<Tensor<double>> args = inputs;
  for (auto& a : args) {
    a.set_requires_grad(true);
    a.zero_grad();
  }

  auto evaluate = [&]() { return reduce_to_scalar(f(args), options.projection_seed); };

  std::vector<std::vector<double>> analytic;
  try {
    Tensor<double> loss = evaluate();
    if (graph_stats(loss).non_differentiable) {
      result.status = GradCheckStatus::kOutOfCheck;
      result.detail = "graph passes through a non-differentiable point";
      return result;
    }
    loss.backward();
  } catch (const NumericalError& e) {
    result.status = GradCheckStatus::kNonFinite;
    result.detail = e.what();
    return result;
  }
  for (auto& a : args) {
    std::vector<double> g(a.size(), 0.0);
    if (a.has_grad()) std::copy(a.grad().begin(), a.grad().end(), g.begin());
    analytic.push_back(std::move(g));
    a.zero_grad();
  }

  const double h = options.step;
  for (std::size_t i = 0; i < args.size(); ++i) {
    auto data = args[i].mutable_data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      ++result.coordinates;
      const double original = data[j];
      double plus = 0.0, minus = 0.0;
      try {
        data[j] = original + h;
        plus = evaluate().item();
        data[j] = original - h;
        minus = evaluate().item();
      } catch (const NumericalError& e) {
        data[j] = original;
        result.status = GradCheckStatus::kNonFinite;
        result.worst_input = i;
        result.worst_index = j;
        result.detail = e.what();
        return result;
      }
      data[j] = original;
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic[i][j];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        result.status = GradCheckStatus::kNonFinite;
        result.worst_input = i;
        result.worst_index = j;
        result.detail = "non-finite gradient at input " + std::to_string(i) + " index " +
                        std::to_string(j);
        return result;
      }
      const double err =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_input = i;
        result.worst_index = j;
      }
    }
  }
  for (auto& a : args) a.zero_grad();
  if (result.max_relative_error >= options.tolerance) result.status = GradCheckStatus::kFailed;
  return result;
}

void break_ties(Tensor<double>& x, double magnitude, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& v : x.mutable_data()) v += rng.uniform(-magnitude, magnitude);
}

}  // namespace scvm
