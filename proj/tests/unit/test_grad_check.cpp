#include <chrono>

#include <gtest/gtest.h>

#include "scvm/grad_check.hpp"
#include "scvm/gradcheck_suite.hpp"
#include "scvm/ops.hpp"
#include "scvm/rng.hpp"

using namespace scvm;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(numel(shape));
  for (auto& e : v) e = rng.uniform(-1.0, 1.0);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

// tanh whose backward forgets the (1 - y^2) factor.
Tensor<double> broken_tanh(const Tensor<double>& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  return make_result<double>("broken_tanh", x.shape(), std::move(out), {x}, [](Node<double>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

}  // namespace

TEST(GradCheck, IdentityHasZeroError) {
  auto r = grad_check([](const std::vector<Tensor<double>>& a) { return a[0]; }, {random_tensor({3, 4}, 1)},
                      "identity");
  EXPECT_TRUE(r.passed());
  EXPECT_LT(r.max_relative_error, 1e-9);
  EXPECT_EQ(r.coordinates, 12u);
}

TEST(GradCheck, TiedMaxPoolIsOutOfCheck) {
  auto x = Tensor<double>::from({2, 2}, {1.0, 5.0, 1.0, 2.0});
  auto r = grad_check([](const std::vector<Tensor<double>>& a) { return ops::max_pool(a[0]); }, {x}, "max_pool");
  EXPECT_EQ(r.status, GradCheckStatus::kOutOfCheck);

  break_ties(x);
  auto fixed = grad_check([](const std::vector<Tensor<double>>& a) { return ops::max_pool(a[0]); }, {x}, "max_pool");
  EXPECT_TRUE(fixed.passed()) << fixed.max_relative_error;
}

TEST(GradCheck, CorruptedBackwardIsReportedByName) {
  auto r = grad_check([](const std::vector<Tensor<double>>& a) { return broken_tanh(a[0]); },
                      {random_tensor({6}, 2)}, "broken_tanh");
  EXPECT_EQ(r.status, GradCheckStatus::kFailed);
  EXPECT_EQ(r.name, "broken_tanh");
  EXPECT_GT(r.max_relative_error, 1e-4);
}

TEST(GradCheck, NonFiniteIsReportedWithCoordinate) {
  // log(x - 1) is undefined below 1; only the perturbation of entry 1
  // crosses the boundary.
  auto x = Tensor<double>::from({3}, {1.5, 1.000001, 2.0});
  auto f = [](const std::vector<Tensor<double>>& a) {
    std::vector<double> out(a[0].size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a[0][i] - 1.0);
    return make_result<double>("log_shift", a[0].shape(), std::move(out), {a[0]}, [](Node<double>&) {});
  };
  auto r = grad_check(f, {x}, "log_shift");
  EXPECT_EQ(r.status, GradCheckStatus::kNonFinite);
  EXPECT_EQ(r.worst_input, 0u);
  EXPECT_EQ(r.worst_index, 1u);
}

TEST(GradCheck, InputsAreRestored) {
  auto x = random_tensor({5}, 3);
  const auto before = x.to_vector();
  grad_check([](const std::vector<Tensor<double>>& a) { return ops::sigmoid(a[0]); }, {x}, "sigmoid");
  EXPECT_EQ(x.to_vector(), before);
}

TEST(GradCheck, FullSuitePassesWithinBudget) {
  const auto start = std::chrono::steady_clock::now();
  const auto results = run_gradcheck_suite(0);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ASSERT_GE(results.size(), 40u);
  for (const auto& r : results) {
    EXPECT_TRUE(r.passed()) << r.name << " " << to_string(r.status) << " err=" << r.max_relative_error << " "
                            << r.detail;
  }
  EXPECT_LT(secs, 60.0);
}

TEST(GradCheck, SuiteIsDeterministic) {
  const auto a = run_gradcheck_suite(3);
  const auto b = run_gradcheck_suite(3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].max_relative_error, b[i].max_relative_error) << a[i].name;
  }
}
