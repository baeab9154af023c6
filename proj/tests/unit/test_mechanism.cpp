#include <cmath>

#include <gtest/gtest.h>

#include "scvm/mechanism.hpp"
#include "scvm/model.hpp"
#include "scvm/ops.hpp"
#include "scvm/rng.hpp"

using namespace scvm;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<T> v(numel(shape));
  for (auto& e : v) e = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

template <typename T>
void fill(Tensor<T> t, T value) {
  for (auto& v : t.mutable_data()) v = value;
}

template <typename T>
double linf(const Tensor<T>& t) {
  double m = 0.0;
  for (T v : t.data()) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

constexpr std::size_t kD = 32;

void perturb(ScvmLayerParams<double>& p, double magnitude = 0.3) {
  Rng rng(99);
  for (auto* t : {&p.summary_weight, &p.tmsu.ln_gamma, &p.tmsu.ln_beta, &p.tmsu.w_reduce, &p.tmsu.w_candidate,
                  &p.tmsu.b_candidate, &p.tmsu.w_input, &p.tmsu.b_input, &p.tmsu.w_forget, &p.tmsu.b_forget,
                  &p.tag.ln_gamma, &p.tag.ln_beta, &p.tag.mlp_w1, &p.tag.mlp_b1, &p.tag.mlp_w2, &p.tag.mlp_b2,
                  &p.tag.gate_weight, &p.tag.gate_bias}) {
    for (auto& v : t->mutable_data()) v += rng.uniform(-magnitude, magnitude);
  }
}

template <typename T>
void perturb_all(Model<T>& m, double magnitude = 0.3) {
  Rng rng(77);
  for (auto& prm : m.parameters().all())
    for (auto& v : prm.tensor.mutable_data()) v += static_cast<T>(rng.uniform(-magnitude, magnitude));
}


}  // namespace

TEST(Summarize, ConstantTokensGiveIdenticalViews) {
  std::vector<float> v(5 * 4);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 4; ++c) v[r * 4 + c] = 0.25f * static_cast<float>(c) - 0.3f;
  auto x = Tensor<float>::from({5, 4}, v);
  auto s = multi_view_summarize(x, random_tensor<float>({12, 4}, 1));
  const std::vector<float> row(v.begin(), v.begin() + 4);
  EXPECT_EQ(s.mu.to_vector(), row);
  EXPECT_EQ(s.nu.to_vector(), row);
  EXPECT_EQ(s.cls.to_vector(), row);
}

TEST(Summarize, BlockIdentityProjectionSelectsMean) {
  const std::size_t d = 4;
  std::vector<double> w(3 * d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) w[i * d + i] = 1.0;  // [I | 0 | 0] stored [3D x D]
  auto x = random_tensor<double>({6, d}, 2);
  auto s = multi_view_summarize(x, Tensor<double>::from({3 * d, d}, w));
  EXPECT_EQ(s.y.to_vector(), s.mu.to_vector());
}

TEST(Summarize, YIsProjectionOfConcatenatedViews) {
  auto x = random_tensor<double>({5, 8}, 3);
  auto w = random_tensor<double>({24, 8}, 4);
  auto s = multi_view_summarize(x, w);
  auto u = ops::concat<double>({s.mu, s.nu, s.cls});
  auto y = ops::linear(u, w);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(s.y[i], y[i], 1e-12);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(s.cls[i], x.at(0, i));
}

TEST(Summarize, EmptyGridRejected) {
  EXPECT_THROW(multi_view_summarize(Tensor<float>::zeros({0, 4}), Tensor<float>::zeros({12, 4})), ShapeError);
}

TEST(ProjectText, SingleRowMeanIsTheRow) {
  auto q = random_tensor<double>({1, 6}, 5);
  auto w = random_tensor<double>({6, 4}, 6);
  EXPECT_EQ(project_text(q, w).to_vector(), ops::linear(ops::reshape(q, {6}), w).to_vector());
}

TEST(ProjectText, ZeroWeightGivesZero) {
  auto t = project_text(random_tensor<float>({4, 6}, 7), Tensor<float>::zeros({6, 4}));
  for (float v : t.data()) EXPECT_EQ(v, 0.0f);
}

TEST(ProjectText, EmptyQuestionRejected) {
  EXPECT_THROW(project_text(Tensor<float>::zeros({0, 6}), Tensor<float>::zeros({6, 4})), ShapeError);
}

class TmsuTest : public ::testing::Test {
 protected:
  ParameterStore<double> store{11};
  MechanismConfig cfg;
  ScvmLayerParams<double> p = register_scvm_layer(store, 1, kD, cfg);
};

TEST_F(TmsuTest, InitializationConstants) {
  EXPECT_EQ(p.tmsu.w_reduce.shape(), (Shape{3 * kD, kD / 4}));
  EXPECT_EQ((kD / cfg.reduction) * cfg.reduction, kD);
  for (double v : p.tmsu.b_forget.data()) EXPECT_EQ(v, 1.0);
  for (double v : p.tmsu.b_input.data()) EXPECT_EQ(v, 0.0);
  for (double v : p.tmsu.b_candidate.data()) EXPECT_EQ(v, 0.0);
  for (double v : p.tag.mlp_w2.data()) EXPECT_EQ(v, 0.0);
  for (double v : p.tag.mlp_b2.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(p.tag.gate_bias[0], -2.2);
  EXPECT_LE(linf(p.tag.mlp_w1), 1e-3);
  EXPECT_LE(linf(p.tag.gate_weight), 1e-3);
}

TEST_F(TmsuTest, ZeroDriveDecaysByForgetGate) {
  fill(p.tmsu.w_reduce, 0.0);
  auto c_prev = random_tensor<double>({kD}, 12);
  auto out = tmsu_update(random_tensor<double>({kD}, 13), random_tensor<double>({kD}, 14), c_prev, p.tmsu, 1);
  for (double f : out.forget_gate.data()) EXPECT_NEAR(f, 0.7311, 1e-3);
  for (double i : out.input_gate.data()) EXPECT_NEAR(i, 0.5, 1e-12);
  for (double c : out.candidate.data()) EXPECT_EQ(c, 0.0);
  for (std::size_t k = 0; k < kD; ++k) EXPECT_NEAR(out.c[k], 0.7311 * c_prev[k], 1e-3);
}

TEST_F(TmsuTest, SaturatedGatesKeepMemory) {
  fill(p.tmsu.w_input, 0.0);
  fill(p.tmsu.w_forget, 0.0);
  fill(p.tmsu.w_candidate, 0.0);
  fill(p.tmsu.b_forget, 20.0);
  fill(p.tmsu.b_input, -20.0);
  auto c_prev = random_tensor<double>({kD}, 15);
  auto out = tmsu_update(random_tensor<double>({kD}, 16), random_tensor<double>({kD}, 17), c_prev, p.tmsu, 1);
  for (std::size_t k = 0; k < kD; ++k) EXPECT_NEAR(out.c[k], c_prev[k], 1e-6);
}

TEST_F(TmsuTest, DimensionMismatchRejected) {
  EXPECT_THROW(tmsu_update(random_tensor<double>({kD - 1}, 1), random_tensor<double>({kD}, 2),
                           random_tensor<double>({kD}, 3), p.tmsu, 1),
               ShapeError);
}

TEST(TmsuFloat, NonFiniteMemoryNamesLayer) {
  ParameterStore<float> store(3);
  auto p = register_scvm_layer(store, 4, kD, MechanismConfig{});
  auto c_prev = random_tensor<float>({kD}, 18);
  c_prev.mutable_data()[3] = std::numeric_limits<float>::infinity();
  try {
    tmsu_update(random_tensor<float>({kD}, 19), random_tensor<float>({kD}, 20), c_prev, p.tmsu, 4);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 4"), std::string::npos) << e.what();
  }
}

TEST_F(TmsuTest, MemoryGrowthBoundedByOne) {
  perturb(p);
  Tensor<double> c = random_tensor<double>({kD}, 21, -3.0, 3.0);
  for (int step = 0; step < 50; ++step) {
    auto next = tmsu_update(random_tensor<double>({kD}, 100 + step, -5.0, 5.0),
                            random_tensor<double>({kD}, 200 + step), c, p.tmsu, 1)
                    .c;
    EXPECT_LT(linf(next), linf(c) + 1.0);
    c = next;
  }
}

TEST_F(TmsuTest, TagIdentityAtInit) {
  auto x = random_tensor<double>({17, kD}, 22);
  auto out = tag_modulate(x, random_tensor<double>({kD}, 23), p.tag);
  EXPECT_EQ(out.x_hat.to_vector(), x.to_vector());
  for (double v : out.delta.data()) EXPECT_EQ(v, 0.0);
}

TEST_F(TmsuTest, TagGateAtBiasOnly) {
  fill(p.tag.gate_weight, 0.0);
  auto out = tag_modulate(random_tensor<double>({17, kD}, 24), random_tensor<double>({kD}, 25), p.tag);
  ASSERT_EQ(out.alpha.shape(), (Shape{17}));
  for (double a : out.alpha.data()) EXPECT_NEAR(a, 0.0998, 1e-3);
}

TEST_F(TmsuTest, TagModulationBoundedByOne) {
  perturb(p, 1.0);
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto x = random_tensor<double>({17, kD}, 300 + s, -4.0, 4.0);
    auto out = tag_modulate(x, random_tensor<double>({kD}, 400 + s, -4.0, 4.0), p.tag);
    EXPECT_LT(linf(ops::sub(out.x_hat, x)), 1.0);
  }
}

TEST_F(TmsuTest, SaturatedTagReachesBoundOnlyByRounding) {
  // With huge weights sigmoid and tanh round to exactly 1, so the strict
  // bound degrades to <= 1 in floating point.
  perturb(p, 3.0);
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto x = random_tensor<double>({17, kD}, 300 + s, -4.0, 4.0);
    auto out = tag_modulate(x, random_tensor<double>({kD}, 400 + s, -4.0, 4.0), p.tag);
    for (double d : out.delta.data()) EXPECT_LE(std::abs(d), 1.0);
    for (double a : out.alpha.data()) EXPECT_LE(a, 1.0);
  }
}

TEST_F(TmsuTest, TagShapeMismatchRejected) {
  EXPECT_THROW(tag_modulate(random_tensor<double>({17, kD}, 1), random_tensor<double>({kD + 1}, 2), p.tag),
               ShapeError);
}

TEST_F(TmsuTest, TagGateIsPerToken) {
  std::vector<double> v(2 * kD);
  for (std::size_t k = 0; k < kD; ++k) {
    v[k] = std::sin(0.3 * static_cast<double>(k));
    v[kD + k] = std::cos(0.7 * static_cast<double>(k));
  }
  auto out = tag_modulate(Tensor<double>::from({2, kD}, v), Tensor<double>::zeros({kD}), p.tag);
  EXPECT_NE(out.alpha[0], out.alpha[1]);
}

namespace {

ModelConfig default_model() {
  ModelConfig cfg;
  cfg.init_seed = 0;
  return cfg;
}

Tensor<float> sample_text(const Model<float>& m, std::uint64_t seed) {
  return project_text(random_tensor<float>({4, m.config().llm_dim}, seed), m.text_weight());
}

Tensor<float> plain_forward(const Model<float>& m, const Tensor<float>& image) {
  auto x = patch_embed(image, m.backbone().embed, m.config().backbone);
  for (const auto& b : m.backbone().blocks) x = transformer_block(x, b, m.config().backbone.heads);
  return x;
}

}  // namespace

TEST(Encode, InitIdentityIsBitExact) {
  Model<float> m(default_model());
  auto image = random_tensor<float>({16, 16, 3}, 30, 0.0, 1.0);
  auto t = sample_text(m, 31);
  EncodeOptions opt;
  opt.record = true;
  auto res = encode_with_scvm(m, image, t, opt);
  EXPECT_EQ(res.features.to_vector(), plain_forward(m, image).to_vector());
  ASSERT_EQ(res.traces.size(), 6u);
  for (const auto& tr : res.traces) EXPECT_EQ(tr.x_hat.to_vector(), tr.x.to_vector());
  for (const auto& g : res.memory.recorded_gates) {
    EXPECT_NEAR(g.mean_alpha, 0.0998, 1e-3);
    EXPECT_EQ(g.delta_linf, 0.0);
  }
}

TEST(Encode, DisabledMechanismIsPlainBackbone) {
  Model<float> m(default_model());
  perturb_all(m);
  auto image = random_tensor<float>({16, 16, 3}, 32, 0.0, 1.0);
  EncodeOptions opt;
  opt.scvm = false;
  auto res = encode_with_scvm(m, image, sample_text(m, 33), opt);
  EXPECT_EQ(res.features.to_vector(), plain_forward(m, image).to_vector());
  EXPECT_TRUE(res.traces.empty());
}

TEST(Encode, TagDisabledPassesBlockOutputsThrough) {
  Model<float> m(default_model());
  perturb_all(m);
  auto image = random_tensor<float>({16, 16, 3}, 34, 0.0, 1.0);
  EncodeOptions opt;
  opt.tag = false;
  auto res = encode_with_scvm(m, image, sample_text(m, 35), opt);
  EXPECT_EQ(res.features.to_vector(), plain_forward(m, image).to_vector());
  EXPECT_EQ(res.traces.size(), 6u);
}

TEST(Encode, EveryLayerKeepsGridShape) {
  Model<float> m(default_model());
  perturb_all(m);
  EncodeOptions opt;
  auto res = encode_with_scvm(m, random_tensor<float>({16, 16, 3}, 36, 0.0, 1.0), sample_text(m, 37), opt);
  for (const auto& tr : res.traces) {
    EXPECT_EQ(tr.x.shape(), (Shape{17, 32}));
    EXPECT_EQ(tr.x_hat.shape(), (Shape{17, 32}));
  }
  EXPECT_EQ(res.memory.c.shape(), (Shape{32}));
}

TEST(Encode, SaturatedGatesPreserveInitialMemory) {
  Model<float> m(default_model());
  for (auto& p : m.parameters().all()) {
    if (p.name.find("tmsu.input.weight") != std::string::npos || p.name.find("tmsu.forget.weight") != std::string::npos)
      fill(p.tensor, 0.0f);
    if (p.name.find("tmsu.forget.bias") != std::string::npos) fill(p.tensor, 200.0f);
    if (p.name.find("tmsu.input.bias") != std::string::npos) fill(p.tensor, -200.0f);
  }
  EncodeOptions opt;
  std::vector<double> c0(32);
  for (std::size_t k = 0; k < 32; ++k) c0[k] = 0.1 * static_cast<double>(k) - 1.5;
  opt.initial_memory = c0;
  auto res = encode_with_scvm(m, random_tensor<float>({16, 16, 3}, 38, 0.0, 1.0), sample_text(m, 39), opt);
  for (std::size_t k = 0; k < 32; ++k) EXPECT_EQ(res.memory.c[k], static_cast<float>(c0[k]));
}

TEST(Encode, MemoryGradientReachesFirstLayerSummary) {
  Model<float> m(default_model());
  EncodeOptions opt;
  auto res = encode_with_scvm(m, random_tensor<float>({16, 16, 3}, 40, 0.0, 1.0), sample_text(m, 41), opt);
  ops::sum(ops::mul(res.memory.c, res.memory.c)).backward();
  const auto& w = m.scvm_layers().front().summary_weight;
  ASSERT_TRUE(w.has_grad());
  double norm2 = 0.0;
  for (float g : w.grad()) norm2 += static_cast<double>(g) * g;
  EXPECT_GT(std::sqrt(norm2), 1e-8);
}

TEST(Encode, MemoryDependsOnText) {
  Model<float> m(default_model());
  EncodeOptions opt;
  auto image = random_tensor<float>({16, 16, 3}, 42, 0.0, 1.0);
  auto a = encode_with_scvm(m, image, sample_text(m, 43), opt).memory.c;
  auto b = encode_with_scvm(m, image, sample_text(m, 44), opt).memory.c;
  EXPECT_GT(linf(ops::sub(a, b)), 1e-6);

  opt.text_conditioning = false;
  auto c = encode_with_scvm(m, image, sample_text(m, 43), opt).memory.c;
  auto d = encode_with_scvm(m, image, sample_text(m, 44), opt).memory.c;
  EXPECT_EQ(c.to_vector(), d.to_vector());
}

TEST(Encode, ForwardIsDeterministic) {
  Model<float> a(default_model()), b(default_model());
  auto image = random_tensor<float>({16, 16, 3}, 45, 0.0, 1.0);
  EncodeOptions opt;
  EXPECT_EQ(encode_with_scvm(a, image, sample_text(a, 46), opt).features.to_vector(),
            encode_with_scvm(b, image, sample_text(b, 46), opt).features.to_vector());
}
