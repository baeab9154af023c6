#include "scvm/gradcheck_suite.hpp"

#include <cmath>
#include <string_view>

#include "scvm/objective.hpp"
#include "scvm/ops.hpp"
#include "scvm/rng.hpp"

namespace scvm {

using Td = Tensor<double>;
using Args = std::vector<Td>;

ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.backbone.image_size = 8;
  cfg.backbone.patch_size = 4;
  cfg.backbone.dim = 8;
  cfg.backbone.layers = 2;
  cfg.backbone.heads = 2;
  cfg.backbone.mlp_ratio = 2;
  cfg.llm_dim = 8;
  cfg.mechanism.reduction = 4;
  return cfg;
}

TaskSpec tiny_task_spec() {
  TaskSpec spec;
  spec.image_size = 8;
  return spec;
}

void perturb_parameters(ParameterStore<double>& store, double magnitude, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& p : store.all()) {
    for (auto& v : p.tensor.mutable_data()) v += rng.uniform(-magnitude, magnitude);
  }
}

namespace {

class Suite {
 public:
  Suite(std::uint64_t seed, const GradCheckOptions& options) : rng_(derive_seed(seed, 0x6c)), options_(options) {}

  Td random(Shape shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel(shape));
    for (auto& e : v) e = rng_.uniform(lo, hi);
    return Td::from(std::move(shape), std::move(v));
  }

  // Entries bounded away from zero, for ops with a kink there.
  Td away_from_zero(Shape shape) {
    auto t = random(std::move(shape));
    for (auto& e : t.mutable_data()) e = (e < 0 ? -0.1 : 0.1) + e;
    return t;
  }

  void check(std::string name, const TensorFn& f, const Args& inputs) {
    results_.push_back(grad_check(f, inputs, std::move(name), options_));
  }

  std::vector<GradCheckResult> take() { return std::move(results_); }

 private:
  Rng rng_;
  GradCheckOptions options_;
  std::vector<GradCheckResult> results_;
};

Args with(Args a, const Args& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

Args parameters_with_prefix(ParameterStore<double>& store, std::string_view prefix) {
  Args out;
  for (auto& p : store.all()) {
    if (p.name.starts_with(prefix)) out.push_back(p.tensor);
  }
  return out;
}

void primitive_checks(Suite& s) {
  s.check("add", [](const Args& a) { return ops::add(a[0], a[1]); }, {s.random({3, 4}), s.random({3, 4})});
  s.check("add_broadcast", [](const Args& a) { return ops::add(a[0], a[1]); }, {s.random({3, 4}), s.random({4})});
  s.check("sub", [](const Args& a) { return ops::sub(a[0], a[1]); }, {s.random({3, 4}), s.random({3, 4})});
  s.check("mul", [](const Args& a) { return ops::mul(a[0], a[1]); }, {s.random({3, 4}), s.random({3, 4})});
  s.check("scale", [](const Args& a) { return ops::scale(a[0], -1.7); }, {s.random({5})});
  s.check("add_scalar", [](const Args& a) { return ops::add_scalar(a[0], 0.3); }, {s.random({5})});
  s.check("matmul", [](const Args& a) { return ops::matmul(a[0], a[1]); }, {s.random({3, 4}), s.random({4, 2})});
  s.check("matmul_nt", [](const Args& a) { return ops::matmul_nt(a[0], a[1]); },
          {s.random({3, 4}), s.random({2, 4})});
  s.check("linear_vector", [](const Args& a) { return ops::linear(a[0], a[1], a[2]); },
          {s.random({4}), s.random({4, 3}), s.random({3})});
  s.check("linear_rows", [](const Args& a) { return ops::linear(a[0], a[1], a[2]); },
          {s.random({5, 4}), s.random({4, 3}), s.random({3})});
  s.check("linear_no_bias", [](const Args& a) { return ops::linear(a[0], a[1]); },
          {s.random({5, 4}), s.random({4, 3})});
  s.check("concat", [](const Args& a) { return ops::concat<double>({a[0], a[1], a[2]}); },
          {s.random({3}), s.random({2}), s.random({4})});
  s.check("concat_rows", [](const Args& a) { return ops::concat_rows(a[0], a[1]); },
          {s.random({4}), s.random({3, 4})});
  s.check("concat_cols", [](const Args& a) { return ops::concat_cols<double>({a[0], a[1]}); },
          {s.random({3, 2}), s.random({3, 4})});
  s.check("slice_cols", [](const Args& a) { return ops::slice_cols(a[0], 1, 4); }, {s.random({3, 5})});
  s.check("row", [](const Args& a) { return ops::row(a[0], 2); }, {s.random({3, 5})});
  s.check("reshape", [](const Args& a) { return ops::reshape(a[0], {6}); }, {s.random({2, 3})});
  s.check("scale_rows", [](const Args& a) { return ops::scale_rows(a[0], a[1]); }, {s.random({3, 4}), s.random({3})});
  s.check("tanh", [](const Args& a) { return ops::tanh(a[0]); }, {s.random({3, 4}, -2.0, 2.0)});
  s.check("sigmoid", [](const Args& a) { return ops::sigmoid(a[0]); }, {s.random({3, 4}, -3.0, 3.0)});
  s.check("relu", [](const Args& a) { return ops::relu(a[0]); }, {s.away_from_zero({3, 4})});
  s.check("gelu", [](const Args& a) { return ops::gelu(a[0]); }, {s.random({3, 4}, -3.0, 3.0)});
  s.check("layer_norm", [](const Args& a) { return ops::layer_norm(a[0], a[1], a[2]); },
          {s.random({3, 5}), s.random({5}, 0.5, 1.5), s.random({5})});
  s.check("layer_norm_vector", [](const Args& a) { return ops::layer_norm(a[0]); }, {s.random({6})});
  s.check("softmax", [](const Args& a) { return ops::softmax(a[0]); }, {s.random({3, 4}, -2.0, 2.0)});
  s.check("mean_pool", [](const Args& a) { return ops::mean_pool(a[0]); }, {s.random({5, 4})});
  {
    auto x = s.random({5, 4});
    break_ties(x);
    s.check("max_pool", [](const Args& a) { return ops::max_pool(a[0]); }, {x});
  }
  s.check("sum", [](const Args& a) { return ops::sum(a[0]); }, {s.random({3, 4})});
  s.check("mean", [](const Args& a) { return ops::mean(a[0]); }, {s.random({3, 4})});
  s.check("cosine_similarity", [](const Args& a) { return ops::cosine_similarity(a[0], a[1]); },
          {s.random({6}), s.random({6})});
  s.check("cross_entropy", [](const Args& a) { return ops::cross_entropy(a[0], 2); }, {s.random({5}, -2.0, 2.0)});
  s.check("patchify", [](const Args& a) { return ops::patchify(a[0], 2); }, {s.random({4, 4, 2})});
}

void model_checks(Suite& s, std::uint64_t seed) {
  const ModelConfig cfg = tiny_model_config();
  const TaskSpec task = tiny_task_spec();
  Model<double> model(cfg);
  perturb_parameters(model.parameters(), 0.3, derive_seed(seed, 0x70));
  auto& store = model.parameters();
  const std::size_t n = cfg.backbone.tokens(), d = cfg.backbone.dim;
  const auto& bb = model.backbone();
  const auto& layer = model.scvm_layers().front();

  s.check("patch_embed",
          [&](const Args& a) { return patch_embed(a[0], bb.embed, cfg.backbone); },
          {s.random({8, 8, 3}, 0.0, 1.0), bb.embed.weight, bb.embed.bias, bb.embed.cls, bb.embed.pos});
  s.check("transformer_block",
          [&](const Args& a) { return transformer_block(a[0], bb.blocks[0], cfg.backbone.heads); },
          with({s.random({n, d})}, parameters_with_prefix(store, "backbone.block1.")));
  {
    auto x = s.random({n, d});
    break_ties(x);
    s.check("multi_view_summarize",
            [&](const Args& a) { return multi_view_summarize(a[0], layer.summary_weight).y; },
            {x, layer.summary_weight});
  }
  s.check("project_text", [](const Args& a) { return project_text(a[0], a[1]); },
          {s.random({4, cfg.llm_dim}), model.text_weight()});

  {
    // Three-step recurrence through separately registered TMSU cells.
    ParameterStore<double> cells(derive_seed(seed, 0x71));
    std::vector<ScvmLayerParams<double>> steps;
    for (std::size_t l = 1; l <= 3; ++l) steps.push_back(register_scvm_layer(cells, l, d, cfg.mechanism));
    perturb_parameters(cells, 0.3, derive_seed(seed, 0x72));
    Args inputs = {s.random({d}), s.random({d}), s.random({d}), s.random({d}), s.random({d})};
    for (std::size_t l = 1; l <= 3; ++l) {
      inputs = with(inputs, parameters_with_prefix(cells, "scvm.layer" + std::to_string(l) + ".tmsu."));
    }
    s.check("tmsu_update_3_layers",
            [&](const Args& a) {
              // a[0] = c^0, a[1..3] = y^1..y^3, a[4] = t
              Td c = a[0];
              for (std::size_t l = 0; l < 3; ++l) c = tmsu_update(a[1 + l], a[4], c, steps[l].tmsu, l + 1).c;
              return ops::sum(ops::mul(c, c));
            },
            inputs);
  }

  s.check("tag_modulate", [&](const Args& a) { return tag_modulate(a[0], a[1], layer.tag).x_hat; },
          with({s.random({n, d}), s.random({d})}, parameters_with_prefix(store, "scvm.layer1.tag.")));
  {
    auto x = s.random({n, d});
    break_ties(x);
    s.check("scvm_layer_step",
            [&](const Args& a) {
              auto summary = multi_view_summarize(a[0], layer.summary_weight);
              auto mem = tmsu_update(summary.y, a[2], a[1], layer.tmsu, 1);
              return tag_modulate(a[0], mem.c, layer.tag).x_hat;
            },
            with({x, s.random({d}), s.random({d})}, parameters_with_prefix(store, "scvm.layer1.")));
  }
  s.check("alignment_loss",
          [&](const Args& a) { return alignment_loss(a[0], a[1], model.alignment_projector()); },
          with({s.random({d}), s.random({cfg.llm_dim})}, parameters_with_prefix(store, "head.projector.")));
  s.check("task_head",
          [&](const Args& a) { return task_loss(a[0], a[1], 3, model.head(), cfg.answer_vocab); },
          with({s.random({n, d}), s.random({d})}, parameters_with_prefix(store, "head.")));

  {
    const ProxyLanguageSpace space(cfg.llm_dim, task.language_seed);
    const Sample sample = generate_sample(derive_seed(seed, 0x73), task);
    const auto options = EncodeOptions::from(cfg.mechanism);
    s.check("end_to_end_total_loss",
            [&](const Args&) { return forward_sample(model, sample, space, task, 0.05, options).total; },
            parameters_with_prefix(store, ""));
  }
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, const GradCheckOptions& options) {
  Suite suite(seed, options);
  primitive_checks(suite);
  model_checks(suite, seed);
  return suite.take();
}

}  // namespace scvm
