#include "scvm/mechanism.hpp"

#include <cmath>
#include <string>

#include "scvm/ops.hpp"

namespace scvm {

void MechanismConfig::validate(std::size_t dim) const {
  if (reduction == 0 || dim % reduction != 0) {
    throw std::invalid_argument("mechanism: dim " + std::to_string(dim) +
                                " not divisible by reduction " + std::to_string(reduction));
  }
}

template <typename T>
ScvmLayerParams<T> register_scvm_layer(ParameterStore<T>& store, std::size_t layer,
                                       std::size_t dim, const MechanismConfig& cfg) {
  cfg.validate(dim);
  const std::size_t d = dim, dr = dim / cfg.reduction;
  const std::string pre = "scvm.layer" + std::to_string(layer) + ".";
  ScvmLayerParams<T> p;
  p.summary_weight = store.add(pre + "summary.weight", {3 * d, d}, Init::xavier(), true);

  auto& m = p.tmsu;
  m.ln_gamma = store.add(pre + "tmsu.ln.gamma", {d}, Init::ones());
  m.ln_beta = store.add(pre + "tmsu.ln.beta", {d}, Init::zeros());
  m.w_reduce = store.add(pre + "tmsu.reduce.weight", {3 * d, dr}, Init::xavier(), true);
  m.w_candidate = store.add(pre + "tmsu.candidate.weight", {dr, d}, Init::xavier(), true);
  m.b_candidate = store.add(pre + "tmsu.candidate.bias", {d}, Init::zeros());
  m.w_input = store.add(pre + "tmsu.input.weight", {dr, d}, Init::xavier(), true);
  m.b_input = store.add(pre + "tmsu.input.bias", {d}, Init::zeros());
  m.w_forget = store.add(pre + "tmsu.forget.weight", {dr, d}, Init::xavier(), true);
  m.b_forget = store.add(pre + "tmsu.forget.bias", {d}, Init::constant(cfg.forget_bias));

  auto& g = p.tag;
  g.ln_gamma = store.add(pre + "tag.ln.gamma", {d}, Init::ones());
  g.ln_beta = store.add(pre + "tag.ln.beta", {d}, Init::zeros());
  g.mlp_w1 = store.add(pre + "tag.mlp.fc1.weight", {d, d}, Init::uniform(cfg.tag_init_range), true);
  g.mlp_b1 = store.add(pre + "tag.mlp.fc1.bias", {d}, Init::zeros());
  g.mlp_w2 = store.add(pre + "tag.mlp.fc2.weight", {d, d}, Init::zeros(), true);
  g.mlp_b2 = store.add(pre + "tag.mlp.fc2.bias", {d}, Init::zeros());
  g.gate_weight = store.add(pre + "tag.gate.weight", {d, 1}, Init::uniform(cfg.tag_init_range), true);
  g.gate_bias = store.add(pre + "tag.gate.bias", {1}, Init::constant(cfg.gate_bias));
  return p;
}

template <typename T>
LayerSummary<T> multi_view_summarize(const Tensor<T>& x, const Tensor<T>& summary_weight) {
  if (x.rank() != 2 || x.dim(0) == 0) {
    throw ShapeError("multi_view_summarize: expected a non-empty token grid, got " + to_string(x.shape()));
  }
  LayerSummary<T> s;
  s.mu = ops::mean_pool(x);
  s.nu = ops::max_pool(x);
  s.cls = ops::row(x, 0);
  s.y = ops::linear(ops::concat<T>({s.mu, s.nu, s.cls}), summary_weight);
  return s;
}

template <typename T>
Tensor<T> project_text(const Tensor<T>& question_hidden, const Tensor<T>& text_weight) {
  if (question_hidden.rank() != 2 || question_hidden.dim(0) == 0) {
    throw ShapeError("project_text: expected a non-empty [T_q x D_llm] question, got " +
                     to_string(question_hidden.shape()));
  }
  return ops::linear(ops::mean_pool(question_hidden), text_weight);
}

template <typename T>
TmsuOutput<T> tmsu_update(const Tensor<T>& y, const Tensor<T>& t, const Tensor<T>& c_prev,
                          const TmsuParams<T>& p, std::size_t layer) {
  const std::size_t d = p.ln_gamma.dim(0);
  for (const Tensor<T>* v : {&y, &t, &c_prev}) {
    if (v->shape() != Shape{d}) {
      throw ShapeError("tmsu_update: expected vectors of shape " + to_string(Shape{d}) + ", got " +
                       to_string(v->shape()));
    }
  }
  auto c_hat = ops::layer_norm(c_prev, p.ln_gamma, p.ln_beta);
  auto s = ops::relu(ops::linear(ops::concat<T>({c_hat, y, t}), p.w_reduce));
  TmsuOutput<T> out;
  out.candidate = ops::tanh(ops::linear(s, p.w_candidate, p.b_candidate));
  out.input_gate = ops::sigmoid(ops::linear(s, p.w_input, p.b_input));
  out.forget_gate = ops::sigmoid(ops::linear(s, p.w_forget, p.b_forget));
  out.c = ops::add(ops::mul(out.forget_gate, c_prev), ops::mul(out.input_gate, out.candidate));
  for (T v : out.c.data()) {
    if (!std::isfinite(v)) {
      throw NumericalError("tmsu_update: non-finite memory at layer " + std::to_string(layer));
    }
  }
  return out;
}

template <typename T>
TagOutput<T> tag_modulate(const Tensor<T>& x, const Tensor<T>& c, const TagParams<T>& p) {
  const std::size_t d = p.ln_gamma.dim(0);
  if (x.rank() != 2 || x.dim(1) != d || c.shape() != Shape{d}) {
    throw ShapeError("tag_modulate: shape mismatch " + to_string(x.shape()) + " vs " + to_string(c.shape()));
  }
  auto h = ops::layer_norm(ops::add(x, c), p.ln_gamma, p.ln_beta);
  TagOutput<T> out;
  out.delta = ops::tanh(ops::linear(ops::relu(ops::linear(h, p.mlp_w1, p.mlp_b1)), p.mlp_w2, p.mlp_b2));
  auto logits = ops::linear(h, p.gate_weight, p.gate_bias);  // [N x 1]
  out.alpha = ops::sigmoid(ops::reshape(logits, {x.dim(0)}));
  out.x_hat = ops::add(x, ops::scale_rows(out.delta, out.alpha));
  return out;
}

#define SCVM_INSTANTIATE_MECHANISM(T)                                                            \
  template ScvmLayerParams<T> register_scvm_layer(ParameterStore<T>&, std::size_t, std::size_t, \
                                                  const MechanismConfig&);                      \
  template LayerSummary<T> multi_view_summarize(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> project_text(const Tensor<T>&, const Tensor<T>&);                           \
  template TmsuOutput<T> tmsu_update(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                     const TmsuParams<T>&, std::size_t);                         \
  template TagOutput<T> tag_modulate(const Tensor<T>&, const Tensor<T>&, const TagParams<T>&);

SCVM_INSTANTIATE_MECHANISM(float)
SCVM_INSTANTIATE_MECHANISM(double)

#undef SCVM_INSTANTIATE_MECHANISM

}  // namespace scvm
