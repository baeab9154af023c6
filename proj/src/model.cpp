#include "scvm/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "scvm/ops.hpp"

namespace scvm {

void ModelConfig::validate() const {
  backbone.validate();
  mechanism.validate(backbone.dim);
  if (llm_dim == 0 || answer_vocab == 0) {
    throw std::invalid_argument("model: llm_dim and answer_vocab must be positive");
  }
}

namespace {

template <typename T>
ProjectorParams<T> register_projector(ParameterStore<T>& store, const std::string& prefix,
                                      std::size_t in, std::size_t out) {
  ProjectorParams<T> p;
  p.w1 = store.add(prefix + "fc1.weight", {in, out}, Init::xavier(), true);
  p.b1 = store.add(prefix + "fc1.bias", {out}, Init::zeros());
  p.w2 = store.add(prefix + "fc2.weight", {out, out}, Init::xavier(), true);
  p.b2 = store.add(prefix + "fc2.bias", {out}, Init::zeros());
  return p;
}

}  // namespace

template <typename T>
Model<T>::Model(ModelConfig config) : config_(std::move(config)), store_(config_.init_seed) {
  config_.validate();
  const std::size_t d = config_.backbone.dim;
  backbone_ = register_backbone(store_, config_.backbone);
  for (std::size_t l = 1; l <= config_.backbone.layers; ++l) {
    layers_.push_back(register_scvm_layer(store_, l, d, config_.mechanism));
  }
  text_weight_ = store_.add("text.weight", {config_.llm_dim, d}, Init::xavier(), true);
  head_.projector = register_projector(store_, "head.projector.", d, config_.llm_dim);
  head_.cls_weight =
      store_.add("head.classifier.weight", {config_.llm_dim + d, config_.answer_vocab}, Init::xavier(), true);
  head_.cls_bias = store_.add("head.classifier.bias", {config_.answer_vocab}, Init::zeros());
  if (!config_.shared_projector) {
    align_projector_ = register_projector(store_, "align.projector.", d, config_.llm_dim);
  }
  apply_freeze();
}

template <typename T>
void Model<T>::apply_freeze() {
  store_.set_frozen("backbone.", config_.backbone.freeze_backbone);
}

template <typename T>
Model<T> Model<T>::clone() const {
  Model copy(config_);
  for (const auto& p : store_.all()) {
    auto& q = copy.store_.get(p.name);
    std::copy(p.tensor.data().begin(), p.tensor.data().end(), q.tensor.mutable_data().begin());
    q.frozen = p.frozen;
    q.tensor.set_requires_grad(!p.frozen);
  }
  return copy;
}

template <typename T>
EncodeResult<T> encode_with_scvm(const Model<T>& model, const Tensor<T>& image, const Tensor<T>& t,
                                 const EncodeOptions& options) {
  const auto& cfg = model.config();
  const std::size_t d = cfg.backbone.dim;
  EncodeResult<T> result;

  auto x = patch_embed(image, model.backbone().embed, cfg.backbone);
  Tensor<T> c;
  if (options.scvm) {
    if (t.shape() != Shape{d}) {
      throw ShapeError("encode_with_scvm: text vector " + to_string(t.shape()) + " does not match D=" +
                       std::to_string(d));
    }
    if (options.initial_memory) {
      const auto& init = *options.initial_memory;
      if (init.size() != d) throw ShapeError("encode_with_scvm: initial memory has wrong length");
      c = Tensor<T>::from({d}, std::vector<T>(init.begin(), init.end()));
    } else {
      c = Tensor<T>::zeros({d});
    }
  }
  const Tensor<T> t_memory = options.text_conditioning ? t : Tensor<T>::zeros({d});

  for (std::size_t l = 0; l < cfg.backbone.layers; ++l) {
    x = transformer_block(x, model.backbone().blocks[l], cfg.backbone.heads);
    if (!options.scvm) continue;
    const auto& layer = model.scvm_layers()[l];
    LayerTrace<T> trace;
    trace.layer = l + 1;
    trace.x = x;
    trace.summary = multi_view_summarize(x, layer.summary_weight);
    trace.tmsu = tmsu_update(trace.summary.y, t_memory, c, layer.tmsu, l + 1);
    c = trace.tmsu.c;
    if (options.tag) {
      trace.tag = tag_modulate(x, c, layer.tag);
      x = trace.tag.x_hat;
    }
    trace.x_hat = x;
    result.traces.push_back(std::move(trace));
  }
  result.features = x;
  result.memory.c = c;
  if (options.record) result.memory.recorded_gates = gate_stats(result);
  return result;
}

template <typename T>
std::vector<GateStats> gate_stats(const EncodeResult<T>& result) {
  auto mean_of = [](const Tensor<T>& v) {
    if (!v.defined() || v.size() == 0) return 0.0;
    double s = 0.0;
    for (T e : v.data()) s += static_cast<double>(e);
    return s / static_cast<double>(v.size());
  };
  std::vector<GateStats> stats;
  for (const auto& tr : result.traces) {
    GateStats g;
    g.layer = tr.layer;
    g.mean_f = mean_of(tr.tmsu.forget_gate);
    g.mean_i = mean_of(tr.tmsu.input_gate);
    g.mean_alpha = mean_of(tr.tag.alpha);
    double l2 = 0.0;
    for (T e : tr.tmsu.c.data()) l2 += static_cast<double>(e) * static_cast<double>(e);
    g.mem_l2 = std::sqrt(l2);
    double linf = 0.0;
    for (std::size_t i = 0; i < tr.x.size(); ++i) {
      linf = std::max(linf, std::abs(static_cast<double>(tr.x_hat[i]) - static_cast<double>(tr.x[i])));
    }
    g.delta_linf = linf;
    stats.push_back(g);
  }
  return stats;
}

template class Model<float>;
template class Model<double>;
template EncodeResult<float> encode_with_scvm(const Model<float>&, const Tensor<float>&, const Tensor<float>&,
                                              const EncodeOptions&);
template EncodeResult<double> encode_with_scvm(const Model<double>&, const Tensor<double>&,
                                               const Tensor<double>&, const EncodeOptions&);
template std::vector<GateStats> gate_stats(const EncodeResult<float>&);
template std::vector<GateStats> gate_stats(const EncodeResult<double>&);

}  // namespace scvm
