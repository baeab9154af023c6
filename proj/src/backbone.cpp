#include "scvm/backbone.hpp"

#include <cmath>

#include "scvm/ops.hpp"

namespace scvm {

void BackboneConfig::validate() const {
  if (patch_size == 0 || image_size % patch_size != 0) {
    throw std::invalid_argument("backbone: image_size " + std::to_string(image_size) +
                                " not divisible by patch_size " + std::to_string(patch_size));
  }
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("backbone: dim " + std::to_string(dim) +
                                " not divisible by heads " + std::to_string(heads));
  }
  if (layers == 0 || channels == 0 || mlp_ratio == 0) {
    throw std::invalid_argument("backbone: layers, channels and mlp_ratio must be positive");
  }
}

template <typename T>
BackboneParams<T> register_backbone(ParameterStore<T>& store, const BackboneConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.dim, hidden = cfg.dim * cfg.mlp_ratio;
  BackboneParams<T> bb;
  bb.embed.weight = store.add("backbone.patch.weight", {cfg.patch_width(), d}, Init::xavier(), true);
  bb.embed.bias = store.add("backbone.patch.bias", {d}, Init::zeros());
  bb.embed.cls = store.add("backbone.cls", {d}, Init::zeros());
  bb.embed.pos = store.add("backbone.pos", {cfg.tokens(), d}, Init::uniform(0.05));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string pre = "backbone.block" + std::to_string(l + 1) + ".";
    BlockParams<T> b;
    b.ln1_gamma = store.add(pre + "ln1.gamma", {d}, Init::ones());
    b.ln1_beta = store.add(pre + "ln1.beta", {d}, Init::zeros());
    b.qkv_weight = store.add(pre + "attn.qkv.weight", {d, 3 * d}, Init::xavier(), true);
    b.qkv_bias = store.add(pre + "attn.qkv.bias", {3 * d}, Init::zeros());
    b.out_weight = store.add(pre + "attn.out.weight", {d, d}, Init::xavier(), true);
    b.out_bias = store.add(pre + "attn.out.bias", {d}, Init::zeros());
    b.ln2_gamma = store.add(pre + "ln2.gamma", {d}, Init::ones());
    b.ln2_beta = store.add(pre + "ln2.beta", {d}, Init::zeros());
    b.fc1_weight = store.add(pre + "mlp.fc1.weight", {d, hidden}, Init::xavier(), true);
    b.fc1_bias = store.add(pre + "mlp.fc1.bias", {hidden}, Init::zeros());
    b.fc2_weight = store.add(pre + "mlp.fc2.weight", {hidden, d}, Init::xavier(), true);
    b.fc2_bias = store.add(pre + "mlp.fc2.bias", {d}, Init::zeros());
    bb.blocks.push_back(std::move(b));
  }
  return bb;
}

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& image, const PatchEmbedParams<T>& p, const BackboneConfig& cfg) {
  const Shape expected{cfg.image_size, cfg.image_size, cfg.channels};
  if (image.shape() != expected) {
    throw ShapeError("patch_embed: image shape " + to_string(image.shape()) + " does not match " +
                     to_string(expected));
  }
  auto patches = ops::linear(ops::patchify(image, cfg.patch_size), p.weight, p.bias);
  return ops::add(ops::concat_rows(p.cls, patches), p.pos);
}

namespace {

template <typename T>
struct HeadSplit {
  Tensor<T> q, k, v;
};

template <typename T>
HeadSplit<T> split_head(const Tensor<T>& qkv, std::size_t d, std::size_t dh, std::size_t h) {
  return {ops::slice_cols(qkv, h * dh, (h + 1) * dh), ops::slice_cols(qkv, d + h * dh, d + (h + 1) * dh),
          ops::slice_cols(qkv, 2 * d + h * dh, 2 * d + (h + 1) * dh)};
}

}  // namespace

template <typename T>
Tensor<T> transformer_block(const Tensor<T>& x, const BlockParams<T>& p, std::size_t heads) {
  if (x.rank() != 2 || x.dim(1) != p.out_weight.dim(1)) {
    throw ShapeError("transformer_block: token grid " + to_string(x.shape()) +
                     " does not match width " + std::to_string(p.out_weight.dim(1)));
  }
  const std::size_t d = x.dim(1), dh = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

  auto qkv = ops::linear(ops::layer_norm(x, p.ln1_gamma, p.ln1_beta), p.qkv_weight, p.qkv_bias);
  std::vector<Tensor<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto [q, k, v] = split_head(qkv, d, dh, h);
    auto weights = ops::softmax(ops::scale(ops::matmul_nt(q, k), inv_sqrt));
    outs.push_back(ops::matmul(weights, v));
  }
  auto attn = heads == 1 ? outs[0] : ops::concat_cols(outs);
  auto x1 = ops::add(x, ops::linear(attn, p.out_weight, p.out_bias));

  auto hidden = ops::gelu(ops::linear(ops::layer_norm(x1, p.ln2_gamma, p.ln2_beta), p.fc1_weight, p.fc1_bias));
  return ops::add(x1, ops::linear(hidden, p.fc2_weight, p.fc2_bias));
}

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& x, const BlockParams<T>& p, std::size_t heads,
                            std::size_t head) {
  const std::size_t d = x.dim(1), dh = d / heads;
  auto qkv = ops::linear(ops::layer_norm(x, p.ln1_gamma, p.ln1_beta), p.qkv_weight, p.qkv_bias);
  auto [q, k, v] = split_head(qkv, d, dh, head);
  return ops::softmax(ops::scale(ops::matmul_nt(q, k), T(1) / std::sqrt(static_cast<T>(dh))));
}

#define SCVM_INSTANTIATE_BACKBONE(T)                                                            \
  template BackboneParams<T> register_backbone(ParameterStore<T>&, const BackboneConfig&);      \
  template Tensor<T> patch_embed(const Tensor<T>&, const PatchEmbedParams<T>&, const BackboneConfig&); \
  template Tensor<T> transformer_block(const Tensor<T>&, const BlockParams<T>&, std::size_t);   \
  template Tensor<T> attention_weights(const Tensor<T>&, const BlockParams<T>&, std::size_t, std::size_t);

SCVM_INSTANTIATE_BACKBONE(float)
SCVM_INSTANTIATE_BACKBONE(double)

#undef SCVM_INSTANTIATE_BACKBONE

}  // namespace scvm
