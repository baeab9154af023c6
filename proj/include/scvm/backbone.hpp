#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "scvm/parameter.hpp"
#include "scvm/tensor.hpp"

namespace scvm {

/// Miniature pre-LN vision transformer. Token grids are [N x D] tensors
/// with the CLS token in row 0.
struct BackboneConfig {
  std::size_t image_size = 16;
  std::size_t patch_size = 4;
  std::size_t channels = 3;
  std::size_t dim = 32;
  std::size_t layers = 6;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  bool freeze_backbone = false;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t tokens() const { return grid() * grid() + 1; }
  std::size_t patch_width() const { return patch_size * patch_size * channels; }
  void validate() const;
};

template <typename T>
struct PatchEmbedParams {
  Tensor<T> weight;  // [p*p*C x D]
  Tensor<T> bias;    // [D]
  Tensor<T> cls;     // [D]
  Tensor<T> pos;     // [N x D]
};

template <typename T>
struct BlockParams {
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> qkv_weight, qkv_bias;  // [D x 3D], [3D]
  Tensor<T> out_weight, out_bias;  // [D x D], [D]
  Tensor<T> ln2_gamma, ln2_beta;
  Tensor<T> fc1_weight, fc1_bias;  // [D x rD]
  Tensor<T> fc2_weight, fc2_bias;  // [rD x D]
};

template <typename T>
struct BackboneParams {
  PatchEmbedParams<T> embed;
  std::vector<BlockParams<T>> blocks;
};

/// Registers all backbone parameters under the "backbone." prefix.
template <typename T>
BackboneParams<T> register_backbone(ParameterStore<T>& store, const BackboneConfig& cfg);

/// Layer-0 token grid: CLS prepended to projected patches, plus learned
/// positional embeddings.
template <typename T>
Tensor<T> patch_embed(const Tensor<T>& image, const PatchEmbedParams<T>& p, const BackboneConfig& cfg);

/// x + MHSA(LN(x)), then + MLP(LN(.)).
template <typename T>
Tensor<T> transformer_block(const Tensor<T>& x, const BlockParams<T>& p, std::size_t heads);

/// Attention weights of head `head` for inspection: softmax(q k^T / sqrt(d)).
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& x, const BlockParams<T>& p, std::size_t heads,
                            std::size_t head);

}  // namespace scvm
