#pragma once

#include <cstddef>
#include <vector>

#include "scvm/tensor.hpp"

// Differentiable primitives. Matrices are row-major; a "token grid" is an
// [N x D] matrix with one token per row. Every op rejects incompatible
// shapes with a ShapeError naming the op and the shapes involved. In the
// 64-bit (verification) instantiation, non-finite inputs raise
// NumericalError.
namespace scvm::ops {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kCosineEps = 1e-8;

/// Elementwise sum. Also accepts a token grid [N x D] plus a vector [D],
/// which is broadcast over rows.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset);

/// [m x k] * [k x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// [m x k] * [n x k]^T
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
/// x W + b with W stored [in x out]. x is a vector [in] or rows [r x in];
/// `bias` may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});

/// Concatenates vectors end to end.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts);
/// Stacks rows of two matrices (a vector counts as one row).
template <typename T>
Tensor<T> concat_rows(const Tensor<T>& top, const Tensor<T>& bottom);
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T>
Tensor<T> row(const Tensor<T>& x, std::size_t index);
/// Same values under a new shape with equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// Multiplies row r of x [N x D] by s[r], s of shape [N].
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s);

template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
/// tanh approximation of GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

/// Normalizes each row (the whole vector for rank 1) to zero mean and unit
/// variance with eps inside the square root. Rows whose entries are all
/// equal map to exactly zero before the affine step. `gamma`/`beta` may be
/// undefined for the bare normalization.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma = {},
                     const Tensor<T>& beta = {}, double eps = kLayerNormEps);
/// Row-wise softmax over the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

/// Mean over tokens: [N x D] -> [D].
template <typename T>
Tensor<T> mean_pool(const Tensor<T>& x);
/// Max over tokens: [N x D] -> [D]. Backward routes to the first maximal
/// row on ties and flags the node as non-differentiable.
template <typename T>
Tensor<T> max_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// a.b / max(|a||b|, eps) for two vectors of equal length.
template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b, double eps = kCosineEps);
/// -log softmax(logits)[target] for a logit vector.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t target);

/// [H x W x C] image -> [(H/p)(W/p) x p*p*C] patches in raster order.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch);

}  // namespace scvm::ops
