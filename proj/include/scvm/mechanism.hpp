#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "scvm/parameter.hpp"
#include "scvm/tensor.hpp"

// Stateful cross-layer modulation: a memory vector c^l threaded through the
// vision encoder. Each layer summarizes its tokens (mean, max, CLS),
// updates the memory with an LSTM-style gated cell conditioned on a fixed
// text vector, and feeds the memory back into every token through a
// bounded, per-token gated residual.
namespace scvm {

struct MechanismConfig {
  bool enabled = true;
  bool tag_enabled = true;
  bool text_conditioning = true;
  std::size_t reduction = 4;      // d_r = D / reduction
  double forget_bias = 1.0;
  double gate_bias = -2.2;
  double tag_init_range = 1e-3;   // first MLP layer and gate projection

  void validate(std::size_t dim) const;
};

template <typename T>
struct LayerSummary {
  Tensor<T> mu;   // mean over tokens
  Tensor<T> nu;   // max over tokens
  Tensor<T> cls;  // token 0
  Tensor<T> y;    // W_y [mu; nu; cls]
};

template <typename T>
struct TmsuParams {
  Tensor<T> ln_gamma, ln_beta;       // LN of the previous memory
  Tensor<T> w_reduce;                // [3D x d_r]
  Tensor<T> w_candidate, b_candidate;  // [d_r x D], [D]
  Tensor<T> w_input, b_input;
  Tensor<T> w_forget, b_forget;
};

template <typename T>
struct TagParams {
  Tensor<T> ln_gamma, ln_beta;   // LN of x + c
  Tensor<T> mlp_w1, mlp_b1;      // [D x D]
  Tensor<T> mlp_w2, mlp_b2;      // [D x D], zero at init
  Tensor<T> gate_weight;         // [D x 1]
  Tensor<T> gate_bias;           // [1]
};

template <typename T>
struct ScvmLayerParams {
  Tensor<T> summary_weight;  // W_y, [3D x D]
  TmsuParams<T> tmsu;
  TagParams<T> tag;
};

template <typename T>
struct TmsuOutput {
  Tensor<T> c;          // new memory
  Tensor<T> candidate;  // c~
  Tensor<T> input_gate;
  Tensor<T> forget_gate;
};

template <typename T>
struct TagOutput {
  Tensor<T> x_hat;
  Tensor<T> delta;  // [N x D], tanh-bounded
  Tensor<T> alpha;  // [N], one gate per token
};

/// Inspection record for one layer.
struct GateStats {
  std::size_t layer = 0;
  double mean_f = 0.0;
  double mean_i = 0.0;
  double mean_alpha = 0.0;
  double mem_l2 = 0.0;
  double delta_linf = 0.0;  // max |x_hat - x|
};

template <typename T>
struct MemoryState {
  Tensor<T> c;
  std::vector<GateStats> recorded_gates;
};

/// Registers one layer's W_y, TMSU and TAG parameters under
/// "scvm.layer<l>." with the prescribed initialization.
template <typename T>
ScvmLayerParams<T> register_scvm_layer(ParameterStore<T>& store, std::size_t layer,
                                       std::size_t dim, const MechanismConfig& cfg);

template <typename T>
LayerSummary<T> multi_view_summarize(const Tensor<T>& x, const Tensor<T>& summary_weight);

/// t = mean(question rows) W_t, with W_t stored [D_llm x D].
template <typename T>
Tensor<T> project_text(const Tensor<T>& question_hidden, const Tensor<T>& text_weight);

/// c_new = f * c_prev + i * c~ with u = [LN(c_prev); y; t], s = relu(W_1 u).
/// Throws NumericalError naming `layer` if c_new is not finite.
template <typename T>
TmsuOutput<T> tmsu_update(const Tensor<T>& y, const Tensor<T>& t, const Tensor<T>& c_prev,
                          const TmsuParams<T>& p, std::size_t layer = 0);

/// x_hat = x + alpha * Delta with h = LN(x + c) per token,
/// Delta = tanh(MLP(h)), alpha = sigmoid(W_h h + b).
template <typename T>
TagOutput<T> tag_modulate(const Tensor<T>& x, const Tensor<T>& c, const TagParams<T>& p);

}  // namespace scvm
