#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "scvm/backbone.hpp"
#include "scvm/mechanism.hpp"
#include "scvm/parameter.hpp"

namespace scvm {

struct ModelConfig {
  BackboneConfig backbone;
  MechanismConfig mechanism;
  std::size_t llm_dim = 64;
  std::size_t answer_vocab = 12;
  // Alignment reuses the task head's feature projector when true.
  bool shared_projector = true;
  std::uint64_t init_seed = 0;

  void validate() const;
};

/// Two-layer D -> D_llm -> D_llm map with a GELU in between.
template <typename T>
struct ProjectorParams {
  Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct HeadParams {
  ProjectorParams<T> projector;
  Tensor<T> cls_weight;  // [(D_llm + D) x answer_vocab]
  Tensor<T> cls_bias;
};

/// Backbone, per-layer SCVM modules, text projection and task head in one
/// parameter store. Parameter prefixes: "backbone.", "scvm.", "text.",
/// "head.", "align.".
template <typename T>
class Model {
 public:
  explicit Model(ModelConfig config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  /// Mechanism switches (enabled/TAG/text) may change after construction;
  /// the parameter set does not.
  MechanismConfig& mechanism() { return config_.mechanism; }

  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }

  const BackboneParams<T>& backbone() const { return backbone_; }
  const std::vector<ScvmLayerParams<T>>& scvm_layers() const { return layers_; }
  const Tensor<T>& text_weight() const { return text_weight_; }
  const HeadParams<T>& head() const { return head_; }
  const ProjectorParams<T>& alignment_projector() const {
    return config_.shared_projector ? head_.projector : align_projector_;
  }

  /// Applies config().backbone.freeze_backbone to the parameter flags.
  void apply_freeze();
  /// Independent copy with identical values and flags.
  Model clone() const;

 private:
  ModelConfig config_;
  ParameterStore<T> store_;
  BackboneParams<T> backbone_;
  std::vector<ScvmLayerParams<T>> layers_;
  Tensor<T> text_weight_;
  HeadParams<T> head_;
  ProjectorParams<T> align_projector_;
};

struct EncodeOptions {
  bool scvm = true;
  bool tag = true;
  bool text_conditioning = true;
  bool record = false;
  // Overrides the zero initial memory c^0.
  std::optional<std::vector<double>> initial_memory;

  static EncodeOptions from(const MechanismConfig& m) {
    EncodeOptions o;
    o.scvm = m.enabled;
    o.tag = m.tag_enabled;
    o.text_conditioning = m.text_conditioning;
    return o;
  }
};

template <typename T>
struct LayerTrace {
  std::size_t layer = 0;
  Tensor<T> x;      // block output before modulation
  Tensor<T> x_hat;  // features passed to the next block
  LayerSummary<T> summary;
  TmsuOutput<T> tmsu;
  TagOutput<T> tag;
};

template <typename T>
struct EncodeResult {
  Tensor<T> features;  // x_hat^L
  MemoryState<T> memory;
  std::vector<LayerTrace<T>> traces;
};

/// Per layer: block -> summarize -> TMSU -> TAG, with x_hat^l fed to block
/// l+1. With `options.scvm` off this is the plain backbone forward pass.
template <typename T>
EncodeResult<T> encode_with_scvm(const Model<T>& model, const Tensor<T>& image, const Tensor<T>& t,
                                 const EncodeOptions& options);

template <typename T>
std::vector<GateStats> gate_stats(const EncodeResult<T>& result);

}  // namespace scvm
