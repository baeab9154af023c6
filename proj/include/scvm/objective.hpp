#pragma once

#include <cstdint>

#include "scvm/model.hpp"
#include "scvm/synth_task.hpp"

namespace scvm {

/// Two-layer projector D -> D_llm: fc2(gelu(fc1(v))).
template <typename T>
Tensor<T> project(const Tensor<T>& v, const ProjectorParams<T>& p);

/// 1 - cos(projector(c_L), a), in [0, 2]. The cosine uses
/// max(|u||a|, 1e-8) as denominator.
template <typename T>
Tensor<T> alignment_loss(const Tensor<T>& c_final, const Tensor<T>& answer_embedding,
                         const ProjectorParams<T>& projector);

/// task + lambda * align. Throws NumericalError naming the non-finite
/// component. With lambda == 0 the alignment term is left out of the graph.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& task, const Tensor<T>& align, double lambda);

/// Linear classifier over [projector(mean_pool(features)); t].
template <typename T>
Tensor<T> task_logits(const Tensor<T>& features, const Tensor<T>& t, const HeadParams<T>& head);

template <typename T>
Tensor<T> task_loss(const Tensor<T>& features, const Tensor<T>& t, std::uint32_t answer_id,
                    const HeadParams<T>& head, std::size_t answer_vocab);

template <typename T>
struct SampleForward {
  Tensor<T> t;
  EncodeResult<T> encode;
  Tensor<T> logits;
  Tensor<T> task;
  Tensor<T> align;  // detached from the graph when lambda == 0
  Tensor<T> total;
};

/// Full pipeline for one sample: question -> t, image -> encoder, then the
/// composite objective. The alignment term needs the mechanism enabled;
/// without it align is reported as 0 and left out.
template <typename T>
SampleForward<T> forward_sample(const Model<T>& model, const Sample& sample,
                                const ProxyLanguageSpace& space, const TaskSpec& task, double lambda,
                                const EncodeOptions& options);

}  // namespace scvm
