#include "scvm/objective.hpp"

#include <cmath>
#include <string>

#include "scvm/ops.hpp"

namespace scvm {

template <typename T>
Tensor<T> project(const Tensor<T>& v, const ProjectorParams<T>& p) {
  return ops::linear(ops::gelu(ops::linear(v, p.w1, p.b1)), p.w2, p.b2);
}

template <typename T>
Tensor<T> alignment_loss(const Tensor<T>& c_final, const Tensor<T>& answer_embedding,
                         const ProjectorParams<T>& projector) {
  auto projected = project(c_final, projector);
  if (projected.shape() != answer_embedding.shape()) {
    throw ShapeError("alignment_loss: projected memory " + to_string(projected.shape()) +
                     " vs answer embedding " + to_string(answer_embedding.shape()));
  }
  return ops::add_scalar(ops::scale(ops::cosine_similarity(projected, answer_embedding), T(-1)), T(1));
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& task, const Tensor<T>& align, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("total_loss: lambda must be >= 0");
  if (!std::isfinite(static_cast<double>(task.item()))) {
    throw NumericalError("total_loss: task loss is not finite");
  }
  if (!std::isfinite(static_cast<double>(align.item()))) {
    throw NumericalError("total_loss: alignment loss is not finite");
  }
  if (lambda == 0.0) return task;
  return ops::add(task, ops::scale(align, static_cast<T>(lambda)));
}

template <typename T>
Tensor<T> task_logits(const Tensor<T>& features, const Tensor<T>& t, const HeadParams<T>& head) {
  auto pooled = project(ops::mean_pool(features), head.projector);
  return ops::linear(ops::concat<T>({pooled, t}), head.cls_weight, head.cls_bias);
}

template <typename T>
Tensor<T> task_loss(const Tensor<T>& features, const Tensor<T>& t, std::uint32_t answer_id,
                    const HeadParams<T>& head, std::size_t answer_vocab) {
  if (answer_id >= answer_vocab) {
    throw std::out_of_range("task_loss: answer id " + std::to_string(answer_id) + " outside vocabulary of " +
                            std::to_string(answer_vocab));
  }
  return ops::cross_entropy(task_logits(features, t, head), answer_id);
}

template <typename T>
SampleForward<T> forward_sample(const Model<T>& model, const Sample& sample,
                                const ProxyLanguageSpace& space, const TaskSpec& task, double lambda,
                                const EncodeOptions& options) {
  SampleForward<T> out;
  out.t = project_text(space.embed_question<T>(sample.question_tokens), model.text_weight());
  out.encode = encode_with_scvm(model, sample.image_tensor<T>(), out.t, options);
  out.logits = task_logits(out.encode.features, out.t, model.head());
  if (sample.answer_id >= model.config().answer_vocab) {
    throw std::out_of_range("forward_sample: answer id outside vocabulary");
  }
  out.task = ops::cross_entropy(out.logits, sample.answer_id);
  if (options.scvm) {
    auto a = space.embed_answer<T>(answer_tokens(sample.answer_id, task));
    out.align = alignment_loss(out.encode.memory.c, a, model.alignment_projector());
    if (lambda == 0.0) out.align = out.align.detach();
  } else {
    out.align = Tensor<T>::scalar(T(0));
  }
  out.total = total_loss(out.task, out.align, options.scvm ? lambda : 0.0);
  return out;
}

#define SCVM_INSTANTIATE_OBJECTIVE(T)                                                              \
  template Tensor<T> project(const Tensor<T>&, const ProjectorParams<T>&);                         \
  template Tensor<T> alignment_loss(const Tensor<T>&, const Tensor<T>&, const ProjectorParams<T>&); \
  template Tensor<T> total_loss(const Tensor<T>&, const Tensor<T>&, double);                       \
  template Tensor<T> task_logits(const Tensor<T>&, const Tensor<T>&, const HeadParams<T>&);        \
  template Tensor<T> task_loss(const Tensor<T>&, const Tensor<T>&, std::uint32_t, const HeadParams<T>&, \
                               std::size_t);                                                       \
  template SampleForward<T> forward_sample(const Model<T>&, const Sample&, const ProxyLanguageSpace&, \
                                           const TaskSpec&, double, const EncodeOptions&);

SCVM_INSTANTIATE_OBJECTIVE(float)
SCVM_INSTANTIATE_OBJECTIVE(double)

#undef SCVM_INSTANTIATE_OBJECTIVE

}  // namespace scvm
