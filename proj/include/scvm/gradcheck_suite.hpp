#pragma once

#include <cstdint>
#include <vector>

#include "scvm/grad_check.hpp"
#include "scvm/model.hpp"
#include "scvm/synth_task.hpp"

namespace scvm {

/// Tiny verification model: 8x8 image, patch 4 (N = 5), D = 8, L = 2.
ModelConfig tiny_model_config();
TaskSpec tiny_task_spec();

/// Adds uniform(+-magnitude) noise to every parameter so that no path is
/// silenced by a zero initialization (e.g. the TAG output layer).
void perturb_parameters(ParameterStore<double>& store, double magnitude, std::uint64_t seed);

/// Central-difference checks in 64-bit mode over every primitive, each
/// backbone and mechanism op, the objective pieces and the end-to-end
/// composite loss. Deterministic for a given seed.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed = 0, const GradCheckOptions& options = {});

}  // namespace scvm
