#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scvm/checkpoint.hpp"
#include "scvm/config.hpp"
#include "scvm/model.hpp"
#include "scvm/optim.hpp"
#include "scvm/synth_task.hpp"

namespace scvm {

/// One line of the metrics stream. loss_* are batch means.
struct MetricsRecord {
  std::string phase;
  std::size_t step = 0;
  double lr = 0.0;
  double lambda = 0.0;
  double loss_task = 0.0;
  double loss_align = 0.0;
  double loss_total = 0.0;
  std::optional<double> eval_accuracy;

  nlohmann::json to_json() const;
};

struct EvalReport {
  std::size_t n = 0;
  std::size_t correct = 0;
  std::array<std::size_t, kNumFamilies> family_total{};
  std::array<std::size_t, kNumFamilies> family_correct{};

  double accuracy() const { return n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0; }
  double family_accuracy(Family f) const;
  nlohmann::json to_json() const;
};

/// Accuracy over samples 0..n-1 of the dataset named by `dataset_seed`.
/// Forward-only; parameters are not touched.
EvalReport evaluate(const Model<float>& model, const ProxyLanguageSpace& space, const TaskSpec& task,
                    std::uint64_t dataset_seed, std::size_t n);

/// Settings for one optimization phase.
struct PhaseSpec {
  std::string name;
  std::size_t steps = 0;
  std::size_t warmup = 0;
  double lr_max = 0.0;
  double lambda = 0.0;
  EncodeOptions encode;
  std::uint64_t data_seed = 0;
};

/// Observers for a phase. Every callback is optional.
struct PhaseHooks {
  std::function<void(const MetricsRecord&)> on_metrics;
  // Called after step `s` (1-based) when s % checkpoint_every == 0 and at
  // the last step.
  std::function<void(std::size_t step, const Model<float>&, const AdamW<float>&)> on_checkpoint;
  std::size_t checkpoint_every = 0;
  std::size_t eval_every = 0;
  std::size_t eval_samples = 0;
  std::uint64_t eval_seed = 0;
};

/// Runs `spec.steps` AdamW steps with a warmup + cosine schedule. Each step
/// draws batch_size samples, back-propagates total/B per sample in index
/// order, then updates. Throws NumericalError on a non-finite loss or
/// gradient; parameters are left at the last completed step.
std::vector<MetricsRecord> run_phase(Model<float>& model, AdamW<float>& optimizer, const ProxyLanguageSpace& space,
                                     const RunConfig& cfg, const PhaseSpec& spec, const PhaseHooks& hooks = {});

/// Phase 1 of the default recipe: backbone, text projection and head trained
/// together with the mechanism switched off.
PhaseSpec pretrain_phase(const RunConfig& cfg);
/// Phase 2: the configured mechanism, lambda and optimizer settings.
PhaseSpec main_phase(const RunConfig& cfg);

ProxyLanguageSpace language_space(const RunConfig& cfg);

/// Fresh model from the config, optionally pretrained, with the freeze flag
/// applied afterwards.
Model<float> prepare_model(const RunConfig& cfg, std::vector<MetricsRecord>* metrics = nullptr,
                           const PhaseHooks& hooks = {});

struct TrainResult {
  Model<float> model;
  std::vector<MetricsRecord> metrics;
};

/// Full run. With `out_dir` set, writes config.json, metrics.jsonl,
/// pretrain.scvm, last.scvm (every checkpoint_every steps) and final.scvm.
TrainResult train(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Gate statistics of one forward pass on generate_sample(sample_seed).
std::vector<GateStats> inspect_gates(const Model<float>& model, const ProxyLanguageSpace& space,
                                     const TaskSpec& task, std::uint64_t sample_seed);
void write_gate_csv(const std::filesystem::path& path, const std::vector<GateStats>& stats);

/// FNV-1a over the raw bits of every parameter whose name has `prefix`.
std::uint64_t parameter_hash(const Model<float>& model, std::string_view prefix);

}  // namespace scvm
