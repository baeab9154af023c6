#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "scvm/model.hpp"
#include "scvm/synth_task.hpp"

namespace scvm {

struct TrainConfig {
  double lr_max = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t total_steps = 2000;
  // Defaults to 3% of total_steps when unset.
  std::optional<std::size_t> warmup_steps;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double lambda = 0.05;
  std::string precision = "f32";
  std::size_t checkpoint_every = 500;
  std::size_t eval_every = 0;  // 0 disables periodic evaluation
  std::size_t eval_samples = 500;
  std::uint64_t eval_seed = 1000003;
  // Two-phase recipe: first train backbone + head without the mechanism,
  // then freeze per backbone.freeze_backbone and run the main phase.
  bool pretrain_baseline = true;
  std::size_t pretrain_steps = 2000;
  double pretrain_lr = 1e-3;

  std::size_t effective_warmup() const;
  std::size_t effective_pretrain_warmup() const;
  void validate() const;
};

/// Everything a run needs: training, model and task settings.
struct RunConfig {
  TrainConfig train;
  ModelConfig model;
  TaskSpec task;

  void validate() const;
};

/// Small CPU-sized defaults with the backbone frozen for the main phase.
RunConfig default_run_config();

nlohmann::json to_json(const RunConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected with
/// std::invalid_argument naming the key.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace scvm
