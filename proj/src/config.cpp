#include "scvm/config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string_view>

namespace scvm {

using nlohmann::json;

std::size_t TrainConfig::effective_warmup() const {
  if (warmup_steps) return *warmup_steps;
  return static_cast<std::size_t>(std::llround(0.03 * static_cast<double>(total_steps)));
}

std::size_t TrainConfig::effective_pretrain_warmup() const {
  return static_cast<std::size_t>(std::llround(0.03 * static_cast<double>(pretrain_steps)));
}

void TrainConfig::validate() const {
  if (!(lr_max > 0.0)) throw std::invalid_argument("train.lr_max must be > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train.weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("train.betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("train.eps must be > 0");
  if (total_steps == 0) throw std::invalid_argument("train.total_steps must be >= 1");
  if (effective_warmup() > total_steps) {
    throw std::invalid_argument("train.warmup_steps must not exceed total_steps");
  }
  if (batch_size == 0) throw std::invalid_argument("train.batch_size must be >= 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("train.lambda must be >= 0");
  // 64-bit mode is reserved for gradient verification.
  if (precision != "f32") throw std::invalid_argument("train.precision must be \"f32\"");
  if (eval_samples == 0) throw std::invalid_argument("train.eval_samples must be >= 1");
  if (pretrain_baseline && !(pretrain_lr > 0.0)) throw std::invalid_argument("train.pretrain_lr must be > 0");
}

void RunConfig::validate() const {
  train.validate();
  model.validate();
  task.validate();
  if (task.image_size != model.backbone.image_size) {
    throw std::invalid_argument("task.image_size must equal backbone.image_size");
  }
  if (model.backbone.channels != 3) throw std::invalid_argument("backbone.channels must be 3 for the synthetic task");
  if (model.answer_vocab != kAnswerVocab) throw std::invalid_argument("head.answer_vocab must be 12");
}

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.model.backbone.freeze_backbone = true;
  return cfg;
}

namespace {

void reject_unknown(const json& j, std::string_view section, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw std::invalid_argument("config: section '" + std::string(section) + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) throw std::invalid_argument("config: unknown key '" + std::string(section) + "." + key + "'");
  }
}

template <typename V>
void read(const json& j, const char* key, V& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_unsigned_v<V> && !std::is_same_v<V, bool>) {
      if (!it->is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
    }
    out = it->template get<V>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: bad value for '") + key + "': " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

json to_json(const RunConfig& cfg) {
  const auto& t = cfg.train;
  const auto& b = cfg.model.backbone;
  const auto& m = cfg.model.mechanism;
  json train = {{"lr_max", t.lr_max},
                {"weight_decay", t.weight_decay},
                {"betas", {t.beta1, t.beta2}},
                {"eps", t.eps},
                {"total_steps", t.total_steps},
                {"batch_size", t.batch_size},
                {"seed", t.seed},
                {"lambda", t.lambda},
                {"precision", t.precision},
                {"checkpoint_every", t.checkpoint_every},
                {"eval_every", t.eval_every},
                {"eval_samples", t.eval_samples},
                {"eval_seed", t.eval_seed},
                {"pretrain_baseline", t.pretrain_baseline},
                {"pretrain_steps", t.pretrain_steps},
                {"pretrain_lr", t.pretrain_lr}};
  if (t.warmup_steps) train["warmup_steps"] = *t.warmup_steps;
  return {
      {"train", train},
      {"backbone",
       {{"image_size", b.image_size},
        {"patch_size", b.patch_size},
        {"channels", b.channels},
        {"dim", b.dim},
        {"layers", b.layers},
        {"heads", b.heads},
        {"mlp_ratio", b.mlp_ratio},
        {"freeze_backbone", b.freeze_backbone}}},
      {"mechanism",
       {{"enabled", m.enabled},
        {"tag_enabled", m.tag_enabled},
        {"text_conditioning", m.text_conditioning},
        {"reduction", m.reduction},
        {"forget_bias", m.forget_bias},
        {"gate_bias", m.gate_bias},
        {"tag_init_range", m.tag_init_range}}},
      {"head",
       {{"llm_dim", cfg.model.llm_dim},
        {"answer_vocab", cfg.model.answer_vocab},
        {"shared_projector", cfg.model.shared_projector},
        {"init_seed", cfg.model.init_seed}}},
      {"task",
       {{"image_size", cfg.task.image_size},
        {"noise", cfg.task.noise},
        {"language_seed", cfg.task.language_seed},
        {"answer_tokens", cfg.task.answer_tokens}}},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg = default_run_config();
  reject_unknown(j, "<root>", {"train", "backbone", "mechanism", "head", "task"});

  if (auto it = j.find("train"); it != j.end()) {
    const json& s = *it;
    reject_unknown(s, "train",
                   {"lr_max", "weight_decay", "betas", "eps", "total_steps", "warmup_steps", "batch_size", "seed",
                    "lambda", "precision", "checkpoint_every", "eval_every", "eval_samples", "eval_seed",
                    "pretrain_baseline", "pretrain_steps", "pretrain_lr"});
    auto& t = cfg.train;
    read(s, "lr_max", t.lr_max);
    read(s, "weight_decay", t.weight_decay);
    if (auto b = s.find("betas"); b != s.end()) {
      if (!b->is_array() || b->size() != 2) throw std::invalid_argument("config: train.betas must be [beta1, beta2]");
      t.beta1 = (*b)[0].get<double>();
      t.beta2 = (*b)[1].get<double>();
    }
    read(s, "eps", t.eps);
    read(s, "total_steps", t.total_steps);
    if (s.contains("warmup_steps")) {
      std::size_t w = 0;
      read(s, "warmup_steps", w);
      t.warmup_steps = w;
    }
    read(s, "batch_size", t.batch_size);
    read(s, "seed", t.seed);
    read(s, "lambda", t.lambda);
    read(s, "precision", t.precision);
    read(s, "checkpoint_every", t.checkpoint_every);
    read(s, "eval_every", t.eval_every);
    read(s, "eval_samples", t.eval_samples);
    read(s, "eval_seed", t.eval_seed);
    read(s, "pretrain_baseline", t.pretrain_baseline);
    read(s, "pretrain_steps", t.pretrain_steps);
    read(s, "pretrain_lr", t.pretrain_lr);
  }
  if (auto it = j.find("backbone"); it != j.end()) {
    const json& s = *it;
    reject_unknown(s, "backbone",
                   {"image_size", "patch_size", "channels", "dim", "layers", "heads", "mlp_ratio", "freeze_backbone"});
    auto& b = cfg.model.backbone;
    read(s, "image_size", b.image_size);
    read(s, "patch_size", b.patch_size);
    read(s, "channels", b.channels);
    read(s, "dim", b.dim);
    read(s, "layers", b.layers);
    read(s, "heads", b.heads);
    read(s, "mlp_ratio", b.mlp_ratio);
    read(s, "freeze_backbone", b.freeze_backbone);
  }
  if (auto it = j.find("mechanism"); it != j.end()) {
    const json& s = *it;
    reject_unknown(s, "mechanism",
                   {"enabled", "tag_enabled", "text_conditioning", "reduction", "forget_bias", "gate_bias",
                    "tag_init_range"});
    auto& m = cfg.model.mechanism;
    read(s, "enabled", m.enabled);
    read(s, "tag_enabled", m.tag_enabled);
    read(s, "text_conditioning", m.text_conditioning);
    read(s, "reduction", m.reduction);
    read(s, "forget_bias", m.forget_bias);
    read(s, "gate_bias", m.gate_bias);
    read(s, "tag_init_range", m.tag_init_range);
  }
  if (auto it = j.find("head"); it != j.end()) {
    const json& s = *it;
    reject_unknown(s, "head", {"llm_dim", "answer_vocab", "shared_projector", "init_seed"});
    read(s, "llm_dim", cfg.model.llm_dim);
    read(s, "answer_vocab", cfg.model.answer_vocab);
    read(s, "shared_projector", cfg.model.shared_projector);
    read(s, "init_seed", cfg.model.init_seed);
  }
  if (auto it = j.find("task"); it != j.end()) {
    const json& s = *it;
    reject_unknown(s, "task", {"image_size", "noise", "language_seed", "answer_tokens"});
    read(s, "image_size", cfg.task.image_size);
    read(s, "noise", cfg.task.noise);
    read(s, "language_seed", cfg.task.language_seed);
    read(s, "answer_tokens", cfg.task.answer_tokens);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace scvm
