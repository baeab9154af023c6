#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "scvm/checkpoint.hpp"
#include "scvm/gradcheck_suite.hpp"
#include "scvm/objective.hpp"
#include "scvm/ops.hpp"
#include "scvm/trainer.hpp"

using namespace scvm;

namespace {

RunConfig small_config() {
  RunConfig cfg = default_run_config();
  cfg.model = tiny_model_config();
  cfg.model.backbone.freeze_backbone = true;
  cfg.task = tiny_task_spec();
  cfg.train.batch_size = 4;
  cfg.train.total_steps = 6;
  cfg.train.pretrain_steps = 4;
  cfg.train.lr_max = 1e-2;
  return cfg;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("scvm_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

bool has_nonzero_grad(const Tensor<float>& t) {
  if (!t.has_grad()) return false;
  for (float g : t.grad())
    if (g != 0.0f) return true;
  return false;
}

}  // namespace

TEST(Trainer, SameSeedGivesIdenticalRun) {
  const auto cfg = small_config();
  const auto a = train(cfg);
  const auto b = train(cfg);
  ASSERT_EQ(a.metrics.size(), cfg.train.pretrain_steps + cfg.train.total_steps);
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) EXPECT_EQ(a.metrics[i].to_json(), b.metrics[i].to_json());
  EXPECT_EQ(parameter_hash(a.model, ""), parameter_hash(b.model, ""));

  auto other = cfg;
  other.train.seed = 1;
  EXPECT_NE(parameter_hash(train(other).model, ""), parameter_hash(a.model, ""));
}

TEST(Trainer, MetricsSatisfyLossIdentity) {
  const auto result = train(small_config());
  for (const auto& r : result.metrics) {
    EXPECT_NEAR(r.loss_total, r.loss_task + r.lambda * r.loss_align, 1e-6) << r.phase << " " << r.step;
    EXPECT_GE(r.lr, 0.0);
  }
  EXPECT_EQ(result.metrics.front().phase, "pretrain");
  EXPECT_EQ(result.metrics.front().lambda, 0.0);
  EXPECT_EQ(result.metrics.back().phase, "main");
  EXPECT_EQ(result.metrics.back().lambda, 0.05);
}

TEST(Trainer, FrozenBackboneIsUntouchedByMainPhase) {
  const auto cfg = small_config();
  const auto before = prepare_model(cfg);
  const auto after = train(cfg).model;
  EXPECT_EQ(parameter_hash(after, "backbone."), parameter_hash(before, "backbone."));
  EXPECT_NE(parameter_hash(after, "scvm."), parameter_hash(before, "scvm."));
  for (const auto& p : after.parameters().all()) EXPECT_EQ(p.frozen, p.name.starts_with("backbone.")) << p.name;
}

TEST(Trainer, PretrainMovesBackbone) {
  auto cfg = small_config();
  const auto pretrained = prepare_model(cfg);
  cfg.train.pretrain_baseline = false;
  const auto fresh = prepare_model(cfg);
  EXPECT_NE(parameter_hash(pretrained, "backbone."), parameter_hash(fresh, "backbone."));
  EXPECT_EQ(parameter_hash(pretrained, "scvm."), parameter_hash(fresh, "scvm."));
}

TEST(Trainer, EvaluateIsPureAndRepeatable) {
  const auto cfg = small_config();
  const auto model = train(cfg).model;
  const auto hash = parameter_hash(model, "");
  const auto space = language_space(cfg);
  const auto a = evaluate(model, space, cfg.task, 17, 200);
  const auto b = evaluate(model, space, cfg.task, 17, 200);
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(parameter_hash(model, ""), hash);
  std::size_t total = 0;
  for (auto t : a.family_total) total += t;
  EXPECT_EQ(total, 200u);
}

TEST(Trainer, UntrainedModelIsAtChance) {
  const auto cfg = default_run_config();
  Model<float> model(cfg.model);
  const auto report = evaluate(model, language_space(cfg), cfg.task, 31337, 2000);
  EXPECT_NEAR(report.accuracy(), 1.0 / 12.0, 0.05);
}

TEST(Trainer, ZeroLambdaDropsAlignmentFromGraph) {
  const auto cfg = small_config();
  Model<float> model(cfg.model);
  const auto space = language_space(cfg);
  const auto s = generate_sample(3, cfg.task);
  auto off = forward_sample(model, s, space, cfg.task, 0.0, EncodeOptions{});
  EXPECT_EQ(graph_stats(off.total).nodes, graph_stats(off.task).nodes);
  auto on = forward_sample(model, s, space, cfg.task, 0.05, EncodeOptions{});
  EXPECT_GT(graph_stats(on.total).nodes, graph_stats(on.task).nodes);
}

TEST(Trainer, AblationsKeepParametersButCutGradients) {
  const auto cfg = small_config();
  Model<float> model(cfg.model);
  const auto count = model.parameters().scalar_count();
  const auto space = language_space(cfg);
  const auto s = generate_sample(4, cfg.task);

  EncodeOptions no_tag;
  no_tag.tag = false;
  model.parameters().zero_grad();
  forward_sample(model, s, space, cfg.task, 0.05, no_tag).total.backward();
  EXPECT_FALSE(has_nonzero_grad(model.parameters().get("scvm.layer1.tag.gate.weight").tensor));
  EXPECT_TRUE(has_nonzero_grad(model.parameters().get("scvm.layer1.tmsu.reduce.weight").tensor));

  EncodeOptions no_text;
  no_text.text_conditioning = false;
  model.parameters().zero_grad();
  auto fwd = forward_sample(model, s, space, cfg.task, 0.05, no_text);
  EXPECT_EQ(fwd.t.size(), cfg.model.backbone.dim);
  fwd.total.backward();
  EXPECT_TRUE(has_nonzero_grad(model.parameters().get("scvm.layer1.tmsu.reduce.weight").tensor));

  EncodeOptions plain;
  plain.scvm = false;
  model.parameters().zero_grad();
  forward_sample(model, s, space, cfg.task, 0.05, plain).total.backward();
  for (const auto& p : model.parameters().all())
    if (p.name.starts_with("scvm.")) EXPECT_FALSE(has_nonzero_grad(p.tensor)) << p.name;
  EXPECT_EQ(model.parameters().scalar_count(), count);
}

TEST(Trainer, TrainedMechanismRespondsToTextAndTokens) {
  const auto cfg = small_config();
  const auto model = train(cfg).model;
  const auto space = language_space(cfg);
  const auto s = generate_sample(5, cfg.task);
  const auto image = s.image_tensor<float>();
  NoGradGuard guard;
  EncodeOptions opt;
  opt.record = true;
  auto t1 = project_text(space.embed_question<float>({0, 1, 2, 3}), model.text_weight());
  auto t2 = project_text(space.embed_question<float>({4, 5, 6, 7}), model.text_weight());
  auto a = encode_with_scvm(model, image, t1, opt);
  auto b = encode_with_scvm(model, image, t2, opt);
  EXPECT_NE(a.memory.c.to_vector(), b.memory.c.to_vector());
  auto zero = encode_with_scvm(model, image, ops::scale(t1, 0.0f), opt);
  EXPECT_NE(zero.memory.c.to_vector(), a.memory.c.to_vector());
  const auto& alpha = a.traces.front().tag.alpha;
  EXPECT_NE(alpha[0], alpha[1]);
}

TEST(Trainer, OutputDirectoryLayout) {
  auto cfg = small_config();
  cfg.train.checkpoint_every = 2;
  cfg.train.eval_every = 3;
  cfg.train.eval_samples = 20;
  const auto dir = temp_dir("layout");
  train(cfg, dir);
  for (const char* f : {"config.json", "metrics.jsonl", "pretrain.scvm", "last.scvm", "final.scvm"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  std::ifstream in(dir / "metrics.jsonl");
  std::string line;
  std::size_t lines = 0, evals = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"phase", "step", "lr", "lambda", "loss_task", "loss_align", "loss_total"})
      EXPECT_TRUE(j.contains(k)) << k;
    evals += j.contains("eval_accuracy");
    ++lines;
  }
  EXPECT_EQ(lines, cfg.train.pretrain_steps + cfg.train.total_steps);
  EXPECT_EQ(evals, 3u);  // pretrain step 3, main steps 3 and 6
  const auto last = read_checkpoint(dir / "last.scvm");
  EXPECT_EQ(last.step, cfg.train.total_steps);
  EXPECT_EQ(load_run_config(dir / "config.json").train.total_steps, cfg.train.total_steps);
  std::filesystem::remove_all(dir);
}

TEST(Trainer, DivergenceLeavesLastCheckpointReadable) {
  auto cfg = small_config();
  cfg.train.pretrain_baseline = false;
  cfg.train.lr_max = 1e30;
  cfg.train.warmup_steps = 0;
  cfg.train.checkpoint_every = 1;
  const auto dir = temp_dir("diverge");
  EXPECT_THROW(train(cfg, dir), NumericalError);
  const auto ckpt = read_checkpoint(dir / "last.scvm");
  for (const auto& t : ckpt.tensors)
    for (float v : t.values) ASSERT_TRUE(std::isfinite(v)) << t.name;
  EXPECT_NO_THROW(restore_model(ckpt));
  std::filesystem::remove_all(dir);
}

TEST(Trainer, GateInspectionCoversEveryLayer) {
  const auto cfg = small_config();
  Model<float> model(cfg.model);
  const auto stats = inspect_gates(model, language_space(cfg), cfg.task, 9);
  ASSERT_EQ(stats.size(), cfg.model.backbone.layers);
  for (std::size_t l = 0; l < stats.size(); ++l) {
    EXPECT_EQ(stats[l].layer, l + 1);
    EXPECT_NEAR(stats[l].mean_alpha, 0.0998, 1e-3);
    EXPECT_EQ(stats[l].delta_linf, 0.0);
  }
  const auto dir = temp_dir("gates");
  std::filesystem::create_directories(dir);
  write_gate_csv(dir / "g.csv", stats);
  std::ifstream in(dir / "g.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "layer,mean_f,mean_i,mean_alpha,mem_l2,delta_linf");
  std::filesystem::remove_all(dir);
}

TEST(Trainer, WarmupMustFitSchedule) {
  auto cfg = default_run_config();
  cfg.train.total_steps = 10;
  cfg.train.warmup_steps = 11;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.train.warmup_steps = std::nullopt;
  EXPECT_LE(cfg.train.effective_warmup(), cfg.train.total_steps);
}
