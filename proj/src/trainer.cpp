#include "scvm/trainer.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "scvm/objective.hpp"
#include "scvm/ops.hpp"
#include "scvm/rng.hpp"

namespace scvm {

using nlohmann::json;

namespace {

// Stream ids for derive_seed(cfg.train.seed, ...).
constexpr std::uint64_t kPretrainStream = 1;
constexpr std::uint64_t kMainStream = 2;

std::size_t argmax(std::span<const float> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

class JsonlSink {
 public:
  explicit JsonlSink(const std::filesystem::path& path) : path_(path), out_(path, std::ios::trunc) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  }
  void write(const MetricsRecord& r) {
    out_ << r.to_json().dump() << '\n';
    out_.flush();
    if (!out_) throw IoError("write failed: " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

}  // namespace

json MetricsRecord::to_json() const {
  json j = {{"phase", phase},         {"step", step},           {"lr", lr},
            {"lambda", lambda},       {"loss_task", loss_task}, {"loss_align", loss_align},
            {"loss_total", loss_total}};
  if (eval_accuracy) j["eval_accuracy"] = *eval_accuracy;
  return j;
}

double EvalReport::family_accuracy(Family f) const {
  const auto k = static_cast<std::size_t>(f);
  return family_total[k] ? static_cast<double>(family_correct[k]) / static_cast<double>(family_total[k]) : 0.0;
}

json EvalReport::to_json() const {
  json families = json::object();
  for (std::size_t k = 0; k < kNumFamilies; ++k) {
    const auto f = static_cast<Family>(k);
    families[std::string(family_name(f))] = {{"n", family_total[k]}, {"accuracy", family_accuracy(f)}};
  }
  return {{"n", n}, {"accuracy", accuracy()}, {"families", families}};
}

EvalReport evaluate(const Model<float>& model, const ProxyLanguageSpace& space, const TaskSpec& task,
                    std::uint64_t dataset_seed, std::size_t n) {
  if (n == 0) throw std::invalid_argument("evaluate: n must be >= 1");
  NoGradGuard no_grad;
  const auto options = EncodeOptions::from(model.config().mechanism);
  EvalReport report;
  for (std::size_t i = 0; i < n; ++i) {
    const Sample s = dataset_sample(dataset_seed, i, task);
    const auto t = project_text(space.embed_question<float>(s.question_tokens), model.text_weight());
    const auto enc = encode_with_scvm(model, s.image_tensor<float>(), t, options);
    const auto logits = task_logits(enc.features, t, model.head());
    const bool ok = argmax(logits.data()) == s.answer_id;
    const auto k = static_cast<std::size_t>(s.family);
    ++report.n;
    ++report.family_total[k];
    if (ok) {
      ++report.correct;
      ++report.family_correct[k];
    }
  }
  return report;
}

std::vector<MetricsRecord> run_phase(Model<float>& model, AdamW<float>& optimizer, const ProxyLanguageSpace& space,
                                     const RunConfig& cfg, const PhaseSpec& spec, const PhaseHooks& hooks) {
  const std::size_t batch = cfg.train.batch_size;
  const float inv_batch = 1.0f / static_cast<float>(batch);
  auto& store = model.parameters();
  std::vector<MetricsRecord> records;
  records.reserve(spec.steps);

  for (std::size_t s = 0; s < spec.steps; ++s) {
    const double lr = cosine_lr(s, spec.lr_max, spec.warmup, spec.steps);
    store.zero_grad();
    double task_sum = 0.0, align_sum = 0.0, total_sum = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const Sample sample = dataset_sample(spec.data_seed, s * batch + b, cfg.task);
      auto fwd = forward_sample(model, sample, space, cfg.task, spec.lambda, spec.encode);
      task_sum += fwd.task.item();
      align_sum += fwd.align.item();
      total_sum += fwd.total.item();
      if (fwd.total.requires_grad()) ops::scale(fwd.total, inv_batch).backward();
    }
    optimizer.step(store, lr);

    MetricsRecord r;
    r.phase = spec.name;
    r.step = s;
    r.lr = lr;
    r.lambda = spec.encode.scvm ? spec.lambda : 0.0;
    r.loss_task = task_sum / static_cast<double>(batch);
    r.loss_align = align_sum / static_cast<double>(batch);
    r.loss_total = total_sum / static_cast<double>(batch);
    const std::size_t done = s + 1;
    if (hooks.eval_every && done % hooks.eval_every == 0) {
      r.eval_accuracy = evaluate(model, space, cfg.task, hooks.eval_seed, hooks.eval_samples).accuracy();
    }
    if (hooks.on_metrics) hooks.on_metrics(r);
    records.push_back(std::move(r));
    if (hooks.on_checkpoint &&
        ((hooks.checkpoint_every && done % hooks.checkpoint_every == 0) || done == spec.steps)) {
      hooks.on_checkpoint(done, model, optimizer);
    }
  }
  return records;
}

PhaseSpec pretrain_phase(const RunConfig& cfg) {
  PhaseSpec p;
  p.name = "pretrain";
  p.steps = cfg.train.pretrain_steps;
  p.warmup = cfg.train.effective_pretrain_warmup();
  p.lr_max = cfg.train.pretrain_lr;
  p.lambda = 0.0;
  p.encode = EncodeOptions::from(cfg.model.mechanism);
  p.encode.scvm = false;
  p.data_seed = derive_seed(cfg.train.seed, kPretrainStream);
  return p;
}

PhaseSpec main_phase(const RunConfig& cfg) {
  PhaseSpec p;
  p.name = "main";
  p.steps = cfg.train.total_steps;
  p.warmup = cfg.train.effective_warmup();
  p.lr_max = cfg.train.lr_max;
  p.lambda = cfg.train.lambda;
  p.encode = EncodeOptions::from(cfg.model.mechanism);
  p.data_seed = derive_seed(cfg.train.seed, kMainStream);
  return p;
}

namespace {

AdamW<float> make_optimizer(const TrainConfig& t) {
  return AdamW<float>(AdamWConfig{t.weight_decay, t.beta1, t.beta2, t.eps});
}

}  // namespace

ProxyLanguageSpace language_space(const RunConfig& cfg) {
  return ProxyLanguageSpace(cfg.model.llm_dim, cfg.task.language_seed);
}

Model<float> prepare_model(const RunConfig& cfg, std::vector<MetricsRecord>* metrics, const PhaseHooks& hooks) {
  Model<float> model(cfg.model);
  if (cfg.train.pretrain_baseline && cfg.train.pretrain_steps > 0) {
    model.parameters().set_frozen("backbone.", false);
    auto opt = make_optimizer(cfg.train);
    PhaseHooks pre = hooks;
    pre.on_checkpoint = nullptr;
    auto records = run_phase(model, opt, language_space(cfg), cfg, pretrain_phase(cfg), pre);
    if (metrics) metrics->insert(metrics->end(), records.begin(), records.end());
  }
  model.apply_freeze();
  return model;
}

TrainResult train(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  std::optional<JsonlSink> sink;
  if (out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir->string() + ": " + ec.message());
    std::ofstream conf(*out_dir / "config.json", std::ios::trunc);
    if (!conf) throw IoError("cannot write " + (*out_dir / "config.json").string());
    conf << to_json(cfg).dump(2) << '\n';
    sink.emplace(*out_dir / "metrics.jsonl");
  }

  PhaseHooks hooks;
  hooks.eval_every = cfg.train.eval_every;
  hooks.eval_samples = cfg.train.eval_samples;
  hooks.eval_seed = cfg.train.eval_seed;
  if (sink) hooks.on_metrics = [&](const MetricsRecord& r) { sink->write(r); };

  std::vector<MetricsRecord> metrics;
  Model<float> model = prepare_model(cfg, &metrics, hooks);
  auto opt = make_optimizer(cfg.train);
  if (out_dir) {
    if (cfg.train.pretrain_baseline && cfg.train.pretrain_steps > 0) {
      write_checkpoint(*out_dir / "pretrain.scvm",
                       capture_checkpoint(model, nullptr, cfg, "pretrain", cfg.train.pretrain_steps));
    }
    // A good checkpoint exists before the first main-phase update.
    write_checkpoint(*out_dir / "last.scvm", capture_checkpoint(model, &opt, cfg, "main", 0));
    hooks.checkpoint_every = cfg.train.checkpoint_every;
    hooks.on_checkpoint = [&](std::size_t step, const Model<float>& m, const AdamW<float>& o) {
      write_checkpoint(*out_dir / "last.scvm", capture_checkpoint(m, &o, cfg, "main", step));
    };
  }
  auto records = run_phase(model, opt, language_space(cfg), cfg, main_phase(cfg), hooks);
  metrics.insert(metrics.end(), records.begin(), records.end());
  if (out_dir) {
    write_checkpoint(*out_dir / "final.scvm", capture_checkpoint(model, &opt, cfg, "main", cfg.train.total_steps));
  }
  return TrainResult{std::move(model), std::move(metrics)};
}

std::vector<GateStats> inspect_gates(const Model<float>& model, const ProxyLanguageSpace& space,
                                     const TaskSpec& task, std::uint64_t sample_seed) {
  NoGradGuard no_grad;
  const Sample s = generate_sample(sample_seed, task);
  auto options = EncodeOptions::from(model.config().mechanism);
  options.scvm = true;
  options.record = true;
  const auto t = project_text(space.embed_question<float>(s.question_tokens), model.text_weight());
  return encode_with_scvm(model, s.image_tensor<float>(), t, options).memory.recorded_gates;
}

void write_gate_csv(const std::filesystem::path& path, const std::vector<GateStats>& stats) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "layer,mean_f,mean_i,mean_alpha,mem_l2,delta_linf\n" << std::setprecision(9);
  for (const auto& g : stats) {
    out << g.layer << ',' << g.mean_f << ',' << g.mean_i << ',' << g.mean_alpha << ',' << g.mem_l2 << ','
        << g.delta_linf << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::uint64_t parameter_hash(const Model<float>& model, std::string_view prefix) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& p : model.parameters().all()) {
    if (!p.name.starts_with(prefix)) continue;
    for (float v : p.tensor.data()) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int i = 0; i < 4; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 0x100000001b3ull;
      }
    }
  }
  return h;
}

}  // namespace scvm
