// Command-line front end: train, eval, gradcheck, inspect, init, dump-data.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 numerical
// failure (non-finite loss, failed gradient check), 3 I/O failure.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "scvm/checkpoint.hpp"
#include "scvm/config.hpp"
#include "scvm/gradcheck_suite.hpp"
#include "scvm/trainer.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitIo = 3;

struct Ablations {
  bool disable_text = false;
  bool disable_tag = false;
  std::optional<double> lambda;

  void add_to(CLI::App* cmd, bool with_lambda) {
    cmd->add_flag("--disable-tmsu-text", disable_text, "Feed t = 0 to the memory update");
    cmd->add_flag("--disable-tag", disable_tag, "Skip token modulation (identity)");
    if (with_lambda) cmd->add_option("--lambda", lambda, "Alignment weight (0 drops the term)")->check(CLI::NonNegativeNumber);
  }
  void apply(scvm::MechanismConfig& m) const {
    if (disable_text) m.text_conditioning = false;
    if (disable_tag) m.tag_enabled = false;
  }
};

int run_train(const std::string& config_path, const std::string& out_dir, const Ablations& ab,
              std::optional<bool> pretrain, std::optional<std::uint64_t> seed) {
  scvm::RunConfig cfg = config_path.empty() ? scvm::default_run_config() : scvm::load_run_config(config_path);
  ab.apply(cfg.model.mechanism);
  if (ab.lambda) cfg.train.lambda = *ab.lambda;
  if (pretrain) cfg.train.pretrain_baseline = *pretrain;
  if (seed) {
    cfg.train.seed = *seed;
    cfg.model.init_seed = *seed;
  }
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  auto result = scvm::train(cfg, out_dir);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto& last = result.metrics.back();
  std::cout << "trained " << result.metrics.size() << " steps in " << secs << " s; final loss_total "
            << last.loss_total << "; checkpoint " << (std::filesystem::path(out_dir) / "final.scvm").string()
            << '\n';
  return 0;
}

int run_eval(const std::string& ckpt_path, std::size_t n, std::uint64_t seed, const Ablations& ab) {
  const auto ckpt = scvm::read_checkpoint(ckpt_path);
  auto model = scvm::restore_model(ckpt);
  ab.apply(model.mechanism());
  const auto report = scvm::evaluate(model, scvm::language_space(ckpt.config), ckpt.config.task, seed, n);
  std::cout << report.to_json().dump(2) << '\n';
  return 0;
}

int run_gradcheck(std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const auto results = scvm::run_gradcheck_suite(seed);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-24s %-12s max_rel_err=%.3e coords=%zu%s%s\n", r.name.c_str(), scvm::to_string(r.status),
                r.max_relative_error, r.coordinates, r.detail.empty() ? "" : "  ", r.detail.c_str());
    ok = ok && r.passed();
  }
  std::printf("%zu checks, %s, %.2f s\n", results.size(), ok ? "all passed" : "FAILURES", secs);
  return ok ? 0 : kExitNumerical;
}

int run_inspect(const std::string& ckpt_path, std::uint64_t seed, const std::string& out, const Ablations& ab) {
  const auto ckpt = scvm::read_checkpoint(ckpt_path);
  auto model = scvm::restore_model(ckpt);
  ab.apply(model.mechanism());
  const auto stats = scvm::inspect_gates(model, scvm::language_space(ckpt.config), ckpt.config.task, seed);
  scvm::write_gate_csv(out, stats);
  std::cout << "wrote " << stats.size() << " layers to " << out << '\n';
  return 0;
}

int run_init(const std::string& config_path, const std::string& out) {
  scvm::RunConfig cfg = config_path.empty() ? scvm::default_run_config() : scvm::load_run_config(config_path);
  scvm::Model<float> model(cfg.model);
  scvm::write_checkpoint(out, scvm::capture_checkpoint(model, nullptr, cfg, "init", 0));
  std::cout << "wrote untrained checkpoint " << out << '\n';
  return 0;
}

int run_dump(const std::string& config_path, std::uint64_t seed, std::size_t n, const std::string& out) {
  scvm::RunConfig cfg = config_path.empty() ? scvm::default_run_config() : scvm::load_run_config(config_path);
  std::vector<scvm::Sample> samples;
  samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) samples.push_back(scvm::dataset_sample(seed, i, cfg.task));
  scvm::write_dataset(out, samples);
  std::cout << "wrote " << n << " samples to " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stateful cross-layer memory on a miniature vision transformer"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt_path, out_path;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> train_seed;
  std::optional<bool> pretrain;

  auto* train = app.add_subcommand("train", "Train (baseline pretrain, then the mechanism)");
  Ablations train_ab;
  train->add_option("--config", config_path, "JSON run config (defaults if omitted)");
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--seed", train_seed, "Override train.seed and the parameter init seed");
  train->add_flag("--pretrain-baseline,!--no-pretrain-baseline", pretrain,
                  "Train backbone + head without the mechanism first (default on)");
  train_ab.add_to(train, true);

  auto* eval = app.add_subcommand("eval", "Accuracy on a generated dataset");
  Ablations eval_ab;
  eval->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  eval->add_option("--n", n, "Number of samples")->required()->check(CLI::PositiveNumber);
  eval->add_option("--seed", seed, "Dataset seed")->required();
  eval_ab.add_to(eval, false);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks in 64-bit mode");
  std::uint64_t gc_seed = 0;
  gradcheck->add_option("--seed", gc_seed, "Seed of the random check inputs");

  auto* inspect = app.add_subcommand("inspect", "Per-layer gate statistics as CSV");
  Ablations inspect_ab;
  inspect->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  inspect->add_option("--seed", seed, "Sample seed")->required();
  inspect->add_option("--out", out_path, "CSV path")->required();
  inspect_ab.add_to(inspect, false);

  auto* init = app.add_subcommand("init", "Write an untrained checkpoint");
  init->add_option("--config", config_path, "JSON run config");
  init->add_option("--out", out_path, "Checkpoint path")->required();

  auto* dump = app.add_subcommand("dump-data", "Write generated samples as a record-framed binary file");
  dump->add_option("--config", config_path, "JSON run config");
  dump->add_option("--seed", seed, "Dataset seed")->required();
  dump->add_option("--n", n, "Number of samples")->required()->check(CLI::PositiveNumber);
  dump->add_option("--out", out_path, "Output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return run_train(config_path, out_dir, train_ab, pretrain, train_seed);
    if (*eval) return run_eval(ckpt_path, n, seed, eval_ab);
    if (*gradcheck) return run_gradcheck(gc_seed);
    if (*inspect) return run_inspect(ckpt_path, seed, out_path, inspect_ab);
    if (*init) return run_init(config_path, out_path);
    if (*dump) return run_dump(config_path, seed, n, out_path);
  } catch (const scvm::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const scvm::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
