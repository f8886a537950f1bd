#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "reatt/checkpoint.hpp"
#include "reatt/config.hpp"
#include "reatt/diagnostics.hpp"
#include "reatt/errors.hpp"
#include "reatt/metrics.hpp"
#include "reatt/selftest.hpp"
#include "reatt/trainer.hpp"

namespace {

using reatt::ExperimentConfig;

// The CLI trains in float64: desk-scale runs are small enough that exact,
// easily cross-checked arithmetic beats the speed of float32.
using Scalar = double;

ExperimentConfig config_with_overrides(const nlohmann::json& base,
                                       const std::vector<std::string>& overrides) {
  nlohmann::json tree = base;
  for (const auto& o : overrides) reatt::apply_override(tree, o);
  return reatt::config_from_json(tree);
}

int run_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& resume) {
  ExperimentConfig cfg = reatt::load_config_with_overrides(config_path, overrides);
  std::filesystem::create_directories(cfg.output_dir);
  const std::string metrics_path = cfg.output_dir + "/metrics.jsonl";
  const std::string ckpt_path = cfg.output_dir + "/checkpoint.bin";

  auto data = reatt::ingest_dataset<Scalar>(cfg.dataset);
  reatt::Network<Scalar> net(cfg.network, cfg.train.seed);
  reatt::Trainer<Scalar> trainer(net, cfg.train, cfg.reward);

  int start_epoch = 0;
  if (!resume.empty()) {
    auto header = reatt::restore_checkpoint(resume, net, &trainer);
    start_epoch = header.next_epoch;
    std::cout << "resumed " << resume << " at epoch " << start_epoch << "\n";
  } else {
    std::filesystem::remove(metrics_path);
  }

  auto sink = [&](const reatt::MetricRecord& rec) {
    reatt::append_metric(metrics_path, rec);
    reatt::save_checkpoint(ckpt_path, cfg, net, trainer, rec.epoch + 1);
    std::cout << "epoch " << rec.epoch << " train_acc " << reatt::format_real(rec.train_acc)
              << " val_acc " << reatt::format_real(rec.val_acc) << " l_c "
              << reatt::format_real(rec.l_c) << "\n";
  };
  trainer.train(data, sink, start_epoch);

  auto full_history = reatt::read_metrics(metrics_path);
  if (cfg.plots.attention || cfg.plots.q_r) {
    auto snaps = reatt::snapshot_attention(net, data.val, cfg.train.batch_size);
    auto files = reatt::emit_plots(full_history, snaps, cfg.output_dir, cfg.plots);
    std::cout << files.size() << " plot files in " << cfg.output_dir << "\n";
  }
  if (!full_history.empty()) {
    std::cout << "final val_acc " << reatt::format_real(full_history.back().val_acc) << "\n";
  }
  return 0;
}

int run_eval(const std::string& ckpt, const std::vector<std::string>& overrides) {
  auto header = reatt::read_checkpoint_header(ckpt);
  ExperimentConfig cfg = config_with_overrides(reatt::to_json(header.config), overrides);
  auto data = reatt::ingest_dataset<Scalar>(cfg.dataset);
  reatt::Network<Scalar> net(cfg.network, cfg.train.seed);
  reatt::restore_checkpoint(ckpt, net, static_cast<reatt::Trainer<Scalar>*>(nullptr));
  reatt::Trainer<Scalar> trainer(net, cfg.train, cfg.reward);
  const double val = trainer.evaluate(data.val, cfg.train.batch_size);
  const double train = trainer.evaluate(data.train, cfg.train.batch_size);
  std::cout << "train_acc " << reatt::format_real(train) << "\n";
  std::cout << "val_acc " << reatt::format_real(val) << "\n";
  return 0;
}

int run_ablate(const std::string& ckpt, const std::vector<std::string>& overrides) {
  auto header = reatt::read_checkpoint_header(ckpt);
  ExperimentConfig cfg = config_with_overrides(reatt::to_json(header.config), overrides);
  auto data = reatt::ingest_dataset<Scalar>(cfg.dataset);
  reatt::Network<Scalar> net(cfg.network, cfg.train.seed);
  reatt::restore_checkpoint(ckpt, net, static_cast<reatt::Trainer<Scalar>*>(nullptr));
  auto rows = reatt::ablation_report(net, data.val, cfg.reward, cfg.train.batch_size);
  std::cout << "block mean_reward mean_p_full mean_p_bypassed accuracy\n";
  for (const auto& r : rows) {
    std::cout << reatt::to_string(r.id) << " " << reatt::format_real(r.mean_reward) << " "
              << reatt::format_real(r.mean_p_full) << " "
              << reatt::format_real(r.mean_p_bypassed) << " "
              << reatt::format_real(r.accuracy_full) << "\n";
  }
  return 0;
}

int run_plot(const std::string& history_path, const std::string& ckpt,
             std::string output_dir) {
  auto history = reatt::read_metrics(history_path);
  if (output_dir.empty()) {
    auto parent = std::filesystem::path(history_path).parent_path();
    output_dir = parent.empty() ? "." : parent.string();
  }
  std::vector<reatt::AttentionSnapshot> snaps;
  reatt::PlotConfig plots;
  if (!ckpt.empty()) {
    auto header = reatt::read_checkpoint_header(ckpt);
    ExperimentConfig cfg = header.config;
    auto data = reatt::ingest_dataset<Scalar>(cfg.dataset);
    reatt::Network<Scalar> net(cfg.network, cfg.train.seed);
    reatt::restore_checkpoint(ckpt, net, static_cast<reatt::Trainer<Scalar>*>(nullptr));
    snaps = reatt::snapshot_attention(net, data.val, cfg.train.batch_size);
    plots = cfg.plots;
  } else {
    plots.attention = false;
  }
  auto files = reatt::emit_plots(history, snaps, output_dir, plots);
  std::cout << files.size() << " plot files in " << output_dir << "\n";
  return 0;
}

int run_selftest() {
  auto results = reatt::run_selftests();
  int failures = 0;
  for (const auto& r : results) {
    if (r.passed) {
      std::cout << "ok   " << r.name << "\n";
    } else {
      std::cout << "FAIL " << r.name << ": " << r.detail << "\n";
      ++failures;
    }
  }
  std::cout << (results.size() - static_cast<size_t>(failures)) << "/" << results.size()
            << " checks passed\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reinforced-attention image classifiers at desk scale"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train a model from a config file");
  std::string config_path;
  std::string resume;
  std::vector<std::string> train_overrides;
  train->add_option("--config", config_path, "JSON config path")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("overrides", train_overrides, "key=value config overrides");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt;
  std::vector<std::string> eval_overrides;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  eval->add_option("overrides", eval_overrides, "key=value config overrides");

  auto* ablate = app.add_subcommand("ablate", "per-block bypass reward report");
  std::string ablate_ckpt;
  std::vector<std::string> ablate_overrides;
  ablate->add_option("--checkpoint", ablate_ckpt, "checkpoint path")->required();
  ablate->add_option("overrides", ablate_overrides, "key=value config overrides");

  auto* plot = app.add_subcommand("plot", "render metric history to plots");
  std::string history_path;
  std::string plot_ckpt;
  std::string plot_out;
  plot->add_option("--history", history_path, "metrics.jsonl path")->required();
  plot->add_option("--checkpoint", plot_ckpt, "checkpoint for attention snapshots");
  plot->add_option("--output", plot_out, "output directory (default: history's)");

  auto* selftest = app.add_subcommand("selftest", "run the built-in oracle checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return run_train(config_path, train_overrides, resume);
    if (eval->parsed()) return run_eval(eval_ckpt, eval_overrides);
    if (ablate->parsed()) return run_ablate(ablate_ckpt, ablate_overrides);
    if (plot->parsed()) return run_plot(history_path, plot_ckpt, plot_out);
    if (selftest->parsed()) return run_selftest();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
