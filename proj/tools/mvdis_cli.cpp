#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mvdis/harness.hpp"

namespace fs = std::filesystem;
using namespace mvdis;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 1;

/// Flag values keyed like the config file so flags override file entries.
struct Overrides {
  std::map<std::string, std::string> values;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(flag, [this, key](const std::string& v) { values[key] = v; }, help);
  }
};

KeyValues merged(const std::string& config_path, const Overrides& overrides) {
  KeyValues kv;
  if (!config_path.empty()) kv = read_key_value_file(config_path);
  for (const auto& [k, v] : overrides.values) kv[k] = v;
  return kv;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text) || !out.flush()) throw IoError("cannot write " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void add_train_overrides(CLI::App* app, Overrides& o) {
  o.add(app, "--lambda", "lambda", "reconstruction weight in [0, 1]");
  o.add(app, "--principle", "principle", "infonce | cosine | vicreg");
  o.add(app, "--objective", "objective", "sim | sep | sim_sep");
  o.add(app, "--epochs", "epochs", "training epochs");
  o.add(app, "--batch-size", "batch_size", "pairs per batch");
  o.add(app, "--learning-rate", "learning_rate", "AdamW learning rate");
  o.add(app, "--weight-decay", "weight_decay", "AdamW weight decay");
  o.add(app, "--gamma", "gamma", "reconstruction scale, or 'auto' to calibrate");
  o.add(app, "--temperature", "temperature", "InfoNCE temperature");
  o.add(app, "--precision", "precision", "double | float");
  o.add(app, "--hidden", "hidden", "MLP hidden width (0 = latent dim)");
  o.add(app, "--probe-epochs", "probe_epochs", "linear probe epochs");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view latent disentanglement experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string data_dir;
  std::string out_dir;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic train pool and probe pool");
  std::optional<std::uint64_t> gen_seed;
  Overrides gen_over;
  gen->add_option("--seed", gen_seed, "generator seed")->required();
  gen->add_option("--out-dir", out_dir, "dataset directory")->required();
  gen->add_option("--config", config_path, "key = value file");
  gen_over.add(gen, "--samples-per-cell", "samples_per_cell", "training pool samples per label cell");
  gen_over.add(gen, "--probe-samples-per-cell", "probe_samples_per_cell", "probe pool samples per label cell");
  gen_over.add(gen, "--noise-std", "noise_std", "per-frame Gaussian noise");
  gen_over.add(gen, "--num-shared", "num_shared", "shared factor classes");
  gen_over.add(gen, "--num-private", "num_private", "private factor classes");
  gen_over.add(gen, "--steps", "steps", "time steps per latent");
  gen_over.add(gen, "--dim", "dim", "latent width");

  // train
  auto* train_cmd = app.add_subcommand("train", "train one configuration and probe it");
  Overrides train_over;
  train_cmd->add_option("--data-dir", data_dir, "dataset directory")->required();
  train_cmd->add_option("--out-dir", out_dir, "run directory")->required();
  train_cmd->add_option("--config", config_path, "key = value file");
  train_over.add(train_cmd, "--seed", "seed", "run seed");
  add_train_overrides(train_cmd, train_over);

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "run the principle x objective x lambda grid");
  Overrides sweep_over;
  bool dedupe = false;
  sweep_cmd->add_option("--data-dir", data_dir, "dataset directory")->required();
  sweep_cmd->add_option("--out-dir", out_dir, "output directory for results.csv")->required();
  sweep_cmd->add_option("--config", config_path, "key = value file");
  sweep_over.add(sweep_cmd, "--seed", "seeds", "replicate seed");
  sweep_over.add(sweep_cmd, "--seeds", "seeds", "comma-separated replicate seeds");
  sweep_over.add(sweep_cmd, "--principles", "principles", "comma-separated principles");
  sweep_over.add(sweep_cmd, "--objectives", "objectives", "comma-separated objectives");
  sweep_over.add(sweep_cmd, "--lambdas", "lambdas", "comma-separated lambdas");
  sweep_over.add(sweep_cmd, "--parallelism", "parallelism", "concurrent runs");
  sweep_cmd->add_flag("--dedupe-lambda1", dedupe, "run lambda = 1 once per seed");
  add_train_overrides(sweep_cmd, sweep_over);

  // baselines
  auto* base_cmd = app.add_subcommand("baselines", "raw, reconstruction-only and contrastive baselines");
  Overrides base_over;
  base_cmd->add_option("--data-dir", data_dir, "dataset directory")->required();
  base_cmd->add_option("--out-dir", out_dir, "output directory for baselines.csv")->required();
  base_cmd->add_option("--config", config_path, "key = value file");
  base_over.add(base_cmd, "--seed", "seed", "run seed");
  add_train_overrides(base_cmd, base_over);

  // report
  auto* report_cmd = app.add_subcommand("report", "derive plot data from a results table");
  std::string results_path;
  report_cmd->add_option("--results", results_path, "results table")->required();
  report_cmd->add_option("--out-dir", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  // Configuration is resolved and validated before any compute; failures
  // here are usage errors.
  GenDataConfig gen_config;
  TrainConfig train_config;
  ProbeConfig probe_config;
  SweepSpec sweep_spec;
  try {
    if (*gen) {
      KeyValues kv = merged(config_path, gen_over);
      kv["seed"] = std::to_string(*gen_seed);
      apply_data_keys(kv, gen_config);
    } else if (*train_cmd || *base_cmd) {
      const KeyValues kv = merged(config_path, *train_cmd ? train_over : base_over);
      apply_train_keys(kv, train_config);
      apply_probe_keys(kv, probe_config);
      train_config.validate();
      probe_config.validate();
    } else if (*sweep_cmd) {
      KeyValues kv = merged(config_path, sweep_over);
      if (dedupe) kv["dedupe_lambda1"] = "true";
      apply_sweep_keys(kv, sweep_spec);
      sweep_spec.validate();
    }
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }

  try {
    if (*gen) {
      const std::string digest = generate_dataset(gen_config, out_dir);
      std::cout << "digest " << digest << "\n";
    } else if (*train_cmd) {
      const ExperimentData data = load_dataset(data_dir);
      const fs::path out(out_dir);
      ensure_dir(out);
      KeyValues snapshot = train_config_snapshot(train_config);
      for (const auto& [k, v] : probe_config_snapshot(probe_config)) snapshot[k] = v;
      write_text(out / "config_snapshot.txt", format_key_values(snapshot));
      const RunOutput run = run_configuration(train_config, probe_config, data, out / "model.mvck");
      RunRecord record = run.record;
      record.config_snapshot = snapshot;
      write_run_record(out / "run_record.txt", record);
      write_results(out / "results.csv", {run.row});
      std::cout << format_result_row(run.row) << "\n";
    } else if (*sweep_cmd) {
      const ExperimentData data = load_dataset(data_dir);
      const fs::path results = fs::path(out_dir) / "results.csv";
      const auto summary = run_sweep(sweep_spec, data, results, [](const ResultRow& row) {
        std::cerr << "done " << row.run_id << " (" << row.wall_time_s << " s)\n";
      });
      std::cout << "planned " << summary.planned << ", skipped " << summary.skipped << ", completed "
                << summary.completed << "\n";
    } else if (*base_cmd) {
      const ExperimentData data = load_dataset(data_dir);
      const fs::path results = fs::path(out_dir) / "baselines.csv";
      KeyValues digest_kv = train_config_snapshot(train_config);
      for (const auto& [k, v] : probe_config_snapshot(probe_config)) digest_kv[k] = v;
      digest_kv["dataset"] = data.digest;
      ResultsWriter writer(results, fnv1a_hex(format_key_values(digest_kv)));
      for (const auto& row : run_baselines(train_config, probe_config, data, train_config.seed)) {
        if (!writer.contains(row.run_id)) writer.append(row);
        std::cout << format_result_row(row) << "\n";
      }
    } else if (*report_cmd) {
      const auto rows = read_results(results_path);
      const auto files = write_report(rows, out_dir);
      std::cout << files.scatter.string() << "\n" << files.margins.string() << "\n" << files.deltas.string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
