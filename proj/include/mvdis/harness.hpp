#pragma once

// Experiment orchestration shared by the command-line tool and the tests:
// dataset generation, single runs, the configuration sweep and baselines.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mvdis/config.hpp"
#include "mvdis/probe.hpp"
#include "mvdis/results.hpp"
#include "mvdis/training.hpp"

namespace mvdis {

struct GenDataConfig {
  SyntheticConfig synthetic;  // samples_per_cell is the training pool size per cell
  int probe_samples_per_cell = 10;
};

/// Training pool and probe pool, each an embeddings file plus labels.
struct ExperimentData {
  std::vector<FactorSample> train_pool;
  std::vector<FactorSample> probe_pool;
  std::string digest;
};

/// Generates one synthetic dataset and divides every cell between the two
/// pools. Writes train_pool.mvle, train_pool_labels.csv, probe_pool.mvle and
/// probe_pool_labels.csv into `dir` and returns the content digest.
std::string generate_dataset(const GenDataConfig& config, const std::filesystem::path& dir);
ExperimentData load_dataset(const std::filesystem::path& dir);
/// Digest over the bytes of the four dataset files.
std::string dataset_digest(const std::filesystem::path& dir);

inline constexpr SplitFractions kTrainingFractions{0.7, 0.2, 0.1};
inline constexpr SplitFractions kProbeFractions{0.6, 0.2, 0.2};

void apply_probe_keys(const KeyValues& values, ProbeConfig& config);
KeyValues probe_config_snapshot(const ProbeConfig& config);
void apply_data_keys(const KeyValues& values, GenDataConfig& config);

/// Identifier of one sweep cell, e.g. "cosine-sep-l0.6-s0".
std::string run_id(const LossConfig& loss, std::uint64_t seed);

struct RunOutput {
  ResultRow row;
  RunRecord record;
};

/// Trains one configuration at its precision, evaluates the probes and
/// fills a results row. The probe seed follows the run seed. Writes the
/// best checkpoint when `checkpoint` is non-empty.
RunOutput run_configuration(const TrainConfig& config, const ProbeConfig& probe, const ExperimentData& data,
                            const std::filesystem::path& checkpoint = {});

struct SweepSpec {
  std::vector<Principle> principles{Principle::infonce, Principle::cosine, Principle::vicreg};
  std::vector<Objective> objectives{Objective::sim, Objective::sep, Objective::sim_sep};
  std::vector<double> lambdas{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<std::uint64_t> seeds{0};
  TrainConfig base;
  ProbeConfig probe;
  int parallelism = 1;
  bool dedupe_lambda1 = false;

  void validate() const;
  /// One training configuration per grid cell, seeds outermost.
  std::vector<TrainConfig> expand() const;
  /// Canonical text of every value that influences results.
  std::string canonical_text() const;
};

void apply_sweep_keys(const KeyValues& values, SweepSpec& spec);

struct SweepSummary {
  std::size_t planned = 0;
  std::size_t skipped = 0;
  std::size_t completed = 0;
};

/// Runs every grid cell missing from `results` with at most
/// spec.parallelism concurrent runs. Resumes from an existing table whose
/// digest matches the spec and dataset. `on_row` is called after each row
/// is appended, from the worker thread, under no lock.
SweepSummary run_sweep(const SweepSpec& spec, const ExperimentData& data, const std::filesystem::path& results,
                       const std::function<void(const ResultRow&)>& on_row = {});
std::string sweep_digest(const SweepSpec& spec, const std::string& data_digest);

/// Raw-feature probes, reconstruction-only training, and the two
/// contrastive single-encoder baselines anchored on each factor; one row
/// each per seed, labelled with principle "baseline".
std::vector<ResultRow> run_baselines(const TrainConfig& base, const ProbeConfig& probe, const ExperimentData& data,
                                     std::uint64_t seed);

}  // namespace mvdis
