#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mvdis/data.hpp"
#include "mvdis/losses.hpp"
#include "mvdis/model.hpp"

namespace mvdis {

enum class Precision { float32, float64 };

struct TrainConfig {
  int epochs = 100;
  int batch_size = 16;
  double learning_rate = 1e-4;
  double weight_decay = 1e-3;
  std::uint64_t seed = 0;
  /// Hidden width of every MLP; 0 means "same as the latent dim".
  Index hidden = 0;
  /// Number of initial batches used to calibrate gamma.
  int calibration_batches = 50;
  /// When set, gamma is taken as given instead of calibrated.
  std::optional<double> fixed_gamma;
  Precision precision = Precision::float64;
  LossConfig loss;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  LossBreakdown train;
  LossBreakdown val;
};

struct RunRecord {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_total = 0.0;
  double gamma = 1.0;
  std::string checkpoint_path;
  std::map<std::string, std::string> config_snapshot;
};

template <typename Scalar>
struct TrainResult {
  RunRecord record;
  ModelParams<Scalar> best;
};

template <typename Scalar>
struct BaselineResult {
  RunRecord record;
  EncoderParams<Scalar> best;
};

/// Seeds for the independent random streams of one run.
struct RunSeeds {
  std::uint64_t init = 0;
  std::uint64_t pairing_base = 0;  // epoch e uses pairing_base + e
  std::uint64_t validation = 0;
};
RunSeeds derive_run_seeds(std::uint64_t seed);

/// Full multi-view training with gamma calibration and selection of the
/// epoch with the lowest validation total. Writes the best checkpoint when
/// `checkpoint` is non-empty.
template <typename Scalar>
TrainResult<Scalar> train(const TrainConfig& config, const DatasetSplit& data,
                          const std::filesystem::path& checkpoint = {});

/// Contrastive baseline: one encoder of output width d trained with
/// InfoNCE SIM only, pairs sharing `anchor`. No decoder, lambda ignored.
template <typename Scalar>
BaselineResult<Scalar> run_baseline_cl(const TrainConfig& config, const DatasetSplit& data, PairAnchor anchor,
                                       const std::filesystem::path& checkpoint = {});

/// Key-value header, then one comma-separated row per epoch.
void write_run_record(const std::filesystem::path& path, const RunRecord& record);
std::string format_run_record(const RunRecord& record);

}  // namespace mvdis
