#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mvdis/data.hpp"
#include "mvdis/model.hpp"

namespace mvdis {

struct ProbeConfig {
  double dropout_rate = 0.5;
  int epochs = 30;
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  int batch_size = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Mean-pooled frozen features of one sample set, one row per sample.
struct FeatureSet {
  LatentMatrix z_p;     // (N, d/2)
  LatentMatrix z_s;     // (N, d/2)
  LatentMatrix concat;  // (N, d)
};

/// Runs the frozen encoders without recording a graph.
template <typename Scalar>
FeatureSet extract_features(const ModelParams<Scalar>& params, std::span<const FactorSample> samples);
template <typename Scalar>
LatentMatrix extract_encoder_features(const EncoderParams<Scalar>& params, std::span<const FactorSample> samples);
/// Mean over time of the input latents themselves.
LatentMatrix pooled_raw_features(std::span<const FactorSample> samples);

struct LinearClassifier {
  LatentMatrix weight;  // (features, classes)
  Eigen::RowVectorXd bias;

  std::vector<int> predict(const LatentMatrix& features) const;
  double accuracy(const LatentMatrix& features, std::span<const int> labels) const;
};

struct LabeledFeatures {
  LatentMatrix features;
  std::vector<int> labels;
};

/// Affine softmax classifier trained with cross-entropy and input dropout
/// (training only), AdamW, and selection of the epoch with the best
/// validation accuracy (earliest on ties).
LinearClassifier train_probe(const LabeledFeatures& train, const LabeledFeatures& val, int num_classes,
                             const ProbeConfig& config);

enum class ProbeTask { shared_task = 0, private_task = 1 };
enum class FeatureKind { z_p = 0, z_s = 1, concat = 2 };

struct ProbeReport {
  double acc[2][3] = {};  // [task][feature]
  double delta_private = 0.0;  // acc[private][z_p] - acc[private][z_s]
  double delta_shared = 0.0;   // acc[shared][z_s] - acc[shared][z_p]
  double recon_mse = 0.0;

  double accuracy(ProbeTask task, FeatureKind kind) const {
    return acc[static_cast<int>(task)][static_cast<int>(kind)];
  }
  void fill_margins();
};

/// Feature sets for the probe train / val / test partitions.
struct ProbeFeatures {
  FeatureSet train, val, test;
};

std::vector<int> labels_for(std::span<const FactorSample> samples, ProbeTask task);
int class_count(const DatasetSplit& split, ProbeTask task);

/// Trains the six (task, feature) probes and fills accuracies and margins.
/// The probe seed depends on the task only, so relabeling the subspaces
/// permutes the accuracies exactly.
ProbeReport probe_report_from_features(const ProbeFeatures& features, const DatasetSplit& split,
                                       const ProbeConfig& config);

/// Test accuracy of a single probe per task on one feature family; used for
/// baselines that have no subspaces. Returns {shared_task, private_task}.
std::pair<double, double> probe_single_features(const LatentMatrix& train, const LatentMatrix& val,
                                                const LatentMatrix& test, const DatasetSplit& split,
                                                const ProbeConfig& config);

/// Mean squared reconstruction error of the full model over `samples`.
template <typename Scalar>
double reconstruction_mse(const ModelParams<Scalar>& params, std::span<const FactorSample> samples);

/// Probe-train / probe-val / probe-test evaluation of a trained model.
template <typename Scalar>
ProbeReport evaluate_run(const ModelParams<Scalar>& params, const DatasetSplit& split, const ProbeConfig& config);

}  // namespace mvdis
