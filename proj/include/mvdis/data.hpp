#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "mvdis/tensor.hpp"

namespace mvdis {

using LatentMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One frozen-encoder latent (n time steps by d features) with its factor labels.
/// Labels are only consumed by pairing and evaluation, never by the losses.
struct FactorSample {
  LatentMatrix latent;
  int shared_label = 0;   // instrument-family analog
  int private_label = 0;  // pitch analog
  std::int64_t sample_id = 0;
};

struct SyntheticConfig {
  int num_shared = 10;
  int num_private = 16;
  int steps = 8;
  int dim = 64;
  int samples_per_cell = 36;
  double noise_std = 0.1;
  std::uint64_t seed = 0;
};

/// Factor-controlled latents: each frame is
///   envelope(t) * (M_s e_shared + M_p e_private + noise_std * eps_t)
/// with [M_s M_p] a seeded matrix with orthonormal columns and
/// envelope(t) = 1 - t / (2 n). Cells are emitted in (shared, private) order.
std::vector<FactorSample> generate_synthetic(const SyntheticConfig& config);

/// Which label the two views of a pair have in common.
enum class PairAnchor { shared_factor, private_factor };

struct SamplePair {
  std::int64_t first = 0;
  std::int64_t second = 0;
};

/// Seeded random matching: every sample anchors one pair whose partner
/// agrees on the anchor label and differs on the other label.
std::vector<SamplePair> make_pairs(std::span<const FactorSample> samples, std::uint64_t seed,
                                   PairAnchor anchor = PairAnchor::shared_factor);

struct SplitFractions {
  double train = 0.7;
  double val = 0.2;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<FactorSample> train;
  std::vector<FactorSample> val;
  std::vector<FactorSample> test;
  std::uint64_t seed = 0;
};

/// Per-(shared, private) cell proportional allocation with largest-remainder
/// rounding; remainder ties go to train, then val, then test.
DatasetSplit stratified_split(std::span<const FactorSample> samples, SplitFractions fractions,
                              std::uint64_t seed);

// Embedding file: "MVLE", u32 version = 1, u32 count, u32 n, u32 d, then
// count*n*d little-endian float32 values. Labels are a CSV with header
// `sample_id,shared_label,private_label`. Loaded sample ids are file indices.
void write_embeddings(const std::filesystem::path& data_path, const std::filesystem::path& label_path,
                      std::span<const FactorSample> samples);
std::vector<FactorSample> load_embeddings(const std::filesystem::path& data_path,
                                          const std::filesystem::path& label_path);

/// Position of each sample id within `samples`.
std::unordered_map<std::int64_t, std::size_t> index_by_id(std::span<const FactorSample> samples);

template <typename Scalar>
struct ViewPairBatch {
  Tensor<Scalar> view1;  // (B, n, d)
  Tensor<Scalar> view2;  // (B, n, d)
  std::vector<int> shared_labels;
  std::vector<int> private_labels_1;
  std::vector<int> private_labels_2;

  Index batch_size() const { return view1.dim(0); }
};

/// Stacks pairs [begin, begin + count) into a batch. For shared-anchored
/// pairs `shared_labels` is the common label; otherwise it is view 1's label.
template <typename Scalar>
ViewPairBatch<Scalar> make_batch(std::span<const FactorSample> samples,
                                 const std::unordered_map<std::int64_t, std::size_t>& index,
                                 std::span<const SamplePair> pairs);

/// Stacks the latents of `samples` into a (count, n, d) tensor.
template <typename Scalar>
Tensor<Scalar> stack_latents(std::span<const FactorSample> samples);

}  // namespace mvdis
