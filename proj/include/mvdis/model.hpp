#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "mvdis/data.hpp"
#include "mvdis/tensor.hpp"

namespace mvdis {

/// y = x W + b applied over the last axis; W is (in, out).
template <typename Scalar>
struct Affine {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;

  Index in_features() const { return weight.dim(0); }
  Index out_features() const { return weight.dim(1); }
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const;
};

/// Two affine layers with a ReLU between them and an unactivated output.
template <typename Scalar>
struct Mlp {
  Affine<Scalar> hidden;
  Affine<Scalar> output;

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const;
};

/// Shared-weight parameters of both views: private encoder, shared encoder
/// and decoder. Encoders map d -> h -> d/2, the decoder maps d -> h -> d.
template <typename Scalar>
struct ModelParams {
  Index dim = 0;
  Index hidden = 0;
  Mlp<Scalar> private_encoder;
  Mlp<Scalar> shared_encoder;
  Mlp<Scalar> decoder;

  Index subspace_dim() const { return dim / 2; }
  /// Layers in checkpoint declaration order.
  std::vector<Affine<Scalar>*> layers();
  std::vector<const Affine<Scalar>*> layers() const;
  std::vector<Tensor<Scalar>> parameters() const;
  /// Copies that share no storage with this parameter set.
  ModelParams clone() const;
};

/// Single encoder d -> h -> d trained without a decoder (contrastive baseline).
template <typename Scalar>
struct EncoderParams {
  Index dim = 0;
  Index hidden = 0;
  Mlp<Scalar> encoder;

  std::vector<Affine<Scalar>*> layers();
  std::vector<const Affine<Scalar>*> layers() const;
  std::vector<Tensor<Scalar>> parameters() const;
  EncoderParams clone() const;
};

template <typename Scalar>
struct ForwardOutput {
  Tensor<Scalar> z_p1, z_p2, z_s1, z_s2;  // (B, n, d/2)
  Tensor<Scalar> xhat1, xhat2;            // (B, n, d)
};

/// Weights ~ U(-sqrt(1/fan_in), sqrt(1/fan_in)), biases zero.
template <typename Scalar>
ModelParams<Scalar> init_params(Index dim, Index hidden, std::uint64_t seed);
template <typename Scalar>
EncoderParams<Scalar> init_encoder_params(Index dim, Index hidden, std::uint64_t seed);

/// Returns (z_p, z_s).
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> encode(const ModelParams<Scalar>& params, const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> decode(const ModelParams<Scalar>& params, const Tensor<Scalar>& z_p, const Tensor<Scalar>& z_s);
template <typename Scalar>
ForwardOutput<Scalar> forward_pair(const ModelParams<Scalar>& params, const ViewPairBatch<Scalar>& batch);

// Checkpoint: "MVCK", u32 version = 1, u32 d, u32 h, then for each layer in
// declaration order its weights (row-major, in x out) and biases as float64.
// The full model and the encoder-only baseline share the layout and are told
// apart by payload length.
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<Scalar>& params);
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const EncoderParams<Scalar>& params);
template <typename Scalar>
ModelParams<Scalar> load_checkpoint(const std::filesystem::path& path);
template <typename Scalar>
EncoderParams<Scalar> load_encoder_checkpoint(const std::filesystem::path& path);

/// Number of float64 values stored for each architecture.
std::uint64_t model_payload_values(std::uint64_t dim, std::uint64_t hidden);
std::uint64_t encoder_payload_values(std::uint64_t dim, std::uint64_t hidden);

}  // namespace mvdis
