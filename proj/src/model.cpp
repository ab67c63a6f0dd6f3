#include "mvdis/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

namespace mvdis {

namespace {

constexpr char kCheckpointMagic[4] = {'M', 'V', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::size_t kCheckpointHeaderBytes = 16;

template <typename Scalar>
Affine<Scalar> init_affine(Index in, Index out, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  typename Tensor<Scalar>::Array w(in * out);
  for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>(uniform(rng));
  return {Tensor<Scalar>(Shape{in, out}, std::move(w), true), Tensor<Scalar>::zeros(Shape{out}, true)};
}

template <typename Scalar>
Mlp<Scalar> init_mlp(Index in, Index hidden, Index out, std::mt19937_64& rng) {
  Mlp<Scalar> mlp;
  mlp.hidden = init_affine<Scalar>(in, hidden, rng);
  mlp.output = init_affine<Scalar>(hidden, out, rng);
  return mlp;
}

void check_dims(Index dim, Index hidden) {
  if (dim < 2 || dim % 2 != 0) throw ConfigError("latent dim must be even and >= 2, got " + std::to_string(dim));
  if (hidden < 1) throw ConfigError("hidden width must be >= 1, got " + std::to_string(hidden));
}

template <typename Scalar>
std::string serialize(Index dim, Index hidden, const std::vector<const Affine<Scalar>*>& layers) {
  std::string buf(kCheckpointMagic, 4);
  auto put_u32 = [&](std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    buf.append(b, 4);
  };
  put_u32(kCheckpointVersion);
  put_u32(static_cast<std::uint32_t>(dim));
  put_u32(static_cast<std::uint32_t>(hidden));
  auto put_tensor = [&](const Tensor<Scalar>& t) {
    for (Index i = 0; i < t.size(); ++i) {
      const double v = static_cast<double>(t[i]);
      char b[8];
      std::memcpy(b, &v, 8);
      buf.append(b, 8);
    }
  };
  for (const auto* layer : layers) {
    put_tensor(layer->weight);
    put_tensor(layer->bias);
  }
  return buf;
}

struct CheckpointHeader {
  std::uint32_t dim = 0, hidden = 0;
  std::uint64_t payload_values = 0;
};

std::string read_checkpoint_file(const std::filesystem::path& path, CheckpointHeader& header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string buf = ss.str();
  if (buf.size() < kCheckpointHeaderBytes) throw TruncationError(path.string() + ": checkpoint shorter than header");
  if (std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) throw FormatError(path.string() + ": bad checkpoint magic");
  std::uint32_t version;
  std::memcpy(&version, buf.data() + 4, 4);
  if (version != kCheckpointVersion) throw FormatError(path.string() + ": unsupported checkpoint version");
  std::memcpy(&header.dim, buf.data() + 8, 4);
  std::memcpy(&header.hidden, buf.data() + 12, 4);
  if ((buf.size() - kCheckpointHeaderBytes) % 8 != 0) throw TruncationError(path.string() + ": partial value");
  header.payload_values = (buf.size() - kCheckpointHeaderBytes) / 8;
  return buf;
}

template <typename Scalar>
void fill_layers(const std::string& buf, const std::vector<Affine<Scalar>*>& layers) {
  std::size_t offset = kCheckpointHeaderBytes;
  auto take = [&](Tensor<Scalar>& t) {
    auto& values = t.mutable_data();
    for (Index i = 0; i < values.size(); ++i) {
      double v;
      std::memcpy(&v, buf.data() + offset, 8);
      offset += 8;
      values[i] = static_cast<Scalar>(v);
    }
  };
  for (auto* layer : layers) {
    take(layer->weight);
    take(layer->bias);
  }
}

}  // namespace

std::uint64_t model_payload_values(std::uint64_t dim, std::uint64_t hidden) {
  const std::uint64_t encoder = dim * hidden + hidden + hidden * (dim / 2) + dim / 2;
  const std::uint64_t decoder = dim * hidden + hidden + hidden * dim + dim;
  return 2 * encoder + decoder;
}

std::uint64_t encoder_payload_values(std::uint64_t dim, std::uint64_t hidden) {
  return dim * hidden + hidden + hidden * dim + dim;
}

template <typename Scalar>
Tensor<Scalar> Affine<Scalar>::operator()(const Tensor<Scalar>& x) const {
  return add(matmul(x, weight), bias);
}

template <typename Scalar>
Tensor<Scalar> Mlp<Scalar>::operator()(const Tensor<Scalar>& x) const {
  return output(relu(hidden(x)));
}

template <typename Scalar>
std::vector<Affine<Scalar>*> ModelParams<Scalar>::layers() {
  return {&private_encoder.hidden, &private_encoder.output, &shared_encoder.hidden,
          &shared_encoder.output,  &decoder.hidden,         &decoder.output};
}

template <typename Scalar>
std::vector<const Affine<Scalar>*> ModelParams<Scalar>::layers() const {
  return {&private_encoder.hidden, &private_encoder.output, &shared_encoder.hidden,
          &shared_encoder.output,  &decoder.hidden,         &decoder.output};
}

template <typename Scalar>
std::vector<Tensor<Scalar>> ModelParams<Scalar>::parameters() const {
  std::vector<Tensor<Scalar>> out;
  for (const auto* l : layers()) {
    out.push_back(l->weight);
    out.push_back(l->bias);
  }
  return out;
}

template <typename Scalar>
ModelParams<Scalar> ModelParams<Scalar>::clone() const {
  ModelParams<Scalar> copy = *this;
  for (auto* layer : copy.layers()) {
    layer->weight = layer->weight.clone(true);
    layer->bias = layer->bias.clone(true);
  }
  return copy;
}

template <typename Scalar>
EncoderParams<Scalar> EncoderParams<Scalar>::clone() const {
  EncoderParams<Scalar> copy = *this;
  for (auto* layer : copy.layers()) {
    layer->weight = layer->weight.clone(true);
    layer->bias = layer->bias.clone(true);
  }
  return copy;
}

template <typename Scalar>
std::vector<Affine<Scalar>*> EncoderParams<Scalar>::layers() {
  return {&encoder.hidden, &encoder.output};
}

template <typename Scalar>
std::vector<const Affine<Scalar>*> EncoderParams<Scalar>::layers() const {
  return {&encoder.hidden, &encoder.output};
}

template <typename Scalar>
std::vector<Tensor<Scalar>> EncoderParams<Scalar>::parameters() const {
  return {encoder.hidden.weight, encoder.hidden.bias, encoder.output.weight, encoder.output.bias};
}

template <typename Scalar>
ModelParams<Scalar> init_params(Index dim, Index hidden, std::uint64_t seed) {
  check_dims(dim, hidden);
  std::mt19937_64 rng(seed);
  ModelParams<Scalar> p;
  p.dim = dim;
  p.hidden = hidden;
  p.private_encoder = init_mlp<Scalar>(dim, hidden, dim / 2, rng);
  p.shared_encoder = init_mlp<Scalar>(dim, hidden, dim / 2, rng);
  p.decoder = init_mlp<Scalar>(dim, hidden, dim, rng);
  return p;
}

template <typename Scalar>
EncoderParams<Scalar> init_encoder_params(Index dim, Index hidden, std::uint64_t seed) {
  check_dims(dim, hidden);
  std::mt19937_64 rng(seed);
  EncoderParams<Scalar> p;
  p.dim = dim;
  p.hidden = hidden;
  p.encoder = init_mlp<Scalar>(dim, hidden, dim, rng);
  return p;
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> encode(const ModelParams<Scalar>& params, const Tensor<Scalar>& x) {
  if (x.shape().back() != params.dim) {
    throw DimensionError("encode expects feature width " + std::to_string(params.dim) + ", got shape " +
                         shape_to_string(x.shape()));
  }
  return {params.private_encoder(x), params.shared_encoder(x)};
}

template <typename Scalar>
Tensor<Scalar> decode(const ModelParams<Scalar>& params, const Tensor<Scalar>& z_p, const Tensor<Scalar>& z_s) {
  if (z_p.shape().back() != params.subspace_dim() || z_s.shape().back() != params.subspace_dim()) {
    throw DimensionError("decode expects subspaces of width " + std::to_string(params.subspace_dim()) + ", got " +
                         shape_to_string(z_p.shape()) + " and " + shape_to_string(z_s.shape()));
  }
  return params.decoder(concat_features(z_p, z_s));
}

template <typename Scalar>
ForwardOutput<Scalar> forward_pair(const ModelParams<Scalar>& params, const ViewPairBatch<Scalar>& batch) {
  if (batch.view1.shape() != batch.view2.shape()) {
    throw DimensionError("views differ in shape: " + shape_to_string(batch.view1.shape()) + " vs " +
                         shape_to_string(batch.view2.shape()));
  }
  ForwardOutput<Scalar> out;
  std::tie(out.z_p1, out.z_s1) = encode(params, batch.view1);
  std::tie(out.z_p2, out.z_s2) = encode(params, batch.view2);
  out.xhat1 = decode(params, out.z_p1, out.z_s1);
  out.xhat2 = decode(params, out.z_p2, out.z_s2);
  return out;
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<Scalar>& params) {
  const std::string buf = serialize<Scalar>(params.dim, params.hidden, params.layers());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(buf.data(), static_cast<std::streamsize>(buf.size()))) {
    throw IoError("cannot write checkpoint " + path.string());
  }
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const EncoderParams<Scalar>& params) {
  const std::string buf = serialize<Scalar>(params.dim, params.hidden, params.layers());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(buf.data(), static_cast<std::streamsize>(buf.size()))) {
    throw IoError("cannot write checkpoint " + path.string());
  }
}

template <typename Scalar>
ModelParams<Scalar> load_checkpoint(const std::filesystem::path& path) {
  CheckpointHeader header;
  const std::string buf = read_checkpoint_file(path, header);
  check_dims(header.dim, header.hidden);
  if (header.payload_values != model_payload_values(header.dim, header.hidden)) {
    if (header.payload_values == encoder_payload_values(header.dim, header.hidden)) {
      throw FormatError(path.string() + ": encoder-only checkpoint where a full model was expected");
    }
    throw TruncationError(path.string() + ": payload does not match d=" + std::to_string(header.dim) +
                          ", h=" + std::to_string(header.hidden));
  }
  auto params = init_params<Scalar>(header.dim, header.hidden, 0);
  fill_layers<Scalar>(buf, params.layers());
  return params;
}

template <typename Scalar>
EncoderParams<Scalar> load_encoder_checkpoint(const std::filesystem::path& path) {
  CheckpointHeader header;
  const std::string buf = read_checkpoint_file(path, header);
  check_dims(header.dim, header.hidden);
  if (header.payload_values != encoder_payload_values(header.dim, header.hidden)) {
    throw FormatError(path.string() + ": not an encoder-only checkpoint for d=" + std::to_string(header.dim) +
                      ", h=" + std::to_string(header.hidden));
  }
  auto params = init_encoder_params<Scalar>(header.dim, header.hidden, 0);
  fill_layers<Scalar>(buf, params.layers());
  return params;
}

#define MVDIS_INSTANTIATE_MODEL(S)                                                                         \
  template struct Affine<S>;                                                                               \
  template struct Mlp<S>;                                                                                  \
  template struct ModelParams<S>;                                                                          \
  template struct EncoderParams<S>;                                                                        \
  template ModelParams<S> init_params(Index, Index, std::uint64_t);                                        \
  template EncoderParams<S> init_encoder_params(Index, Index, std::uint64_t);                              \
  template std::pair<Tensor<S>, Tensor<S>> encode(const ModelParams<S>&, const Tensor<S>&);                \
  template Tensor<S> decode(const ModelParams<S>&, const Tensor<S>&, const Tensor<S>&);                    \
  template ForwardOutput<S> forward_pair(const ModelParams<S>&, const ViewPairBatch<S>&);                  \
  template void save_checkpoint(const std::filesystem::path&, const ModelParams<S>&);                      \
  template void save_checkpoint(const std::filesystem::path&, const EncoderParams<S>&);                    \
  template ModelParams<S> load_checkpoint(const std::filesystem::path&);                                   \
  template EncoderParams<S> load_encoder_checkpoint(const std::filesystem::path&);

MVDIS_INSTANTIATE_MODEL(float)
MVDIS_INSTANTIATE_MODEL(double)

#undef MVDIS_INSTANTIATE_MODEL

}  // namespace mvdis
