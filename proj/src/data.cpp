#include "mvdis/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>

namespace mvdis {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kEmbeddingMagic[4] = {'M', 'V', 'L', 'E'};
constexpr std::uint32_t kEmbeddingVersion = 1;
constexpr std::size_t kEmbeddingHeaderBytes = 20;

std::uint32_t read_u32(const std::string& buf, std::size_t offset) {
  std::uint32_t v;
  std::memcpy(&v, buf.data() + offset, sizeof v);
  return v;
}

void append_u32(std::string& buf, std::uint32_t v) {
  char bytes[sizeof v];
  std::memcpy(bytes, &v, sizeof v);
  buf.append(bytes, sizeof v);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

int label_of(const FactorSample& s, PairAnchor anchor, bool common) {
  const bool shared = (anchor == PairAnchor::shared_factor) == common;
  return shared ? s.shared_label : s.private_label;
}

}  // namespace

std::vector<FactorSample> generate_synthetic(const SyntheticConfig& config) {
  if (config.num_shared < 1 || config.num_private < 1 || config.steps < 1 || config.samples_per_cell < 1) {
    throw ConfigError("class counts, steps and samples_per_cell must be positive");
  }
  if (config.dim < 2 * (config.num_shared + config.num_private)) {
    throw ConfigError("latent dim " + std::to_string(config.dim) + " is too small for " +
                      std::to_string(config.num_shared) + " + " + std::to_string(config.num_private) +
                      " classes (need d >= 2 * (C_s + C_p))");
  }
  if (!(config.noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const int factors = config.num_shared + config.num_private;
  Eigen::MatrixXd gaussian(config.dim, factors);
  for (Index c = 0; c < gaussian.cols(); ++c)
    for (Index r = 0; r < gaussian.rows(); ++r) gaussian(r, c) = normal(rng);
  const Eigen::MatrixXd basis =
      Eigen::HouseholderQR<Eigen::MatrixXd>(gaussian).householderQ() * Eigen::MatrixXd::Identity(config.dim, factors);

  std::vector<FactorSample> samples;
  samples.reserve(static_cast<std::size_t>(config.num_shared) * config.num_private * config.samples_per_cell);
  std::int64_t next_id = 0;
  for (int s = 0; s < config.num_shared; ++s) {
    for (int p = 0; p < config.num_private; ++p) {
      const Eigen::VectorXd clean = basis.col(s) + basis.col(config.num_shared + p);
      for (int rep = 0; rep < config.samples_per_cell; ++rep) {
        FactorSample sample;
        sample.latent.resize(config.steps, config.dim);
        for (int t = 0; t < config.steps; ++t) {
          const double envelope = 1.0 - static_cast<double>(t) / (2.0 * config.steps);
          for (int k = 0; k < config.dim; ++k) {
            sample.latent(t, k) = envelope * (clean[k] + config.noise_std * normal(rng));
          }
        }
        sample.shared_label = s;
        sample.private_label = p;
        sample.sample_id = next_id++;
        samples.push_back(std::move(sample));
      }
    }
  }
  return samples;
}

std::vector<SamplePair> make_pairs(std::span<const FactorSample> samples, std::uint64_t seed,
                                   PairAnchor anchor) {
  // Group by the common label; inside a group, order by the other label so the
  // samples that are not valid partners form one contiguous block.
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) groups[label_of(samples[i], anchor, true)].push_back(i);

  struct Slot {
    int group;
    std::size_t block_begin, block_len;
  };
  std::vector<Slot> slot(samples.size());
  for (auto& [label, members] : groups) {
    std::stable_sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return label_of(samples[a], anchor, false) < label_of(samples[b], anchor, false);
    });
    std::size_t begin = 0;
    while (begin < members.size()) {
      const int other = label_of(samples[members[begin]], anchor, false);
      std::size_t end = begin;
      while (end < members.size() && label_of(samples[members[end]], anchor, false) == other) ++end;
      if (end - begin == members.size()) {
        throw DataError(std::string(anchor == PairAnchor::shared_factor ? "shared" : "private") +
                        " class " + std::to_string(label) + " has no samples with a distinct " +
                        (anchor == PairAnchor::shared_factor ? "private" : "shared") + " label to pair with");
      }
      for (std::size_t k = begin; k < end; ++k) slot[members[k]] = Slot{label, begin, end - begin};
      begin = end;
    }
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<SamplePair> pairs;
  pairs.reserve(samples.size());
  for (std::size_t i : order) {
    const Slot& s = slot[i];
    const auto& members = groups.at(s.group);
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - s.block_len - 1);
    std::size_t r = pick(rng);
    if (r >= s.block_begin) r += s.block_len;
    pairs.push_back({samples[i].sample_id, samples[members[r]].sample_id});
  }
  return pairs;
}

DatasetSplit stratified_split(std::span<const FactorSample> samples, SplitFractions fractions,
                              std::uint64_t seed) {
  if (samples.empty()) throw DataError("cannot split an empty dataset");
  const double f[3] = {fractions.train, fractions.val, fractions.test};
  if (f[0] <= 0 || f[1] <= 0 || f[2] <= 0 || std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be positive and sum to 1");
  }

  std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    cells[{samples[i].shared_label, samples[i].private_label}].push_back(i);
  }

  DatasetSplit split;
  split.seed = seed;
  std::vector<FactorSample>* targets[3] = {&split.train, &split.val, &split.test};
  std::mt19937_64 rng(seed);
  for (auto& [cell, members] : cells) {
    std::shuffle(members.begin(), members.end(), rng);
    const double m = static_cast<double>(members.size());
    std::size_t counts[3];
    double remainders[3];
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
      const double quota = f[k] * m;
      counts[k] = static_cast<std::size_t>(std::floor(quota + 1e-9));
      remainders[k] = quota - static_cast<double>(counts[k]);
      assigned += counts[k];
    }
    // Largest remainder first; ties resolve to the earlier split.
    int rank[3] = {0, 1, 2};
    std::stable_sort(rank, rank + 3, [&](int a, int b) { return remainders[a] > remainders[b] + 1e-12; });
    for (std::size_t left = members.size() - assigned, r = 0; left > 0; --left, ++r) ++counts[rank[r % 3]];

    std::size_t pos = 0;
    for (int k = 0; k < 3; ++k) {
      for (std::size_t c = 0; c < counts[k]; ++c) targets[k]->push_back(samples[members[pos++]]);
    }
  }
  return split;
}

void write_embeddings(const std::filesystem::path& data_path, const std::filesystem::path& label_path,
                      std::span<const FactorSample> samples) {
  std::uint32_t n = 0, d = 0;
  if (!samples.empty()) {
    n = static_cast<std::uint32_t>(samples.front().latent.rows());
    d = static_cast<std::uint32_t>(samples.front().latent.cols());
  }
  std::string buf(kEmbeddingMagic, 4);
  append_u32(buf, kEmbeddingVersion);
  append_u32(buf, static_cast<std::uint32_t>(samples.size()));
  append_u32(buf, n);
  append_u32(buf, d);
  buf.reserve(buf.size() + samples.size() * n * d * sizeof(float));
  std::ostringstream labels;
  labels << "sample_id,shared_label,private_label\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.latent.rows() != n || s.latent.cols() != d) {
      throw DimensionError("all samples must share one (n, d) latent shape");
    }
    for (Index k = 0; k < s.latent.size(); ++k) {
      const float v = static_cast<float>(s.latent.data()[k]);
      char bytes[sizeof v];
      std::memcpy(bytes, &v, sizeof v);
      buf.append(bytes, sizeof v);
    }
    labels << i << ',' << s.shared_label << ',' << s.private_label << '\n';
  }
  write_file(data_path, buf);
  write_file(label_path, labels.str());
}

std::vector<FactorSample> load_embeddings(const std::filesystem::path& data_path,
                                          const std::filesystem::path& label_path) {
  const std::string buf = read_file(data_path);
  if (buf.size() < kEmbeddingHeaderBytes) {
    throw TruncationError(data_path.string() + ": file shorter than its header");
  }
  if (std::memcmp(buf.data(), kEmbeddingMagic, 4) != 0) throw FormatError(data_path.string() + ": bad magic");
  if (read_u32(buf, 4) != kEmbeddingVersion) {
    throw FormatError(data_path.string() + ": unsupported version " + std::to_string(read_u32(buf, 4)));
  }
  const std::uint64_t count = read_u32(buf, 8), n = read_u32(buf, 12), d = read_u32(buf, 16);
  const std::uint64_t expected = kEmbeddingHeaderBytes + count * n * d * sizeof(float);
  if (buf.size() < expected) {
    throw TruncationError(data_path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(buf.size()));
  }
  if (buf.size() > expected) throw FormatError(data_path.string() + ": trailing bytes after last record");
  if (count > 0 && (n == 0 || d == 0)) throw FormatError(data_path.string() + ": zero latent extent");

  std::vector<FactorSample> samples(count);
  std::vector<bool> seen(count, false);
  std::ifstream labels(label_path);
  if (!labels) throw IoError("cannot open " + label_path.string());
  std::string line;
  if (!std::getline(labels, line) || line != "sample_id,shared_label,private_label") {
    throw FormatError(label_path.string() + ": missing header row");
  }
  std::size_t rows = 0;
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    long long id = -1, shared = -1, priv = -1;
    char c1 = 0, c2 = 0;
    if (!(row >> id >> c1 >> shared >> c2 >> priv) || c1 != ',' || c2 != ',') {
      throw FormatError(label_path.string() + ": malformed row '" + line + "'");
    }
    if (id < 0 || static_cast<std::uint64_t>(id) >= count) {
      throw DataError(label_path.string() + ": sample_id " + std::to_string(id) + " out of range [0, " +
                      std::to_string(count) + ")");
    }
    if (seen[id]) throw DataError(label_path.string() + ": duplicate sample_id " + std::to_string(id));
    if (shared < 0 || priv < 0) throw DataError(label_path.string() + ": negative label in row '" + line + "'");
    seen[id] = true;
    samples[id].shared_label = static_cast<int>(shared);
    samples[id].private_label = static_cast<int>(priv);
    ++rows;
  }
  if (rows != count) {
    throw DataError(label_path.string() + ": " + std::to_string(rows) + " label rows for " +
                    std::to_string(count) + " samples");
  }

  const char* cursor = buf.data() + kEmbeddingHeaderBytes;
  for (std::uint64_t i = 0; i < count; ++i) {
    auto& s = samples[i];
    s.sample_id = static_cast<std::int64_t>(i);
    s.latent.resize(static_cast<Index>(n), static_cast<Index>(d));
    for (Index k = 0; k < s.latent.size(); ++k) {
      float v;
      std::memcpy(&v, cursor, sizeof v);
      cursor += sizeof v;
      if (!std::isfinite(v)) throw DataError(data_path.string() + ": non-finite value in sample " + std::to_string(i));
      s.latent.data()[k] = v;
    }
  }
  return samples;
}

std::unordered_map<std::int64_t, std::size_t> index_by_id(std::span<const FactorSample> samples) {
  std::unordered_map<std::int64_t, std::size_t> index;
  index.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!index.emplace(samples[i].sample_id, i).second) {
      throw DataError("duplicate sample_id " + std::to_string(samples[i].sample_id));
    }
  }
  return index;
}

template <typename Scalar>
ViewPairBatch<Scalar> make_batch(std::span<const FactorSample> samples,
                                 const std::unordered_map<std::int64_t, std::size_t>& index,
                                 std::span<const SamplePair> pairs) {
  if (pairs.empty()) throw ContractError("make_batch needs at least one pair");
  const auto& first = samples[index.at(pairs.front().first)].latent;
  const Index n = first.rows(), d = first.cols();
  const Index b = static_cast<Index>(pairs.size());
  typename Tensor<Scalar>::Array v1(b * n * d), v2(b * n * d);
  ViewPairBatch<Scalar> batch;
  for (Index j = 0; j < b; ++j) {
    const auto& s1 = samples[index.at(pairs[j].first)];
    const auto& s2 = samples[index.at(pairs[j].second)];
    if (s1.latent.rows() != n || s1.latent.cols() != d || s2.latent.rows() != n || s2.latent.cols() != d) {
      throw DimensionError("samples in a batch must share one (n, d) latent shape");
    }
    v1.segment(j * n * d, n * d) = Eigen::Map<const Eigen::ArrayXd>(s1.latent.data(), n * d).cast<Scalar>();
    v2.segment(j * n * d, n * d) = Eigen::Map<const Eigen::ArrayXd>(s2.latent.data(), n * d).cast<Scalar>();
    batch.shared_labels.push_back(s1.shared_label);
    batch.private_labels_1.push_back(s1.private_label);
    batch.private_labels_2.push_back(s2.private_label);
  }
  batch.view1 = Tensor<Scalar>(Shape{b, n, d}, std::move(v1));
  batch.view2 = Tensor<Scalar>(Shape{b, n, d}, std::move(v2));
  return batch;
}

template <typename Scalar>
Tensor<Scalar> stack_latents(std::span<const FactorSample> samples) {
  if (samples.empty()) throw ContractError("stack_latents needs at least one sample");
  const Index n = samples.front().latent.rows(), d = samples.front().latent.cols();
  const Index count = static_cast<Index>(samples.size());
  typename Tensor<Scalar>::Array values(count * n * d);
  for (Index j = 0; j < count; ++j) {
    const auto& m = samples[j].latent;
    if (m.rows() != n || m.cols() != d) throw DimensionError("samples must share one (n, d) latent shape");
    values.segment(j * n * d, n * d) = Eigen::Map<const Eigen::ArrayXd>(m.data(), n * d).cast<Scalar>();
  }
  return Tensor<Scalar>(Shape{count, n, d}, std::move(values));
}

template ViewPairBatch<float> make_batch(std::span<const FactorSample>,
                                         const std::unordered_map<std::int64_t, std::size_t>&,
                                         std::span<const SamplePair>);
template ViewPairBatch<double> make_batch(std::span<const FactorSample>,
                                          const std::unordered_map<std::int64_t, std::size_t>&,
                                          std::span<const SamplePair>);
template Tensor<float> stack_latents(std::span<const FactorSample>);
template Tensor<double> stack_latents(std::span<const FactorSample>);

}  // namespace mvdis
