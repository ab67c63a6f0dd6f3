#include "mvdis/training.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "mvdis/config.hpp"
#include "mvdis/optim.hpp"

namespace mvdis {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

bool finite(const LossBreakdown& b) {
  if (!std::isfinite(b.total) || !std::isfinite(b.rec) || !std::isfinite(b.dis)) return false;
  for (const auto& [name, value] : b.components) {
    if (!std::isfinite(value)) return false;
  }
  return true;
}

std::string describe(const LossBreakdown& b) {
  std::ostringstream os;
  os << "total=" << b.total << " rec=" << b.rec << " dis=" << b.dis;
  for (const auto& [name, value] : b.components) os << ' ' << name << '=' << value;
  return os.str();
}

// Running mean of breakdowns, component-wise.
struct BreakdownMean {
  LossBreakdown sum;
  int count = 0;

  void add(const LossBreakdown& b) {
    sum.total += b.total;
    sum.rec += b.rec;
    sum.dis += b.dis;
    for (const auto& [name, value] : b.components) sum.components[name] += value;
    ++count;
  }

  LossBreakdown mean() const {
    LossBreakdown m = sum;
    if (count == 0) return m;
    m.total /= count;
    m.rec /= count;
    m.dis /= count;
    for (auto& [name, value] : m.components) value /= count;
    return m;
  }
};

template <typename Scalar>
std::vector<ViewPairBatch<Scalar>> batches_from(std::span<const FactorSample> samples,
                                               const std::unordered_map<std::int64_t, std::size_t>& index,
                                               const std::vector<SamplePair>& pairs, std::size_t batch_size,
                                               std::size_t limit = std::numeric_limits<std::size_t>::max()) {
  std::vector<ViewPairBatch<Scalar>> out;
  const std::span<const SamplePair> all(pairs);
  // The trailing incomplete batch is dropped.
  for (std::size_t start = 0; start + batch_size <= pairs.size() && out.size() < limit; start += batch_size) {
    out.push_back(make_batch<Scalar>(samples, index, all.subspan(start, batch_size)));
  }
  return out;
}

// Validation batches are fixed for the whole run. A validation set smaller
// than one batch is used as a single batch.
template <typename Scalar>
std::vector<ViewPairBatch<Scalar>> validation_batches(const DatasetSplit& data, std::size_t batch_size,
                                                      std::uint64_t seed, PairAnchor anchor) {
  const auto index = index_by_id(data.val);
  const auto pairs = make_pairs(data.val, seed, anchor);
  if (pairs.size() < 2) throw DataError("validation split needs at least 2 pairs");
  const std::size_t effective = std::min(batch_size, pairs.size());
  return batches_from<Scalar>(data.val, index, pairs, effective);
}

void check_data(const TrainConfig& config, const DatasetSplit& data) {
  config.validate();
  if (data.train.empty() || data.val.empty()) throw DataError("train and validation splits must be nonempty");
  if (data.train.size() < static_cast<std::size_t>(config.batch_size)) {
    throw DataError("training split has fewer pairs than one batch");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (InfoNCE needs negatives)");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (hidden < 0) throw ConfigError("hidden must be >= 0");
  if (calibration_batches < 1) throw ConfigError("calibration_batches must be >= 1");
  if (fixed_gamma && !(*fixed_gamma > 0.0)) throw ConfigError("gamma must be positive");
  loss.validate();
}

RunSeeds derive_run_seeds(std::uint64_t seed) {
  return {splitmix64(seed ^ 0x1A17ull), splitmix64(seed ^ 0xBA1Eull), splitmix64(seed ^ 0x7A11ull)};
}

template <typename Scalar>
TrainResult<Scalar> train(const TrainConfig& config, const DatasetSplit& data, const std::filesystem::path& checkpoint) {
  check_data(config, data);
  const Index dim = data.train.front().latent.cols();
  const Index hidden = config.hidden > 0 ? config.hidden : dim;
  const RunSeeds seeds = derive_run_seeds(config.seed);
  const auto batch_size = static_cast<std::size_t>(config.batch_size);

  auto params = init_params<Scalar>(dim, hidden, seeds.init);
  const auto train_index = index_by_id(data.train);
  const auto val_batches = validation_batches<Scalar>(data, batch_size, seeds.validation, PairAnchor::shared_factor);

  LossConfig loss = config.loss;
  if (config.fixed_gamma) {
    loss.gamma = *config.fixed_gamma;
  } else {
    const auto first_epoch = make_pairs(data.train, seeds.pairing_base, PairAnchor::shared_factor);
    const auto calib = batches_from<Scalar>(data.train, train_index, first_epoch, batch_size,
                                            static_cast<std::size_t>(config.calibration_batches));
    loss.gamma = calibrate_gamma<Scalar>(params, calib, loss);
  }

  TrainResult<Scalar> result;
  RunRecord& record = result.record;
  record.gamma = loss.gamma;
  record.config_snapshot = train_config_snapshot(config);
  record.config_snapshot["gamma_calibrated"] = format_double(loss.gamma);
  record.best_val_total = std::numeric_limits<double>::infinity();
  result.best = params.clone();

  AdamW<Scalar> optimizer(params.parameters(), {config.learning_rate, config.weight_decay});
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto pairs = make_pairs(data.train, seeds.pairing_base + static_cast<std::uint64_t>(epoch));
    const std::span<const SamplePair> all(pairs);
    BreakdownMean train_mean;
    for (std::size_t b = 0; (b + 1) * batch_size <= pairs.size(); ++b) {
      const auto batch = make_batch<Scalar>(data.train, train_index, all.subspan(b * batch_size, batch_size));
      const auto fo = forward_pair(params, batch);
      auto [total, breakdown] = loss_total(loss, fo, batch);
      if (!finite(breakdown)) {
        throw NonFiniteLossError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                 std::to_string(b) + ": " + describe(breakdown));
      }
      optimizer.zero_grad();
      total.backward();
      optimizer.step();
      train_mean.add(breakdown);
    }

    BreakdownMean val_mean;
    {
      NoGradGuard guard;
      for (const auto& batch : val_batches) val_mean.add(loss_total(loss, forward_pair(params, batch), batch).second);
    }
    EpochRecord row{epoch + 1, train_mean.mean(), val_mean.mean()};
    if (!finite(row.val)) {
      throw NonFiniteLossError("non-finite validation loss at epoch " + std::to_string(epoch + 1) + ": " +
                               describe(row.val));
    }
    if (row.val.total < record.best_val_total) {
      record.best_val_total = row.val.total;
      record.best_epoch = row.epoch;
      result.best = params.clone();
    }
    record.history.push_back(std::move(row));
  }

  if (!checkpoint.empty()) {
    save_checkpoint(checkpoint, result.best);
    record.checkpoint_path = checkpoint.string();
  }
  return result;
}

template <typename Scalar>
BaselineResult<Scalar> run_baseline_cl(const TrainConfig& config, const DatasetSplit& data, PairAnchor anchor,
                                       const std::filesystem::path& checkpoint) {
  check_data(config, data);
  const Index dim = data.train.front().latent.cols();
  const Index hidden = config.hidden > 0 ? config.hidden : dim;
  const RunSeeds seeds = derive_run_seeds(config.seed);
  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  const auto temperature = static_cast<Scalar>(config.loss.temperature);
  const auto eps = static_cast<Scalar>(config.loss.eps);
  const bool symmetric = config.loss.symmetric_infonce;

  auto params = init_encoder_params<Scalar>(dim, hidden, seeds.init);
  const auto train_index = index_by_id(data.train);
  const auto val_batches = validation_batches<Scalar>(data, batch_size, seeds.validation, anchor);

  auto objective = [&](const ViewPairBatch<Scalar>& batch) {
    auto z1 = params.encoder(batch.view1);
    auto z2 = params.encoder(batch.view2);
    auto value = loss_infonce_sim(z1, z2, temperature, eps, symmetric);
    LossBreakdown b;
    b.dis = static_cast<double>(value.item());
    b.total = b.dis;
    b.components["sim"] = b.dis;
    return std::pair{value, b};
  };

  BaselineResult<Scalar> result;
  RunRecord& record = result.record;
  record.config_snapshot = train_config_snapshot(config);
  record.config_snapshot["baseline"] = anchor == PairAnchor::shared_factor ? "cl_shared" : "cl_private";
  record.config_snapshot["principle"] = "infonce";
  record.config_snapshot["objective"] = "sim";
  record.config_snapshot["dis_weight"] = "1";
  record.best_val_total = std::numeric_limits<double>::infinity();
  result.best = params.clone();

  AdamW<Scalar> optimizer(params.parameters(), {config.learning_rate, config.weight_decay});
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto pairs = make_pairs(data.train, seeds.pairing_base + static_cast<std::uint64_t>(epoch), anchor);
    const std::span<const SamplePair> all(pairs);
    BreakdownMean train_mean;
    for (std::size_t b = 0; (b + 1) * batch_size <= pairs.size(); ++b) {
      const auto batch = make_batch<Scalar>(data.train, train_index, all.subspan(b * batch_size, batch_size));
      auto [total, breakdown] = objective(batch);
      if (!finite(breakdown)) {
        throw NonFiniteLossError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                 std::to_string(b) + ": " + describe(breakdown));
      }
      optimizer.zero_grad();
      total.backward();
      optimizer.step();
      train_mean.add(breakdown);
    }
    BreakdownMean val_mean;
    {
      NoGradGuard guard;
      for (const auto& batch : val_batches) val_mean.add(objective(batch).second);
    }
    EpochRecord row{epoch + 1, train_mean.mean(), val_mean.mean()};
    if (row.val.total < record.best_val_total) {
      record.best_val_total = row.val.total;
      record.best_epoch = row.epoch;
      result.best = params.clone();
    }
    record.history.push_back(std::move(row));
  }
  if (!checkpoint.empty()) {
    save_checkpoint(checkpoint, result.best);
    record.checkpoint_path = checkpoint.string();
  }
  return result;
}

std::string format_run_record(const RunRecord& record) {
  std::ostringstream os;
  KeyValues header = record.config_snapshot;
  header["best_epoch"] = std::to_string(record.best_epoch);
  header["best_val_total"] = format_double(record.best_val_total);
  header["gamma_calibrated"] = format_double(record.gamma);
  header["checkpoint"] = record.checkpoint_path;
  os << format_key_values(header);
  os << "\n[history]\n";
  os << "epoch,train_total,train_rec,train_dis,val_total,val_rec,val_dis\n";
  for (const auto& row : record.history) {
    os << row.epoch << ',' << format_double(row.train.total) << ',' << format_double(row.train.rec) << ','
       << format_double(row.train.dis) << ',' << format_double(row.val.total) << ',' << format_double(row.val.rec)
       << ',' << format_double(row.val.dis) << '\n';
  }
  return os.str();
}

void write_run_record(const std::filesystem::path& path, const RunRecord& record) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write run record " + path.string());
  out << format_run_record(record);
}

template TrainResult<float> train(const TrainConfig&, const DatasetSplit&, const std::filesystem::path&);
template TrainResult<double> train(const TrainConfig&, const DatasetSplit&, const std::filesystem::path&);
template BaselineResult<float> run_baseline_cl(const TrainConfig&, const DatasetSplit&, PairAnchor,
                                               const std::filesystem::path&);
template BaselineResult<double> run_baseline_cl(const TrainConfig&, const DatasetSplit&, PairAnchor,
                                                const std::filesystem::path&);

}  // namespace mvdis
