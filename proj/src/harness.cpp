#include "mvdis/harness.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace mvdis {

namespace {

const char* const kPoolFiles[] = {"train_pool.mvle", "train_pool_labels.csv", "probe_pool.mvle",
                                  "probe_pool_labels.csv"};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

template <typename Fn>
auto with_precision(Precision precision, Fn&& fn) {
  if (precision == Precision::float32) return fn(float{});
  return fn(double{});
}

const std::string* find(const KeyValues& values, const char* key) {
  const auto it = values.find(key);
  return it == values.end() ? nullptr : &it->second;
}

std::uint64_t parse_seed(const std::string& key, const std::string& text) {
  const auto v = parse_int(key, text);
  if (v < 0) throw ConfigError(key + " must be non-negative");
  return static_cast<std::uint64_t>(v);
}

}  // namespace

std::string generate_dataset(const GenDataConfig& config, const std::filesystem::path& dir) {
  if (config.probe_samples_per_cell < 1) throw ConfigError("probe_samples_per_cell must be >= 1");
  SyntheticConfig full = config.synthetic;
  const int train_per_cell = full.samples_per_cell;
  full.samples_per_cell = train_per_cell + config.probe_samples_per_cell;
  const auto samples = generate_synthetic(full);

  std::vector<FactorSample> train_pool, probe_pool;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const bool to_train = static_cast<int>(i % static_cast<std::size_t>(full.samples_per_cell)) < train_per_cell;
    FactorSample s = samples[i];
    auto& pool = to_train ? train_pool : probe_pool;
    s.sample_id = static_cast<std::int64_t>(pool.size());
    pool.push_back(std::move(s));
  }

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_embeddings(dir / kPoolFiles[0], dir / kPoolFiles[1], train_pool);
  write_embeddings(dir / kPoolFiles[2], dir / kPoolFiles[3], probe_pool);
  return dataset_digest(dir);
}

std::string dataset_digest(const std::filesystem::path& dir) {
  std::uint64_t state = 0xcbf29ce484222325ull;
  for (const char* name : kPoolFiles) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) throw IoError("cannot open " + (dir / name).string());
    std::ostringstream ss;
    ss << in.rdbuf();
    state = fnv1a(name, state);
    state = fnv1a(ss.str(), state);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state));
  return buf;
}

ExperimentData load_dataset(const std::filesystem::path& dir) {
  ExperimentData data;
  data.train_pool = load_embeddings(dir / kPoolFiles[0], dir / kPoolFiles[1]);
  data.probe_pool = load_embeddings(dir / kPoolFiles[2], dir / kPoolFiles[3]);
  if (data.train_pool.empty() || data.probe_pool.empty()) throw DataError("dataset in " + dir.string() + " is empty");
  data.digest = dataset_digest(dir);
  return data;
}

void apply_probe_keys(const KeyValues& values, ProbeConfig& config) {
  if (auto v = find(values, "probe_dropout")) config.dropout_rate = parse_double("probe_dropout", *v);
  if (auto v = find(values, "probe_epochs")) config.epochs = static_cast<int>(parse_int("probe_epochs", *v));
  if (auto v = find(values, "probe_learning_rate")) config.learning_rate = parse_double("probe_learning_rate", *v);
  if (auto v = find(values, "probe_weight_decay")) config.weight_decay = parse_double("probe_weight_decay", *v);
  if (auto v = find(values, "probe_batch_size")) config.batch_size = static_cast<int>(parse_int("probe_batch_size", *v));
}

KeyValues probe_config_snapshot(const ProbeConfig& config) {
  return {{"probe_dropout", format_double(config.dropout_rate)},
          {"probe_epochs", std::to_string(config.epochs)},
          {"probe_learning_rate", format_double(config.learning_rate)},
          {"probe_weight_decay", format_double(config.weight_decay)},
          {"probe_batch_size", std::to_string(config.batch_size)}};
}

void apply_data_keys(const KeyValues& values, GenDataConfig& config) {
  auto& s = config.synthetic;
  if (auto v = find(values, "num_shared")) s.num_shared = static_cast<int>(parse_int("num_shared", *v));
  if (auto v = find(values, "num_private")) s.num_private = static_cast<int>(parse_int("num_private", *v));
  if (auto v = find(values, "steps")) s.steps = static_cast<int>(parse_int("steps", *v));
  if (auto v = find(values, "dim")) s.dim = static_cast<int>(parse_int("dim", *v));
  if (auto v = find(values, "samples_per_cell")) s.samples_per_cell = static_cast<int>(parse_int("samples_per_cell", *v));
  if (auto v = find(values, "noise_std")) s.noise_std = parse_double("noise_std", *v);
  if (auto v = find(values, "seed")) s.seed = parse_seed("seed", *v);
  if (auto v = find(values, "probe_samples_per_cell")) {
    config.probe_samples_per_cell = static_cast<int>(parse_int("probe_samples_per_cell", *v));
  }
}

std::string run_id(const LossConfig& loss, std::uint64_t seed) {
  return to_string(loss.principle) + "-" + to_string(loss.objective) + "-l" + format_double(loss.lambda) + "-s" +
         std::to_string(seed);
}

RunOutput run_configuration(const TrainConfig& config, const ProbeConfig& probe, const ExperimentData& data,
                            const std::filesystem::path& checkpoint) {
  config.validate();
  probe.validate();
  const auto start = std::chrono::steady_clock::now();
  const DatasetSplit train_split = stratified_split(data.train_pool, kTrainingFractions, config.seed);
  const DatasetSplit probe_split = stratified_split(data.probe_pool, kProbeFractions, config.seed);
  ProbeConfig probe_config = probe;
  probe_config.seed = config.seed;

  RunOutput out;
  const ProbeReport report = with_precision(config.precision, [&](auto tag) {
    using Scalar = decltype(tag);
    auto result = train<Scalar>(config, train_split, checkpoint);
    out.record = std::move(result.record);
    return evaluate_run(result.best, probe_split, probe_config);
  });

  ResultRow& row = out.row;
  row.run_id = run_id(config.loss, config.seed);
  row.principle = to_string(config.loss.principle);
  row.objective = to_string(config.loss.objective);
  row.lambda = config.loss.lambda;
  row.gamma = out.record.gamma;
  row.seed = config.seed;
  row.best_val_total = out.record.best_val_total;
  row.set_probe_report(report);
  row.wall_time_s = seconds_since(start);
  return out;
}

void SweepSpec::validate() const {
  if (principles.empty() || objectives.empty() || lambdas.empty() || seeds.empty()) {
    throw ConfigError("sweep needs at least one principle, objective, lambda and seed");
  }
  if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
  for (double l : lambdas) {
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("lambda " + format_double(l) + " is outside [0, 1]");
  }
  for (const auto& config : expand()) config.validate();
  probe.validate();
}

std::vector<TrainConfig> SweepSpec::expand() const {
  std::vector<TrainConfig> configs;
  for (std::uint64_t seed : seeds) {
    bool lambda1_done = false;
    for (Principle p : principles) {
      for (Objective o : objectives) {
        for (double l : lambdas) {
          if (dedupe_lambda1 && l == 1.0) {
            if (lambda1_done) continue;
            lambda1_done = true;
          }
          TrainConfig c = base;
          c.seed = seed;
          c.loss.principle = p;
          c.loss.objective = o;
          c.loss.lambda = l;
          configs.push_back(c);
        }
      }
    }
  }
  return configs;
}

std::string SweepSpec::canonical_text() const {
  TrainConfig reference = base;
  reference.seed = 0;
  KeyValues kv = train_config_snapshot(reference);
  kv.erase("seed");
  kv.erase("principle");
  kv.erase("objective");
  kv.erase("lambda");
  kv.erase("dis_weight");
  for (auto& [k, v] : probe_config_snapshot(probe)) kv[k] = v;
  std::string list;
  for (Principle p : principles) list += to_string(p) + ",";
  kv["principles"] = list;
  list.clear();
  for (Objective o : objectives) list += to_string(o) + ",";
  kv["objectives"] = list;
  list.clear();
  for (double l : lambdas) list += format_double(l) + ",";
  kv["lambdas"] = list;
  list.clear();
  for (std::uint64_t s : seeds) list += std::to_string(s) + ",";
  kv["seeds"] = list;
  kv["dedupe_lambda1"] = dedupe_lambda1 ? "true" : "false";
  return format_key_values(kv);
}

void apply_sweep_keys(const KeyValues& values, SweepSpec& spec) {
  apply_train_keys(values, spec.base);
  apply_probe_keys(values, spec.probe);
  if (auto v = find(values, "principles")) {
    spec.principles.clear();
    for (const auto& item : split_list(*v)) spec.principles.push_back(parse_principle(item));
  }
  if (auto v = find(values, "objectives")) {
    spec.objectives.clear();
    for (const auto& item : split_list(*v)) spec.objectives.push_back(parse_objective(item));
  }
  if (auto v = find(values, "lambdas")) {
    spec.lambdas.clear();
    for (const auto& item : split_list(*v)) spec.lambdas.push_back(parse_double("lambdas", item));
  }
  if (auto v = find(values, "seeds")) {
    spec.seeds.clear();
    for (const auto& item : split_list(*v)) spec.seeds.push_back(parse_seed("seeds", item));
  }
  if (auto v = find(values, "parallelism")) spec.parallelism = static_cast<int>(parse_int("parallelism", *v));
  if (auto v = find(values, "dedupe_lambda1")) spec.dedupe_lambda1 = parse_bool("dedupe_lambda1", *v);
}

std::string sweep_digest(const SweepSpec& spec, const std::string& data_digest) {
  return fnv1a_hex(spec.canonical_text() + "dataset = " + data_digest + "\n");
}

SweepSummary run_sweep(const SweepSpec& spec, const ExperimentData& data, const std::filesystem::path& results,
                       const std::function<void(const ResultRow&)>& on_row) {
  spec.validate();
  ResultsWriter writer(results, sweep_digest(spec, data.digest));

  SweepSummary summary;
  std::vector<TrainConfig> pending;
  for (const auto& config : spec.expand()) {
    ++summary.planned;
    if (writer.contains(run_id(config.loss, config.seed))) ++summary.skipped;
    else pending.push_back(config);
  }

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> completed{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto worker = [&] {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= pending.size()) return;
      try {
        const RunOutput out = run_configuration(pending[i], spec.probe, data);
        writer.append(out.row);
        ++completed;
        if (on_row) on_row(out.row);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };

  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(spec.parallelism), pending.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  summary.completed = completed.load();
  return summary;
}

std::vector<ResultRow> run_baselines(const TrainConfig& base, const ProbeConfig& probe, const ExperimentData& data,
                                     std::uint64_t seed) {
  probe.validate();
  TrainConfig config = base;
  config.seed = seed;
  config.validate();
  const DatasetSplit train_split = stratified_split(data.train_pool, kTrainingFractions, seed);
  const DatasetSplit probe_split = stratified_split(data.probe_pool, kProbeFractions, seed);
  ProbeConfig probe_config = probe;
  probe_config.seed = seed;
  const std::string suffix = "-s" + std::to_string(seed);

  auto labelled = [&](const std::string& objective) {
    ResultRow row;
    row.run_id = "baseline-" + objective + suffix;
    row.principle = "baseline";
    row.objective = objective;
    row.seed = seed;
    return row;
  };
  auto set_concat = [](ResultRow& row, std::pair<double, double> acc) {
    row.acc[static_cast<int>(ProbeTask::shared_task)][static_cast<int>(FeatureKind::concat)] = acc.first;
    row.acc[static_cast<int>(ProbeTask::private_task)][static_cast<int>(FeatureKind::concat)] = acc.second;
  };

  std::vector<ResultRow> rows;
  {
    const auto start = std::chrono::steady_clock::now();
    ResultRow row = labelled("raw");
    set_concat(row, probe_single_features(pooled_raw_features(probe_split.train), pooled_raw_features(probe_split.val),
                                          pooled_raw_features(probe_split.test), probe_split, probe_config));
    row.wall_time_s = seconds_since(start);
    rows.push_back(row);
  }
  {
    TrainConfig recon = config;
    recon.loss.lambda = 1.0;
    RunOutput out = run_configuration(recon, probe, data);
    ResultRow row = labelled("recon_only");
    row.lambda = 1.0;
    row.gamma = out.row.gamma;
    row.best_val_total = out.row.best_val_total;
    row.recon_mse = out.row.recon_mse;
    for (int t = 0; t < 2; ++t)
      for (int f = 0; f < 3; ++f) row.acc[t][f] = out.row.acc[t][f];
    row.delta_shared = out.row.delta_shared;
    row.delta_private = out.row.delta_private;
    row.wall_time_s = out.row.wall_time_s;
    rows.push_back(row);
  }
  for (PairAnchor anchor : {PairAnchor::shared_factor, PairAnchor::private_factor}) {
    const auto start = std::chrono::steady_clock::now();
    ResultRow row = labelled(anchor == PairAnchor::shared_factor ? "cl_shared" : "cl_private");
    with_precision(config.precision, [&](auto tag) {
      using Scalar = decltype(tag);
      auto result = run_baseline_cl<Scalar>(config, train_split, anchor);
      row.best_val_total = result.record.best_val_total;
      set_concat(row, probe_single_features(extract_encoder_features(result.best, probe_split.train),
                                            extract_encoder_features(result.best, probe_split.val),
                                            extract_encoder_features(result.best, probe_split.test), probe_split,
                                            probe_config));
      return 0;
    });
    row.wall_time_s = seconds_since(start);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace mvdis
