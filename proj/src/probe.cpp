#include "mvdis/probe.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "mvdis/losses.hpp"
#include "mvdis/optim.hpp"

namespace mvdis {

namespace {

template <typename Scalar>
LatentMatrix to_matrix(const Tensor<Scalar>& t) {
  return t.matrix().template cast<double>();
}

std::uint64_t task_seed(std::uint64_t seed, ProbeTask task) {
  return seed * 2654435761ull + static_cast<std::uint64_t>(task) + 1;
}

}  // namespace

void ProbeConfig::validate() const {
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("probe dropout must lie in [0, 1)");
  if (epochs < 1) throw ConfigError("probe epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("probe learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("probe weight decay must be non-negative");
  if (batch_size < 1) throw ConfigError("probe batch size must be >= 1");
}

template <typename Scalar>
FeatureSet extract_features(const ModelParams<Scalar>& params, std::span<const FactorSample> samples) {
  NoGradGuard guard;
  const auto x = stack_latents<Scalar>(samples);
  if (x.shape().back() != params.dim) {
    throw FormatError("checkpoint expects latent dim " + std::to_string(params.dim) + ", data has " +
                      std::to_string(x.shape().back()));
  }
  auto [z_p, z_s] = encode(params, x);
  FeatureSet out;
  out.z_p = to_matrix(mean(z_p, 1));
  out.z_s = to_matrix(mean(z_s, 1));
  out.concat.resize(out.z_p.rows(), out.z_p.cols() + out.z_s.cols());
  out.concat << out.z_p, out.z_s;
  return out;
}

template <typename Scalar>
LatentMatrix extract_encoder_features(const EncoderParams<Scalar>& params, std::span<const FactorSample> samples) {
  NoGradGuard guard;
  const auto x = stack_latents<Scalar>(samples);
  if (x.shape().back() != params.dim) {
    throw FormatError("checkpoint expects latent dim " + std::to_string(params.dim) + ", data has " +
                      std::to_string(x.shape().back()));
  }
  return to_matrix(mean(params.encoder(x), 1));
}

LatentMatrix pooled_raw_features(std::span<const FactorSample> samples) {
  if (samples.empty()) throw ContractError("no samples to pool");
  LatentMatrix out(static_cast<Index>(samples.size()), samples.front().latent.cols());
  for (std::size_t i = 0; i < samples.size(); ++i) out.row(static_cast<Index>(i)) = samples[i].latent.colwise().mean();
  return out;
}

std::vector<int> LinearClassifier::predict(const LatentMatrix& features) const {
  const Eigen::MatrixXd logits = (features * weight).rowwise() + bias;
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Index r = 0; r < logits.rows(); ++r) {
    Index best = 0;
    logits.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

double LinearClassifier::accuracy(const LatentMatrix& features, std::span<const int> labels) const {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw DimensionError("feature rows and label count differ");
  }
  if (labels.empty()) return 0.0;
  const auto predicted = predict(features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

LinearClassifier train_probe(const LabeledFeatures& train, const LabeledFeatures& val, int num_classes,
                             const ProbeConfig& config) {
  config.validate();
  const Index n = train.features.rows();
  const Index f = train.features.cols();
  if (n == 0 || static_cast<std::size_t>(n) != train.labels.size()) {
    throw DataError("probe training set is empty or misaligned with its labels");
  }
  if (val.features.cols() != f || static_cast<std::size_t>(val.features.rows()) != val.labels.size()) {
    throw DimensionError("probe validation features do not match the training features");
  }
  for (int label : train.labels) {
    if (label < 0 || label >= num_classes) throw DataError("probe label outside [0, num_classes)");
  }
  std::vector<int> distinct = train.labels;
  std::sort(distinct.begin(), distinct.end());
  if (std::unique(distinct.begin(), distinct.end()) - distinct.begin() < 2) {
    throw DataError("probe training labels contain a single class");
  }

  std::mt19937_64 rng(config.seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(f));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  Eigen::ArrayXd w0(f * num_classes);
  for (Index i = 0; i < w0.size(); ++i) w0[i] = uniform(rng);
  TensorD weight(Shape{f, num_classes}, w0, true);
  TensorD bias = TensorD::zeros(Shape{num_classes}, true);
  AdamW<double> optimizer({weight, bias}, {config.learning_rate, config.weight_decay});

  auto snapshot = [&] {
    LinearClassifier c;
    c.weight = weight.matrix();
    c.bias = Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), num_classes);
    return c;
  };

  LinearClassifier best = snapshot();
  double best_acc = -1.0;
  const double keep = 1.0 - config.dropout_rate;
  std::bernoulli_distribution keep_draw(keep);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Index start = 0; start < n; start += config.batch_size) {
      const Index b = std::min<Index>(config.batch_size, n - start);
      Eigen::ArrayXd x(b * f), onehot = Eigen::ArrayXd::Zero(b * num_classes);
      for (Index r = 0; r < b; ++r) {
        const Index src = order[static_cast<std::size_t>(start + r)];
        for (Index c = 0; c < f; ++c) {
          // Inverted dropout on the input features.
          const double mask = config.dropout_rate > 0.0 ? (keep_draw(rng) ? 1.0 / keep : 0.0) : 1.0;
          x[r * f + c] = train.features(src, c) * mask;
        }
        onehot[r * num_classes + train.labels[static_cast<std::size_t>(src)]] = 1.0;
      }
      TensorD xb(Shape{b, f}, std::move(x));
      TensorD yb(Shape{b, num_classes}, std::move(onehot));
      auto logits = add(matmul(xb, weight), bias);
      auto loss = mean(sub(logsumexp(logits, 1), sum(mul(logits, yb), 1)));
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
    }
    const LinearClassifier current = snapshot();
    const double acc = current.accuracy(val.features, val.labels);
    if (acc > best_acc) {
      best_acc = acc;
      best = current;
    }
  }
  return best;
}

void ProbeReport::fill_margins() {
  delta_private = accuracy(ProbeTask::private_task, FeatureKind::z_p) - accuracy(ProbeTask::private_task, FeatureKind::z_s);
  delta_shared = accuracy(ProbeTask::shared_task, FeatureKind::z_s) - accuracy(ProbeTask::shared_task, FeatureKind::z_p);
}

std::vector<int> labels_for(std::span<const FactorSample> samples, ProbeTask task) {
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(task == ProbeTask::shared_task ? s.shared_label : s.private_label);
  return labels;
}

int class_count(const DatasetSplit& split, ProbeTask task) {
  int top = -1;
  for (const auto* part : {&split.train, &split.val, &split.test}) {
    for (int label : labels_for(*part, task)) top = std::max(top, label);
  }
  return top + 1;
}

ProbeReport probe_report_from_features(const ProbeFeatures& features, const DatasetSplit& split,
                                       const ProbeConfig& config) {
  if (split.test.empty()) throw DataError("probe test split is empty");
  ProbeReport report;
  for (ProbeTask task : {ProbeTask::shared_task, ProbeTask::private_task}) {
    ProbeConfig task_config = config;
    task_config.seed = task_seed(config.seed, task);
    const int classes = class_count(split, task);
    const auto train_labels = labels_for(split.train, task);
    const auto val_labels = labels_for(split.val, task);
    const auto test_labels = labels_for(split.test, task);
    for (FeatureKind kind : {FeatureKind::z_p, FeatureKind::z_s, FeatureKind::concat}) {
      auto pick = [kind](const FeatureSet& fs) -> const LatentMatrix& {
        return kind == FeatureKind::z_p ? fs.z_p : kind == FeatureKind::z_s ? fs.z_s : fs.concat;
      };
      const auto probe = train_probe({pick(features.train), train_labels}, {pick(features.val), val_labels}, classes,
                                     task_config);
      report.acc[static_cast<int>(task)][static_cast<int>(kind)] = probe.accuracy(pick(features.test), test_labels);
    }
  }
  report.fill_margins();
  return report;
}

std::pair<double, double> probe_single_features(const LatentMatrix& train, const LatentMatrix& val,
                                                const LatentMatrix& test, const DatasetSplit& split,
                                                const ProbeConfig& config) {
  if (split.test.empty()) throw DataError("probe test split is empty");
  double acc[2] = {};
  for (ProbeTask task : {ProbeTask::shared_task, ProbeTask::private_task}) {
    ProbeConfig task_config = config;
    task_config.seed = task_seed(config.seed, task);
    const auto probe = train_probe({train, labels_for(split.train, task)}, {val, labels_for(split.val, task)},
                                   class_count(split, task), task_config);
    acc[static_cast<int>(task)] = probe.accuracy(test, labels_for(split.test, task));
  }
  return {acc[0], acc[1]};
}

template <typename Scalar>
double reconstruction_mse(const ModelParams<Scalar>& params, std::span<const FactorSample> samples) {
  NoGradGuard guard;
  const auto x = stack_latents<Scalar>(samples);
  auto [z_p, z_s] = encode(params, x);
  const auto xhat = decode(params, z_p, z_s);
  return static_cast<double>(mean(square(sub(xhat, x))).item());
}

template <typename Scalar>
ProbeReport evaluate_run(const ModelParams<Scalar>& params, const DatasetSplit& split, const ProbeConfig& config) {
  if (split.test.empty()) throw DataError("probe test split is empty");
  ProbeFeatures features{extract_features(params, split.train), extract_features(params, split.val),
                         extract_features(params, split.test)};
  ProbeReport report = probe_report_from_features(features, split, config);
  report.recon_mse = reconstruction_mse(params, split.test);
  return report;
}

template FeatureSet extract_features(const ModelParams<float>&, std::span<const FactorSample>);
template FeatureSet extract_features(const ModelParams<double>&, std::span<const FactorSample>);
template LatentMatrix extract_encoder_features(const EncoderParams<float>&, std::span<const FactorSample>);
template LatentMatrix extract_encoder_features(const EncoderParams<double>&, std::span<const FactorSample>);
template double reconstruction_mse(const ModelParams<float>&, std::span<const FactorSample>);
template double reconstruction_mse(const ModelParams<double>&, std::span<const FactorSample>);
template ProbeReport evaluate_run(const ModelParams<float>&, const DatasetSplit&, const ProbeConfig&);
template ProbeReport evaluate_run(const ModelParams<double>&, const DatasetSplit&, const ProbeConfig&);

}  // namespace mvdis
