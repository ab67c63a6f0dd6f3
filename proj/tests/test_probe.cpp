#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mvdis/errors.hpp"
#include "mvdis/probe.hpp"

using namespace mvdis;

namespace {

// Two Gaussian blobs far apart along the first axis.
LabeledFeatures blobs(int per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  LabeledFeatures out;
  out.features.resize(2 * per_class, 3);
  for (int i = 0; i < 2 * per_class; ++i) {
    const int label = i % 2;
    out.labels.push_back(label);
    out.features(i, 0) = (label == 0 ? -3.0 : 3.0) + noise(rng);
    out.features(i, 1) = noise(rng);
    out.features(i, 2) = noise(rng);
  }
  return out;
}

DatasetSplit synthetic_split(std::uint64_t seed) {
  SyntheticConfig c;
  c.num_shared = 4;
  c.num_private = 5;
  c.steps = 4;
  c.dim = 18;
  c.samples_per_cell = 10;
  c.seed = seed;
  return stratified_split(generate_synthetic(c), {0.6, 0.2, 0.2}, seed);
}

void set_identity(Affine<double>& layer, Index col_offset) {
  auto& w = layer.weight.mutable_data();
  w.setZero();
  const Index cols = layer.weight.dim(1);
  for (Index c = 0; c < cols; ++c) w[(c + col_offset) * cols + c] = 1.0;
  layer.bias.mutable_data().setZero();
}

}  // namespace

TEST(ProbeConfig, Validation) {
  ProbeConfig c;
  EXPECT_NO_THROW(c.validate());
  c.dropout_rate = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ProbeConfig{};
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainProbe, SeparableClassesReachPerfectValidation) {
  const auto train = blobs(40, 1), val = blobs(20, 2);
  ProbeConfig c;
  c.epochs = 60;
  c.learning_rate = 0.05;
  const auto probe = train_probe(train, val, 2, c);
  EXPECT_EQ(probe.accuracy(val.features, val.labels), 1.0);
}

TEST(TrainProbe, EvaluationIsDeterministic) {
  const auto train = blobs(30, 3), val = blobs(10, 4);
  ProbeConfig c;
  c.seed = 9;
  const auto a = train_probe(train, val, 2, c);
  const auto b = train_probe(train, val, 2, c);
  EXPECT_TRUE((a.weight.array() == b.weight.array()).all());
  EXPECT_EQ(a.predict(val.features), a.predict(val.features));
  EXPECT_EQ(a.predict(val.features), b.predict(val.features));
}

TEST(TrainProbe, RandomLabelsGiveChanceAccuracy) {
  const int classes = 4;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> label(0, classes - 1);
  auto make = [&](int n) {
    LabeledFeatures out;
    out.features.resize(n, 8);
    for (Index i = 0; i < out.features.size(); ++i) out.features.data()[i] = normal(rng);
    for (int i = 0; i < n; ++i) out.labels.push_back(label(rng));
    return out;
  };
  const auto train = make(400), val = make(200), test = make(1000);
  const auto probe = train_probe(train, val, classes, ProbeConfig{});
  EXPECT_NEAR(probe.accuracy(test.features, test.labels), 1.0 / classes, 0.1);
}

TEST(TrainProbe, Errors) {
  auto train = blobs(5, 1);
  const auto val = blobs(5, 2);
  std::fill(train.labels.begin(), train.labels.end(), 1);
  EXPECT_THROW(train_probe(train, val, 2, ProbeConfig{}), DataError);
  train = blobs(5, 1);
  train.labels[0] = 7;
  EXPECT_THROW(train_probe(train, val, 2, ProbeConfig{}), DataError);
  train = blobs(5, 1);
  LabeledFeatures narrow{val.features.leftCols(2), val.labels};
  EXPECT_THROW(train_probe(train, narrow, 2, ProbeConfig{}), DimensionError);
}

TEST(ProbeReport, MarginArithmetic) {
  ProbeReport r;
  r.acc[1][0] = 0.71;
  r.acc[1][1] = 0.61;
  r.acc[0][1] = 0.9;
  r.acc[0][2] = 0.5;
  r.acc[0][0] = 0.8;
  r.fill_margins();
  EXPECT_NEAR(r.delta_private, 0.10, 1e-12);
  EXPECT_NEAR(r.delta_shared, 0.1, 1e-12);
}

TEST(ExtractFeatures, WidthsDeterminismAndDimCheck) {
  const auto split = synthetic_split(1);
  const auto params = init_params<double>(18, 18, 2);
  const auto a = extract_features(params, split.test);
  const auto b = extract_features(params, split.test);
  EXPECT_EQ(a.z_p.cols(), 9);
  EXPECT_EQ(a.z_s.cols(), 9);
  EXPECT_EQ(a.concat.cols(), 18);
  EXPECT_EQ(a.concat.rows(), static_cast<Index>(split.test.size()));
  EXPECT_TRUE((a.concat.array() == b.concat.array()).all());
  EXPECT_TRUE((a.concat.leftCols(9).array() == a.z_p.array()).all());

  std::vector<FactorSample> twice{split.test[0], split.test[0]};
  const auto same = extract_features(params, twice);
  EXPECT_TRUE((same.concat.row(0).array() == same.concat.row(1).array()).all());

  EXPECT_THROW(extract_features(init_params<double>(16, 16, 2), split.test), FormatError);
}

TEST(PooledRaw, IsTimeMean) {
  const auto split = synthetic_split(1);
  const auto raw = pooled_raw_features(split.val);
  for (Index c = 0; c < raw.cols(); ++c) {
    double s = 0.0;
    for (Index t = 0; t < split.val[3].latent.rows(); ++t) s += split.val[3].latent(t, c);
    EXPECT_NEAR(raw(3, c), s / static_cast<double>(split.val[3].latent.rows()), 1e-12);
  }
}

TEST(EvaluateRun, DuplicatedFeaturesGiveZeroMargins) {
  const auto split = synthetic_split(2);
  const auto raw_train = pooled_raw_features(split.train);
  const auto raw_val = pooled_raw_features(split.val);
  const auto raw_test = pooled_raw_features(split.test);
  auto dup = [](const LatentMatrix& m) {
    FeatureSet fs{m, m, LatentMatrix(m.rows(), 2 * m.cols())};
    fs.concat << m, m;
    return fs;
  };
  const auto report = probe_report_from_features({dup(raw_train), dup(raw_val), dup(raw_test)}, split, ProbeConfig{});
  EXPECT_NEAR(report.delta_private, 0.0, 0.03);
  EXPECT_NEAR(report.delta_shared, 0.0, 0.03);
  for (const auto& task : report.acc) {
    for (double a : task) EXPECT_TRUE(a >= 0.0 && a <= 1.0);
  }
}

TEST(EvaluateRun, SwappingSubspacesNegatesMargins) {
  const auto split = synthetic_split(3);
  const auto params = init_params<double>(18, 18, 4);
  auto swapped = params.clone();
  std::swap(swapped.private_encoder, swapped.shared_encoder);
  const auto a = evaluate_run(params, split, ProbeConfig{});
  const auto b = evaluate_run(swapped, split, ProbeConfig{});
  EXPECT_EQ(a.delta_private, -b.delta_private);
  EXPECT_EQ(a.delta_shared, -b.delta_shared);
  for (int task = 0; task < 2; ++task) {
    EXPECT_EQ(a.acc[task][0], b.acc[task][1]);
    EXPECT_EQ(a.acc[task][1], b.acc[task][0]);
  }
}

TEST(EvaluateRun, IdentityModelHasZeroReconstructionError) {
  auto split = synthetic_split(4);
  for (auto* part : {&split.train, &split.val, &split.test}) {
    for (auto& s : *part) s.latent = s.latent.cwiseAbs();
  }
  auto params = init_params<double>(18, 18, 0);
  set_identity(params.private_encoder.hidden, 0);
  set_identity(params.private_encoder.output, 0);
  set_identity(params.shared_encoder.hidden, 0);
  set_identity(params.shared_encoder.output, 9);
  set_identity(params.decoder.hidden, 0);
  set_identity(params.decoder.output, 0);
  EXPECT_EQ(reconstruction_mse(params, split.test), 0.0);
  const auto report = evaluate_run(params, split, ProbeConfig{});
  EXPECT_EQ(report.recon_mse, 0.0);
}

TEST(EvaluateRun, EmptyTestSplit) {
  auto split = synthetic_split(1);
  split.test.clear();
  EXPECT_THROW(evaluate_run(init_params<double>(18, 18, 0), split, ProbeConfig{}), DataError);
}

TEST(ClassCount, CoversAllSplits) {
  const auto split = synthetic_split(1);
  EXPECT_EQ(class_count(split, ProbeTask::shared_task), 4);
  EXPECT_EQ(class_count(split, ProbeTask::private_task), 5);
  const auto labels = labels_for(split.test, ProbeTask::private_task);
  EXPECT_EQ(labels.size(), split.test.size());
}
