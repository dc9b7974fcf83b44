#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uap/common.h"
#include "uap/feature_data.h"
#include "uap/models.h"

namespace uap {
namespace {

SpecPtr Binary(std::size_t n) { return MakeSpec(FeatureSpaceSpec::AllBinary(n)); }

SpecPtr Continuous(std::size_t n) {
  FeatureSpaceSpec s;
  s.n_features = n;
  s.feature_kinds.assign(n, FeatureKind::kContinuous);
  s.feature_groups.assign(n, "dense");
  return MakeSpec(std::move(s));
}

FeatureVector Dense(const SpecPtr& spec, const std::vector<double>& v) {
  std::vector<FeatureVector::Entry> e;
  for (std::size_t i = 0; i < v.size(); ++i)
    e.push_back({static_cast<std::uint32_t>(i), v[i]});
  return FeatureVector(spec, e);
}

// One informative binary feature plus noise features; label = feature 0.
LabeledDataset SeparableBinary(std::size_t n, std::uint64_t seed) {
  auto spec = Binary(10);
  LabeledDataset d(spec);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::uint32_t> idx;
    const bool mal = i % 2 == 1;
    if (mal) idx.push_back(0);
    for (std::uint32_t j = 1; j < 10; ++j)
      if (rng.Bernoulli(0.3)) idx.push_back(j);
    d.Add(FeatureVector::FromIndices(spec, idx), mal ? kMalware : kBenign,
          std::to_string(i));
  }
  return d;
}

LabeledDataset OneDimensional() {
  auto spec = Binary(1);
  LabeledDataset d(spec);
  for (int i = 0; i < 20; ++i) {
    std::vector<std::uint32_t> idx;
    if (i % 2) idx.push_back(0);
    d.Add(FeatureVector::FromIndices(spec, idx), i % 2, std::to_string(i));
  }
  return d;
}

double BestThresholdAccuracy(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<double> cuts = s;
  cuts.push_back(2.0);
  double best = 0;
  for (double t : cuts) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < s.size(); ++i) ok += ((s[i] >= t) == (y[i] == 1));
    best = std::max(best, static_cast<double>(ok) / s.size());
  }
  return best;
}

double Accuracy(const Classifier& m, const LabeledDataset& d) {
  auto p = predict_labels(m, d.examples(), PredictionThreshold(0.5));
  std::size_t ok = 0;
  for (std::size_t i = 0; i < p.size(); ++i) ok += p[i] == d.label(i);
  return static_cast<double>(ok) / p.size();
}

double Norm(const std::vector<double>& w) {
  return std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
}

TrainConfig Quick(int epochs = 30) {
  TrainConfig c;
  c.learning_rate = 0.05;
  c.epochs = epochs;
  c.batch_size = 16;
  c.seed = 1;
  return c;
}

TEST(Linear, ScoreExamples) {
  auto spec = Binary(2);
  LinearModel zero(ModelKind::kLogisticRegression, {0, 0}, 0);
  EXPECT_DOUBLE_EQ(zero.Score(FeatureVector(spec)), 0.5);
  LinearModel m(ModelKind::kLogisticRegression, {-2, 1}, 0);
  std::vector<std::uint32_t> one = {1};
  EXPECT_NEAR(m.Score(FeatureVector::FromIndices(spec, one)), 0.7310585786, 1e-9);
  EXPECT_TRUE(predict_scores(m, {}).empty());
  EXPECT_THROW(m.Score(FeatureVector(Binary(3))), Error);
}

TEST(Linear, GradientExample) {
  auto spec = Continuous(2);
  LinearModel m(ModelKind::kLogisticRegression, {1, -1}, 0);
  auto x = FeatureVector(spec);
  auto g = input_gradient(m, x);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_NEAR(g[0], 0.25, 1e-12);
  EXPECT_NEAR(g[1], -0.25, 1e-12);
  const double h = 1e-5;
  for (std::size_t j = 0; j < 2; ++j) {
    std::vector<double> up(2, 0.0), dn(2, 0.0);
    up[j] = h;
    dn[j] = -h;
    double fd = (m.Score(Dense(spec, up)) - m.Score(Dense(spec, dn))) / (2 * h);
    EXPECT_LT(std::abs(fd - g[j]) / std::abs(g[j]), 1e-4);
  }
}

TEST(Predict, BoundaryInclusive) {
  auto spec = Binary(1);
  // sigmoid(b) = s  =>  b = log(s / (1 - s))
  auto at = [&](double s) {
    return LinearModel(ModelKind::kLogisticRegression, {0}, std::log(s / (1 - s)));
  };
  std::vector<FeatureVector> x = {FeatureVector(spec)};
  auto m90 = at(0.9);
  PredictionThreshold c(m90.Score(x[0]));
  EXPECT_EQ(predict_labels(m90, x, c)[0], 1);
  EXPECT_EQ(predict_labels(at(0.89), x, PredictionThreshold(0.90))[0], 0);
  EXPECT_EQ(predict_labels(at(0.1), x, PredictionThreshold(0.87))[0], 0);
  EXPECT_EQ(predict_labels(at(0.95), x, PredictionThreshold(0.87))[0], 1);
  EXPECT_THROW(PredictionThreshold(1.5), Error);
}

TEST(LogisticRegression, OneDimensionalSign) {
  auto m = train_logistic_regression(OneDimensional(), Quick());
  EXPECT_GT(m.weights()[0], 0.0);
}

TEST(LogisticRegression, SeparableTrainingAccuracy) {
  auto d = SeparableBinary(2000, 4);
  auto m = train_logistic_regression(d, Quick(10));
  EXPECT_GE(Accuracy(m, d), 0.99);
  EXPECT_GE(BestThresholdAccuracy(predict_scores(m, d.examples()), d.labels()), 0.99);
}

TEST(LogisticRegression, ZeroEpochsRejected) {
  auto c = Quick();
  c.epochs = 0;
  EXPECT_THROW(train_logistic_regression(OneDimensional(), c), Error);
}

TEST(LogisticRegression, LossDecreases) {
  std::vector<double> trace;
  TrainHooks hooks;
  hooks.loss_trace = &trace;
  train_logistic_regression(SeparableBinary(400, 2), Quick(10), hooks);
  ASSERT_EQ(trace.size(), 10u);
  EXPECT_LT(trace.back(), trace.front());
}

TEST(LinearSvm, OneDimensionalSign) {
  auto m = train_linear_svm(OneDimensional(), Quick());
  EXPECT_EQ(m.kind(), ModelKind::kLinearSvm);
  EXPECT_GT(m.weights()[0], 0.0);
}

TEST(LinearSvm, NormShrinksWithC) {
  auto d = SeparableBinary(400, 5);
  double prev = 1e300;
  for (double c : {1.0, 0.1, 0.01}) {
    auto cfg = Quick(40);
    cfg.regularization_c = c;
    double n = Norm(train_linear_svm(d, cfg).weights());
    EXPECT_LT(n, prev) << "C=" << c;
    prev = n;
  }
}

TEST(LinearSvm, DuplicatedRowsSamePredictions) {
  auto d = SeparableBinary(200, 6);
  LabeledDataset twice(d.spec_ptr());
  for (std::size_t i = 0; i < d.size(); ++i) {
    twice.Add(d.example(i), d.label(i), d.ids()[i]);
    twice.Add(d.example(i), d.label(i), d.ids()[i] + "b");
  }
  auto a = train_linear_svm(d, Quick());
  auto b = train_linear_svm(twice, Quick());
  auto pa = predict_labels(a, d.examples(), PredictionThreshold(0.5));
  auto pb = predict_labels(b, d.examples(), PredictionThreshold(0.5));
  EXPECT_EQ(pa, pb);
}

TEST(Mlp, ZeroWeights) {
  auto spec = Continuous(3);
  MlpModel m({3, 4, 1});
  m.mutable_biases(1)(0) = 0.7;
  auto x = Dense(spec, {0.3, -1.0, 2.0});
  EXPECT_DOUBLE_EQ(m.Score(x), Sigmoid(0.7));
  for (double g : m.InputGradient(x)) EXPECT_EQ(g, 0.0);
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  auto spec = Continuous(4);
  MlpModel m({4, 5, 3, 1});
  Rng rng(8);
  for (std::size_t l = 0; l < m.n_layers(); ++l) {
    for (Eigen::Index i = 0; i < m.weights(l).size(); ++i)
      m.mutable_weights(l).data()[i] = rng.Normal();
    for (Eigen::Index i = 0; i < m.biases(l).size(); ++i)
      m.mutable_biases(l)(i) = 0.1 * rng.Normal();
  }
  std::vector<double> v = {0.3, 0.7, 0.2, 0.9};
  auto g = m.InputGradient(Dense(spec, v));
  const double h = 1e-6;
  for (std::size_t j = 0; j < 4; ++j) {
    auto up = v, dn = v;
    up[j] += h;
    dn[j] -= h;
    double fd = (m.Score(Dense(spec, up)) - m.Score(Dense(spec, dn))) / (2 * h);
    EXPECT_NEAR(fd, g[j], 1e-4 * std::max(1.0, std::abs(g[j])));
  }
}

TEST(Mlp, Xor) {
  auto spec = Binary(2);
  LabeledDataset d(spec);
  std::vector<std::vector<std::uint32_t>> rows = {{}, {0}, {1}, {0, 1}};
  std::vector<int> y = {0, 1, 1, 0};
  for (int i = 0; i < 4; ++i) d.Add(FeatureVector::FromIndices(spec, rows[i]), y[i], std::to_string(i));
  TrainConfig c;
  c.learning_rate = 0.01;
  c.epochs = 2000;
  c.batch_size = 4;
  c.dropout_rate = 0.0;
  c.regularization_c = 0.0;
  c.seed = 3;
  auto m = train_mlp(d, c, {2, 8, 1});
  EXPECT_DOUBLE_EQ(Accuracy(m, d), 1.0);
}

TEST(Mlp, DeterministicWithoutDropout) {
  auto d = SeparableBinary(100, 9);
  auto c = Quick(3);
  c.dropout_rate = 0.0;
  auto a = train_mlp(d, c, {10, 6, 1});
  auto b = train_mlp(d, c, {10, 6, 1});
  EXPECT_EQ(SerializeModel(a), SerializeModel(b));
}

TEST(Mlp, Architectures) {
  EXPECT_EQ(StandardMlpLayers(500).front(), 500u);
  EXPECT_EQ(StandardMlpLayers(500).back(), 1u);
  EXPECT_LT(SmallMlpLayers(500).size(), DeepMlpLayers(500).size());
}

TEST(Gbdt, NonDifferentiable) {
  auto m = train_gbdt(OneDimensional(), GbdtConfig{.n_trees = 2, .min_samples_leaf = 1});
  EXPECT_FALSE(m.differentiable());
  try {
    input_gradient(m, FeatureVector(Binary(1)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonDifferentiable);
    EXPECT_NE(std::string(e.what()).find("non-differentiable"), std::string::npos);
  }
}

TEST(Gbdt, SingleSplitMatchesBruteForce) {
  auto spec = Continuous(1);
  LabeledDataset d(spec);
  std::vector<double> xs = {0.05, 0.1, 0.2, 0.3, 0.35, 0.62, 0.7, 0.8, 0.9, 0.95};
  for (std::size_t i = 0; i < xs.size(); ++i)
    d.Add(Dense(spec, {xs[i]}), xs[i] > 0.5 ? 1 : 0, std::to_string(i));
  // Brute force: the only zero-error cut lies between .35 and .62.
  GbdtConfig c;
  c.n_trees = 1;
  c.max_leaves = 2;
  c.min_samples_leaf = 1;
  c.shrinkage = 1.0;
  auto m = train_gbdt(d, c);
  const auto& root = m.trees()[0].nodes[0];
  ASSERT_FALSE(root.is_leaf());
  EXPECT_GE(root.threshold, 0.35);
  EXPECT_LT(root.threshold, 0.62);
  EXPECT_EQ(m.trees()[0].LeafCount(), 2u);
  EXPECT_DOUBLE_EQ(Accuracy(m, d), 1.0);
}

TEST(Gbdt, BaseScoreIsPriorLogOdds) {
  auto spec = Binary(2);
  LabeledDataset d(spec);
  for (int i = 0; i < 10; ++i) {
    std::vector<std::uint32_t> idx;
    if (i < 3) idx.push_back(0);
    d.Add(FeatureVector::FromIndices(spec, idx), i < 3 ? 1 : 0, std::to_string(i));
  }
  GbdtConfig c;
  c.n_trees = 0;
  auto m = train_gbdt(d, c);
  EXPECT_NEAR(m.base_score(), std::log(0.3 / 0.7), 1e-12);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(m.Score(d.example(i)), 0.3, 1e-12);
}

TEST(Gbdt, LeafCap) {
  auto d = SeparableBinary(400, 3);
  GbdtConfig c;
  c.n_trees = 5;
  c.max_leaves = 3;
  c.min_samples_leaf = 2;
  auto m = train_gbdt(d, c);
  for (const auto& t : m.trees()) EXPECT_LE(t.LeafCount(), 3u);
}

TEST(Serialization, RoundTripEveryFamily) {
  auto d = SeparableBinary(200, 7);
  std::vector<std::unique_ptr<Classifier>> models;
  models.push_back(std::make_unique<LinearModel>(train_logistic_regression(d, Quick(3))));
  models.push_back(std::make_unique<LinearModel>(train_linear_svm(d, Quick(3))));
  models.push_back(std::make_unique<MlpModel>(train_mlp(d, Quick(3), {10, 4, 1})));
  models.push_back(std::make_unique<TreeEnsembleModel>(
      train_gbdt(d, GbdtConfig{.n_trees = 3, .min_samples_leaf = 5})));
  for (const auto& m : models) {
    auto text = SerializeModel(*m);
    auto back = DeserializeModel(text);
    EXPECT_EQ(back->kind(), m->kind());
    EXPECT_EQ(SerializeModel(*back), text);
    for (std::size_t i = 0; i < 20; ++i)
      EXPECT_EQ(back->Score(d.example(i)), m->Score(d.example(i)));
  }
  EXPECT_THROW(DeserializeModel("garbage"), Error);
}

TEST(ModelKind, Names) {
  EXPECT_EQ(ParseModelKind("lr"), ModelKind::kLogisticRegression);
  EXPECT_EQ(ParseModelKind("gbdt"), ModelKind::kTreeEnsemble);
  EXPECT_THROW(ParseModelKind("forest"), Error);
}

}  // namespace
}  // namespace uap
