#include <algorithm>
#include <cmath>
#include <numeric>

#include "optim.h"
#include "uap/common.h"
#include "uap/models.h"

namespace uap {

std::string_view ModelKindName(ModelKind kind) {
  switch (kind) {
    case ModelKind::kLogisticRegression:
      return "logistic_regression";
    case ModelKind::kLinearSvm:
      return "linear_svm";
    case ModelKind::kMlp:
      return "mlp";
    case ModelKind::kTreeEnsemble:
      return "tree_ensemble";
  }
  return "unknown";
}

ModelKind ParseModelKind(std::string_view name) {
  for (auto k : {ModelKind::kLogisticRegression, ModelKind::kLinearSvm,
                 ModelKind::kMlp, ModelKind::kTreeEnsemble}) {
    if (ModelKindName(k) == name) return k;
  }
  if (name == "lr") return ModelKind::kLogisticRegression;
  if (name == "svm") return ModelKind::kLinearSvm;
  if (name == "gbdt") return ModelKind::kTreeEnsemble;
  Fail(ErrorCode::kInvalidArgument,
       "unknown model family '" + std::string(name) + "'");
}

double Sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void Classifier::CheckSpace(const FeatureVector& x) const {
  Require(x.n_features() == n_features(), ErrorCode::kSpecMismatch,
          "input has " + std::to_string(x.n_features()) +
              " features, model expects " + std::to_string(n_features()));
}

std::vector<double> Classifier::ScoreBatch(
    std::span<const FeatureVector> xs) const {
  std::vector<double> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(Score(x));
  return out;
}

std::vector<double> Classifier::InputGradient(const FeatureVector&) const {
  Fail(ErrorCode::kNonDifferentiable,
       std::string(ModelKindName(kind())) + " model is non-differentiable");
}

PredictionThreshold::PredictionThreshold(double c) : value(c) {
  Require(c > 0.0 && c < 1.0, ErrorCode::kInvalidArgument,
          "prediction threshold must lie in (0,1)");
}

std::vector<double> predict_scores(const Classifier& model,
                                   std::span<const FeatureVector> xs) {
  return model.ScoreBatch(xs);
}

std::vector<int> predict_labels(const Classifier& model,
                                std::span<const FeatureVector> xs,
                                const PredictionThreshold& threshold) {
  const auto scores = model.ScoreBatch(xs);
  std::vector<int> labels(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    labels[i] = scores[i] >= threshold.value ? kMalware : kBenign;
  return labels;
}

std::vector<double> input_gradient(const Classifier& model,
                                   const FeatureVector& x) {
  return model.InputGradient(x);
}

LinearModel::LinearModel(ModelKind kind, std::vector<double> weights,
                         double bias)
    : kind_(kind), weights_(std::move(weights)), bias_(bias) {
  Require(kind == ModelKind::kLogisticRegression ||
              kind == ModelKind::kLinearSvm,
          ErrorCode::kInvalidArgument, "linear model kind must be LR or SVM");
  Require(!weights_.empty(), ErrorCode::kInvalidArgument,
          "linear model needs at least one weight");
  Require(std::isfinite(bias_) &&
              std::all_of(weights_.begin(), weights_.end(),
                          [](double w) { return std::isfinite(w); }),
          ErrorCode::kNumerical, "linear model parameters must be finite");
}

double LinearModel::Margin(const FeatureVector& x) const {
  CheckSpace(x);
  double m = bias_;
  for (const auto& e : x.entries()) m += weights_[e.index] * e.value;
  return m;
}

double LinearModel::Score(const FeatureVector& x) const {
  return Sigmoid(Margin(x));
}

std::vector<double> LinearModel::InputGradient(const FeatureVector& x) const {
  const double s = Sigmoid(Margin(x));
  const double d = s * (1.0 - s);
  std::vector<double> g(weights_.size());
  for (std::size_t j = 0; j < g.size(); ++j) g[j] = d * weights_[j];
  return g;
}

std::unique_ptr<Classifier> LinearModel::Clone() const {
  return std::make_unique<LinearModel>(*this);
}

void TrainConfig::Validate() const {
  Require(learning_rate > 0.0 && std::isfinite(learning_rate),
          ErrorCode::kInvalidArgument, "learning_rate must be > 0");
  Require(epochs >= 1, ErrorCode::kInvalidArgument, "epochs must be >= 1");
  Require(batch_size >= 1, ErrorCode::kInvalidArgument,
          "batch_size must be >= 1");
  Require(dropout_rate >= 0.0 && dropout_rate < 1.0,
          ErrorCode::kInvalidArgument, "dropout_rate must lie in [0,1)");
}

namespace internal {

std::vector<std::vector<std::size_t>> EpochBatches(std::size_t n,
                                                   std::size_t batch_size,
                                                   std::uint64_t seed,
                                                   int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(DeriveSeed(seed, 0x5eed, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.Below(i)]);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

TrainingBatch GatherBatch(const LabeledDataset& data,
                          const std::vector<std::size_t>& rows) {
  TrainingBatch batch;
  batch.xs.reserve(rows.size());
  batch.ys.reserve(rows.size());
  for (auto r : rows) {
    batch.xs.push_back(data.example(r));
    batch.ys.push_back(data.label(r));
  }
  return batch;
}

}  // namespace internal

namespace {

void RequireBothClasses(const LabeledDataset& train) {
  Require(!train.empty(), ErrorCode::kInvalidArgument, "empty training set");
  Require(train.CountLabel(kBenign) > 0 && train.CountLabel(kMalware) > 0,
          ErrorCode::kInvalidArgument,
          "training data must contain both classes");
}

LinearModel TrainLinear(ModelKind kind, const LabeledDataset& train,
                        const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.Validate();
  RequireBothClasses(train);
  const std::size_t n = train.spec().n_features;
  const double l2 = cfg.regularization_c > 0
                        ? 1.0 / (cfg.regularization_c *
                                 static_cast<double>(train.size()))
                        : 0.0;

  // Parameters packed as [w_0 .. w_{n-1}, b].
  std::vector<double> params(n + 1, 0.0), grad(n + 1);
  internal::BlockOptimizer opt(cfg, n + 1);
  auto current = [&] {
    return LinearModel(kind, std::vector<double>(params.begin(),
                                                 params.end() - 1),
                       params.back());
  };
  if (hooks.loss_trace) hooks.loss_trace->clear();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::size_t epoch_rows = 0;
    for (const auto& rows : internal::EpochBatches(
             train.size(), static_cast<std::size_t>(cfg.batch_size), cfg.seed,
             epoch)) {
      auto batch = internal::GatherBatch(train, rows);
      if (hooks.on_batch) hooks.on_batch(epoch, current(), batch);
      if (batch.xs.empty()) continue;
      std::fill(grad.begin(), grad.end(), 0.0);
      const double inv_b = 1.0 / static_cast<double>(batch.xs.size());
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < batch.xs.size(); ++i) {
        const auto& x = batch.xs[i];
        double m = params[n];
        for (const auto& e : x.entries()) m += params[e.index] * e.value;
        double dm;
        if (kind == ModelKind::kLogisticRegression) {
          const double y = batch.ys[i];
          batch_loss += internal::Softplus(m) - y * m;
          dm = Sigmoid(m) - y;
        } else {
          const double ys = batch.ys[i] == kMalware ? 1.0 : -1.0;
          const double slack = 1.0 - ys * m;
          batch_loss += std::max(0.0, slack);
          dm = slack > 0 ? -ys : 0.0;
        }
        if (dm == 0.0) continue;
        for (const auto& e : x.entries()) grad[e.index] += dm * e.value * inv_b;
        grad[n] += dm * inv_b;
      }
      double reg = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        grad[j] += l2 * params[j];
        reg += params[j] * params[j];
      }
      batch_loss = batch_loss * inv_b + 0.5 * l2 * reg;
      Require(std::isfinite(batch_loss), ErrorCode::kNumerical,
              "training loss became non-finite in epoch " +
                  std::to_string(epoch));
      opt.Step(params.data(), grad.data());
      epoch_loss += batch_loss * static_cast<double>(batch.xs.size());
      epoch_rows += batch.xs.size();
    }
    if (hooks.loss_trace)
      hooks.loss_trace->push_back(epoch_loss /
                                  static_cast<double>(std::max<std::size_t>(1, epoch_rows)));
  }
  return current();
}

}  // namespace

LinearModel train_logistic_regression(const LabeledDataset& train,
                                      const TrainConfig& cfg,
                                      const TrainHooks& hooks) {
  return TrainLinear(ModelKind::kLogisticRegression, train, cfg, hooks);
}

LinearModel train_linear_svm(const LabeledDataset& train,
                             const TrainConfig& cfg, const TrainHooks& hooks) {
  return TrainLinear(ModelKind::kLinearSvm, train, cfg, hooks);
}

}  // namespace uap
