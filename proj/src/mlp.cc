#include <cmath>

#include <Eigen/Sparse>

#include "optim.h"
#include "uap/common.h"
#include "uap/models.h"

namespace uap {

namespace {

using SparseColumns = Eigen::SparseMatrix<double, Eigen::ColMajor>;

// One column per example.
SparseColumns ToColumns(std::span<const FeatureVector> xs,
                        std::size_t n_features) {
  std::vector<Eigen::Triplet<double>> triplets;
  std::size_t nnz = 0;
  for (const auto& x : xs) nnz += x.nnz();
  triplets.reserve(nnz);
  for (std::size_t c = 0; c < xs.size(); ++c) {
    for (const auto& e : xs[c].entries())
      triplets.emplace_back(static_cast<int>(e.index), static_cast<int>(c),
                            e.value);
  }
  SparseColumns m(static_cast<Eigen::Index>(n_features),
                  static_cast<Eigen::Index>(xs.size()));
  m.setFromTriplets(triplets.begin(), triplets.end());
  return m;
}

template <typename Derived>
void LeakyInPlace(Eigen::MatrixBase<Derived>& z, double slope) {
  z = z.unaryExpr([slope](double v) { return v > 0 ? v : slope * v; });
}

}  // namespace

MlpModel::MlpModel(std::vector<std::size_t> layer_sizes, double leaky_slope,
                   double dropout_rate)
    : layer_sizes_(std::move(layer_sizes)),
      leaky_slope_(leaky_slope),
      dropout_rate_(dropout_rate) {
  Require(layer_sizes_.size() >= 2, ErrorCode::kInvalidArgument,
          "an MLP needs at least input and output layers");
  for (auto s : layer_sizes_)
    Require(s > 0, ErrorCode::kInvalidArgument, "layer sizes must be positive");
  Require(layer_sizes_.back() == 1, ErrorCode::kInvalidArgument,
          "output layer width must be 1");
  Require(dropout_rate_ >= 0.0 && dropout_rate_ < 1.0,
          ErrorCode::kInvalidArgument, "dropout_rate must lie in [0,1)");
  for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
    weights_.push_back(Eigen::MatrixXd::Zero(
        static_cast<Eigen::Index>(layer_sizes_[l + 1]),
        static_cast<Eigen::Index>(layer_sizes_[l])));
    biases_.push_back(
        Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layer_sizes_[l + 1])));
  }
}

void MlpModel::Validate() const {
  Require(weights_.size() + 1 == layer_sizes_.size() &&
              biases_.size() == weights_.size(),
          ErrorCode::kInvalidArgument, "layer count mismatch");
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Require(weights_[l].rows() == static_cast<Eigen::Index>(layer_sizes_[l + 1]) &&
                weights_[l].cols() == static_cast<Eigen::Index>(layer_sizes_[l]) &&
                biases_[l].size() == weights_[l].rows(),
            ErrorCode::kInvalidArgument,
            "layer " + std::to_string(l) + " dimensions are inconsistent");
    Require(weights_[l].allFinite() && biases_[l].allFinite(),
            ErrorCode::kNumerical, "MLP parameters must be finite");
  }
}

double MlpModel::Score(const FeatureVector& x) const {
  CheckSpace(x);
  Eigen::VectorXd h = biases_[0];
  for (const auto& e : x.entries()) h += weights_[0].col(e.index) * e.value;
  for (std::size_t l = 1; l < weights_.size(); ++l) {
    LeakyInPlace(h, leaky_slope_);
    h = weights_[l] * h + biases_[l];
  }
  return Sigmoid(h(0));
}

std::vector<double> MlpModel::ScoreBatch(
    std::span<const FeatureVector> xs) const {
  for (const auto& x : xs) CheckSpace(x);
  std::vector<double> out;
  out.reserve(xs.size());
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < xs.size(); start += kChunk) {
    const auto chunk = xs.subspan(start, std::min(kChunk, xs.size() - start));
    const SparseColumns x = ToColumns(chunk, n_features());
    Eigen::MatrixXd h = weights_[0] * x;
    h.colwise() += biases_[0];
    for (std::size_t l = 1; l < weights_.size(); ++l) {
      LeakyInPlace(h, leaky_slope_);
      Eigen::MatrixXd next = weights_[l] * h;
      next.colwise() += biases_[l];
      h = std::move(next);
    }
    for (Eigen::Index c = 0; c < h.cols(); ++c) out.push_back(Sigmoid(h(0, c)));
  }
  return out;
}

std::vector<double> MlpModel::InputGradient(const FeatureVector& x) const {
  CheckSpace(x);
  const std::size_t layers = weights_.size();
  std::vector<Eigen::VectorXd> pre(layers);
  pre[0] = biases_[0];
  for (const auto& e : x.entries()) pre[0] += weights_[0].col(e.index) * e.value;
  for (std::size_t l = 1; l < layers; ++l) {
    Eigen::VectorXd h = pre[l - 1];
    LeakyInPlace(h, leaky_slope_);
    pre[l] = weights_[l] * h + biases_[l];
  }
  const double s = Sigmoid(pre[layers - 1](0));
  Eigen::VectorXd delta = Eigen::VectorXd::Constant(1, s * (1.0 - s));
  for (std::size_t l = layers - 1; l > 0; --l) {
    Eigen::VectorXd back = weights_[l].transpose() * delta;
    const double slope = leaky_slope_;
    back = back.cwiseProduct(pre[l - 1].unaryExpr(
        [slope](double v) { return v > 0 ? 1.0 : slope; }));
    delta = std::move(back);
  }
  const Eigen::VectorXd g = weights_[0].transpose() * delta;
  return std::vector<double>(g.data(), g.data() + g.size());
}

std::unique_ptr<Classifier> MlpModel::Clone() const {
  return std::make_unique<MlpModel>(*this);
}

std::vector<std::size_t> StandardMlpLayers(std::size_t n_features) {
  return {n_features, 1024, 512, 1};
}

std::vector<std::size_t> SmallMlpLayers(std::size_t n_features) {
  return {n_features, 256, 128, 1};
}

std::vector<std::size_t> DeepMlpLayers(std::size_t n_features) {
  return {n_features, 512, 256, 128, 64, 1};
}

MlpModel train_mlp(const LabeledDataset& train, const TrainConfig& cfg,
                   const std::vector<std::size_t>& layer_sizes,
                   const TrainHooks& hooks) {
  cfg.Validate();
  Require(!train.empty(), ErrorCode::kInvalidArgument, "empty training set");
  Require(!layer_sizes.empty() && layer_sizes.front() == train.spec().n_features,
          ErrorCode::kSpecMismatch,
          "MLP input width must equal the dataset's n_features");
  MlpModel model(layer_sizes, cfg.leaky_slope, cfg.dropout_rate);
  const std::size_t layers = model.n_layers();

  // He initialisation for LeakyReLU layers, Glorot-style for the output.
  Rng init(DeriveSeed(cfg.seed, 0x1417));
  for (std::size_t l = 0; l < layers; ++l) {
    const double fan_in = static_cast<double>(layer_sizes[l]);
    const double stddev =
        l + 1 < layers
            ? std::sqrt(2.0 / ((1.0 + cfg.leaky_slope * cfg.leaky_slope) * fan_in))
            : std::sqrt(1.0 / fan_in);
    auto& w = model.mutable_weights(l);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = stddev * init.Normal();
  }

  std::vector<internal::BlockOptimizer> w_opt, b_opt;
  for (std::size_t l = 0; l < layers; ++l) {
    w_opt.emplace_back(cfg, static_cast<std::size_t>(model.weights(l).size()));
    b_opt.emplace_back(cfg, static_cast<std::size_t>(model.biases(l).size()));
  }
  // regularization_c does not apply here; dropout is the only regulariser.
  const double keep = 1.0 - cfg.dropout_rate;
  const double slope = cfg.leaky_slope;
  if (hooks.loss_trace) hooks.loss_trace->clear();

  std::vector<Eigen::MatrixXd> pre(layers), act(layers), mask(layers);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::size_t epoch_rows = 0;
    const auto batches = internal::EpochBatches(
        train.size(), static_cast<std::size_t>(cfg.batch_size), cfg.seed, epoch);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      auto batch = internal::GatherBatch(train, batches[bi]);
      if (hooks.on_batch) hooks.on_batch(epoch, model, batch);
      if (batch.xs.empty()) continue;
      const auto bsz = static_cast<Eigen::Index>(batch.xs.size());
      const SparseColumns x = ToColumns(batch.xs, model.n_features());
      Rng drop(DeriveSeed(cfg.seed, static_cast<std::uint64_t>(epoch), bi));

      // Forward. act[l] holds the (masked) input to layer l for l >= 1.
      pre[0] = model.weights(0) * x;
      pre[0].colwise() += model.biases(0);
      for (std::size_t l = 1; l < layers; ++l) {
        act[l] = pre[l - 1];
        LeakyInPlace(act[l], slope);
        if (cfg.dropout_rate > 0.0) {
          mask[l].resize(act[l].rows(), act[l].cols());
          for (Eigen::Index i = 0; i < mask[l].size(); ++i)
            mask[l].data()[i] = drop.Uniform() < keep ? 1.0 / keep : 0.0;
          act[l] = act[l].cwiseProduct(mask[l]);
        }
        pre[l] = model.weights(l) * act[l];
        pre[l].colwise() += model.biases(l);
      }

      // Backward through mean binary cross-entropy.
      Eigen::MatrixXd delta(1, bsz);
      double batch_loss = 0.0;
      for (Eigen::Index c = 0; c < bsz; ++c) {
        const double z = pre[layers - 1](0, c);
        const double y = batch.ys[static_cast<std::size_t>(c)];
        batch_loss += internal::Softplus(z) - y * z;
        delta(0, c) = (Sigmoid(z) - y) / static_cast<double>(bsz);
      }
      batch_loss /= static_cast<double>(bsz);
      Require(std::isfinite(batch_loss), ErrorCode::kNumerical,
              "training loss became non-finite in epoch " +
                  std::to_string(epoch));

      for (std::size_t l = layers - 1;; --l) {
        Eigen::MatrixXd grad_w =
            l == 0 ? Eigen::MatrixXd(delta * x.transpose())
                   : Eigen::MatrixXd(delta * act[l].transpose());
        Eigen::VectorXd grad_b = delta.rowwise().sum();
        Eigen::MatrixXd next;
        if (l > 0) {
          next = model.weights(l).transpose() * delta;
          if (cfg.dropout_rate > 0.0) next = next.cwiseProduct(mask[l]);
          next = next.cwiseProduct(pre[l - 1].unaryExpr(
              [slope](double v) { return v > 0 ? 1.0 : slope; }));
        }
        w_opt[l].Step(model.mutable_weights(l).data(), grad_w.data());
        b_opt[l].Step(model.mutable_biases(l).data(), grad_b.data());
        if (l == 0) break;
        delta = std::move(next);
      }
      epoch_loss += batch_loss * static_cast<double>(bsz);
      epoch_rows += static_cast<std::size_t>(bsz);
    }
    if (hooks.loss_trace)
      hooks.loss_trace->push_back(
          epoch_loss / static_cast<double>(std::max<std::size_t>(1, epoch_rows)));
  }
  model.Validate();
  return model;
}

}  // namespace uap
