#ifndef UAP_MODELS_H_
#define UAP_MODELS_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "uap/feature_data.h"

namespace uap {

enum class ModelKind { kLogisticRegression, kLinearSvm, kMlp, kTreeEnsemble };

std::string_view ModelKindName(ModelKind kind);
ModelKind ParseModelKind(std::string_view name);

// Uniform scoring interface shared by every classifier family. Scores are the
// probability of the malware class and always lie in [0, 1].
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual ModelKind kind() const = 0;
  virtual std::size_t n_features() const = 0;

  virtual double Score(const FeatureVector& x) const = 0;
  virtual std::vector<double> ScoreBatch(
      std::span<const FeatureVector> xs) const;

  virtual bool differentiable() const { return false; }
  // Gradient of the malware score with respect to the input, in inference
  // mode. Non-differentiable families throw kNonDifferentiable.
  virtual std::vector<double> InputGradient(const FeatureVector& x) const;

  virtual std::unique_ptr<Classifier> Clone() const = 0;

 protected:
  void CheckSpace(const FeatureVector& x) const;
};

double Sigmoid(double z);

class LinearModel final : public Classifier {
 public:
  LinearModel(ModelKind kind, std::vector<double> weights, double bias);

  ModelKind kind() const override { return kind_; }
  std::size_t n_features() const override { return weights_.size(); }

  // w.x + b. For the SVM this is the decision value; Score() maps it through
  // a logistic link with unit scale.
  double Margin(const FeatureVector& x) const;
  double Score(const FeatureVector& x) const override;

  bool differentiable() const override { return true; }
  std::vector<double> InputGradient(const FeatureVector& x) const override;
  std::unique_ptr<Classifier> Clone() const override;

  const std::vector<double>& weights() const { return weights_; }
  double bias() const { return bias_; }
  std::vector<double>& mutable_weights() { return weights_; }
  double& mutable_bias() { return bias_; }

 private:
  ModelKind kind_;
  std::vector<double> weights_;
  double bias_;
};

// Fully connected network: affine -> LeakyReLU per hidden layer, affine ->
// sigmoid at the single output unit.
class MlpModel final : public Classifier {
 public:
  // Zero-initialised parameters.
  MlpModel(std::vector<std::size_t> layer_sizes, double leaky_slope = 0.1,
           double dropout_rate = 0.2);

  ModelKind kind() const override { return ModelKind::kMlp; }
  std::size_t n_features() const override { return layer_sizes_.front(); }

  double Score(const FeatureVector& x) const override;
  std::vector<double> ScoreBatch(
      std::span<const FeatureVector> xs) const override;

  bool differentiable() const override { return true; }
  std::vector<double> InputGradient(const FeatureVector& x) const override;
  std::unique_ptr<Classifier> Clone() const override;

  const std::vector<std::size_t>& layer_sizes() const { return layer_sizes_; }
  double leaky_slope() const { return leaky_slope_; }
  double dropout_rate() const { return dropout_rate_; }
  std::size_t n_layers() const { return weights_.size(); }

  // weights(l) maps layer l activations (cols) to layer l+1 (rows).
  const Eigen::MatrixXd& weights(std::size_t l) const { return weights_[l]; }
  const Eigen::VectorXd& biases(std::size_t l) const { return biases_[l]; }
  Eigen::MatrixXd& mutable_weights(std::size_t l) { return weights_[l]; }
  Eigen::VectorXd& mutable_biases(std::size_t l) { return biases_[l]; }

  void Validate() const;

 private:
  std::vector<std::size_t> layer_sizes_;
  double leaky_slope_;
  double dropout_rate_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // x[feature] <= threshold goes left
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output, already scaled by shrinkage

  bool is_leaf() const { return feature < 0; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double Predict(const FeatureVector& x) const;
  std::size_t LeafCount() const;
};

class TreeEnsembleModel final : public Classifier {
 public:
  TreeEnsembleModel(std::size_t n_features, double base_score,
                    double shrinkage, std::size_t max_leaves,
                    std::vector<DecisionTree> trees);

  ModelKind kind() const override { return ModelKind::kTreeEnsemble; }
  std::size_t n_features() const override { return n_features_; }

  double RawScore(const FeatureVector& x) const;
  double Score(const FeatureVector& x) const override;
  std::unique_ptr<Classifier> Clone() const override;

  double base_score() const { return base_score_; }
  double shrinkage() const { return shrinkage_; }
  std::size_t max_leaves() const { return max_leaves_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }

 private:
  std::size_t n_features_;
  double base_score_;
  double shrinkage_;
  std::size_t max_leaves_;
  std::vector<DecisionTree> trees_;
};

enum class Optimizer { kAdam, kSgd };

struct TrainConfig {
  Optimizer optimizer = Optimizer::kAdam;
  double learning_rate = 1e-3;
  int epochs = 20;
  int batch_size = 256;
  std::uint64_t seed = 0;
  // Inverse regularisation strength. The per-example L2 coefficient is
  // 1 / (C * n_train); C <= 0 disables the penalty.
  double regularization_c = 1.0;
  double dropout_rate = 0.2;
  double leaky_slope = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void Validate() const;
};

struct TrainingBatch {
  std::vector<FeatureVector> xs;
  std::vector<int> ys;
};

// Called once per minibatch before the gradient step. It may rewrite the
// batch (adversarial training does); `current` is the model as trained so far.
using BatchHook = std::function<void(int epoch, const Classifier& current,
                                     TrainingBatch& batch)>;

struct TrainHooks {
  BatchHook on_batch;
  std::vector<double>* loss_trace = nullptr;  // mean loss per epoch
};

LinearModel train_logistic_regression(const LabeledDataset& train,
                                      const TrainConfig& cfg,
                                      const TrainHooks& hooks = {});
LinearModel train_linear_svm(const LabeledDataset& train,
                             const TrainConfig& cfg,
                             const TrainHooks& hooks = {});
MlpModel train_mlp(const LabeledDataset& train, const TrainConfig& cfg,
                   const std::vector<std::size_t>& layer_sizes,
                   const TrainHooks& hooks = {});

// Architectures used in the experiments, parameterised by the input width.
std::vector<std::size_t> StandardMlpLayers(std::size_t n_features);
std::vector<std::size_t> SmallMlpLayers(std::size_t n_features);
std::vector<std::size_t> DeepMlpLayers(std::size_t n_features);

struct GbdtConfig {
  std::size_t n_trees = 100;
  std::size_t max_leaves = 31;
  double shrinkage = 0.1;
  std::size_t min_samples_leaf = 20;
  double min_sum_hessian = 1e-3;
  double l2_leaf = 0.0;

  void Validate() const;
};

TreeEnsembleModel train_gbdt(const LabeledDataset& train,
                             const GbdtConfig& cfg);

struct PredictionThreshold {
  double value = 0.5;

  explicit PredictionThreshold(double c = 0.5);
};

std::vector<double> predict_scores(const Classifier& model,
                                   std::span<const FeatureVector> xs);
// Label 1 iff score >= threshold.
std::vector<int> predict_labels(const Classifier& model,
                                std::span<const FeatureVector> xs,
                                const PredictionThreshold& threshold);
std::vector<double> input_gradient(const Classifier& model,
                                   const FeatureVector& x);

// Versioned text serialisation; doubles are written with 17 significant
// digits so a round trip is exact.
std::string SerializeModel(const Classifier& model);
std::unique_ptr<Classifier> DeserializeModel(const std::string& text);
void SaveModel(const Classifier& model, const std::filesystem::path& path);
std::unique_ptr<Classifier> LoadModel(const std::filesystem::path& path);

}  // namespace uap

#endif  // UAP_MODELS_H_
