#ifndef UAP_DEFENSES_H_
#define UAP_DEFENSES_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "uap/common.h"
#include "uap/feature_attacks.h"
#include "uap/feature_data.h"
#include "uap/models.h"
#include "uap/problem_space.h"

namespace uap {

// pure: every malware row is replaced by its adversarial version.
// mixed: every malware row is kept and gets one adversarial twin (1:1).
enum class AdvMixMode { kPure, kMixed };

std::string_view AdvMixModeName(AdvMixMode mode);
AdvMixMode ParseAdvMixMode(std::string_view name);

// Counters filled by the defended trainers so the mix ratio can be audited.
struct MixAccounting {
  std::uint64_t defended_batches = 0;
  std::uint64_t benign_rows = 0;
  std::uint64_t clean_malware_rows = 0;
  std::uint64_t adversarial_malware_rows = 0;
  // Adversarial slots that fell back to the clean row (corrupted or parse
  // error outcome).
  std::uint64_t fallback_rows = 0;
  std::uint64_t empty_chains = 0;
};

struct FeatureSpaceDefenseConfig {
  std::size_t l0_budget = 20;
  AdvMixMode mix = AdvMixMode::kMixed;
  // Decision threshold the training-time attack aims below.
  double attack_threshold = 0.5;

  void Validate() const;
};

// Adversarial training with the input-specific saliency attack run against
// the partially trained model on every minibatch. Tree ensembles are
// rejected since they are not trained in minibatches.
std::unique_ptr<Classifier> adv_train_feature_space(
    ModelKind family, const LabeledDataset& train,
    const FeatureSpaceDefenseConfig& cfg, const TrainConfig& train_cfg,
    const std::vector<std::size_t>& mlp_layers = {},
    MixAccounting* accounting = nullptr);

struct UapAdvTrainingConfig {
  int last_n_epochs = 3;
  AdvMixMode mix = AdvMixMode::kMixed;
  std::size_t max_chain_len = kDefaultMaxChainLength;
  double attack_threshold = 0.5;
  std::uint64_t seed = 0;

  void Validate(int total_epochs) const;
};

// During the last N epochs, each minibatch first runs a greedy UER search
// against the partial model on the batch's true-positive malware, then feeds
// the found chain's outputs into the step per the mix mode.
MlpModel adv_train_uap_problem_space(const LabeledDataset& train,
                                     const Toolkit& toolkit,
                                     const UapAdvTrainingConfig& cfg,
                                     const TrainConfig& train_cfg,
                                     const std::vector<std::size_t>& layers,
                                     MixAccounting* accounting = nullptr);

// Same loop for LR / linear SVM.
LinearModel adv_train_uap_problem_space_linear(
    ModelKind kind, const LabeledDataset& train, const Toolkit& toolkit,
    const UapAdvTrainingConfig& cfg, const TrainConfig& train_cfg,
    MixAccounting* accounting = nullptr);

// Per-feature modification statistics of a chain, features independent.
// Binary features are only ever set to one. Continuous features carry an
// equal-width histogram of the observed deltas (x' - x) spanning
// [min delta, max delta]; a sampled delta is uniform inside the drawn bin.
struct FeatureStat {
  std::uint32_t feature = 0;
  bool binary = true;
  double modify_probability = 0.0;
  double delta_lo = 0.0;
  double delta_hi = 0.0;
  std::vector<double> bin_probabilities;  // continuous only, sums to 1
};

class PerturbationStatModel {
 public:
  PerturbationStatModel() = default;
  PerturbationStatModel(std::size_t n_features, std::vector<FeatureStat> stats);

  std::size_t n_features() const { return n_features_; }
  // Only features with a non-zero probability are stored, sorted by index.
  const std::vector<FeatureStat>& stats() const { return stats_; }
  double ModifyProbability(std::uint32_t feature) const;
  std::size_t n_pairs() const { return n_pairs_; }
  void set_n_pairs(std::size_t n) { n_pairs_ = n; }

  void Validate() const;

 private:
  std::size_t n_features_ = 0;
  std::vector<FeatureStat> stats_;
  std::size_t n_pairs_ = 0;
};

inline constexpr std::size_t kDefaultDeltaBins = 10;

// clean[i] pairs with transformed[i]; failed outcomes are skipped.
PerturbationStatModel fit_perturbation_stat_model(
    std::span<const FeatureVector> clean,
    std::span<const ApplicationOutcome> transformed,
    std::size_t n_bins = kDefaultDeltaBins);

FeatureVector sample_perturbation(const PerturbationStatModel& stat,
                                  const FeatureVector& x, Rng& rng);

// Text format:
//   perturbation-stat v1
//   n_features <n>
//   pairs <surviving pairs used in the fit>
//   feature <index> binary <p>
//   feature <index> continuous <p> <delta_lo> <delta_hi> <k> <p_1> .. <p_k>
//   end
std::string FormatStatModel(const PerturbationStatModel& stat);
PerturbationStatModel ParseStatModel(const std::string& text);
void SaveStatModel(const PerturbationStatModel& stat,
                   const std::filesystem::path& path);
PerturbationStatModel LoadStatModel(const std::filesystem::path& path);

// Training set for the stat-model defense. Twins are drawn with a generator
// derived from (seed, row index) and get the id "<id>+adv".
LabeledDataset AugmentWithStatModel(const LabeledDataset& train,
                                    const PerturbationStatModel& stat,
                                    AdvMixMode mix, std::uint64_t seed,
                                    MixAccounting* accounting = nullptr);

// Retrains the tree ensemble from scratch on the augmented set.
TreeEnsembleModel adv_train_gbdt_with_stat_model(
    const LabeledDataset& train, const PerturbationStatModel& stat,
    AdvMixMode mix, const GbdtConfig& gbdt_cfg, std::uint64_t seed,
    MixAccounting* accounting = nullptr);

// Throws kNumerical if `adv` cleared a binary feature that `x` had set.
void CheckAddOnly(const FeatureVector& x, const FeatureVector& adv);

}  // namespace uap

#endif  // UAP_DEFENSES_H_
