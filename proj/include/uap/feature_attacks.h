#ifndef UAP_FEATURE_ATTACKS_H_
#define UAP_FEATURE_ATTACKS_H_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "uap/feature_data.h"
#include "uap/models.h"

namespace uap {

struct AttackBudget {
  std::size_t l0_max = 20;
  bool add_only = true;

  void Validate() const;
};

// Feature-space universal perturbation: a set of binary features forced to 1.
// `ranked` keeps the crafting order (most salient first) so that truncated
// budgets can be evaluated; Sorted() gives the set view.
struct UapVector {
  std::vector<std::uint32_t> ranked;

  std::vector<std::uint32_t> Sorted() const;
  UapVector Truncated(std::size_t k) const;
  std::size_t size() const { return ranked.size(); }
};

// One-line text form "uap v1: i1,i2,..." with indices sorted ascending.
std::string FormatUap(const UapVector& uap);
UapVector ParseUap(const std::string& line);

// Greedy saliency attack: up to l0_max times, recompute the input gradient and
// flip the zero-valued binary feature with the most negative derivative of the
// malware score. Stops as soon as the example scores below the threshold or
// no feature would lower the score.
FeatureVector input_specific_attack(const Classifier& model,
                                    const FeatureVector& x,
                                    const AttackBudget& budget,
                                    const PredictionThreshold& threshold =
                                        PredictionThreshold(0.5));

// Ranks binary features by their gradient averaged over the malware examples
// and keeps the l0_max most benign-directed ones. Ties go to the lower index.
UapVector craft_uap_avg_jacobian(const Classifier& model,
                                 const LabeledDataset& malware_set,
                                 const AttackBudget& budget);

// The l0_max binary features with the most negative weights.
UapVector craft_uap_linear(const LinearModel& model, const AttackBudget& budget);

// Bitwise OR of x with the UAP set; never clears a feature.
FeatureVector apply_uap(const FeatureVector& x, const UapVector& uap);

struct TransferReport {
  std::size_t n_malware = 0;
  std::size_t n_true_positive = 0;
  std::size_t n_evasive = 0;
  double uer = 0.0;
  // uer_by_budget[k-1] is the UER of the first k ranked indices.
  std::vector<double> uer_by_budget;
};

// Applies the UAP to the target model's true-positive malware.
TransferReport transfer_eval(const UapVector& uap, const Classifier& target,
                             const LabeledDataset& malware_set,
                             const PredictionThreshold& threshold);

}  // namespace uap

#endif  // UAP_FEATURE_ATTACKS_H_
