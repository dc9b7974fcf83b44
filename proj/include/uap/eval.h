#ifndef UAP_EVAL_H_
#define UAP_EVAL_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "uap/feature_attacks.h"
#include "uap/feature_data.h"
#include "uap/models.h"
#include "uap/problem_space.h"

namespace uap {

struct EvaluationReport {
  double uer = 0.0;
  std::size_t n_evasive = 0;
  std::size_t n_total = 0;
  std::size_t n_corrupted = 0;
  std::size_t n_parse_error = 0;
  std::optional<double> auc_roc;
  std::map<double, double> tpr_at_fpr;
  // UER after the first k chain steps (or the first k ranked UAP indices).
  std::vector<double> per_length_uer;
};

using Perturbation = std::variant<UapVector, TransformationChain>;

struct UerOptions {
  // Chains need the toolkit; UAPs ignore it.
  const Toolkit* toolkit = nullptr;
  std::uint64_t seed = 0;
  // Stochastic chains can be evaluated several times; counts are pooled over
  // repetitions so uer is the pooled mean. One realization by default.
  std::size_t monte_carlo_reps = 1;
};

// Applies the perturbation to every example. Evasive iff the score drops
// below the threshold; corrupted outcomes are never evasive; parse errors
// leave the denominator.
EvaluationReport uer(const Classifier& model, const LabeledDataset& malware_set,
                     const Perturbation& perturbation,
                     const PredictionThreshold& threshold,
                     const UerOptions& options = {});

// Mann-Whitney statistic, ties count one half. Both classes required.
double auc_roc(std::span<const double> scores, std::span<const int> labels);

// TPR at the lowest threshold (predict positive iff score >= t) whose
// empirical FPR is at most fpr_level. No interpolation.
double tpr_at_fpr(std::span<const double> scores, std::span<const int> labels,
                  double fpr_level);

// Fills auc_roc and tpr_at_fpr of `report` from the model's clean scores.
void AttachCleanMetrics(const Classifier& model, const LabeledDataset& test,
                        const std::vector<double>& fpr_levels,
                        EvaluationReport& report);

struct DeltaVariationSummary {
  std::vector<double> mean_abs_change;  // per feature
  // Mean over surviving outcomes of (changed features / n_features).
  double mean_fraction_modified = 0.0;
  std::size_t n_surviving = 0;
};

DeltaVariationSummary delta_variation(std::span<const FeatureVector> clean_set,
                                      const TransformationChain& chain,
                                      const Toolkit& toolkit,
                                      std::uint64_t seed);

// Row c holds mean_abs_change for chains[c]; a heatmap source.
std::vector<std::vector<double>> delta_variation_matrix(
    std::span<const FeatureVector> clean_set,
    const std::vector<TransformationChain>& chains, const Toolkit& toolkit,
    std::uint64_t seed);

struct IncidenceSummary {
  std::map<std::string, double> incidence;  // every group of the space
  std::size_t n_qualifying = 0;
  bool empty() const { return n_qualifying == 0; }
};

// A transformation perturbs a feature when its mask sets a feature that is 0
// in the baseline, or when it has a stochastic entry with p > 0 on it.
IncidenceSummary incidence_by_group(const Toolkit& toolkit,
                                    const std::map<int, double>& uer_by_id,
                                    double uer_threshold,
                                    const FeatureVector& baseline);

struct L0Distribution {
  std::vector<double> distortions;  // per qualifying transformation, id order
  std::map<long, std::size_t> histogram;  // unit bins, key = rounded value
  double mean = 0.0;
  double median = 0.0;
};

// Masks: l0 distance from the baseline after applying the mask. Stochastic
// effects: expected number of changed features given no failure. Only
// transformations with uer_by_id >= uer_threshold count; pass a null map to
// include everything.
L0Distribution l0_distortion_distribution(
    const Toolkit& toolkit, const FeatureVector& baseline,
    const std::map<int, double>* uer_by_id, double uer_threshold);

struct UerHistogram {
  std::vector<int> ids;
  std::vector<double> uer;  // aligned with ids
  std::array<std::size_t, 10> bins{};  // [0,10%), ..., [90%,100%]
  std::size_t n_examples = 0;
};

std::size_t UerBin(double uer);

// Single-transformation UER on the model's true positives.
UerHistogram per_transformation_uer_histogram(
    const Classifier& model, const Toolkit& toolkit,
    const LabeledDataset& test_malware, const PredictionThreshold& threshold,
    std::uint64_t seed);

enum class SearchStrategy { kGreedyUer, kGreedyConfidence, kGenetic };

std::string_view SearchStrategyName(SearchStrategy s);
SearchStrategy ParseSearchStrategy(std::string_view name);

struct AdaptiveAttackConfig {
  SearchStrategy strategy = SearchStrategy::kGreedyUer;
  std::size_t max_len = kDefaultMaxChainLength;
  std::uint64_t seed = 0;
  GpConfig gp;  // used by kGenetic; max_len and seed are overridden
};

struct AdaptiveAttackResult {
  TransformationChain chain;
  EvaluationReport report;  // on the test true positives
  std::uint64_t search_rounds = 0;
};

// Runs a fresh search against `model` on the exploration malware and reports
// the found chain on the test set's true positives. Defended models are
// evaluated through this entry point so that no stale chain is reused.
AdaptiveAttackResult adaptive_problem_space_attack(
    const Classifier& model, const Toolkit& toolkit,
    const LabeledDataset& exploration, const LabeledDataset& test,
    const PredictionThreshold& threshold, const AdaptiveAttackConfig& cfg);

// Emitters. Report CSV columns:
//   name,uer,n_evasive,n_total,n_corrupted,n_parse_error,auc_roc,
//   tpr@<level>... (levels of the first report), per_length_uer
// where per_length_uer is a ';'-joined list.
std::string ReportToJson(const EvaluationReport& report);
std::string ReportsToCsv(const std::vector<std::string>& names,
                         const std::vector<EvaluationReport>& reports);
std::string GridToCsv(const std::vector<std::vector<double>>& grid);
std::string HistogramToCsv(const UerHistogram& hist);

}  // namespace uap

#endif  // UAP_EVAL_H_
