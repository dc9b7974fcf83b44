#ifndef UAP_PROBLEM_SPACE_H_
#define UAP_PROBLEM_SPACE_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "uap/common.h"
#include "uap/feature_data.h"
#include "uap/models.h"

namespace uap {

enum class SamplerKind { kSetToOne, kAddUniform, kSetUniform };

struct DeltaSampler {
  SamplerKind kind = SamplerKind::kSetToOne;
  double lo = 0.0;
  double hi = 0.0;
};

struct FeatureEffect {
  std::uint32_t feature = 0;
  double modify_probability = 1.0;
  DeltaSampler sampler;
};

// Fixed set of features a transformation switches on, side effects included.
struct DeterministicMask {
  std::vector<std::uint32_t> set_features;
};

// Per-feature random modifications plus failure probabilities. The failure
// draws happen first: parse error, then corruption.
struct StochasticEffect {
  std::vector<FeatureEffect> entries;
  double corruption_probability = 0.0;
  double parse_error_probability = 0.0;
};

using EffectModel = std::variant<DeterministicMask, StochasticEffect>;

struct Transformation {
  int id = 0;
  std::string name;
  EffectModel effect;
};

// The attacker's toolbox. Transformations are kept sorted by id.
class Toolkit {
 public:
  Toolkit() = default;
  explicit Toolkit(std::vector<Transformation> transformations);

  // Checks indices against the space, masks and set_to_one only on binary
  // features, uniform samplers only on continuous ones, probabilities in
  // [0,1].
  void Validate(const FeatureSpaceSpec& spec) const;

  const Transformation& Get(int id) const;
  bool Contains(int id) const;
  const std::vector<Transformation>& transformations() const {
    return transformations_;
  }
  std::vector<int> ids() const;
  std::size_t size() const { return transformations_.size(); }
  bool empty() const { return transformations_.empty(); }
  bool AllDeterministic() const;

 private:
  std::vector<Transformation> transformations_;
};

// Text format, one record per line, '#' comments:
//   toolkit v1
//   transformation <id> <name, rest of line>
//   mask <i> <i> ...                                   (deterministic)
//   corruption <p> | parse_error <p>                   (stochastic)
//   effect <feature> <p_modify> set_to_one
//   effect <feature> <p_modify> add_uniform <lo> <hi>
//   effect <feature> <p_modify> set_uniform <lo> <hi>
//   end
std::string FormatToolkit(const Toolkit& toolkit);
Toolkit ParseToolkit(const std::string& text);
Toolkit LoadToolkit(const std::filesystem::path& path);
void SaveToolkit(const Toolkit& toolkit, const std::filesystem::path& path);

// Chains are applied first element first.
using TransformationChain = std::vector<int>;
inline constexpr std::size_t kDefaultMaxChainLength = 10;

void ValidateChain(const TransformationChain& chain, const Toolkit& toolkit,
                   std::size_t max_len = kDefaultMaxChainLength);

// "chain v1: t1,t2,..." in application order.
std::string FormatChain(const TransformationChain& chain);
TransformationChain ParseChain(const std::string& line);

enum class OutcomeKind { kTransformed, kCorrupted, kParseError };

struct ApplicationOutcome {
  OutcomeKind kind = OutcomeKind::kTransformed;
  FeatureVector features;  // meaningful only when transformed

  static ApplicationOutcome Transformed(FeatureVector x) {
    return {OutcomeKind::kTransformed, std::move(x)};
  }
  static ApplicationOutcome Corrupted() { return {OutcomeKind::kCorrupted, {}}; }
  static ApplicationOutcome ParseError() { return {OutcomeKind::kParseError, {}}; }

  bool transformed() const { return kind == OutcomeKind::kTransformed; }
};

ApplicationOutcome apply_transformation(const FeatureVector& x,
                                        const Transformation& t, Rng& rng);
ApplicationOutcome apply_transformation(const FeatureVector& x,
                                        const Toolkit& toolkit, int id,
                                        Rng& rng);
// Sequential application; the first failure aborts and is returned.
ApplicationOutcome apply_chain(const FeatureVector& x,
                               const TransformationChain& chain,
                               const Toolkit& toolkit, Rng& rng);

// Applies `chain` to every example with a per-example generator derived from
// (seed, example index). Used wherever a chain is evaluated on a set.
std::vector<ApplicationOutcome> apply_chain_to_set(
    std::span<const FeatureVector> xs, const TransformationChain& chain,
    const Toolkit& toolkit, std::uint64_t seed);

// Examples the model flags as malware at the threshold.
std::vector<FeatureVector> TruePositiveMalware(const Classifier& model,
                                               const LabeledDataset& set,
                                               const PredictionThreshold& threshold);

// Evasion rate over outcomes: parse errors leave the denominator, corrupted
// outcomes count as detected.
double OutcomeUer(const Classifier& model,
                  std::span<const ApplicationOutcome> outcomes,
                  const PredictionThreshold& threshold);

// Mean malware score with corrupted outcomes scored 1.0 and parse errors
// excluded; 1.0 when nothing survives.
double OutcomeMeanScore(const Classifier& model,
                        std::span<const ApplicationOutcome> outcomes);

struct GreedySearchOptions {
  std::size_t max_len = kDefaultMaxChainLength;
  std::uint64_t seed = 0;
};

struct GreedySearchResult {
  TransformationChain chain;
  // trace[k] is the criterion after k+1 steps; initial_value is the empty
  // chain's value.
  std::vector<double> trace;
  double initial_value = 0.0;
  std::size_t n_examples = 0;
  std::uint64_t candidate_evaluations = 0;  // single-example applications
};

// Appends, at each step, the transformation with the highest exploration-set
// UER (lowest id on ties). Stops at max_len, at 100% UER, or when no
// candidate raises the UER. Only true positives of `model` are attacked.
GreedySearchResult greedy_uap_search_uer(const Classifier& model,
                                         const Toolkit& toolkit,
                                         const LabeledDataset& exploration_malware,
                                         const PredictionThreshold& threshold,
                                         const GreedySearchOptions& options = {});

// Same loop driven by the mean malware score; corrupted outcomes score 1.0.
// Runs to max_len.
GreedySearchResult greedy_uap_search_confidence(
    const Classifier& model, const Toolkit& toolkit,
    const LabeledDataset& exploration_malware,
    const GreedySearchOptions& options = {});

struct RandomChainReport {
  std::vector<TransformationChain> chains;
  // uer[c][k] is the UER of the first k+1 transformations of chain c.
  std::vector<std::vector<double>> uer;
  std::vector<double> median_by_length;
  std::size_t n_examples = 0;
};

RandomChainReport random_chain_attack(const Classifier& model,
                                      const Toolkit& toolkit,
                                      const LabeledDataset& test_malware,
                                      std::size_t n_chains, std::size_t max_len,
                                      const PredictionThreshold& threshold,
                                      std::uint64_t seed);

// Deterministic fitness of a chain: mean malware score over the examples
// (corrupted -> 1.0, parse errors dropped), each example using a generator
// derived from (eval_seed, example index). Lower is better.
double ChainFitness(const Classifier& model, const Toolkit& toolkit,
                    std::span<const FeatureVector> examples,
                    const TransformationChain& chain, std::uint64_t eval_seed);

struct GpConfig {
  std::size_t population = 20;
  std::size_t generations = 20;
  double mutation_rate = 0.1;
  double crossover_rate = 0.7;
  std::size_t max_len = kDefaultMaxChainLength;
  std::size_t tournament_size = 2;
  std::size_t elitism = 1;
  std::uint64_t seed = 0;
  // Optional starting genomes; the rest of the population is random.
  std::vector<TransformationChain> initial_population;

  void Validate() const;
};

struct GpResult {
  TransformationChain best_chain;
  double best_fitness = 1.0;
  std::vector<double> best_fitness_by_generation;  // index 0 = initial
  std::size_t best_max_run_length = 0;
  // Fraction of the final population whose genome repeats an id back to back.
  double final_repeat_fraction = 0.0;
  std::uint64_t fitness_evaluations = 0;
};

GpResult gp_uap_search(const Classifier& model, const Toolkit& toolkit,
                       const LabeledDataset& exploration_malware,
                       const GpConfig& cfg);

// Longest run of one id repeated back to back.
std::size_t MaxRunLength(const TransformationChain& chain);

// |E| * |chain| * |toolkit| candidate evaluations for a full greedy search.
std::uint64_t search_rounds_estimate(std::uint64_t exploration_size,
                                     std::uint64_t max_len,
                                     std::uint64_t toolkit_size);

struct GadgetToolkitConfig {
  std::size_t n_gadgets = 50;
  // Candidate pool: this many binary features with the most negative weights.
  std::size_t pool_size = 40;
  std::size_t primary_features = 2;
  double side_effect_mean = 18.0;
  // Side effects never land on this many most malware-leaning features:
  // donor code comes from goodware, which rarely carries them.
  std::size_t side_effect_exclude_top = 40;
  // Per-feature sampling weights for side effects, typically the feature
  // frequencies among goodware rows. Empty means uniform.
  std::vector<double> side_effect_weights;
  std::uint64_t seed = 0;
};

// Android-style gadgets harvested from a linear surrogate: each mask holds a
// few goodware-leaning features from the pool plus Poisson-many random
// side-effect features drawn from the remaining binary features (uniformly, or
// by side_effect_weights when given).
Toolkit GenerateGadgetToolkit(const LinearModel& surrogate,
                              const FeatureSpaceSpec& spec,
                              const GadgetToolkitConfig& cfg);

// Synthetic feature space the bundled Windows-style toolkit targets.
SyntheticDatasetConfig WindowsLikeDatasetConfig(std::uint64_t seed);

}  // namespace uap

#endif  // UAP_PROBLEM_SPACE_H_
