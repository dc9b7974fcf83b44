// Chain searches over a toolkit: greedy (UER and confidence), random chains,
// and the GP variant, plus the gadget toolkit generator.
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "uap/problem_space.h"

namespace uap {

namespace {

std::vector<FeatureVector> MalwareRows(const LabeledDataset& set) {
  std::vector<FeatureVector> out;
  for (std::size_t i = 0; i < set.size(); ++i)
    if (set.label(i) == kMalware) out.push_back(set.example(i));
  return out;
}

// Shared greedy loop. `criterion` maps outcomes to a value; larger_is_better
// selects UER-style maximization, otherwise minimization.
template <typename Criterion>
GreedySearchResult GreedyLoop(const Toolkit& toolkit,
                              const std::vector<FeatureVector>& examples,
                              const GreedySearchOptions& options,
                              bool larger_is_better, bool stop_on_no_gain,
                              double saturation, Criterion criterion) {
  GreedySearchResult result;
  result.n_examples = examples.size();
  std::vector<ApplicationOutcome> state;
  state.reserve(examples.size());
  for (const auto& x : examples) state.push_back(ApplicationOutcome::Transformed(x));
  double current = criterion(state);
  result.initial_value = current;
  auto better = [&](double a, double b) {
    return larger_is_better ? a > b : a < b;
  };

  std::vector<ApplicationOutcome> candidate(examples.size());
  std::vector<ApplicationOutcome> best_state;
  for (std::size_t step = 0; step < options.max_len; ++step) {
    if (larger_is_better && current >= saturation) break;
    int best_id = 0;
    bool have_best = false;
    double best_value = 0.0;
    for (const auto& t : toolkit.transformations()) {
      for (std::size_t i = 0; i < examples.size(); ++i) {
        if (!state[i].transformed()) {
          candidate[i] = state[i];
          continue;
        }
        // Same stream for every candidate at this step: paired comparison.
        Rng rng(DeriveSeed(options.seed, step, i));
        candidate[i] = apply_transformation(state[i].features, t, rng);
        ++result.candidate_evaluations;
      }
      const double v = criterion(candidate);
      if (!have_best || better(v, best_value)) {
        have_best = true;
        best_value = v;
        best_id = t.id;
        best_state = candidate;
      }
    }
    if (stop_on_no_gain && !better(best_value, current)) break;
    result.chain.push_back(best_id);
    result.trace.push_back(best_value);
    state.swap(best_state);
    current = best_value;
  }
  return result;
}

void CheckSearchInputs(const Toolkit& toolkit, const LabeledDataset& set) {
  Require(!toolkit.empty(), ErrorCode::kInvalidArgument, "toolkit is empty");
  Require(!set.empty(), ErrorCode::kInvalidArgument, "exploration set is empty");
  toolkit.Validate(set.spec());
}

}  // namespace

GreedySearchResult greedy_uap_search_uer(const Classifier& model,
                                         const Toolkit& toolkit,
                                         const LabeledDataset& exploration_malware,
                                         const PredictionThreshold& threshold,
                                         const GreedySearchOptions& options) {
  CheckSearchInputs(toolkit, exploration_malware);
  const auto positives = TruePositiveMalware(model, exploration_malware, threshold);
  Require(!positives.empty(), ErrorCode::kInvalidArgument,
          "exploration set holds no true-positive malware");
  return GreedyLoop(toolkit, positives, options, /*larger_is_better=*/true,
                    /*stop_on_no_gain=*/true, 1.0,
                    [&](const std::vector<ApplicationOutcome>& o) {
                      return OutcomeUer(model, o, threshold);
                    });
}

GreedySearchResult greedy_uap_search_confidence(
    const Classifier& model, const Toolkit& toolkit,
    const LabeledDataset& exploration_malware,
    const GreedySearchOptions& options) {
  CheckSearchInputs(toolkit, exploration_malware);
  const auto rows = MalwareRows(exploration_malware);
  Require(!rows.empty(), ErrorCode::kInvalidArgument,
          "exploration set holds no malware");
  return GreedyLoop(toolkit, rows, options, /*larger_is_better=*/false,
                    /*stop_on_no_gain=*/false, 0.0,
                    [&](const std::vector<ApplicationOutcome>& o) {
                      return OutcomeMeanScore(model, o);
                    });
}

RandomChainReport random_chain_attack(const Classifier& model,
                                      const Toolkit& toolkit,
                                      const LabeledDataset& test_malware,
                                      std::size_t n_chains, std::size_t max_len,
                                      const PredictionThreshold& threshold,
                                      std::uint64_t seed) {
  CheckSearchInputs(toolkit, test_malware);
  Require(n_chains >= 1 && max_len >= 1, ErrorCode::kInvalidArgument,
          "n_chains and max_len must be >= 1");
  const auto positives = TruePositiveMalware(model, test_malware, threshold);
  RandomChainReport report;
  report.n_examples = positives.size();
  const auto ids = toolkit.ids();
  for (std::size_t c = 0; c < n_chains; ++c) {
    Rng pick(DeriveSeed(seed, 0xc4a1, c));
    TransformationChain chain(max_len);
    for (auto& id : chain) id = ids[pick.Below(ids.size())];

    std::vector<Rng> rngs;
    std::vector<ApplicationOutcome> state;
    for (std::size_t i = 0; i < positives.size(); ++i) {
      rngs.emplace_back(DeriveSeed(DeriveSeed(seed, 0xa991), c, i));
      state.push_back(ApplicationOutcome::Transformed(positives[i]));
    }
    std::vector<double> trace;
    for (int id : chain) {
      const auto& t = toolkit.Get(id);
      for (std::size_t i = 0; i < state.size(); ++i)
        if (state[i].transformed())
          state[i] = apply_transformation(state[i].features, t, rngs[i]);
      trace.push_back(OutcomeUer(model, state, threshold));
    }
    report.chains.push_back(std::move(chain));
    report.uer.push_back(std::move(trace));
  }
  for (std::size_t k = 0; k < max_len; ++k) {
    std::vector<double> col;
    for (const auto& row : report.uer) col.push_back(row[k]);
    std::sort(col.begin(), col.end());
    const std::size_t n = col.size();
    report.median_by_length.push_back(
        n % 2 ? col[n / 2] : 0.5 * (col[n / 2 - 1] + col[n / 2]));
  }
  return report;
}

double ChainFitness(const Classifier& model, const Toolkit& toolkit,
                    std::span<const FeatureVector> examples,
                    const TransformationChain& chain, std::uint64_t eval_seed) {
  const auto outcomes = apply_chain_to_set(examples, chain, toolkit, eval_seed);
  return OutcomeMeanScore(model, outcomes);
}

void GpConfig::Validate() const {
  Require(population >= 2, ErrorCode::kInvalidArgument, "population must be >= 2");
  Require(max_len >= 1, ErrorCode::kInvalidArgument, "max_len must be >= 1");
  Require(tournament_size >= 1, ErrorCode::kInvalidArgument,
          "tournament_size must be >= 1");
  Require(elitism < population, ErrorCode::kInvalidArgument,
          "elitism must be smaller than the population");
  Require(mutation_rate >= 0 && mutation_rate <= 1 && crossover_rate >= 0 &&
              crossover_rate <= 1,
          ErrorCode::kInvalidArgument, "GP rates must lie in [0,1]");
}

std::size_t MaxRunLength(const TransformationChain& chain) {
  std::size_t best = 0, run = 0;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    run = (i > 0 && chain[i] == chain[i - 1]) ? run + 1 : 1;
    best = std::max(best, run);
  }
  return best;
}

GpResult gp_uap_search(const Classifier& model, const Toolkit& toolkit,
                       const LabeledDataset& exploration_malware,
                       const GpConfig& cfg) {
  cfg.Validate();
  CheckSearchInputs(toolkit, exploration_malware);
  const auto rows = MalwareRows(exploration_malware);
  Require(!rows.empty(), ErrorCode::kInvalidArgument,
          "exploration set holds no malware");
  const auto ids = toolkit.ids();
  const std::uint64_t eval_seed = DeriveSeed(cfg.seed, 0xf17);
  Rng rng(DeriveSeed(cfg.seed, 0x6e0));

  GpResult result;
  std::map<TransformationChain, double> cache;
  auto fitness = [&](const TransformationChain& g) {
    auto it = cache.find(g);
    if (it != cache.end()) return it->second;
    ++result.fitness_evaluations;
    const double f = ChainFitness(model, toolkit, rows, g, eval_seed);
    cache.emplace(g, f);
    return f;
  };
  auto random_gene = [&] { return ids[rng.Below(ids.size())]; };

  // Genomes are non-empty chains of at most max_len ids.
  std::vector<TransformationChain> pop;
  for (const auto& g : cfg.initial_population) {
    if (pop.size() == cfg.population) break;
    Require(!g.empty(), ErrorCode::kInvalidArgument,
            "initial GP genomes must be non-empty");
    ValidateChain(g, toolkit, cfg.max_len);
    pop.push_back(g);
  }
  while (pop.size() < cfg.population) {
    TransformationChain g(1 + rng.Below(cfg.max_len));
    for (auto& id : g) id = random_gene();
    pop.push_back(std::move(g));
  }

  std::vector<double> fit(pop.size());
  auto evaluate = [&] {
    for (std::size_t i = 0; i < pop.size(); ++i) {
      fit[i] = fitness(pop[i]);
      if (result.best_chain.empty() || fit[i] < result.best_fitness) {
        result.best_fitness = fit[i];
        result.best_chain = pop[i];
      }
    }
    result.best_fitness_by_generation.push_back(result.best_fitness);
  };
  evaluate();

  auto tournament = [&]() -> const TransformationChain& {
    std::size_t winner = rng.Below(pop.size());
    for (std::size_t k = 1; k < cfg.tournament_size; ++k) {
      const std::size_t c = rng.Below(pop.size());
      if (fit[c] < fit[winner]) winner = c;
    }
    return pop[winner];
  };

  for (std::size_t gen = 0; gen < cfg.generations; ++gen) {
    std::vector<std::size_t> order(pop.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fit[a] < fit[b]; });
    std::vector<TransformationChain> next;
    for (std::size_t e = 0; e < cfg.elitism; ++e) next.push_back(pop[order[e]]);

    while (next.size() < cfg.population) {
      TransformationChain a = tournament();
      TransformationChain b = tournament();
      if (rng.Uniform() < cfg.crossover_rate) {
        const std::size_t ca = rng.Below(a.size() + 1);
        const std::size_t cb = rng.Below(b.size() + 1);
        TransformationChain c1(a.begin(), a.begin() + ca);
        c1.insert(c1.end(), b.begin() + cb, b.end());
        TransformationChain c2(b.begin(), b.begin() + cb);
        c2.insert(c2.end(), a.begin() + ca, a.end());
        if (!c1.empty()) a = std::move(c1);
        if (!c2.empty()) b = std::move(c2);
        if (a.size() > cfg.max_len) a.resize(cfg.max_len);
        if (b.size() > cfg.max_len) b.resize(cfg.max_len);
      }
      for (auto* child : {&a, &b}) {
        for (auto& id : *child)
          if (rng.Uniform() < cfg.mutation_rate) id = random_gene();
        if (next.size() < cfg.population) next.push_back(std::move(*child));
      }
    }
    pop.swap(next);
    evaluate();
  }

  result.best_max_run_length = MaxRunLength(result.best_chain);
  std::size_t repeats = 0;
  for (const auto& g : pop) repeats += MaxRunLength(g) >= 2;
  result.final_repeat_fraction =
      static_cast<double>(repeats) / static_cast<double>(pop.size());
  return result;
}

Toolkit GenerateGadgetToolkit(const LinearModel& surrogate,
                              const FeatureSpaceSpec& spec,
                              const GadgetToolkitConfig& cfg) {
  Require(surrogate.n_features() == spec.n_features, ErrorCode::kSpecMismatch,
          "surrogate model and feature space disagree on n_features");
  Require(cfg.n_gadgets >= 1 && cfg.pool_size >= 1 && cfg.primary_features >= 1,
          ErrorCode::kInvalidArgument,
          "n_gadgets, pool_size and primary_features must be >= 1");
  Require(cfg.side_effect_mean >= 0, ErrorCode::kInvalidArgument,
          "side_effect_mean must be >= 0");
  std::vector<std::uint32_t> binary;
  for (std::size_t j = 0; j < spec.n_features; ++j)
    if (spec.IsBinary(j)) binary.push_back(static_cast<std::uint32_t>(j));
  Require(!binary.empty(), ErrorCode::kInvalidArgument,
          "feature space has no binary features");

  std::vector<std::uint32_t> pool = binary;
  const auto& w = surrogate.weights();
  std::stable_sort(pool.begin(), pool.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return w[a] < w[b]; });
  pool.resize(std::min(cfg.pool_size, pool.size()));
  const std::size_t n_primary = std::min(cfg.primary_features, pool.size());

  std::vector<std::uint32_t> side = binary;
  std::stable_sort(side.begin(), side.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return w[a] > w[b]; });
  side.erase(side.begin(),
             side.begin() + std::min(cfg.side_effect_exclude_top, side.size()));
  std::sort(side.begin(), side.end());
  const bool weighted = !cfg.side_effect_weights.empty();
  Require(!weighted || cfg.side_effect_weights.size() == spec.n_features,
          ErrorCode::kSpecMismatch, "side_effect_weights must have n_features entries");
  std::vector<double> cumulative;
  if (weighted) {
    double total = 0;
    for (auto f : side) {
      const double v = cfg.side_effect_weights[f];
      Require(v >= 0 && std::isfinite(v), ErrorCode::kInvalidArgument,
              "side_effect_weights must be finite and non-negative");
      cumulative.push_back(total += v);
    }
    if (total <= 0) side.clear();
  }

  std::vector<Transformation> out;
  for (std::size_t g = 0; g < cfg.n_gadgets; ++g) {
    Rng rng(DeriveSeed(cfg.seed, 0x9ad9e7, g));
    DeterministicMask mask;
    // Partial Fisher-Yates for distinct primaries.
    std::vector<std::uint32_t> p = pool;
    for (std::size_t k = 0; k < n_primary; ++k) {
      std::swap(p[k], p[k + rng.Below(p.size() - k)]);
      mask.set_features.push_back(p[k]);
    }
    const int n_side = side.empty() ? 0 : rng.Poisson(cfg.side_effect_mean);
    for (int k = 0; k < n_side; ++k) {
      if (!weighted) {
        mask.set_features.push_back(side[rng.Below(side.size())]);
        continue;
      }
      const double u = rng.Uniform() * cumulative.back();
      const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
      mask.set_features.push_back(side[std::min<std::size_t>(it - cumulative.begin(),
                                                             side.size() - 1)]);
    }
    out.push_back(Transformation{static_cast<int>(g),
                                 "gadget_" + std::to_string(g), std::move(mask)});
  }
  return Toolkit(std::move(out));
}

SyntheticDatasetConfig WindowsLikeDatasetConfig(std::uint64_t seed) {
  SyntheticDatasetConfig cfg;
  cfg.n_features = 120;
  cfg.n_goodware_indicative = 20;
  cfg.n_malware_indicative = 20;
  cfg.n_continuous = 20;
  cfg.p_on_in_own_class = 0.7;
  cfg.p_on_in_other_class = 0.1;
  cfg.p_background = 0.05;
  cfg.seed = seed;
  return cfg;
}

}  // namespace uap
