#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "uap/common.h"
#include "uap/feature_data.h"
#include "uap/models.h"
#include "uap/problem_space.h"

#ifndef UAP_DATA_DIR
#define UAP_DATA_DIR "data"
#endif

namespace uap {
namespace {

SpecPtr Binary(std::size_t n) { return MakeSpec(FeatureSpaceSpec::AllBinary(n)); }

FeatureVector Vec(const SpecPtr& spec, std::vector<std::uint32_t> idx) {
  return FeatureVector::FromIndices(spec, idx);
}

LinearModel Lr(std::vector<double> w, double b = 0) {
  return LinearModel(ModelKind::kLogisticRegression, std::move(w), b);
}

Transformation Mask(int id, std::vector<std::uint32_t> f) {
  return {id, "m" + std::to_string(id), DeterministicMask{std::move(f)}};
}

Transformation Stochastic(int id, std::vector<FeatureEffect> e, double corrupt = 0,
                          double parse = 0) {
  return {id, "s" + std::to_string(id), StochasticEffect{std::move(e), corrupt, parse}};
}

LabeledDataset MalwareSet(const SpecPtr& spec, const std::vector<FeatureVector>& xs) {
  LabeledDataset d(spec);
  for (std::size_t i = 0; i < xs.size(); ++i) d.Add(xs[i], kMalware, std::to_string(i));
  return d;
}

LabeledDataset RandomMalware(const SpecPtr& spec, std::size_t n, double p, Rng& rng) {
  std::vector<FeatureVector> xs;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::uint32_t> idx;
    for (std::uint32_t j = 0; j < spec->n_features; ++j)
      if (rng.Bernoulli(p)) idx.push_back(j);
    xs.push_back(Vec(spec, idx));
  }
  return MalwareSet(spec, xs);
}

// Oracle for deterministic toolkits: UER of a chain over true positives.
double MaskUer(const Classifier& m, const Toolkit& tk,
               const std::vector<FeatureVector>& tps, const TransformationChain& chain) {
  std::size_t ev = 0;
  for (const auto& x : tps) {
    auto y = x;
    for (int id : chain)
      for (auto f : std::get<DeterministicMask>(tk.Get(id).effect).set_features) y.Set(f, 1.0);
    ev += m.Score(y) < 0.5;
  }
  return static_cast<double>(ev) / tps.size();
}

TEST(Apply, DeterministicMask) {
  auto spec = Binary(10);
  Rng rng(1);
  auto out = apply_transformation(FeatureVector(spec), Mask(0, {3, 7}), rng);
  ASSERT_TRUE(out.transformed());
  EXPECT_EQ(out.features, Vec(spec, {3, 7}));
}

TEST(Apply, StochasticDegenerate) {
  auto spec = Binary(10);
  Rng rng(1);
  auto t = Stochastic(0, {{5, 1.0, {SamplerKind::kSetToOne}}}, 1.0);
  for (int i = 0; i < 20; ++i)
    EXPECT_EQ(apply_transformation(FeatureVector(spec), t, rng).kind, OutcomeKind::kCorrupted);
  auto ok = Stochastic(0, {{5, 1.0, {SamplerKind::kSetToOne}}});
  auto out = apply_transformation(FeatureVector(spec), ok, rng);
  ASSERT_TRUE(out.transformed());
  EXPECT_EQ(out.features.Get(5), 1.0);
  auto parse = Stochastic(0, {}, 1.0, 1.0);
  EXPECT_EQ(apply_transformation(FeatureVector(spec), parse, rng).kind,
            OutcomeKind::kParseError);
}

TEST(Apply, UniformSamplers) {
  FeatureSpaceSpec s;
  s.n_features = 2;
  s.feature_kinds = {FeatureKind::kContinuous, FeatureKind::kContinuous};
  s.feature_groups = {"g", "g"};
  auto spec = MakeSpec(s);
  FeatureVector x(spec, {{0, 0.5}, {1, 0.5}});
  auto t = Stochastic(0, {{0, 1.0, {SamplerKind::kAddUniform, 0.1, 0.2}},
                          {1, 1.0, {SamplerKind::kSetUniform, 2.0, 3.0}}});
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    auto out = apply_transformation(x, t, rng);
    ASSERT_TRUE(out.transformed());
    EXPECT_GE(out.features.Get(0), 0.6);
    EXPECT_LT(out.features.Get(0), 0.7);
    EXPECT_GE(out.features.Get(1), 2.0);
    EXPECT_LT(out.features.Get(1), 3.0);
  }
}

TEST(Chain, Examples) {
  auto spec = Binary(10);
  Toolkit tk({Mask(1, {1}), Mask(2, {2}), Stochastic(3, {}, 1.0), Mask(4, {4})});
  Rng rng(1);
  auto x = Vec(spec, {9});
  EXPECT_EQ(apply_chain(x, {}, tk, rng).features, x);
  EXPECT_EQ(apply_chain(FeatureVector(spec), {1, 2}, tk, rng).features, Vec(spec, {1, 2}));
  EXPECT_EQ(apply_chain(x, {1, 3, 4}, tk, rng).kind, OutcomeKind::kCorrupted);
}

TEST(Chain, SetApplicationIndependentOfOrder) {
  auto spec = Binary(6);
  Toolkit tk({Stochastic(0, {{0, 0.5, {}}, {3, 0.5, {}}})});
  Rng rng(5);
  auto set = RandomMalware(spec, 30, 0.2, rng);
  std::vector<FeatureVector> xs = set.examples();
  auto all = apply_chain_to_set(xs, {0}, tk, 99);
  // Applying to a prefix reproduces the same per-example draws.
  std::vector<FeatureVector> head(xs.begin(), xs.begin() + 10);
  auto part = apply_chain_to_set(head, {0}, tk, 99);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(part[i].features, all[i].features);
}

TEST(Chain, FormatAndValidate) {
  EXPECT_EQ(FormatChain({3, 1, 3}), "chain v1: 3,1,3");
  EXPECT_EQ(ParseChain("chain v1: 3,1,3"), (TransformationChain{3, 1, 3}));
  EXPECT_TRUE(ParseChain("chain v1:").empty());
  EXPECT_THROW(ParseChain("chain 3,1"), Error);
  Toolkit tk({Mask(0, {0})});
  EXPECT_NO_THROW(ValidateChain({0, 0}, tk));
  EXPECT_THROW(ValidateChain({1}, tk), Error);
  EXPECT_THROW(ValidateChain(TransformationChain(11, 0), tk), Error);
}

TEST(Toolkit, ParseFormatRoundTrip) {
  Toolkit tk({Mask(2, {1, 4}),
              Stochastic(5, {{0, 0.25, {}}, {3, 0.5, {}}}, 0.01, 0.02)});
  auto text = FormatToolkit(tk);
  auto back = ParseToolkit(text);
  EXPECT_EQ(back.ids(), (std::vector<int>{2, 5}));
  EXPECT_EQ(FormatToolkit(back), text);
  EXPECT_FALSE(back.AllDeterministic());
  EXPECT_THROW(ParseToolkit("toolkit v1\ntransformation 0 a\nmask 1\n"), Error);
  EXPECT_THROW(ParseToolkit("toolkit v1\ntransformation 0 a\nmask 1\nend\n"
                            "transformation 0 b\nmask 2\nend\n"),
               Error);
}

TEST(Toolkit, ValidateAgainstSpace) {
  auto spec = Binary(3);
  EXPECT_THROW(Toolkit({Mask(0, {3})}).Validate(*spec), Error);
  EXPECT_THROW(Toolkit({Stochastic(0, {{0, 1.5, {}}})}).Validate(*spec), Error);
  EXPECT_THROW(
      Toolkit({Stochastic(0, {{0, 1.0, {SamplerKind::kAddUniform, 0, 1}}})}).Validate(*spec),
      Error);
  EXPECT_NO_THROW(Toolkit({Mask(0, {2})}).Validate(*spec));
}

TEST(Toolkit, BundledWindowsToolkitLoads) {
  auto tk = LoadToolkit(std::string(UAP_DATA_DIR) + "/windows_toolkit.txt");
  EXPECT_EQ(tk.size(), 10u);
  EXPECT_NO_THROW(tk.Validate(SyntheticSpec(WindowsLikeDatasetConfig(0))));
}

TEST(SearchRounds, Examples) {
  EXPECT_EQ(search_rounds_estimate(100, 10, 10), 10000u);
  EXPECT_EQ(search_rounds_estimate(1, 1, 1), 1u);
  EXPECT_EQ(search_rounds_estimate(0, 5, 3), 0u);
}

TEST(OutcomeMetrics, FailuresHandled) {
  auto spec = Binary(2);
  auto m = Lr({-10, 0}, 5);
  std::vector<ApplicationOutcome> outs = {
      ApplicationOutcome::Transformed(Vec(spec, {0})),
      ApplicationOutcome::Transformed(Vec(spec, {})),
      ApplicationOutcome::Corrupted(), ApplicationOutcome::ParseError()};
  EXPECT_DOUBLE_EQ(OutcomeUer(m, outs, PredictionThreshold(0.5)), 1.0 / 3.0);
  double expect = (m.Score(Vec(spec, {0})) + m.Score(Vec(spec, {})) + 1.0) / 3.0;
  EXPECT_NEAR(OutcomeMeanScore(m, outs), expect, 1e-15);
  std::vector<ApplicationOutcome> none = {ApplicationOutcome::ParseError()};
  EXPECT_EQ(OutcomeMeanScore(m, none), 1.0);
}

TEST(GreedyUer, DecisiveMaskSaturates) {
  auto spec = Binary(4);
  auto m = Lr({-10, 0, 0, 0}, 5);
  Toolkit tk({Mask(0, {0})});
  auto set = MalwareSet(spec, {Vec(spec, {}), Vec(spec, {1}), Vec(spec, {2, 3})});
  auto r = greedy_uap_search_uer(m, tk, set, PredictionThreshold(0.5));
  EXPECT_EQ(r.chain, (TransformationChain{0}));
  ASSERT_EQ(r.trace.size(), 1u);
  EXPECT_DOUBLE_EQ(r.trace[0], 1.0);
}

TEST(GreedyUer, NoFlipGivesEmptyChain) {
  auto spec = Binary(4);
  auto m = Lr({-0.1, -0.1, 0, 0}, 5);
  Toolkit tk({Mask(0, {0}), Mask(1, {1})});
  auto set = MalwareSet(spec, {Vec(spec, {}), Vec(spec, {2})});
  auto r = greedy_uap_search_uer(m, tk, set, PredictionThreshold(0.5));
  EXPECT_TRUE(r.chain.empty());
  EXPECT_EQ(r.initial_value, 0.0);
}

TEST(GreedyUer, MatchesExhaustiveExtension) {
  Rng rng(21);
  auto spec = Binary(4);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> w(4);
    for (auto& v : w) v = rng.Normal() * 2;
    auto m = Lr(w, 1.0);
    std::vector<Transformation> ts;
    for (int t = 0; t < 3; ++t) {
      std::vector<std::uint32_t> f;
      for (std::uint32_t j = 0; j < 4; ++j)
        if (rng.Bernoulli(0.4)) f.push_back(j);
      if (f.empty()) f.push_back(static_cast<std::uint32_t>(rng.Below(4)));
      ts.push_back(Mask(t, f));
    }
    Toolkit tk(ts);
    auto set = RandomMalware(spec, 8, 0.3, rng);
    std::vector<FeatureVector> tps;
    for (const auto& x : set.examples())
      if (m.Score(x) >= 0.5) tps.push_back(x);
    if (tps.empty()) continue;
    GreedySearchOptions opt;
    opt.max_len = 2;
    auto r = greedy_uap_search_uer(m, tk, set, PredictionThreshold(0.5), opt);
    TransformationChain prefix;
    double current = MaskUer(m, tk, tps, prefix);
    for (std::size_t step = 0; step < 2; ++step) {
      int best = -1;
      double best_u = -1;
      for (int t = 0; t < 3; ++t) {
        auto c = prefix;
        c.push_back(t);
        double u = MaskUer(m, tk, tps, c);
        if (u > best_u) best_u = u, best = t;
      }
      if (best_u <= current) break;
      ASSERT_LT(step, r.chain.size()) << "trial " << trial;
      EXPECT_EQ(r.chain[step], best) << "trial " << trial;
      EXPECT_DOUBLE_EQ(r.trace[step], best_u);
      prefix.push_back(best);
      current = best_u;
      if (current == 1.0) break;
    }
    EXPECT_EQ(r.chain, prefix) << "trial " << trial;
  }
}

TEST(GreedyConfidence, FirstPickClosedForm) {
  Rng rng(4);
  auto spec = Binary(6);
  std::vector<double> w = {-1.5, -0.5, 0.8, -2.0, 0.3, -0.2};
  auto m = Lr(w, 2.0);
  Toolkit tk({Mask(0, {0, 2}), Mask(1, {1, 3}), Mask(2, {4, 5}), Mask(3, {3})});
  auto set = RandomMalware(spec, 15, 0.3, rng);
  double best = 1e9;
  int arg = -1;
  for (int t = 0; t < 4; ++t) {
    double sum = 0;
    for (const auto& x : set.examples()) {
      double margin = m.Margin(x);
      for (auto f : std::get<DeterministicMask>(tk.Get(t).effect).set_features)
        if (x.Get(f) == 0.0) margin += w[f];
      sum += Sigmoid(margin);
    }
    if (sum < best - 1e-12) best = sum, arg = t;
  }
  GreedySearchOptions opt;
  opt.max_len = 1;
  auto r = greedy_uap_search_confidence(m, tk, set, opt);
  ASSERT_EQ(r.chain.size(), 1u);
  EXPECT_EQ(r.chain[0], arg);
  EXPECT_NEAR(r.trace[0], best / set.size(), 1e-12);
}

TEST(GreedyConfidence, CorruptionPenalised) {
  auto spec = Binary(3);
  auto m = Lr({-5, -0.5, 0}, 3);
  Toolkit tk({Stochastic(0, {{0, 1.0, {}}}, 1.0), Mask(1, {1})});
  auto set = MalwareSet(spec, {Vec(spec, {}), Vec(spec, {2})});
  GreedySearchOptions opt;
  opt.max_len = 1;
  EXPECT_EQ(greedy_uap_search_confidence(m, tk, set, opt).chain, (TransformationChain{1}));
  opt.max_len = 0;
  EXPECT_TRUE(greedy_uap_search_confidence(m, tk, set, opt).chain.empty());
}

TEST(RandomChains, Properties) {
  Rng rng(8);
  auto spec = Binary(8);
  auto m = Lr({-1, -1.5, -0.5, -2, 0.5, 0.5, 0.5, 0.5}, 2);
  auto set = RandomMalware(spec, 20, 0.3, rng);
  PredictionThreshold c(0.5);

  Toolkit same({Mask(0, {0, 1}), Mask(1, {0, 1}), Mask(2, {0, 1})});
  auto r = random_chain_attack(m, same, set, 10, 4, c, 3);
  ASSERT_EQ(r.uer.size(), 10u);
  for (const auto& row : r.uer) EXPECT_EQ(row, r.uer[0]);

  Toolkit neg({Mask(0, {0}), Mask(1, {1}), Mask(2, {2}), Mask(3, {3})});
  auto mono = random_chain_attack(m, neg, set, 50, 6, c, 4);
  for (const auto& row : mono.uer)
    for (std::size_t k = 1; k < row.size(); ++k) EXPECT_GE(row[k], row[k - 1]);

  auto one = random_chain_attack(m, neg, set, 1, 3, c, 5);
  EXPECT_EQ(one.uer.size(), 1u);
  EXPECT_EQ(one.chains.size(), 1u);
  EXPECT_EQ(one.median_by_length.size(), 3u);
}

TEST(Gp, ElitismKeepsKnownBest) {
  auto spec = Binary(4);
  auto m = Lr({-3, -1, 0.5, 0}, 2);
  Toolkit tk({Mask(0, {0}), Mask(1, {1}), Mask(2, {2})});
  auto set = MalwareSet(spec, {Vec(spec, {}), Vec(spec, {3}), Vec(spec, {2})});
  GpConfig cfg;
  cfg.population = 6;
  cfg.generations = 5;
  cfg.max_len = 3;
  cfg.initial_population.assign(6, TransformationChain{0, 1});
  auto r = gp_uap_search(m, tk, set, cfg);
  // {0,1} already attains the optimum, so nothing may displace its fitness.
  std::vector<FeatureVector> xs = set.examples();
  EXPECT_DOUBLE_EQ(r.best_fitness, ChainFitness(m, tk, xs, {0, 1}, 0));
  EXPECT_DOUBLE_EQ(r.best_fitness_by_generation.front(), r.best_fitness);
  // Fitness sequence never worsens with elitism.
  for (std::size_t g = 1; g < r.best_fitness_by_generation.size(); ++g)
    EXPECT_LE(r.best_fitness_by_generation[g], r.best_fitness_by_generation[g - 1]);
}

TEST(Gp, NoVariationReturnsBestInitial) {
  auto spec = Binary(4);
  auto m = Lr({-3, -1, 0.5, 0}, 2);
  Toolkit tk({Mask(0, {0}), Mask(1, {1}), Mask(2, {2})});
  auto set = MalwareSet(spec, {Vec(spec, {}), Vec(spec, {3})});
  GpConfig cfg;
  cfg.population = 3;
  cfg.generations = 4;
  cfg.mutation_rate = 0;
  cfg.crossover_rate = 0;
  cfg.initial_population = {{2}, {1, 2}, {0}};
  auto r = gp_uap_search(m, tk, set, cfg);
  EXPECT_EQ(r.best_chain, (TransformationChain{0}));
  std::vector<FeatureVector> xs = set.examples();
  EXPECT_DOUBLE_EQ(r.best_fitness, ChainFitness(m, tk, xs, {0}, 0));
}

TEST(Gp, MaxRunLength) {
  EXPECT_EQ(MaxRunLength({}), 0u);
  EXPECT_EQ(MaxRunLength({1, 1, 2, 2, 2, 1}), 3u);
}

TEST(Gadgets, StructureAndSideEffectExclusion) {
  const std::size_t n = 60;
  auto spec = FeatureSpaceSpec::AllBinary(n);
  std::vector<double> w(n, 0.0);
  for (std::size_t j = 0; j < 10; ++j) w[j] = -1.0 - 0.1 * j;  // goodware side
  for (std::size_t j = 10; j < 20; ++j) w[j] = 2.0;             // malware side
  LinearModel sur(ModelKind::kLogisticRegression, w, 0);
  GadgetToolkitConfig cfg;
  cfg.n_gadgets = 30;
  cfg.pool_size = 10;
  cfg.primary_features = 2;
  cfg.side_effect_mean = 6;
  cfg.side_effect_exclude_top = 10;
  cfg.side_effect_weights.assign(n, 1.0);
  for (std::size_t j = 40; j < n; ++j) cfg.side_effect_weights[j] = 0.0;
  cfg.seed = 2;
  auto tk = GenerateGadgetToolkit(sur, spec, cfg);
  EXPECT_EQ(tk.size(), 30u);
  EXPECT_TRUE(tk.AllDeterministic());
  EXPECT_NO_THROW(tk.Validate(spec));
  for (const auto& t : tk.transformations()) {
    const auto& f = std::get<DeterministicMask>(t.effect).set_features;
    std::size_t primary = 0;
    for (auto j : f) {
      primary += j < 10;
      EXPECT_FALSE(j >= 10 && j < 20) << "side effect on excluded feature " << j;
      EXPECT_LT(j, 40u) << "zero-weight feature drawn";
    }
    EXPECT_GE(primary, 1u);
  }
  auto again = GenerateGadgetToolkit(sur, spec, cfg);
  EXPECT_EQ(FormatToolkit(again), FormatToolkit(tk));
}

}  // namespace
}  // namespace uap
