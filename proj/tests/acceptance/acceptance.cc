// Acceptance runner: one PASS/FAIL line per criterion A1..A10.
// Exit status is non-zero when any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "uap/common.h"
#include "uap/defenses.h"
#include "uap/eval.h"
#include "uap/feature_attacks.h"
#include "uap/feature_data.h"
#include "uap/models.h"
#include "uap/problem_space.h"

#ifndef UAP_DATA_DIR
#define UAP_DATA_DIR "data"
#endif

using namespace uap;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double Seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string Fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// ---- independent oracles -------------------------------------------------

double OracleSigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double OracleLinearScore(const std::vector<double>& w, double b,
                         const std::vector<double>& dense) {
  double z = b;
  for (std::size_t j = 0; j < w.size(); ++j) z += w[j] * dense[j];
  return OracleSigmoid(z);
}

double OracleMlpScore(const MlpModel& m, const std::vector<double>& dense) {
  std::vector<double> a = dense;
  for (std::size_t l = 0; l < m.n_layers(); ++l) {
    const auto& W = m.weights(l);
    const auto& bias = m.biases(l);
    std::vector<double> z(W.rows());
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      double s = bias(r);
      for (Eigen::Index c = 0; c < W.cols(); ++c) s += W(r, c) * a[c];
      z[r] = s;
    }
    if (l + 1 < m.n_layers())
      for (double& v : z) v = v > 0 ? v : m.leaky_slope() * v;
    a = std::move(z);
  }
  return OracleSigmoid(a[0]);
}

std::vector<double> Dense(const FeatureVector& x) {
  std::vector<double> d(x.n_features(), 0.0);
  for (const auto& e : x.entries()) d[e.index] = e.value;
  return d;
}

LinearModel RandomLinear(Rng& rng, std::size_t n, double scale) {
  std::vector<double> w(n);
  for (double& v : w) v = scale * rng.Normal();
  return LinearModel(ModelKind::kLogisticRegression, w, scale * rng.Normal());
}

FeatureVector RandomBinary(const SpecPtr& spec, Rng& rng, double p) {
  FeatureVector x(spec);
  for (std::size_t j = 0; j < spec->n_features; ++j)
    if (rng.Bernoulli(p)) x.Set(j, 1.0);
  return x;
}

// Exhaustive UER of a mask-only chain on an LR model.
double OracleMaskChainUer(const LinearModel& m, const Toolkit& tk,
                          const std::vector<FeatureVector>& xs,
                          const TransformationChain& chain, double c) {
  std::size_t evasive = 0;
  for (const auto& x : xs) {
    auto d = Dense(x);
    for (int id : chain)
      for (auto f : std::get<DeterministicMask>(tk.Get(id).effect).set_features) d[f] = 1.0;
    evasive += OracleLinearScore(m.weights(), m.bias(), d) < c;
  }
  return static_cast<double>(evasive) / static_cast<double>(xs.size());
}

double OracleMaskChainMeanScore(const LinearModel& m, const Toolkit& tk,
                                const std::vector<FeatureVector>& xs,
                                const TransformationChain& chain) {
  double sum = 0;
  for (const auto& x : xs) {
    auto d = Dense(x);
    for (int id : chain)
      for (auto f : std::get<DeterministicMask>(tk.Get(id).effect).set_features) d[f] = 1.0;
    sum += OracleLinearScore(m.weights(), m.bias(), d);
  }
  return sum / static_cast<double>(xs.size());
}

Toolkit RandomMaskToolkit(Rng& rng, std::size_t n_features, std::size_t n_masks,
                          const std::vector<std::uint32_t>* pool = nullptr) {
  std::vector<Transformation> ts;
  for (std::size_t t = 0; t < n_masks; ++t) {
    DeterministicMask m;
    const std::size_t k = 1 + rng.Below(3);
    for (std::size_t i = 0; i < k; ++i)
      m.set_features.push_back(pool ? (*pool)[rng.Below(pool->size())]
                                     : static_cast<std::uint32_t>(rng.Below(n_features)));
    ts.push_back({static_cast<int>(t), "m" + std::to_string(t), m});
  }
  return Toolkit(std::move(ts));
}

// ---- shared scenario -------------------------------------------------------

// Planted Android-like scenario: goodware-indicative features are strong on
// benign rows and rare on malware; malware evidence is spread thinner.
SyntheticDatasetConfig PlantedConfig(std::uint64_t seed) {
  SyntheticDatasetConfig cfg;
  cfg.n_features = 500;
  cfg.n_benign = 2000;
  cfg.n_malware = 2000;
  cfg.n_goodware_indicative = 40;
  cfg.n_malware_indicative = 40;
  cfg.p_on_in_own_class = 0.8;
  cfg.p_on_in_other_class = 0.02;
  cfg.malware_p_on_in_own_class = 0.1;
  cfg.malware_p_on_in_other_class = 0.05;
  cfg.p_background = 0.05;
  cfg.seed = seed;
  return cfg;
}

DatasetSplit PlantedSplit(std::uint64_t seed) {
  SplitPlan plan;
  plan.seed = DeriveSeed(seed, 2);
  return make_split(synthesize_dataset(PlantedConfig(DeriveSeed(seed, 1))), plan);
}

TrainConfig LrConfig(std::uint64_t seed) {
  TrainConfig t;
  t.learning_rate = 0.01;
  t.epochs = 30;
  t.batch_size = 64;
  t.seed = seed;
  return t;
}

TrainConfig MlpConfig(std::uint64_t seed) {
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.epochs = 10;
  t.batch_size = 64;
  t.seed = seed;
  return t;
}

double EvasionRateInputSpecific(const Classifier& m, const LabeledDataset& tp,
                                const AttackBudget& budget,
                                const PredictionThreshold& thr) {
  std::size_t ev = 0;
  for (const auto& x : tp.examples())
    ev += m.Score(input_specific_attack(m, x, budget, thr)) < thr.value;
  return static_cast<double>(ev) / static_cast<double>(tp.size());
}

LabeledDataset TruePositiveSet(const Classifier& m, const LabeledDataset& set,
                               const PredictionThreshold& thr) {
  const auto mal = set.FilterLabel(kMalware);
  const auto s = m.ScoreBatch(mal.examples());
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] >= thr.value) keep.push_back(i);
  return mal.Subset(keep);
}

double CleanTprAt(const Classifier& m, const LabeledDataset& test, double level) {
  const auto s = m.ScoreBatch(test.examples());
  return tpr_at_fpr(s, test.labels(), level);
}

double CleanAuc(const Classifier& m, const LabeledDataset& test) {
  const auto s = m.ScoreBatch(test.examples());
  return auc_roc(s, test.labels());
}

// ---- criteria --------------------------------------------------------------

Outcome A1() {
  Rng rng(101);
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 8 + rng.Below(10);
    auto spec = MakeSpec(FeatureSpaceSpec::AllBinary(n));
    const double c = 0.2 + 0.6 * rng.Uniform();
    std::unique_ptr<Classifier> model;
    std::function<double(const std::vector<double>&)> oracle;
    if (trial % 2 == 0) {
      auto lin = RandomLinear(rng, n, 1.0);
      oracle = [w = lin.weights(), b = lin.bias()](const std::vector<double>& d) {
        return OracleLinearScore(w, b, d);
      };
      model = std::make_unique<LinearModel>(lin);
    } else {
      auto mlp = std::make_unique<MlpModel>(std::vector<std::size_t>{n, 6, 4, 1});
      for (std::size_t l = 0; l < mlp->n_layers(); ++l) {
        for (Eigen::Index i = 0; i < mlp->weights(l).size(); ++i)
          mlp->mutable_weights(l).data()[i] = rng.Normal();
        for (Eigen::Index i = 0; i < mlp->biases(l).size(); ++i)
          mlp->mutable_biases(l)(i) = 0.5 * rng.Normal();
      }
      const MlpModel* raw = mlp.get();
      oracle = [raw](const std::vector<double>& d) { return OracleMlpScore(*raw, d); };
      model = std::move(mlp);
    }
    LabeledDataset set(spec);
    const std::size_t m = 1 + rng.Below(10);
    for (std::size_t i = 0; i < m; ++i)
      set.Add(RandomBinary(spec, rng, 0.3), kMalware, std::to_string(i));
    UapVector u;
    std::set<std::uint32_t> used;
    const std::size_t k = rng.Below(n + 1);
    for (std::size_t i = 0; i < k; ++i) {
      const auto f = static_cast<std::uint32_t>(rng.Below(n));
      if (used.insert(f).second) u.ranked.push_back(f);
    }
    const auto report = uer(*model, set, u, PredictionThreshold(c));

    std::size_t evasive = 0;
    for (const auto& x : set.examples()) {
      auto d = Dense(x);
      for (auto f : u.ranked) d[f] = 1.0;
      evasive += oracle(d) < c;
    }
    const double expect = static_cast<double>(evasive) / static_cast<double>(m);
    if (report.n_evasive != evasive || report.n_total != m || report.uer != expect)
      ++mismatches;
  }
  return {mismatches == 0, Fmt("200 triples, %d mismatches", mismatches)};
}

Outcome A2() {
  bool all = true;
  std::string detail;
  const AttackBudget budget{20, true};
  const PredictionThreshold thr(0.5);
  for (std::uint64_t rep = 1; rep <= 3; ++rep) {
    const auto split = PlantedSplit(rep);
    const auto lr = train_logistic_regression(split.train, LrConfig(DeriveSeed(rep, 3)));
    const auto mlp = train_mlp(split.train, MlpConfig(DeriveSeed(rep, 4)),
                               StandardMlpLayers(split.train.spec().n_features));
    const auto explore = split.exploration.FilterLabel(kMalware);

    const auto tp_lr = TruePositiveSet(lr, split.test, thr);
    const double lr_uap = uer(lr, tp_lr, craft_uap_avg_jacobian(lr, explore, budget), thr).uer;
    const double lr_is = EvasionRateInputSpecific(lr, tp_lr, budget, thr);
    const auto tp_mlp = TruePositiveSet(mlp, split.test, thr);
    const double mlp_uap =
        uer(mlp, tp_mlp, craft_uap_avg_jacobian(mlp, explore, budget), thr).uer;
    const double mlp_is = EvasionRateInputSpecific(mlp, tp_mlp, budget, thr);

    const bool ok = lr_uap >= 0.95 && lr_is >= 0.95 && mlp_uap >= 0.95 &&
                    mlp_is >= 0.95 && std::abs(lr_uap - lr_is) <= 0.02;
    all = all && ok;
    detail += Fmt("[rep%llu lr uap=%.3f is=%.3f auc=%.3f | mlp uap=%.3f is=%.3f auc=%.3f] ",
                  static_cast<unsigned long long>(rep), lr_uap, lr_is,
                  CleanAuc(lr, split.test), mlp_uap, mlp_is, CleanAuc(mlp, split.test));
  }
  return {all, detail};
}

Outcome A3() {
  Rng rng(303);
  int bad = 0, checked_steps = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 6;
    auto spec = MakeSpec(FeatureSpaceSpec::AllBinary(n));
    const auto lr = RandomLinear(rng, n, 1.5);
    const Toolkit tk = RandomMaskToolkit(rng, n, 1 + rng.Below(4));
    LabeledDataset set(spec);
    for (int i = 0; i < 12; ++i) set.Add(RandomBinary(spec, rng, 0.4), kMalware, std::to_string(i));
    const double c = 0.5;
    std::vector<FeatureVector> tps;
    for (const auto& x : set.examples())
      if (OracleLinearScore(lr.weights(), lr.bias(), Dense(x)) >= c) tps.push_back(x);
    if (tps.empty()) {
      --trial;
      continue;
    }
    GreedySearchOptions opts;
    opts.max_len = 3;
    opts.seed = trial;
    const auto got = greedy_uap_search_uer(lr, tk, set, PredictionThreshold(c), opts);

    // Replay: at each step the pick must be the exhaustive best extension
    // (lowest id on ties), and the search must stop exactly when no
    // extension raises the UER or the UER reached 1.
    TransformationChain prefix;
    double current = 0.0;
    std::size_t step = 0;
    for (; step < opts.max_len; ++step) {
      if (current >= 1.0) break;
      int best = -1;
      double best_v = -1;
      for (int id : tk.ids()) {
        auto ext = prefix;
        ext.push_back(id);
        const double v = OracleMaskChainUer(lr, tk, tps, ext, c);
        if (v > best_v) best_v = v, best = id;
      }
      if (best_v <= current) break;
      ++checked_steps;
      if (step >= got.chain.size() || got.chain[step] != best ||
          std::abs(got.trace[step] - best_v) > 1e-12) {
        ++bad;
        break;
      }
      prefix.push_back(best);
      current = best_v;
    }
    if (prefix != got.chain) ++bad;
  }
  return {bad == 0, Fmt("100 trials, %d greedy steps checked, %d disagreements",
                        checked_steps, bad)};
}

Outcome A4() {
  Rng rng(404);
  const std::size_t n = 40;
  auto spec = MakeSpec(FeatureSpaceSpec::AllBinary(n));
  std::vector<double> w(n);
  std::vector<std::uint32_t> negative;
  for (std::size_t j = 0; j < n; ++j) {
    w[j] = rng.Normal();
    if (w[j] < 0) negative.push_back(static_cast<std::uint32_t>(j));
  }
  const LinearModel lr(ModelKind::kLogisticRegression, w, 2.0);
  const Toolkit tk = RandomMaskToolkit(rng, n, 12, &negative);
  LabeledDataset set(spec);
  for (int i = 0; i < 200; ++i) set.Add(RandomBinary(spec, rng, 0.3), kMalware, std::to_string(i));
  const auto rc = random_chain_attack(lr, tk, set, 1000, 10, PredictionThreshold(0.5), 4);
  std::size_t violations = 0;
  for (const auto& trace : rc.uer)
    for (std::size_t k = 1; k < trace.size(); ++k) violations += trace[k] < trace[k - 1];
  return {violations == 0 && rc.uer.size() == 1000,
          Fmt("1000 chains over %zu true positives, %zu decreasing steps, median UER@10=%.3f",
              rc.n_examples, violations, rc.median_by_length.back())};
}

Outcome A5() {
  const std::uint64_t seed = 5;
  const auto split = PlantedSplit(seed);
  const PredictionThreshold thr(0.5);
  const auto layers = SmallMlpLayers(split.train.spec().n_features);
  TrainConfig tc = MlpConfig(DeriveSeed(seed, 3));
  tc.epochs = 20;

  TrainConfig surrogate_cfg = LrConfig(DeriveSeed(seed, 4));
  const auto surrogate = train_logistic_regression(split.train, surrogate_cfg);
  GadgetToolkitConfig gc;
  gc.seed = DeriveSeed(seed, 5);
  gc.side_effect_weights = FeatureFrequencies(split.train, kBenign);
  const Toolkit tk = GenerateGadgetToolkit(surrogate, split.train.spec(), gc);

  AdaptiveAttackConfig ac;
  ac.max_len = 10;
  ac.seed = DeriveSeed(seed, 6);
  const auto explore = split.exploration.FilterLabel(kMalware);

  const auto undefended = train_mlp(split.train, tc, layers);
  const auto before = adaptive_problem_space_attack(undefended, tk, explore, split.test, thr, ac);
  const double uer_before = before.report.per_length_uer.empty()
                                ? 0.0
                                : before.report.per_length_uer.back();

  UapAdvTrainingConfig uc;
  uc.last_n_epochs = 3;
  uc.mix = AdvMixMode::kMixed;
  uc.max_chain_len = 10;
  uc.seed = DeriveSeed(seed, 7);
  MixAccounting acct;
  const auto defended = adv_train_uap_problem_space(split.train, tk, uc, tc, layers, &acct);
  const auto after = adaptive_problem_space_attack(defended, tk, explore, split.test, thr, ac);
  const double uer_after = after.report.uer;

  const double tpr_before = CleanTprAt(undefended, split.test, 0.01);
  const double tpr_after = CleanTprAt(defended, split.test, 0.01);
  const bool ok = uer_before >= 0.90 && uer_after <= 0.5 * uer_before &&
                  tpr_before - tpr_after <= 0.05;
  return {ok, Fmt("UER@10 undefended=%.3f (len %zu), defended fresh=%.3f (len %zu); "
                  "TPR@1%%FPR %.3f -> %.3f; adv rows %llu",
                  uer_before, before.chain.size(), uer_after, after.chain.size(),
                  tpr_before, tpr_after,
                  static_cast<unsigned long long>(acct.adversarial_malware_rows))};
}

Outcome A6() {
  const std::uint64_t seed = 6;
  SplitPlan plan;
  plan.seed = DeriveSeed(seed, 2);
  auto cfg = WindowsLikeDatasetConfig(DeriveSeed(seed, 1));
  const auto split = make_split(synthesize_dataset(cfg), plan);
  const PredictionThreshold thr(0.90);
  const Toolkit tk = LoadToolkit(std::string(UAP_DATA_DIR) + "/windows_toolkit.txt");
  tk.Validate(split.train.spec());

  const GbdtConfig gcfg;
  const auto undefended = train_gbdt(split.train, gcfg);

  const auto explore_all = split.exploration.FilterLabel(kMalware);
  std::vector<std::size_t> first100(std::min<std::size_t>(100, explore_all.size()));
  for (std::size_t i = 0; i < first100.size(); ++i) first100[i] = i;
  const auto explore = explore_all.Subset(first100);

  GreedySearchOptions go;
  go.max_len = 10;
  go.seed = DeriveSeed(seed, 3);
  const auto search = greedy_uap_search_confidence(undefended, tk, explore, go);
  const auto outcomes = apply_chain_to_set(explore.examples(), search.chain, tk,
                                           DeriveSeed(seed, 4));
  const auto stat = fit_perturbation_stat_model(explore.examples(), outcomes);
  const auto defended = adv_train_gbdt_with_stat_model(split.train, stat, AdvMixMode::kMixed,
                                                       gcfg, DeriveSeed(seed, 5));

  std::size_t evaded = 0, detected = 0;
  const auto test_malware = split.test.FilterLabel(kMalware);
  for (std::size_t i = 0; i < test_malware.size(); ++i) {
    const auto& x = test_malware.example(i);
    if (undefended.Score(x) < thr.value) continue;
    Rng rng(DeriveSeed(DeriveSeed(seed, 6), i));
    const auto adv = sample_perturbation(stat, x, rng);
    if (undefended.Score(adv) >= thr.value) continue;
    ++evaded;
    detected += defended.Score(adv) >= thr.value;
  }
  const double auc_before = CleanAuc(undefended, split.test);
  const double auc_after = CleanAuc(defended, split.test);
  const double rate = evaded ? static_cast<double>(detected) / evaded : 0.0;
  const bool ok = evaded > 0 && rate >= 0.95 && auc_before - auc_after <= 0.03;
  return {ok, Fmt("chain %s; %zu/%zu sampled evasions detected (%.3f); AUC %.4f -> %.4f",
                  FormatChain(search.chain).c_str(), detected, evaded, rate, auc_before,
                  auc_after)};
}

Outcome A7() {
  Rng rng(707);
  double worst = 0;
  for (int m = 0; m < 10; ++m) {
    const std::size_t n = 30;
    FeatureSpaceSpec s;
    s.n_features = n;
    s.feature_kinds.assign(n, FeatureKind::kContinuous);
    s.feature_groups.assign(n, "c");
    auto spec = MakeSpec(s);
    MlpModel mlp({n, 16, 8, 1});
    for (std::size_t l = 0; l < mlp.n_layers(); ++l) {
      for (Eigen::Index i = 0; i < mlp.weights(l).size(); ++i)
        mlp.mutable_weights(l).data()[i] = 0.3 * rng.Normal();
      for (Eigen::Index i = 0; i < mlp.biases(l).size(); ++i)
        mlp.mutable_biases(l)(i) = 0.1 * rng.Normal();
    }
    FeatureVector x(spec);
    for (std::size_t j = 0; j < n; ++j) x.Set(j, rng.Normal());
    const auto g = mlp.InputGradient(x);
    for (int k = 0; k < 50; ++k) {
      const std::size_t j = rng.Below(n);
      const double h = 1e-5;
      FeatureVector xp = x, xm = x;
      xp.Set(j, x.Get(j) + h);
      xm.Set(j, x.Get(j) - h);
      const double fd = (mlp.Score(xp) - mlp.Score(xm)) / (2 * h);
      const double rel = std::abs(g[j] - fd) / std::max({std::abs(g[j]), std::abs(fd), 1e-8});
      worst = std::max(worst, rel);
    }
  }

  // 1-D threshold data for the boosted trees.
  auto spec1 = MakeSpec([] {
    FeatureSpaceSpec s;
    s.n_features = 1;
    s.feature_kinds = {FeatureKind::kContinuous};
    s.feature_groups = {"x"};
    return s;
  }());
  LabeledDataset d1(spec1);
  for (int i = 0; i < 200; ++i) {
    FeatureVector x(spec1);
    const double v = rng.Uniform();
    x.Set(0, v + 0.01);
    d1.Add(x, v > 0.37 ? kMalware : kBenign, std::to_string(i));
  }
  GbdtConfig two;
  two.n_trees = 2;
  two.min_samples_leaf = 1;
  const auto g2 = train_gbdt(d1, two);
  const double auc1 = CleanAuc(g2, d1);

  const auto split = PlantedSplit(7);
  const auto big = train_gbdt(split.train, GbdtConfig{});
  std::size_t max_leaves = 0;
  for (const auto& t : big.trees()) max_leaves = std::max(max_leaves, t.LeafCount());
  for (const auto& t : g2.trees()) max_leaves = std::max(max_leaves, t.LeafCount());

  const bool ok = worst <= 1e-4 && auc1 == 1.0 && max_leaves <= 31;
  return {ok, Fmt("worst gradient rel err %.2e; 2-tree AUC %.4f; max leaves %zu", worst,
                  auc1, max_leaves)};
}

Outcome A8() {
  const std::uint64_t seed = 8;
  const auto split = PlantedSplit(seed);
  const std::size_t n = split.train.spec().n_features;
  const std::vector<std::pair<std::string, std::vector<std::size_t>>> archs = {
      {"standard", StandardMlpLayers(n)}, {"small", SmallMlpLayers(n)}, {"deep", DeepMlpLayers(n)}};
  std::vector<MlpModel> models;
  for (std::size_t a = 0; a < archs.size(); ++a)
    models.push_back(train_mlp(split.train, MlpConfig(DeriveSeed(seed, 10 + a)), archs[a].second));
  const PredictionThreshold thr(0.5);
  const AttackBudget budget{40, true};
  const auto explore = split.exploration.FilterLabel(kMalware);
  double worst = 1.0;
  std::string grid;
  for (std::size_t s = 0; s < models.size(); ++s) {
    const auto u = craft_uap_avg_jacobian(models[s], explore, budget);
    for (std::size_t t = 0; t < models.size(); ++t) {
      const auto r = transfer_eval(u, models[t], split.test, thr);
      grid += Fmt("%s->%s=%.3f ", archs[s].first.c_str(), archs[t].first.c_str(), r.uer);
      if (s != t) worst = std::min(worst, r.uer);
    }
  }
  return {worst >= 0.90, Fmt("min cross-model UER %.3f; %s", worst, grid.c_str())};
}

Outcome A9() {
  Rng rng(909);
  int matches = 0;
  double run_sum = 0, repeat_sum = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 8;
    auto spec = MakeSpec(FeatureSpaceSpec::AllBinary(n));
    const auto lr = RandomLinear(rng, n, 1.0);
    const Toolkit tk = RandomMaskToolkit(rng, n, 2 + rng.Below(2));
    LabeledDataset set(spec);
    for (int i = 0; i < 10; ++i) set.Add(RandomBinary(spec, rng, 0.4), kMalware, std::to_string(i));

    double best = 2.0;
    const auto ids = tk.ids();
    std::function<void(TransformationChain&)> walk = [&](TransformationChain& c) {
      if (!c.empty()) best = std::min(best, OracleMaskChainMeanScore(lr, tk, set.examples(), c));
      if (c.size() == 3) return;
      for (int id : ids) {
        c.push_back(id);
        walk(c);
        c.pop_back();
      }
    };
    TransformationChain c;
    walk(c);

    GpConfig g;
    g.max_len = 3;
    g.seed = DeriveSeed(909, trial);
    const auto r = gp_uap_search(lr, tk, set, g);
    matches += std::abs(r.best_fitness - best) <= 1e-12;
    run_sum += static_cast<double>(r.best_max_run_length);
    repeat_sum += r.final_repeat_fraction;
  }
  return {matches >= 95,
          Fmt("%d/100 trials reach the exhaustive optimum; mean best-chain max run %.2f; "
              "mean final-population repeat fraction %.2f",
              matches, run_sum / 100, repeat_sum / 100)};
}

Outcome A10() {
  Rng rng(1010);
  int bad_auc = 0, bad_tpr = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t m = 2 + rng.Below(60);
    std::vector<double> s(m);
    std::vector<int> y(m);
    // Coarse scores so ties are common.
    for (std::size_t i = 0; i < m; ++i) {
      s[i] = static_cast<double>(rng.Below(12)) / 11.0;
      y[i] = static_cast<int>(rng.Below(2));
    }
    y[0] = 0;
    y[1] = 1;
    std::uint64_t P = 0, N = 0, halves = 0;
    for (std::size_t i = 0; i < m; ++i) {
      (y[i] ? P : N)++;
      if (!y[i]) continue;
      for (std::size_t j = 0; j < m; ++j) {
        if (y[j]) continue;
        halves += s[i] > s[j] ? 2 : s[i] == s[j] ? 1 : 0;
      }
    }
    const double auc_expect = static_cast<double>(halves) / (2.0 * P * N);
    if (auc_roc(s, y) != auc_expect) ++bad_auc;

    for (double level : {0.0, 0.01, 0.1, 0.25, 0.5, 1.0, rng.Uniform()}) {
      // Enumerate every candidate threshold; keep the lowest admissible one.
      std::vector<double> cands(s.begin(), s.end());
      cands.push_back(2.0);
      std::sort(cands.begin(), cands.end());
      double tpr = 0;
      for (double t : cands) {
        std::uint64_t tp = 0, fp = 0;
        for (std::size_t i = 0; i < m; ++i)
          if (s[i] >= t) (y[i] ? tp : fp)++;
        if (static_cast<double>(fp) / N <= level) {
          tpr = static_cast<double>(tp) / P;
          break;
        }
      }
      if (tpr_at_fpr(s, y, level) != tpr) ++bad_tpr;
    }
  }
  return {bad_auc == 0 && bad_tpr == 0,
          Fmt("500 sets: %d auc mismatches, %d tpr mismatches", bad_auc, bad_tpr)};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    const char* name;
    double limit_s;
    Outcome (*fn)();
  };
  const Criterion all[] = {
      {"A1", 5, A1},   {"A2", 120, A2}, {"A3", 30, A3},  {"A4", 30, A4},
      {"A5", 600, A5}, {"A6", 300, A6}, {"A7", 30, A7},  {"A8", 300, A8},
      {"A9", 60, A9},  {"A10", 10, A10},
  };
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) only.insert(argv[i]);
  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.name)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = Seconds(t0);
    const bool pass = o.pass && secs < c.limit_s;
    if (!pass) ++failed;
    std::printf("%s %s (%.1fs, limit %.0fs) %s\n", c.name, pass ? "PASS" : "FAIL", secs,
                c.limit_s, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
