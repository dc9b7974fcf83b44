#include "cli/commands.h"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "uap/defenses.h"
#include "uap/eval.h"
#include "uap/feature_attacks.h"
#include "uap/feature_data.h"
#include "uap/models.h"
#include "uap/problem_space.h"

namespace uap::cli {

namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// Child seeds per pipeline stage, so every command sees the same data,
// split and training runs for a given global seed.
enum Stage : std::uint64_t {
  kDataSeed = 1,
  kSplitSeed = 2,
  kTrainSeed = 3,
  kSurrogateSeed = 4,
  kGadgetSeed = 5,
  kSearchSeed = 6,
  kDefenseSeed = 7,
  kEvalSeed = 8,
};

SyntheticDatasetConfig SyntheticFrom(const RunContext& ctx) {
  const Config& c = ctx.config;
  const std::string preset = c.GetString("data.preset");
  SyntheticDatasetConfig s;
  if (preset == "windows_like") {
    s = WindowsLikeDatasetConfig(0);
  } else {
    Require(preset == "drebin_like", ErrorCode::kInvalidArgument,
            "data.preset must be drebin_like or windows_like");
    // Thin malware evidence and dense neutral features: the planted
    // scenario the attack and defense experiments are calibrated on.
    s.malware_p_on_in_own_class = 0.1;
    s.malware_p_on_in_other_class = 0.05;
    s.p_background = 0.05;
  }
  // Explicit keys win over the preset.
  auto uint_key = [&](const char* key, std::size_t& field) {
    if (c.Has(key)) field = c.GetUint(key);
  };
  auto dbl_key = [&](const char* key, double& field) {
    if (c.Has(key)) field = c.GetDouble(key);
  };
  uint_key("synth.n_features", s.n_features);
  uint_key("synth.n_benign", s.n_benign);
  uint_key("synth.n_malware", s.n_malware);
  uint_key("synth.n_goodware", s.n_goodware_indicative);
  uint_key("synth.n_malware_features", s.n_malware_indicative);
  uint_key("synth.n_continuous", s.n_continuous);
  dbl_key("synth.p_own", s.p_on_in_own_class);
  dbl_key("synth.p_other", s.p_on_in_other_class);
  dbl_key("synth.malware_p_own", s.malware_p_on_in_own_class);
  dbl_key("synth.malware_p_other", s.malware_p_on_in_other_class);
  dbl_key("synth.p_background", s.p_background);
  s.seed = DeriveSeed(ctx.seed, kDataSeed);
  s.Validate();
  return s;
}

Json SyntheticJson(const SyntheticDatasetConfig& s) {
  Json j;
  j["n_features"] = s.n_features;
  j["n_benign"] = s.n_benign;
  j["n_malware"] = s.n_malware;
  j["n_goodware_indicative"] = s.n_goodware_indicative;
  j["n_malware_indicative"] = s.n_malware_indicative;
  j["p_on_in_own_class"] = s.p_on_in_own_class;
  j["p_on_in_other_class"] = s.p_on_in_other_class;
  j["malware_p_on_in_own_class"] = s.MalwareOwnP();
  j["malware_p_on_in_other_class"] = s.MalwareOtherP();
  j["n_continuous"] = s.n_continuous;
  j["p_background"] = s.p_background;
  j["seed"] = s.seed;
  return j;
}

LabeledDataset LoadData(const RunContext& ctx) {
  const Config& c = ctx.config;
  if (c.GetString("data.path").empty()) return synthesize_dataset(SyntheticFrom(ctx));
  Require(!c.GetString("data.spec").empty(), ErrorCode::kInvalidArgument,
          "data.path needs data.spec");
  auto spec = MakeSpec(load_spec_file(c.GetString("data.spec")));
  return load_sparse_dataset(c.GetString("data.path"), spec);
}

DatasetSplit SplitData(const RunContext& ctx, const LabeledDataset& data) {
  SplitPlan plan;
  plan.train_fraction = ctx.config.GetDouble("split.train");
  plan.exploration_fraction = ctx.config.GetDouble("split.exploration");
  plan.test_fraction = ctx.config.GetDouble("split.test");
  plan.stratified = ctx.config.GetBool("split.stratified");
  plan.seed = DeriveSeed(ctx.seed, kSplitSeed);
  return make_split(data, plan);
}

TrainConfig TrainConfigFrom(const RunContext& ctx) {
  const Config& c = ctx.config;
  TrainConfig t;
  const std::string opt = c.GetString("train.optimizer");
  Require(opt == "adam" || opt == "sgd", ErrorCode::kInvalidArgument,
          "train.optimizer must be adam or sgd");
  t.optimizer = opt == "adam" ? Optimizer::kAdam : Optimizer::kSgd;
  t.learning_rate = c.GetDouble("train.learning_rate");
  t.epochs = static_cast<int>(c.GetInt("train.epochs"));
  t.batch_size = static_cast<int>(c.GetInt("train.batch_size"));
  t.regularization_c = c.GetDouble("train.c");
  t.dropout_rate = c.GetDouble("train.dropout");
  t.seed = DeriveSeed(ctx.seed, kTrainSeed);
  t.Validate();
  return t;
}

GbdtConfig GbdtConfigFrom(const Config& c) {
  GbdtConfig g;
  g.n_trees = c.GetUint("gbdt.n_trees");
  g.max_leaves = c.GetUint("gbdt.max_leaves");
  g.shrinkage = c.GetDouble("gbdt.shrinkage");
  g.min_samples_leaf = c.GetUint("gbdt.min_samples_leaf");
  g.Validate();
  return g;
}

std::vector<std::size_t> LayersFor(const Config& c, std::size_t n) {
  const std::string arch = c.GetString("model.arch");
  if (arch == "standard") return StandardMlpLayers(n);
  if (arch == "small") return SmallMlpLayers(n);
  if (arch == "deep") return DeepMlpLayers(n);
  Fail(ErrorCode::kInvalidArgument, "model.arch must be standard, small or deep");
}

std::unique_ptr<Classifier> TrainFamily(const RunContext& ctx,
                                        const LabeledDataset& train) {
  const ModelKind kind = ParseModelKind(ctx.config.GetString("model.family"));
  switch (kind) {
    case ModelKind::kLogisticRegression:
      return std::make_unique<LinearModel>(
          train_logistic_regression(train, TrainConfigFrom(ctx)));
    case ModelKind::kLinearSvm:
      return std::make_unique<LinearModel>(train_linear_svm(train, TrainConfigFrom(ctx)));
    case ModelKind::kMlp:
      return std::make_unique<MlpModel>(
          train_mlp(train, TrainConfigFrom(ctx),
                    LayersFor(ctx.config, train.spec().n_features)));
    case ModelKind::kTreeEnsemble:
      return std::make_unique<TreeEnsembleModel>(
          train_gbdt(train, GbdtConfigFrom(ctx.config)));
  }
  Fail(ErrorCode::kInvalidArgument, "unsupported model family");
}

std::unique_ptr<Classifier> LoadModelChecked(const fs::path& path,
                                             const FeatureSpaceSpec& spec) {
  auto model = LoadModel(path);
  Require(model->n_features() == spec.n_features, ErrorCode::kSpecMismatch,
          "model " + path.string() + " expects " +
              std::to_string(model->n_features()) + " features, data has " +
              std::to_string(spec.n_features));
  return model;
}

std::unique_ptr<Classifier> RequireModel(const RunContext& ctx,
                                         const FeatureSpaceSpec& spec) {
  const std::string path = ctx.config.GetString("model.path");
  Require(!path.empty(), ErrorCode::kInvalidArgument,
          ctx.command + " needs model.path");
  return LoadModelChecked(path, spec);
}

Toolkit ToolkitFor(const RunContext& ctx, const DatasetSplit& split) {
  const Config& c = ctx.config;
  const std::string path = c.GetString("attack.toolkit");
  if (!path.empty()) {
    Toolkit t = LoadToolkit(path);
    t.Validate(split.train.spec());
    return t;
  }
  // Gadget harvesting needs a linear view of which features lean benign.
  TrainConfig tc = TrainConfigFrom(ctx);
  tc.seed = DeriveSeed(ctx.seed, kSurrogateSeed);
  const LinearModel surrogate = train_logistic_regression(split.train, tc);
  GadgetToolkitConfig g;
  g.n_gadgets = c.GetUint("attack.gadgets");
  g.pool_size = c.GetUint("attack.gadget_pool");
  g.primary_features = c.GetUint("attack.gadget_primary");
  g.side_effect_mean = c.GetDouble("attack.gadget_side_mean");
  g.side_effect_exclude_top = c.GetUint("attack.gadget_side_exclude");
  g.side_effect_weights = FeatureFrequencies(split.train, kBenign);
  g.seed = DeriveSeed(ctx.seed, kGadgetSeed);
  return GenerateGadgetToolkit(surrogate, split.train.spec(), g);
}

LabeledDataset ExplorationMalware(const RunContext& ctx, const DatasetSplit& split) {
  LabeledDataset m = split.exploration.FilterLabel(kMalware);
  const std::size_t cap = ctx.config.GetUint("attack.exploration_size");
  if (cap == 0 || cap >= m.size()) return m;
  std::vector<std::size_t> keep(cap);
  for (std::size_t i = 0; i < cap; ++i) keep[i] = i;
  return m.Subset(keep);
}

LabeledDataset TruePositives(const Classifier& model, const LabeledDataset& set,
                             const PredictionThreshold& threshold) {
  const LabeledDataset m = set.FilterLabel(kMalware);
  const auto scores = model.ScoreBatch(m.examples());
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] >= threshold.value) keep.push_back(i);
  Require(!keep.empty(), ErrorCode::kInvalidArgument,
          "no true-positive malware in the evaluation set");
  return m.Subset(keep);
}

PredictionThreshold ThresholdFrom(const Config& c) {
  return PredictionThreshold(c.GetDouble("eval.threshold"));
}

void EnsureOutDir(const RunContext& ctx) {
  std::error_code ec;
  fs::create_directories(ctx.out_dir, ec);
  Require(!ec, ErrorCode::kIo, "cannot create " + ctx.out_dir.string());
}

void WriteOut(const RunContext& ctx, const std::string& name,
              const std::string& contents, Json& outputs) {
  WriteFileAtomic(ctx.out_dir / name, contents);
  outputs.push_back(name);
  spdlog::info("wrote {}", (ctx.out_dir / name).string());
}

void WriteManifest(const RunContext& ctx, Json outputs, Json extra = Json::object()) {
  Json m;
  m["command"] = ctx.command;
  m["seed"] = ctx.seed;
  Json cfg = Json::object();
  for (const auto& [k, v] : ctx.config.Resolved()) cfg[k] = v;
  cfg["seed"] = std::to_string(ctx.seed);
  m["config"] = cfg;
  if (ctx.config.GetString("data.path").empty())
    m["synthetic"] = SyntheticJson(SyntheticFrom(ctx));
  m["outputs"] = std::move(outputs);
  for (auto& [k, v] : extra.items()) m[k] = v;
  WriteFileAtomic(ctx.out_dir / "manifest.json", m.dump(2) + "\n");
}

// UER at each configured reporting length. A chain that stopped early keeps
// its final value at longer lengths.
Json UerAtLengths(const Config& c, const std::vector<double>& per_length) {
  Json j = Json::object();
  for (double L : c.GetDoubleList("eval.lengths")) {
    const auto k = static_cast<std::size_t>(L);
    double v = 0.0;
    if (!per_length.empty()) v = per_length[std::min(k, per_length.size()) - 1];
    j[std::to_string(k)] = v;
  }
  return j;
}

// per_length is null for runs without an attack; their UER cells stay empty.
Json SummaryJson(const RunContext& ctx, const EvaluationReport& clean,
                 const std::vector<double>* per_length) {
  Json s;
  // Unlabelled runs are named after their output directory.
  std::string name = ctx.config.GetString("scenario");
  if (name == "default") {
    name = fs::absolute(ctx.out_dir).lexically_normal().filename().string();
    if (name.empty()) name = fs::absolute(ctx.out_dir).parent_path().filename().string();
  }
  s["name"] = name;
  s["command"] = ctx.command;
  s["auc_roc"] = clean.auc_roc ? Json(*clean.auc_roc) : Json(nullptr);
  const double level = ctx.config.GetDouble("eval.report_fpr");
  const auto it = clean.tpr_at_fpr.find(level);
  s["fpr_level"] = level;
  s["tpr_at_fpr"] = it == clean.tpr_at_fpr.end() ? Json(nullptr) : Json(it->second);
  s["uer_by_length"] = per_length ? UerAtLengths(ctx.config, *per_length) : Json::object();
  return s;
}

std::vector<double> ReportLevels(const Config& c) {
  auto levels = c.GetDoubleList("eval.fpr_levels");
  const double r = c.GetDouble("eval.report_fpr");
  if (std::find(levels.begin(), levels.end(), r) == levels.end()) levels.push_back(r);
  return levels;
}

}  // namespace

void CmdSynthData(const RunContext& ctx) {
  const LabeledDataset data = LoadData(ctx);
  EnsureOutDir(ctx);
  Json outputs = Json::array();
  WriteOut(ctx, "dataset.txt", format_sparse_dataset(data), outputs);
  WriteOut(ctx, "spec.txt", format_spec_file(data.spec()), outputs);
  WriteManifest(ctx, outputs,
                Json{{"n_examples", data.size()},
                     {"n_malware", data.CountLabel(kMalware)}});
}

void CmdTrain(const RunContext& ctx) {
  const DatasetSplit split = SplitData(ctx, LoadData(ctx));
  auto model = TrainFamily(ctx, split.train);
  EvaluationReport clean;
  AttachCleanMetrics(*model, split.test, ReportLevels(ctx.config), clean);
  EnsureOutDir(ctx);
  Json outputs = Json::array();
  WriteOut(ctx, "model.txt", SerializeModel(*model), outputs);
  WriteOut(ctx, "report.json", ReportToJson(clean), outputs);
  WriteOut(ctx, "summary.json", SummaryJson(ctx, clean, nullptr).dump(2) + "\n", outputs);
  WriteManifest(ctx, outputs,
                Json{{"n_train", split.train.size()},
                     {"n_exploration", split.exploration.size()},
                     {"n_test", split.test.size()}});
}

void CmdAttackFs(const RunContext& ctx) {
  const DatasetSplit split = SplitData(ctx, LoadData(ctx));
  auto model = RequireModel(ctx, split.train.spec());
  const auto threshold = ThresholdFrom(ctx.config);
  const AttackBudget budget{ctx.config.GetUint("attack.l0"), true};
  const std::string method = ctx.config.GetString("attack.method");
  const LabeledDataset tp = TruePositives(*model, split.test, threshold);
  Json outputs = Json::array();

  if (method == "input_specific") {
    EvaluationReport rep;
    rep.n_total = tp.size();
    for (const auto& x : tp.examples()) {
      const auto adv = input_specific_attack(*model, x, budget, threshold);
      rep.n_evasive += model->Score(adv) < threshold.value;
    }
    rep.uer = static_cast<double>(rep.n_evasive) / static_cast<double>(rep.n_total);
    AttachCleanMetrics(*model, split.test, ReportLevels(ctx.config), rep);
    EnsureOutDir(ctx);
    WriteOut(ctx, "report.json", ReportToJson(rep), outputs);
    WriteManifest(ctx, outputs);
    return;
  }

  UapVector uap;
  if (method == "avg_jacobian") {
    uap = craft_uap_avg_jacobian(*model, split.exploration.FilterLabel(kMalware), budget);
  } else if (method == "linear") {
    const auto* lin = dynamic_cast<const LinearModel*>(model.get());
    Require(lin != nullptr, ErrorCode::kInvalidArgument,
            "attack.method=linear needs a linear model");
    uap = craft_uap_linear(*lin, budget);
  } else {
    Fail(ErrorCode::kInvalidArgument,
         "attack.method must be avg_jacobian, linear or input_specific");
  }
  EvaluationReport rep = uer(*model, tp, uap, threshold);
  AttachCleanMetrics(*model, split.test, ReportLevels(ctx.config), rep);
  EnsureOutDir(ctx);
  WriteOut(ctx, "uap.txt", FormatUap(uap) + "\n", outputs);
  WriteOut(ctx, "report.json", ReportToJson(rep), outputs);
  WriteOut(ctx, "summary.json",
           SummaryJson(ctx, rep, &rep.per_length_uer).dump(2) + "\n", outputs);
  WriteManifest(ctx, outputs);
}

void CmdAttackPs(const RunContext& ctx) {
  const Config& c = ctx.config;
  const DatasetSplit split = SplitData(ctx, LoadData(ctx));
  auto model = RequireModel(ctx, split.train.spec());
  const Toolkit toolkit = ToolkitFor(ctx, split);
  const auto threshold = ThresholdFrom(c);
  const std::string strategy = c.GetString("attack.strategy");
  const std::size_t max_len = c.GetUint("attack.max_len");
  const LabeledDataset explore = ExplorationMalware(ctx, split);
  const std::uint64_t search_seed = DeriveSeed(ctx.seed, kSearchSeed);
  Json outputs = Json::array();
  Json extra = Json::object();

  EvaluationReport rep;
  TransformationChain chain;
  std::string random_csv;
  if (strategy == "random") {
    const auto rc = random_chain_attack(*model, toolkit, split.test, c.GetUint("attack.random_chains"),
                                        max_len, threshold, search_seed);
    rep.per_length_uer = rc.median_by_length;
    rep.uer = rc.median_by_length.empty() ? 0.0 : rc.median_by_length.back();
    rep.n_total = rc.n_examples;
    random_csv = GridToCsv(rc.uer);
    extra["search_rounds"] = 0;
  } else {
    AdaptiveAttackConfig ac;
    ac.strategy = ParseSearchStrategy(strategy);
    ac.max_len = max_len;
    ac.seed = search_seed;
    ac.gp.population = c.GetUint("gp.population");
    ac.gp.generations = c.GetUint("gp.generations");
    ac.gp.mutation_rate = c.GetDouble("gp.mutation");
    ac.gp.crossover_rate = c.GetDouble("gp.crossover");
    auto result = adaptive_problem_space_attack(*model, toolkit, explore, split.test,
                                                threshold, ac);
    rep = std::move(result.report);
    chain = std::move(result.chain);
    extra["search_rounds"] = search_rounds_estimate(explore.size(), max_len, toolkit.size());
    extra["exploration_size"] = explore.size();
  }
  AttachCleanMetrics(*model, split.test, ReportLevels(c), rep);
  const auto hist = per_transformation_uer_histogram(
      *model, toolkit, split.test.FilterLabel(kMalware), threshold,
      DeriveSeed(ctx.seed, kEvalSeed));

  EnsureOutDir(ctx);
  WriteOut(ctx, "toolkit.txt", FormatToolkit(toolkit), outputs);
  if (strategy == "random") {
    WriteOut(ctx, "random_chains.csv", random_csv, outputs);
  } else {
    WriteOut(ctx, "chain.txt", FormatChain(chain) + "\n", outputs);
  }
  WriteOut(ctx, "report.json", ReportToJson(rep), outputs);
  WriteOut(ctx, "uer_histogram.csv", HistogramToCsv(hist), outputs);
  WriteOut(ctx, "summary.json", SummaryJson(ctx, rep, &rep.per_length_uer).dump(2) + "\n",
           outputs);
  extra["toolkit_size"] = toolkit.size();
  extra["max_len"] = max_len;
  WriteManifest(ctx, outputs, extra);
}

void CmdDefend(const RunContext& ctx) {
  const Config& c = ctx.config;
  const DatasetSplit split = SplitData(ctx, LoadData(ctx));
  const std::string kind = c.GetString("defense.kind");
  const AdvMixMode mix = ParseAdvMixMode(c.GetString("defense.mode"));
  const ModelKind family = ParseModelKind(c.GetString("model.family"));
  const auto threshold = ThresholdFrom(c);
  const std::uint64_t defense_seed = DeriveSeed(ctx.seed, kDefenseSeed);
  Json outputs = Json::array();
  Json extra = Json::object();
  MixAccounting acct;
  std::unique_ptr<Classifier> defended;
  std::optional<Toolkit> toolkit;
  std::string stat_text;

  if (kind == "feature_space") {
    FeatureSpaceDefenseConfig fc;
    fc.l0_budget = c.GetUint("defense.l0");
    fc.mix = mix;
    fc.attack_threshold = threshold.value;
    defended = adv_train_feature_space(family, split.train, fc, TrainConfigFrom(ctx),
                                       family == ModelKind::kMlp
                                           ? LayersFor(c, split.train.spec().n_features)
                                           : std::vector<std::size_t>{},
                                       &acct);
  } else if (kind == "uap_problem_space") {
    toolkit = ToolkitFor(ctx, split);
    UapAdvTrainingConfig uc;
    uc.last_n_epochs = static_cast<int>(c.GetInt("defense.last_n"));
    uc.mix = mix;
    uc.max_chain_len = c.GetUint("attack.max_len");
    uc.attack_threshold = threshold.value;
    uc.seed = defense_seed;
    if (family == ModelKind::kMlp) {
      defended = std::make_unique<MlpModel>(adv_train_uap_problem_space(
          split.train, *toolkit, uc, TrainConfigFrom(ctx),
          LayersFor(c, split.train.spec().n_features), &acct));
    } else {
      defended = std::make_unique<LinearModel>(adv_train_uap_problem_space_linear(
          family, split.train, *toolkit, uc, TrainConfigFrom(ctx), &acct));
    }
  } else if (kind == "stat_model") {
    Require(family == ModelKind::kTreeEnsemble, ErrorCode::kInvalidArgument,
            "defense.kind=stat_model applies to model.family=gbdt");
    toolkit = ToolkitFor(ctx, split);
    auto undefended = RequireModel(ctx, split.train.spec());
    const LabeledDataset explore = ExplorationMalware(ctx, split);
    GreedySearchOptions go;
    go.max_len = c.GetUint("attack.max_len");
    go.seed = DeriveSeed(ctx.seed, kSearchSeed);
    const auto search = greedy_uap_search_confidence(*undefended, *toolkit, explore, go);
    const auto outcomes =
        apply_chain_to_set(explore.examples(), search.chain, *toolkit, defense_seed);
    const auto stat = fit_perturbation_stat_model(explore.examples(), outcomes);
    stat_text = FormatStatModel(stat);
    defended = std::make_unique<TreeEnsembleModel>(adv_train_gbdt_with_stat_model(
        split.train, stat, mix, GbdtConfigFrom(c), defense_seed, &acct));
    extra["fit_chain"] = FormatChain(search.chain);

    // Sampled adversarials that evaded the undefended model, re-checked.
    const LabeledDataset test_malware = split.test.FilterLabel(kMalware);
    std::size_t evaded = 0, detected = 0;
    for (std::size_t i = 0; i < test_malware.size(); ++i) {
      const auto& x = test_malware.example(i);
      if (undefended->Score(x) < threshold.value) continue;
      Rng rng(DeriveSeed(DeriveSeed(ctx.seed, kEvalSeed), i));
      const auto adv = sample_perturbation(stat, x, rng);
      if (undefended->Score(adv) >= threshold.value) continue;
      ++evaded;
      detected += defended->Score(adv) >= threshold.value;
    }
    extra["sampled_evasive_before"] = evaded;
    extra["sampled_detected_after"] = detected;
  } else {
    Fail(ErrorCode::kInvalidArgument,
         "defense.kind must be feature_space, uap_problem_space or stat_model");
  }

  EvaluationReport rep;
  if (toolkit) {
    AdaptiveAttackConfig ac;
    ac.strategy = ParseSearchStrategy(
        c.GetString("attack.strategy") == "random" ? "greedy_uer"
                                                   : c.GetString("attack.strategy"));
    ac.max_len = c.GetUint("attack.max_len");
    ac.seed = DeriveSeed(ctx.seed, kSearchSeed);
    auto fresh = adaptive_problem_space_attack(*defended, *toolkit,
                                               ExplorationMalware(ctx, split),
                                               split.test, threshold, ac);
    rep = std::move(fresh.report);
    extra["fresh_chain"] = FormatChain(fresh.chain);
  } else if (defended->differentiable()) {
    const AttackBudget budget{c.GetUint("defense.l0"), true};
    const auto uap = craft_uap_avg_jacobian(
        *defended, split.exploration.FilterLabel(kMalware), budget);
    rep = uer(*defended, TruePositives(*defended, split.test, threshold), uap, threshold);
  }
  AttachCleanMetrics(*defended, split.test, ReportLevels(c), rep);
  extra["mix"] = Json{{"defended_batches", acct.defended_batches},
                      {"benign_rows", acct.benign_rows},
                      {"clean_malware_rows", acct.clean_malware_rows},
                      {"adversarial_malware_rows", acct.adversarial_malware_rows},
                      {"fallback_rows", acct.fallback_rows},
                      {"empty_chains", acct.empty_chains}};

  EnsureOutDir(ctx);
  WriteOut(ctx, "model.txt", SerializeModel(*defended), outputs);
  if (!stat_text.empty()) WriteOut(ctx, "stat_model.txt", stat_text, outputs);
  WriteOut(ctx, "report.json", ReportToJson(rep), outputs);
  WriteOut(ctx, "summary.json", SummaryJson(ctx, rep, &rep.per_length_uer).dump(2) + "\n",
           outputs);
  WriteManifest(ctx, outputs, extra);
}

void CmdTransfer(const RunContext& ctx) {
  const Config& c = ctx.config;
  const DatasetSplit split = SplitData(ctx, LoadData(ctx));
  const auto paths = c.GetStringList("transfer.models");
  Require(paths.size() >= 2, ErrorCode::kInvalidArgument,
          "transfer.models needs at least two model files");
  std::vector<std::unique_ptr<Classifier>> models;
  for (const auto& p : paths) models.push_back(LoadModelChecked(p, split.train.spec()));
  const auto threshold = ThresholdFrom(c);
  const AttackBudget budget{c.GetUint("attack.l0"), true};
  const LabeledDataset explore = split.exploration.FilterLabel(kMalware);

  std::vector<std::vector<double>> grid;
  Json j = Json::array();
  for (std::size_t s = 0; s < models.size(); ++s) {
    const auto uap = craft_uap_avg_jacobian(*models[s], explore, budget);
    std::vector<double> row;
    for (std::size_t t = 0; t < models.size(); ++t) {
      const auto r = transfer_eval(uap, *models[t], split.test, threshold);
      row.push_back(r.uer);
      j.push_back(Json{{"source", paths[s]},
                       {"target", paths[t]},
                       {"uer", r.uer},
                       {"n_true_positive", r.n_true_positive},
                       {"uer_by_budget", r.uer_by_budget}});
    }
    grid.push_back(std::move(row));
  }
  EnsureOutDir(ctx);
  Json outputs = Json::array();
  WriteOut(ctx, "transfer.csv", GridToCsv(grid), outputs);
  WriteOut(ctx, "transfer.json", j.dump(2) + "\n", outputs);
  WriteManifest(ctx, outputs);
}

void CmdEvaluate(const RunContext& ctx) {
  const Config& c = ctx.config;
  const DatasetSplit split = SplitData(ctx, LoadData(ctx));
  auto model = RequireModel(ctx, split.train.spec());
  const auto threshold = ThresholdFrom(c);
  const std::string chain_path = c.GetString("chain.path");
  const std::string uap_path = c.GetString("uap.path");
  Require(chain_path.empty() != uap_path.empty(), ErrorCode::kInvalidArgument,
          "evaluate needs exactly one of chain.path and uap.path");
  const LabeledDataset tp = TruePositives(*model, split.test, threshold);
  EvaluationReport rep;
  auto first_line = [](const std::string& text) {
    return text.substr(0, text.find('\n'));
  };
  if (!uap_path.empty()) {
    rep = uer(*model, tp, ParseUap(first_line(ReadFile(uap_path))), threshold);
  } else {
    const Toolkit toolkit = ToolkitFor(ctx, split);
    UerOptions opts;
    opts.toolkit = &toolkit;
    opts.seed = DeriveSeed(ctx.seed, kEvalSeed);
    opts.monte_carlo_reps = c.GetUint("eval.mc_reps");
    rep = uer(*model, tp, ParseChain(first_line(ReadFile(chain_path))), threshold, opts);
  }
  AttachCleanMetrics(*model, split.test, ReportLevels(c), rep);
  EnsureOutDir(ctx);
  Json outputs = Json::array();
  WriteOut(ctx, "report.json", ReportToJson(rep), outputs);
  WriteOut(ctx, "summary.json", SummaryJson(ctx, rep, &rep.per_length_uer).dump(2) + "\n",
           outputs);
  WriteManifest(ctx, outputs);
}

void CmdReport(const RunContext& ctx) {
  const Config& c = ctx.config;
  const auto inputs = c.GetStringList("report.inputs");
  Require(!inputs.empty(), ErrorCode::kInvalidArgument, "report.inputs is empty");
  const auto lengths = c.GetDoubleList("eval.lengths");
  std::vector<Json> summaries;
  for (const auto& dir : inputs) {
    const fs::path p = fs::path(dir) / "summary.json";
    Json s;
    try {
      s = Json::parse(ReadFile(p));
    } catch (const nlohmann::json::exception& e) {
      Fail(ErrorCode::kParse, p.string() + ": " + e.what());
    }
    summaries.push_back(std::move(s));
  }
  auto cell = [](const Json& v) -> std::string {
    if (v.is_null()) return "";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v.get<double>());
    return buf;
  };
  std::string csv = "model,auc_roc,tpr_at_fpr";
  for (double L : lengths) csv += ",uer_" + std::to_string(static_cast<long>(L));
  csv += "\n";
  Json rows = Json::array();
  for (const auto& s : summaries) {
    csv += s.value("name", std::string("?")) + "," + cell(s["auc_roc"]) + "," +
           cell(s["tpr_at_fpr"]);
    for (double L : lengths) {
      const std::string key = std::to_string(static_cast<long>(L));
      const auto& u = s["uer_by_length"];
      csv += "," + (u.contains(key) ? cell(u[key]) : std::string());
    }
    csv += "\n";
    rows.push_back(s);
  }
  EnsureOutDir(ctx);
  Json outputs = Json::array();
  WriteOut(ctx, "report.csv", csv, outputs);
  WriteOut(ctx, "report.json", rows.dump(2) + "\n", outputs);
  WriteManifest(ctx, outputs);
}

namespace {

void ConfigureLogging() {
  auto logger = spdlog::stderr_color_mt("uap");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%l] %v");
  const char* env = std::getenv("UAP_LOG_LEVEL");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

void PrintError(std::string_view code, const std::string& message) {
  nlohmann::json j;
  j["error"] = code;
  j["message"] = message;
  std::cerr << j.dump() << "\n";
}

}  // namespace

int Main(int argc, char** argv) {
  CLI::App app{"Universal adversarial perturbation experiments"};
  app.require_subcommand(1);
  std::string config_path, out_dir = ".";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  struct Entry {
    const char* name;
    const char* help;
    void (*fn)(const RunContext&);
  };
  const Entry entries[] = {
      {"synth-data", "write a synthetic dataset and its spec", CmdSynthData},
      {"train", "train a model", CmdTrain},
      {"attack-fs", "feature-space UAP attack", CmdAttackFs},
      {"attack-ps", "problem-space chain search", CmdAttackPs},
      {"defend", "adversarial training defenses", CmdDefend},
      {"transfer", "cross-model UAP transfer matrix", CmdTransfer},
      {"evaluate", "evaluate a UAP or chain file", CmdEvaluate},
      {"report", "collect run summaries into report.csv", CmdReport},
  };
  for (const auto& e : entries) {
    auto* sub = app.add_subcommand(e.name, e.help);
    sub->add_option("--config", config_path, "key = value config file");
    sub->add_option("--seed", seed, "global seed (overrides the config)");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--set", overrides, "key=value override, repeatable");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    PrintError("usage", e.what());
    return 2;
  }

  ConfigureLogging();
  try {
    RunContext ctx;
    ctx.config = config_path.empty() ? Config() : Config::Load(config_path);
    for (const auto& o : overrides) ctx.config.Override(o);
    if (seed) ctx.config.Set("seed", std::to_string(*seed));
    Require(ctx.config.Has("seed"), ErrorCode::kInvalidArgument,
            "a seed is required (--seed or seed = ... in the config)");
    ctx.seed = ctx.config.GetUint("seed");
    ctx.out_dir = out_dir;
    for (const auto& e : entries) {
      if (!app.got_subcommand(e.name)) continue;
      ctx.command = e.name;
      spdlog::info("{} seed={} out={}", e.name, ctx.seed, out_dir);
      e.fn(ctx);
    }
  } catch (const Error& e) {
    PrintError(ErrorCodeName(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    PrintError("internal", e.what());
    return 3;
  }
  return 0;
}

}  // namespace uap::cli
