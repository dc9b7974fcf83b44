#include "uap/defenses.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>

namespace uap {

namespace {

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Rebuilds a batch with adversarial rows per the mix mode. `make_adv`
// returns the adversarial version of malware row i, or nothing when the
// attack failed and the clean row must stand in.
template <typename MakeAdv>
void RewriteBatch(TrainingBatch& batch, AdvMixMode mix, MixAccounting& acct,
                  MakeAdv make_adv) {
  TrainingBatch out;
  for (std::size_t i = 0; i < batch.xs.size(); ++i) {
    if (batch.ys[i] != kMalware) {
      out.xs.push_back(std::move(batch.xs[i]));
      out.ys.push_back(batch.ys[i]);
      ++acct.benign_rows;
      continue;
    }
    std::optional<FeatureVector> adv = make_adv(i);
    if (adv) {
      CheckAddOnly(batch.xs[i], *adv);
    } else {
      ++acct.fallback_rows;
    }
    if (mix == AdvMixMode::kMixed) {
      out.xs.push_back(batch.xs[i]);
      out.ys.push_back(kMalware);
      ++acct.clean_malware_rows;
    }
    out.xs.push_back(adv ? std::move(*adv) : batch.xs[i]);
    out.ys.push_back(kMalware);
    ++acct.adversarial_malware_rows;
  }
  ++acct.defended_batches;
  batch = std::move(out);
}

}  // namespace

std::string_view AdvMixModeName(AdvMixMode mode) {
  return mode == AdvMixMode::kPure ? "pure" : "mixed";
}

AdvMixMode ParseAdvMixMode(std::string_view name) {
  if (name == "pure") return AdvMixMode::kPure;
  if (name == "mixed") return AdvMixMode::kMixed;
  Fail(ErrorCode::kInvalidArgument,
       "unknown mix mode '" + std::string(name) + "' (pure|mixed)");
}

void CheckAddOnly(const FeatureVector& x, const FeatureVector& adv) {
  const auto& spec = x.spec();
  for (const auto& e : x.entries()) {
    if (spec.IsBinary(e.index) && adv.Get(e.index) == 0.0)
      Fail(ErrorCode::kNumerical,
           "add-only violated: feature " + std::to_string(e.index) + " cleared");
  }
}

void FeatureSpaceDefenseConfig::Validate() const {
  Require(l0_budget >= 1, ErrorCode::kInvalidArgument, "l0_budget must be >= 1");
  PredictionThreshold check(attack_threshold);
  (void)check;
}

std::unique_ptr<Classifier> adv_train_feature_space(
    ModelKind family, const LabeledDataset& train,
    const FeatureSpaceDefenseConfig& cfg, const TrainConfig& train_cfg,
    const std::vector<std::size_t>& mlp_layers, MixAccounting* accounting) {
  cfg.Validate();
  Require(family != ModelKind::kTreeEnsemble, ErrorCode::kNonDifferentiable,
          "tree ensembles cannot be adversarially trained per minibatch");
  MixAccounting local;
  MixAccounting& acct = accounting ? *accounting : local;
  const AttackBudget budget{cfg.l0_budget, true};
  const PredictionThreshold threshold(cfg.attack_threshold);
  TrainHooks hooks;
  hooks.on_batch = [&](int, const Classifier& current, TrainingBatch& batch) {
    RewriteBatch(batch, cfg.mix, acct, [&](std::size_t i) {
      return std::optional<FeatureVector>(
          input_specific_attack(current, batch.xs[i], budget, threshold));
    });
  };
  switch (family) {
    case ModelKind::kLogisticRegression:
      return std::make_unique<LinearModel>(
          train_logistic_regression(train, train_cfg, hooks));
    case ModelKind::kLinearSvm:
      return std::make_unique<LinearModel>(train_linear_svm(train, train_cfg, hooks));
    case ModelKind::kMlp:
      return std::make_unique<MlpModel>(train_mlp(
          train, train_cfg,
          mlp_layers.empty() ? StandardMlpLayers(train.spec().n_features)
                             : mlp_layers,
          hooks));
    case ModelKind::kTreeEnsemble:
      break;
  }
  Fail(ErrorCode::kInvalidArgument, "unsupported model family");
}

void UapAdvTrainingConfig::Validate(int total_epochs) const {
  Require(last_n_epochs >= 0, ErrorCode::kInvalidArgument,
          "last_n_epochs must be >= 0");
  Require(last_n_epochs < total_epochs, ErrorCode::kInvalidArgument,
          "last_n_epochs must be smaller than the number of training epochs");
  Require(max_chain_len >= 1, ErrorCode::kInvalidArgument,
          "max_chain_len must be >= 1");
  PredictionThreshold check(attack_threshold);
  (void)check;
}

namespace {

BatchHook MakeUapHook(const Toolkit& toolkit, const UapAdvTrainingConfig& cfg,
                      int total_epochs, const SpecPtr& spec,
                      MixAccounting& acct, std::uint64_t& batch_counter) {
  return [&toolkit, cfg, total_epochs, spec, &acct, &batch_counter](
             int epoch, const Classifier& current, TrainingBatch& batch) {
    if (epoch < total_epochs - cfg.last_n_epochs) return;
    const std::uint64_t bidx = batch_counter++;
    const PredictionThreshold threshold(cfg.attack_threshold);

    LabeledDataset positives(spec);
    const auto scores = current.ScoreBatch(batch.xs);
    for (std::size_t i = 0; i < batch.xs.size(); ++i) {
      if (batch.ys[i] == kMalware && scores[i] >= threshold.value)
        positives.Add(batch.xs[i], kMalware, std::to_string(i));
    }
    TransformationChain chain;
    if (!positives.empty()) {
      GreedySearchOptions opts;
      opts.max_len = cfg.max_chain_len;
      opts.seed = DeriveSeed(cfg.seed, 0x5ea4, bidx);
      chain = greedy_uap_search_uer(current, toolkit, positives, threshold, opts)
                  .chain;
    }
    if (chain.empty()) ++acct.empty_chains;
    RewriteBatch(batch, cfg.mix, acct, [&](std::size_t i) {
      Rng rng(DeriveSeed(DeriveSeed(cfg.seed, 0xadd), bidx, i));
      auto outcome = apply_chain(batch.xs[i], chain, toolkit, rng);
      return outcome.transformed() ? std::optional(std::move(outcome.features))
                                   : std::nullopt;
    });
  };
}

}  // namespace

MlpModel adv_train_uap_problem_space(const LabeledDataset& train,
                                     const Toolkit& toolkit,
                                     const UapAdvTrainingConfig& cfg,
                                     const TrainConfig& train_cfg,
                                     const std::vector<std::size_t>& layers,
                                     MixAccounting* accounting) {
  train_cfg.Validate();
  cfg.Validate(train_cfg.epochs);
  toolkit.Validate(train.spec());
  MixAccounting local;
  std::uint64_t counter = 0;
  TrainHooks hooks;
  if (cfg.last_n_epochs > 0)
    hooks.on_batch = MakeUapHook(toolkit, cfg, train_cfg.epochs, train.spec_ptr(),
                                 accounting ? *accounting : local, counter);
  return train_mlp(train, train_cfg, layers, hooks);
}

LinearModel adv_train_uap_problem_space_linear(
    ModelKind kind, const LabeledDataset& train, const Toolkit& toolkit,
    const UapAdvTrainingConfig& cfg, const TrainConfig& train_cfg,
    MixAccounting* accounting) {
  train_cfg.Validate();
  cfg.Validate(train_cfg.epochs);
  toolkit.Validate(train.spec());
  Require(kind == ModelKind::kLogisticRegression || kind == ModelKind::kLinearSvm,
          ErrorCode::kInvalidArgument, "expected a linear model kind");
  MixAccounting local;
  std::uint64_t counter = 0;
  TrainHooks hooks;
  if (cfg.last_n_epochs > 0)
    hooks.on_batch = MakeUapHook(toolkit, cfg, train_cfg.epochs, train.spec_ptr(),
                                 accounting ? *accounting : local, counter);
  return kind == ModelKind::kLogisticRegression
             ? train_logistic_regression(train, train_cfg, hooks)
             : train_linear_svm(train, train_cfg, hooks);
}

PerturbationStatModel::PerturbationStatModel(std::size_t n_features,
                                             std::vector<FeatureStat> stats)
    : n_features_(n_features), stats_(std::move(stats)) {
  std::sort(stats_.begin(), stats_.end(),
            [](const FeatureStat& a, const FeatureStat& b) {
              return a.feature < b.feature;
            });
  Validate();
}

void PerturbationStatModel::Validate() const {
  for (std::size_t i = 0; i < stats_.size(); ++i) {
    const auto& s = stats_[i];
    const std::string who = "stat model feature " + std::to_string(s.feature);
    Require(s.feature < n_features_, ErrorCode::kSpecMismatch, who + " out of range");
    Require(i == 0 || stats_[i - 1].feature < s.feature,
            ErrorCode::kInvalidArgument, who + " listed twice");
    Require(s.modify_probability >= 0 && s.modify_probability <= 1,
            ErrorCode::kInvalidArgument, who + ": probability outside [0,1]");
    if (s.binary) {
      Require(s.bin_probabilities.empty(), ErrorCode::kInvalidArgument,
              who + ": binary features carry no histogram");
      continue;
    }
    Require(std::isfinite(s.delta_lo) && std::isfinite(s.delta_hi) &&
                s.delta_lo <= s.delta_hi,
            ErrorCode::kInvalidArgument, who + ": bad delta range");
    Require(!s.bin_probabilities.empty(), ErrorCode::kInvalidArgument,
            who + ": empty histogram");
    double total = 0.0;
    for (double p : s.bin_probabilities) {
      Require(p >= 0, ErrorCode::kInvalidArgument, who + ": negative bin mass");
      total += p;
    }
    Require(std::abs(total - 1.0) <= 1e-9, ErrorCode::kInvalidArgument,
            who + ": histogram not normalized");
  }
}

double PerturbationStatModel::ModifyProbability(std::uint32_t feature) const {
  const auto it = std::lower_bound(
      stats_.begin(), stats_.end(), feature,
      [](const FeatureStat& s, std::uint32_t f) { return s.feature < f; });
  return it != stats_.end() && it->feature == feature ? it->modify_probability
                                                      : 0.0;
}

PerturbationStatModel fit_perturbation_stat_model(
    std::span<const FeatureVector> clean,
    std::span<const ApplicationOutcome> transformed, std::size_t n_bins) {
  Require(clean.size() == transformed.size(), ErrorCode::kInvalidArgument,
          "clean and transformed lists differ in length");
  Require(!clean.empty(), ErrorCode::kInvalidArgument, "no pairs to fit");
  Require(n_bins >= 1, ErrorCode::kInvalidArgument, "n_bins must be >= 1");
  const auto& spec = clean.front().spec();
  std::map<std::uint32_t, std::size_t> counts;
  std::map<std::uint32_t, std::vector<double>> deltas;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    if (!transformed[i].transformed()) continue;
    ++pairs;
    const auto a = clean[i].entries();
    const auto b = transformed[i].features.entries();
    std::size_t p = 0, q = 0;
    while (p < a.size() || q < b.size()) {
      std::uint32_t j;
      double va = 0.0, vb = 0.0;
      if (q == b.size() || (p < a.size() && a[p].index < b[q].index)) {
        j = a[p].index;
        va = a[p++].value;
      } else if (p == a.size() || b[q].index < a[p].index) {
        j = b[q].index;
        vb = b[q++].value;
      } else {
        j = a[p].index;
        va = a[p++].value;
        vb = b[q++].value;
      }
      if (va == vb) continue;
      if (spec.IsBinary(j)) {
        if (va == 0.0) ++counts[j];  // removals are never sampled
      } else {
        ++counts[j];
        deltas[j].push_back(vb - va);
      }
    }
  }
  Require(pairs > 0, ErrorCode::kInvalidArgument,
          "every transformed outcome failed; nothing to fit");

  std::vector<FeatureStat> stats;
  for (const auto& [j, c] : counts) {
    FeatureStat s;
    s.feature = j;
    s.binary = spec.IsBinary(j);
    s.modify_probability = static_cast<double>(c) / static_cast<double>(pairs);
    if (!s.binary) {
      const auto& d = deltas[j];
      s.delta_lo = *std::min_element(d.begin(), d.end());
      s.delta_hi = *std::max_element(d.begin(), d.end());
      const std::size_t k = s.delta_lo == s.delta_hi ? 1 : n_bins;
      s.bin_probabilities.assign(k, 0.0);
      for (double v : d) {
        std::size_t bin = 0;
        if (k > 1) {
          bin = static_cast<std::size_t>((v - s.delta_lo) /
                                         (s.delta_hi - s.delta_lo) *
                                         static_cast<double>(k));
          bin = std::min(bin, k - 1);
        }
        s.bin_probabilities[bin] += 1.0;
      }
      for (auto& p : s.bin_probabilities) p /= static_cast<double>(d.size());
    }
    stats.push_back(std::move(s));
  }
  PerturbationStatModel model(spec.n_features, std::move(stats));
  model.set_n_pairs(pairs);
  return model;
}

FeatureVector sample_perturbation(const PerturbationStatModel& stat,
                                  const FeatureVector& x, Rng& rng) {
  Require(x.n_features() == stat.n_features(), ErrorCode::kSpecMismatch,
          "stat model and example disagree on n_features");
  FeatureVector out = x;
  for (const auto& s : stat.stats()) {
    if (!(rng.Uniform() < s.modify_probability)) continue;
    if (s.binary) {
      out.Set(s.feature, 1.0);
      continue;
    }
    const std::size_t k = s.bin_probabilities.size();
    double u = rng.Uniform();
    std::size_t bin = 0;
    while (bin + 1 < k && u >= s.bin_probabilities[bin]) {
      u -= s.bin_probabilities[bin];
      ++bin;
    }
    const double width = (s.delta_hi - s.delta_lo) / static_cast<double>(k);
    const double delta =
        s.delta_lo + (static_cast<double>(bin) + rng.Uniform()) * width;
    out.Set(s.feature, out.Get(s.feature) + delta);
  }
  return out;
}

std::string FormatStatModel(const PerturbationStatModel& stat) {
  std::string out = "perturbation-stat v1\n";
  out += "n_features " + std::to_string(stat.n_features()) + "\n";
  out += "pairs " + std::to_string(stat.n_pairs()) + "\n";
  for (const auto& s : stat.stats()) {
    out += "feature " + std::to_string(s.feature) + " " +
           (s.binary ? "binary " : "continuous ") + Num(s.modify_probability);
    if (!s.binary) {
      out += " " + Num(s.delta_lo) + " " + Num(s.delta_hi) + " " +
             std::to_string(s.bin_probabilities.size());
      for (double p : s.bin_probabilities) out += " " + Num(p);
    }
    out += "\n";
  }
  out += "end\n";
  return out;
}

PerturbationStatModel ParseStatModel(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    Fail(ErrorCode::kParse,
         "stat model line " + std::to_string(line_no) + ": " + what);
  };
  auto next = [&]() {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line[0] != '#') return true;
    }
    return false;
  };
  if (!next() || line.rfind("perturbation-stat v1", 0) != 0)
    fail("expected 'perturbation-stat v1' header");
  std::size_t n = 0, pairs = 0;
  std::string key;
  if (!next() || !(std::istringstream(line) >> key >> n) || key != "n_features")
    fail("expected n_features");
  if (!next() || !(std::istringstream(line) >> key >> pairs) || key != "pairs")
    fail("expected pairs");
  std::vector<FeatureStat> stats;
  bool ended = false;
  while (next()) {
    std::istringstream ls(line);
    ls >> key;
    if (key == "end") {
      ended = true;
      break;
    }
    if (key != "feature") fail("unknown record '" + key + "'");
    FeatureStat s;
    std::string kind;
    if (!(ls >> s.feature >> kind >> s.modify_probability)) fail("bad feature record");
    if (kind == "binary") {
      s.binary = true;
    } else if (kind == "continuous") {
      s.binary = false;
      std::size_t k = 0;
      if (!(ls >> s.delta_lo >> s.delta_hi >> k)) fail("bad histogram header");
      s.bin_probabilities.resize(k);
      for (auto& p : s.bin_probabilities)
        if (!(ls >> p)) fail("histogram shorter than declared");
    } else {
      fail("unknown feature kind '" + kind + "'");
    }
    stats.push_back(std::move(s));
  }
  if (!ended) Fail(ErrorCode::kParse, "stat model file ends without 'end'");
  PerturbationStatModel model(n, std::move(stats));
  model.set_n_pairs(pairs);
  return model;
}

void SaveStatModel(const PerturbationStatModel& stat,
                   const std::filesystem::path& path) {
  WriteFileAtomic(path, FormatStatModel(stat));
}

PerturbationStatModel LoadStatModel(const std::filesystem::path& path) {
  return ParseStatModel(ReadFile(path));
}

LabeledDataset AugmentWithStatModel(const LabeledDataset& train,
                                    const PerturbationStatModel& stat,
                                    AdvMixMode mix, std::uint64_t seed,
                                    MixAccounting* accounting) {
  Require(stat.n_features() == train.spec().n_features, ErrorCode::kSpecMismatch,
          "stat model and training set disagree on n_features");
  MixAccounting local;
  MixAccounting& acct = accounting ? *accounting : local;
  LabeledDataset out(train.spec_ptr());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& x = train.example(i);
    if (train.label(i) != kMalware) {
      out.Add(x, train.label(i), train.ids()[i]);
      ++acct.benign_rows;
      continue;
    }
    Rng rng(DeriveSeed(seed, i));
    FeatureVector adv = sample_perturbation(stat, x, rng);
    CheckAddOnly(x, adv);
    if (mix == AdvMixMode::kMixed) {
      out.Add(x, kMalware, train.ids()[i]);
      ++acct.clean_malware_rows;
    }
    out.Add(std::move(adv), kMalware, train.ids()[i] + "+adv");
    ++acct.adversarial_malware_rows;
  }
  ++acct.defended_batches;
  return out;
}

TreeEnsembleModel adv_train_gbdt_with_stat_model(
    const LabeledDataset& train, const PerturbationStatModel& stat,
    AdvMixMode mix, const GbdtConfig& gbdt_cfg, std::uint64_t seed,
    MixAccounting* accounting) {
  return train_gbdt(AugmentWithStatModel(train, stat, mix, seed, accounting),
                    gbdt_cfg);
}

}  // namespace uap
