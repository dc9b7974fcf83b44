#include "uap/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "json.hpp"

namespace uap {

namespace {

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

struct Tally {
  std::size_t evasive = 0, total = 0, corrupted = 0, parse = 0;

  void Add(OutcomeKind kind, bool evades) {
    ++total;
    if (kind == OutcomeKind::kParseError) {
      ++parse;
    } else if (kind == OutcomeKind::kCorrupted) {
      ++corrupted;
    } else if (evades) {
      ++evasive;
    }
  }
  double Rate() const {
    const std::size_t denom = total - parse;
    return denom == 0 ? 0.0
                      : static_cast<double>(evasive) / static_cast<double>(denom);
  }
};

void CountOutcomes(const Classifier& model,
                   const std::vector<ApplicationOutcome>& outcomes,
                   const PredictionThreshold& threshold, Tally& tally) {
  std::vector<FeatureVector> live;
  for (const auto& o : outcomes)
    if (o.transformed()) live.push_back(o.features);
  const auto scores = model.ScoreBatch(live);
  std::size_t k = 0;
  for (const auto& o : outcomes) {
    const bool evades = o.transformed() && scores[k++] < threshold.value;
    tally.Add(o.kind, evades);
  }
}

}  // namespace

EvaluationReport uer(const Classifier& model, const LabeledDataset& malware_set,
                     const Perturbation& perturbation,
                     const PredictionThreshold& threshold,
                     const UerOptions& options) {
  Require(!malware_set.empty(), ErrorCode::kInvalidArgument,
          "empty evaluation set");
  Require(malware_set.CountLabel(kMalware) == malware_set.size(),
          ErrorCode::kInvalidArgument, "uer expects a malware-only set");
  const auto& xs = malware_set.examples();
  EvaluationReport report;
  Tally final_tally;

  if (const auto* uap = std::get_if<UapVector>(&perturbation)) {
    auto run = [&](const UapVector& u, Tally& t) {
      std::vector<ApplicationOutcome> outcomes;
      for (const auto& x : xs)
        outcomes.push_back(ApplicationOutcome::Transformed(apply_uap(x, u)));
      CountOutcomes(model, outcomes, threshold, t);
    };
    run(*uap, final_tally);
    for (std::size_t k = 1; k <= uap->size(); ++k) {
      Tally t;
      run(uap->Truncated(k), t);
      report.per_length_uer.push_back(t.Rate());
    }
  } else {
    const auto& chain = std::get<TransformationChain>(perturbation);
    Require(options.toolkit != nullptr, ErrorCode::kInvalidArgument,
            "chain evaluation needs a toolkit");
    Require(options.monte_carlo_reps >= 1, ErrorCode::kInvalidArgument,
            "monte_carlo_reps must be >= 1");
    const Toolkit& toolkit = *options.toolkit;
    ValidateChain(chain, toolkit, std::max(chain.size(), kDefaultMaxChainLength));
    std::vector<Tally> by_length(chain.size());
    for (std::size_t rep = 0; rep < options.monte_carlo_reps; ++rep) {
      // Repetition 0 reproduces apply_chain_to_set(xs, chain, toolkit, seed).
      const std::uint64_t rep_seed =
          rep == 0 ? options.seed : DeriveSeed(options.seed, 0x4e9, rep);
      std::vector<Rng> rngs;
      std::vector<ApplicationOutcome> state;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        rngs.emplace_back(DeriveSeed(rep_seed, i));
        state.push_back(ApplicationOutcome::Transformed(xs[i]));
      }
      for (std::size_t k = 0; k < chain.size(); ++k) {
        const auto& t = toolkit.Get(chain[k]);
        for (std::size_t i = 0; i < xs.size(); ++i)
          if (state[i].transformed())
            state[i] = apply_transformation(state[i].features, t, rngs[i]);
        CountOutcomes(model, state, threshold, by_length[k]);
      }
      if (chain.empty()) CountOutcomes(model, state, threshold, final_tally);
    }
    if (!chain.empty()) final_tally = by_length.back();
    for (const auto& t : by_length) report.per_length_uer.push_back(t.Rate());
  }
  report.n_evasive = final_tally.evasive;
  report.n_total = final_tally.total;
  report.n_corrupted = final_tally.corrupted;
  report.n_parse_error = final_tally.parse;
  report.uer = final_tally.Rate();
  return report;
}

double auc_roc(std::span<const double> scores, std::span<const int> labels) {
  Require(scores.size() == labels.size(), ErrorCode::kInvalidArgument,
          "scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::uint64_t pos = 0, neg = 0, neg_below = 0, half_units = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t p = 0, n = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      Require(labels[order[j]] == 0 || labels[order[j]] == 1,
              ErrorCode::kInvalidArgument, "labels must be 0 or 1");
      (labels[order[j]] == 1 ? p : n) += 1;
      ++j;
    }
    half_units += 2 * neg_below * p + n * p;
    neg_below += n;
    pos += p;
    neg += n;
    i = j;
  }
  Require(pos > 0 && neg > 0, ErrorCode::kInvalidArgument,
          "auc_roc needs both classes");
  return static_cast<double>(half_units) / 2.0 /
         static_cast<double>(pos * neg);
}

double tpr_at_fpr(std::span<const double> scores, std::span<const int> labels,
                  double fpr_level) {
  Require(scores.size() == labels.size(), ErrorCode::kInvalidArgument,
          "scores and labels differ in length");
  Require(fpr_level >= 0 && fpr_level <= 1, ErrorCode::kInvalidArgument,
          "fpr_level must lie in [0,1]");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t pos = 0, neg = 0;
  for (int l : labels) (l == 1 ? pos : neg) += 1;
  Require(pos > 0 && neg > 0, ErrorCode::kInvalidArgument,
          "tpr_at_fpr needs both classes");
  // Walk thresholds from the top; FPR only grows as the threshold drops.
  std::size_t tp = 0, fp = 0;
  double best = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    if (static_cast<double>(fp) / static_cast<double>(neg) > fpr_level) break;
    best = static_cast<double>(tp) / static_cast<double>(pos);
    i = j;
  }
  return best;
}

void AttachCleanMetrics(const Classifier& model, const LabeledDataset& test,
                        const std::vector<double>& fpr_levels,
                        EvaluationReport& report) {
  const auto scores = model.ScoreBatch(test.examples());
  report.auc_roc = auc_roc(scores, test.labels());
  for (double level : fpr_levels)
    report.tpr_at_fpr[level] = tpr_at_fpr(scores, test.labels(), level);
}

DeltaVariationSummary delta_variation(std::span<const FeatureVector> clean_set,
                                      const TransformationChain& chain,
                                      const Toolkit& toolkit,
                                      std::uint64_t seed) {
  Require(!clean_set.empty(), ErrorCode::kInvalidArgument, "empty clean set");
  const std::size_t n = clean_set.front().n_features();
  DeltaVariationSummary out;
  out.mean_abs_change.assign(n, 0.0);
  const auto outcomes = apply_chain_to_set(clean_set, chain, toolkit, seed);
  double fraction_sum = 0.0;
  for (std::size_t i = 0; i < clean_set.size(); ++i) {
    if (!outcomes[i].transformed()) continue;
    ++out.n_surviving;
    const auto a = clean_set[i].ToDense();
    const auto b = outcomes[i].features.ToDense();
    std::size_t changed = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = std::abs(b[j] - a[j]);
      out.mean_abs_change[j] += d;
      changed += a[j] != b[j];
    }
    fraction_sum += static_cast<double>(changed) / static_cast<double>(n);
  }
  if (out.n_surviving > 0) {
    const double inv = 1.0 / static_cast<double>(out.n_surviving);
    for (auto& v : out.mean_abs_change) v *= inv;
    out.mean_fraction_modified = fraction_sum * inv;
  }
  return out;
}

std::vector<std::vector<double>> delta_variation_matrix(
    std::span<const FeatureVector> clean_set,
    const std::vector<TransformationChain>& chains, const Toolkit& toolkit,
    std::uint64_t seed) {
  std::vector<std::vector<double>> grid;
  for (std::size_t c = 0; c < chains.size(); ++c)
    grid.push_back(
        delta_variation(clean_set, chains[c], toolkit, DeriveSeed(seed, c))
            .mean_abs_change);
  return grid;
}

IncidenceSummary incidence_by_group(const Toolkit& toolkit,
                                    const std::map<int, double>& uer_by_id,
                                    double uer_threshold,
                                    const FeatureVector& baseline) {
  const auto& spec = baseline.spec();
  IncidenceSummary out;
  std::map<std::string, std::size_t> hits;
  for (const auto& t : toolkit.transformations()) {
    const auto it = uer_by_id.find(t.id);
    if (it == uer_by_id.end() || it->second < uer_threshold) continue;
    ++out.n_qualifying;
    std::set<std::string> groups;
    if (const auto* mask = std::get_if<DeterministicMask>(&t.effect)) {
      for (auto f : mask->set_features)
        if (baseline.Get(f) == 0.0) groups.insert(spec.feature_groups[f]);
    } else {
      for (const auto& e : std::get<StochasticEffect>(t.effect).entries)
        if (e.modify_probability > 0) groups.insert(spec.feature_groups[e.feature]);
    }
    for (const auto& g : groups) ++hits[g];
  }
  if (out.n_qualifying == 0) return out;
  for (const auto& g : spec.feature_groups) out.incidence.emplace(g, 0.0);
  for (const auto& [g, c] : hits)
    out.incidence[g] =
        static_cast<double>(c) / static_cast<double>(out.n_qualifying);
  return out;
}

L0Distribution l0_distortion_distribution(
    const Toolkit& toolkit, const FeatureVector& baseline,
    const std::map<int, double>* uer_by_id, double uer_threshold) {
  toolkit.Validate(baseline.spec());
  L0Distribution out;
  for (const auto& t : toolkit.transformations()) {
    if (uer_by_id) {
      const auto it = uer_by_id->find(t.id);
      if (it == uer_by_id->end() || it->second < uer_threshold) continue;
    }
    double d = 0.0;
    if (std::holds_alternative<DeterministicMask>(t.effect)) {
      Rng unused(0);
      const auto o = apply_transformation(baseline, t, unused);
      d = static_cast<double>(l0_distance(baseline, o.features));
    } else {
      for (const auto& e : std::get<StochasticEffect>(t.effect).entries) {
        const bool can_change = e.sampler.kind != SamplerKind::kSetToOne ||
                                baseline.Get(e.feature) == 0.0;
        if (can_change) d += e.modify_probability;
      }
    }
    out.distortions.push_back(d);
    ++out.histogram[std::lround(d)];
  }
  if (out.distortions.empty()) return out;
  out.mean = std::accumulate(out.distortions.begin(), out.distortions.end(), 0.0) /
             static_cast<double>(out.distortions.size());
  auto sorted = out.distortions;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  out.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return out;
}

std::size_t UerBin(double uer) {
  const double scaled = std::floor(uer * 10.0 + 1e-9);
  return static_cast<std::size_t>(std::clamp(scaled, 0.0, 9.0));
}

UerHistogram per_transformation_uer_histogram(
    const Classifier& model, const Toolkit& toolkit,
    const LabeledDataset& test_malware, const PredictionThreshold& threshold,
    std::uint64_t seed) {
  toolkit.Validate(test_malware.spec());
  const auto positives = TruePositiveMalware(model, test_malware, threshold);
  UerHistogram out;
  out.n_examples = positives.size();
  for (const auto& t : toolkit.transformations()) {
    const auto outcomes = apply_chain_to_set(positives, {t.id}, toolkit, seed);
    const double u = OutcomeUer(model, outcomes, threshold);
    out.ids.push_back(t.id);
    out.uer.push_back(u);
    ++out.bins[UerBin(u)];
  }
  return out;
}

std::string_view SearchStrategyName(SearchStrategy s) {
  switch (s) {
    case SearchStrategy::kGreedyUer:
      return "greedy_uer";
    case SearchStrategy::kGreedyConfidence:
      return "greedy_confidence";
    case SearchStrategy::kGenetic:
      return "gp";
  }
  return "?";
}

SearchStrategy ParseSearchStrategy(std::string_view name) {
  if (name == "greedy_uer") return SearchStrategy::kGreedyUer;
  if (name == "greedy_confidence") return SearchStrategy::kGreedyConfidence;
  if (name == "gp") return SearchStrategy::kGenetic;
  Fail(ErrorCode::kInvalidArgument,
       "unknown search strategy '" + std::string(name) +
           "' (greedy_uer|greedy_confidence|gp)");
}

AdaptiveAttackResult adaptive_problem_space_attack(
    const Classifier& model, const Toolkit& toolkit,
    const LabeledDataset& exploration, const LabeledDataset& test,
    const PredictionThreshold& threshold, const AdaptiveAttackConfig& cfg) {
  const LabeledDataset explore = exploration.FilterLabel(kMalware);
  AdaptiveAttackResult result;
  std::size_t searched = 0;
  switch (cfg.strategy) {
    case SearchStrategy::kGreedyUer: {
      auto r = greedy_uap_search_uer(model, toolkit, explore, threshold,
                                     {cfg.max_len, cfg.seed});
      result.chain = r.chain;
      searched = r.n_examples;
      break;
    }
    case SearchStrategy::kGreedyConfidence: {
      auto r = greedy_uap_search_confidence(model, toolkit, explore,
                                            {cfg.max_len, cfg.seed});
      result.chain = r.chain;
      searched = r.n_examples;
      break;
    }
    case SearchStrategy::kGenetic: {
      GpConfig gp = cfg.gp;
      gp.max_len = cfg.max_len;
      gp.seed = cfg.seed;
      result.chain = gp_uap_search(model, toolkit, explore, gp).best_chain;
      searched = explore.size();
      break;
    }
  }
  result.search_rounds = search_rounds_estimate(searched, cfg.max_len, toolkit.size());

  const LabeledDataset test_malware = test.FilterLabel(kMalware);
  const auto scores = model.ScoreBatch(test_malware.examples());
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] >= threshold.value) keep.push_back(i);
  Require(!keep.empty(), ErrorCode::kInvalidArgument,
          "test set holds no true-positive malware");
  UerOptions opts;
  opts.toolkit = &toolkit;
  opts.seed = DeriveSeed(cfg.seed, 0x7e57);
  result.report = uer(model, test_malware.Subset(keep), result.chain, threshold, opts);
  return result;
}

std::string ReportToJson(const EvaluationReport& report) {
  nlohmann::ordered_json j;
  j["uer"] = report.uer;
  j["n_evasive"] = report.n_evasive;
  j["n_total"] = report.n_total;
  j["n_corrupted"] = report.n_corrupted;
  j["n_parse_error"] = report.n_parse_error;
  j["auc_roc"] = report.auc_roc ? nlohmann::ordered_json(*report.auc_roc)
                                : nlohmann::ordered_json(nullptr);
  nlohmann::ordered_json tpr = nlohmann::ordered_json::object();
  for (const auto& [level, v] : report.tpr_at_fpr) tpr[Num(level)] = v;
  j["tpr_at_fpr"] = tpr;
  j["per_length_uer"] = report.per_length_uer;
  return j.dump(2) + "\n";
}

std::string ReportsToCsv(const std::vector<std::string>& names,
                         const std::vector<EvaluationReport>& reports) {
  Require(names.size() == reports.size(), ErrorCode::kInvalidArgument,
          "one name per report expected");
  std::vector<double> levels;
  if (!reports.empty())
    for (const auto& [level, v] : reports.front().tpr_at_fpr) levels.push_back(level);
  std::string out = "name,uer,n_evasive,n_total,n_corrupted,n_parse_error,auc_roc";
  for (double l : levels) out += ",tpr@" + Num(l);
  out += ",per_length_uer\n";
  for (std::size_t r = 0; r < reports.size(); ++r) {
    const auto& rep = reports[r];
    out += names[r] + "," + Num(rep.uer) + "," + std::to_string(rep.n_evasive) +
           "," + std::to_string(rep.n_total) + "," +
           std::to_string(rep.n_corrupted) + "," +
           std::to_string(rep.n_parse_error) + "," +
           (rep.auc_roc ? Num(*rep.auc_roc) : "");
    for (double l : levels) {
      const auto it = rep.tpr_at_fpr.find(l);
      out += "," + (it == rep.tpr_at_fpr.end() ? std::string() : Num(it->second));
    }
    out += ",";
    for (std::size_t k = 0; k < rep.per_length_uer.size(); ++k)
      out += (k ? ";" : "") + Num(rep.per_length_uer[k]);
    out += "\n";
  }
  return out;
}

std::string GridToCsv(const std::vector<std::vector<double>>& grid) {
  std::string out;
  for (const auto& row : grid) {
    for (std::size_t j = 0; j < row.size(); ++j) out += (j ? "," : "") + Num(row[j]);
    out += "\n";
  }
  return out;
}

std::string HistogramToCsv(const UerHistogram& hist) {
  std::string out = "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < hist.bins.size(); ++b)
    out += Num(b / 10.0) + "," + Num((b + 1) / 10.0) + "," +
           std::to_string(hist.bins[b]) + "\n";
  return out;
}

}  // namespace uap
