#include "uap/feature_attacks.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uap/common.h"

namespace uap {

void AttackBudget::Validate() const {
  Require(l0_max >= 1, ErrorCode::kInvalidArgument, "l0_max must be >= 1");
}

std::vector<std::uint32_t> UapVector::Sorted() const {
  std::vector<std::uint32_t> s = ranked;
  std::sort(s.begin(), s.end());
  return s;
}

UapVector UapVector::Truncated(std::size_t k) const {
  UapVector out;
  out.ranked.assign(ranked.begin(),
                    ranked.begin() + static_cast<std::ptrdiff_t>(
                                         std::min(k, ranked.size())));
  return out;
}

std::string FormatUap(const UapVector& uap) {
  std::string out = "uap v1:";
  bool first = true;
  for (auto i : uap.Sorted()) {
    out += first ? " " : ",";
    out += std::to_string(i);
    first = false;
  }
  return out;
}

UapVector ParseUap(const std::string& line) {
  const std::string prefix = "uap v1:";
  Require(line.rfind(prefix, 0) == 0, ErrorCode::kParse,
          "UAP line must start with 'uap v1:'");
  UapVector uap;
  std::string body = line.substr(prefix.size());
  while (!body.empty() && (body.back() == '\n' || body.back() == '\r' ||
                           body.back() == ' '))
    body.pop_back();
  std::size_t pos = 0;
  while (pos < body.size() && body[pos] == ' ') ++pos;
  while (pos < body.size()) {
    const std::size_t comma = body.find(',', pos);
    const std::string tok = body.substr(
        pos, comma == std::string::npos ? std::string::npos : comma - pos);
    char* end = nullptr;
    const unsigned long v = std::strtoul(tok.c_str(), &end, 10);
    Require(!tok.empty() && end == tok.c_str() + tok.size(), ErrorCode::kParse,
            "bad UAP index '" + tok + "'");
    uap.ranked.push_back(static_cast<std::uint32_t>(v));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  Require(std::is_sorted(uap.ranked.begin(), uap.ranked.end()) &&
              std::adjacent_find(uap.ranked.begin(), uap.ranked.end()) ==
                  uap.ranked.end(),
          ErrorCode::kParse, "UAP indices must be strictly increasing");
  return uap;
}

FeatureVector input_specific_attack(const Classifier& model,
                                    const FeatureVector& x,
                                    const AttackBudget& budget,
                                    const PredictionThreshold& threshold) {
  budget.Validate();
  Require(model.differentiable(), ErrorCode::kNonDifferentiable,
          std::string(ModelKindName(model.kind())) +
              " model is non-differentiable");
  FeatureVector current = x;
  if (model.Score(current) < threshold.value) return current;

  const auto& spec = x.spec();
  bool any_zero = false;
  for (std::size_t j = 0; j < spec.n_features && !any_zero; ++j)
    any_zero = spec.IsBinary(j) && x.Get(j) == 0.0;
  Require(any_zero || !budget.add_only, ErrorCode::kInvalidArgument,
          "no zero-valued features available");

  for (std::size_t step = 0; step < budget.l0_max; ++step) {
    const auto grad = model.InputGradient(current);
    std::size_t best = spec.n_features;
    double best_gain = 0.0;
    for (std::size_t j = 0; j < spec.n_features; ++j) {
      if (!spec.IsBinary(j)) continue;
      const bool on = current.Get(j) != 0.0;
      // Gain is the first-order score decrease of flipping feature j.
      double gain;
      if (!on) {
        gain = -grad[j];
      } else if (!budget.add_only && x.Get(j) != 0.0) {
        gain = grad[j];
      } else {
        continue;
      }
      if (gain > best_gain) {
        best_gain = gain;
        best = j;
      }
    }
    if (best == spec.n_features) break;
    current.Set(best, current.Get(best) != 0.0 ? 0.0 : 1.0);
    if (model.Score(current) < threshold.value) break;
  }
  return current;
}

namespace {

// Indices of binary features ordered by ascending key, ties by index.
UapVector RankBinary(const FeatureSpaceSpec& spec,
                     const std::vector<double>& key, std::size_t k) {
  std::vector<std::uint32_t> idx;
  for (std::size_t j = 0; j < spec.n_features; ++j)
    if (spec.IsBinary(j)) idx.push_back(static_cast<std::uint32_t>(j));
  std::stable_sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) {
    return key[a] < key[b];
  });
  if (idx.size() > k) idx.resize(k);
  return UapVector{std::move(idx)};
}

}  // namespace

UapVector craft_uap_avg_jacobian(const Classifier& model,
                                 const LabeledDataset& malware_set,
                                 const AttackBudget& budget) {
  budget.Validate();
  Require(model.differentiable(), ErrorCode::kNonDifferentiable,
          std::string(ModelKindName(model.kind())) +
              " model is non-differentiable");
  Require(!malware_set.empty(), ErrorCode::kInvalidArgument,
          "malware set is empty");
  std::vector<double> mean(malware_set.spec().n_features, 0.0);
  for (const auto& x : malware_set.examples()) {
    const auto g = model.InputGradient(x);
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += g[j];
  }
  const double inv = 1.0 / static_cast<double>(malware_set.size());
  for (auto& v : mean) v *= inv;
  return RankBinary(malware_set.spec(), mean, budget.l0_max);
}

UapVector craft_uap_linear(const LinearModel& model,
                           const AttackBudget& budget) {
  budget.Validate();
  // Without a space we treat every feature as binary.
  const auto spec = FeatureSpaceSpec::AllBinary(model.n_features());
  return RankBinary(spec, model.weights(), budget.l0_max);
}

FeatureVector apply_uap(const FeatureVector& x, const UapVector& uap) {
  FeatureVector out = x;
  for (auto i : uap.ranked) {
    Require(i < x.n_features(), ErrorCode::kSpecMismatch,
            "UAP index " + std::to_string(i) + " outside the feature space");
    Require(x.spec().IsBinary(i), ErrorCode::kInvalidArgument,
            "UAP index " + std::to_string(i) + " is not a binary feature");
    out.Set(i, 1.0);
  }
  return out;
}

TransferReport transfer_eval(const UapVector& uap, const Classifier& target,
                             const LabeledDataset& malware_set,
                             const PredictionThreshold& threshold) {
  Require(!malware_set.empty(), ErrorCode::kInvalidArgument,
          "empty evaluation set");
  TransferReport report;
  report.n_malware = malware_set.CountLabel(kMalware);
  const auto clean = target.ScoreBatch(malware_set.examples());
  std::vector<FeatureVector> positives;
  for (std::size_t i = 0; i < malware_set.size(); ++i) {
    if (malware_set.label(i) == kMalware && clean[i] >= threshold.value)
      positives.push_back(malware_set.example(i));
  }
  report.n_true_positive = positives.size();
  if (positives.empty()) return report;

  auto rate = [&](const UapVector& u, std::size_t* evasive) {
    std::vector<FeatureVector> adv;
    adv.reserve(positives.size());
    for (const auto& x : positives) adv.push_back(apply_uap(x, u));
    const auto scores = target.ScoreBatch(adv);
    std::size_t n = 0;
    for (double s : scores) n += s < threshold.value;
    if (evasive) *evasive = n;
    return static_cast<double>(n) / static_cast<double>(positives.size());
  };
  report.uer = rate(uap, &report.n_evasive);
  for (std::size_t k = 1; k <= uap.size(); ++k)
    report.uer_by_budget.push_back(rate(uap.Truncated(k), nullptr));
  return report;
}

}  // namespace uap
