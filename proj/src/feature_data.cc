#include "uap/feature_data.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "uap/common.h"

namespace uap {

namespace {

std::string FormatDouble(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

std::string_view Trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' ||
                        s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() &&
         (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> SplitOn(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

bool ParseU64(std::string_view s, std::uint64_t& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool ParseDouble(std::string_view s, double& out) {
  if (s.empty()) return false;
  const std::string tmp(s);
  char* end = nullptr;
  out = std::strtod(tmp.c_str(), &end);
  return end == tmp.c_str() + tmp.size() && std::isfinite(out);
}

}  // namespace

void FeatureSpaceSpec::Validate() const {
  Require(n_features > 0, ErrorCode::kInvalidArgument,
          "feature space must have at least one feature");
  Require(feature_kinds.size() == n_features, ErrorCode::kInvalidArgument,
          "feature_kinds length does not match n_features");
  Require(feature_groups.size() == n_features, ErrorCode::kInvalidArgument,
          "feature_groups length does not match n_features");
  for (const auto& g : feature_groups) {
    Require(!g.empty(), ErrorCode::kInvalidArgument,
            "feature group labels must be non-empty");
  }
}

FeatureSpaceSpec FeatureSpaceSpec::AllBinary(std::size_t n_features,
                                             const std::string& group) {
  FeatureSpaceSpec spec;
  spec.n_features = n_features;
  spec.feature_kinds.assign(n_features, FeatureKind::kBinary);
  spec.feature_groups.assign(n_features, group);
  return spec;
}

SpecPtr MakeSpec(FeatureSpaceSpec spec) {
  spec.Validate();
  return std::make_shared<const FeatureSpaceSpec>(std::move(spec));
}

bool SameSpace(const SpecPtr& a, const SpecPtr& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  return *a == *b;
}

FeatureVector::FeatureVector(SpecPtr spec) : spec_(std::move(spec)) {
  Require(spec_ != nullptr, ErrorCode::kInvalidArgument,
          "feature vector needs a feature space");
}

FeatureVector::FeatureVector(SpecPtr spec, std::vector<Entry> entries)
    : FeatureVector(std::move(spec)) {
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.index < b.index; });
  entries_.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Entry& e = entries[i];
    Require(e.index < spec_->n_features, ErrorCode::kInvalidArgument,
            "feature index " + std::to_string(e.index) + " out of range");
    Require(i == 0 || entries[i - 1].index != e.index,
            ErrorCode::kInvalidArgument,
            "duplicate feature index " + std::to_string(e.index));
    Require(std::isfinite(e.value), ErrorCode::kInvalidArgument,
            "non-finite feature value");
    if (spec_->IsBinary(e.index)) {
      Require(e.value == 0.0 || e.value == 1.0, ErrorCode::kInvalidArgument,
              "non-binary value on binary feature " + std::to_string(e.index));
    }
    if (e.value != 0.0) entries_.push_back(e);
  }
}

FeatureVector FeatureVector::FromIndices(
    SpecPtr spec, std::span<const std::uint32_t> indices) {
  std::vector<Entry> entries;
  entries.reserve(indices.size());
  for (auto i : indices) entries.push_back({i, 1.0});
  return FeatureVector(std::move(spec), std::move(entries));
}

double FeatureVector::Get(std::size_t index) const {
  const auto it = std::lower_bound(
      entries_.begin(), entries_.end(), index,
      [](const Entry& e, std::size_t i) { return e.index < i; });
  if (it != entries_.end() && it->index == index) return it->value;
  return 0.0;
}

void FeatureVector::Set(std::size_t index, double value) {
  Require(index < n_features(), ErrorCode::kInvalidArgument,
          "feature index " + std::to_string(index) + " out of range");
  Require(std::isfinite(value), ErrorCode::kInvalidArgument,
          "non-finite feature value");
  if (spec_->IsBinary(index)) {
    Require(value == 0.0 || value == 1.0, ErrorCode::kInvalidArgument,
            "non-binary value on binary feature " + std::to_string(index));
  }
  const auto it = std::lower_bound(
      entries_.begin(), entries_.end(), index,
      [](const Entry& e, std::size_t i) { return e.index < i; });
  const bool present = it != entries_.end() && it->index == index;
  if (value == 0.0) {
    if (present) entries_.erase(it);
  } else if (present) {
    it->value = value;
  } else {
    entries_.insert(it, Entry{static_cast<std::uint32_t>(index), value});
  }
}

std::vector<double> FeatureVector::ToDense() const {
  std::vector<double> dense(n_features(), 0.0);
  for (const auto& e : entries_) dense[e.index] = e.value;
  return dense;
}

std::size_t l0_distance(const FeatureVector& a, const FeatureVector& b) {
  Require(SameSpace(a.spec_ptr(), b.spec_ptr()), ErrorCode::kSpecMismatch,
          "l0_distance: vectors belong to different feature spaces");
  const auto ea = a.entries();
  const auto eb = b.entries();
  std::size_t i = 0, j = 0, count = 0;
  while (i < ea.size() || j < eb.size()) {
    if (j == eb.size() || (i < ea.size() && ea[i].index < eb[j].index)) {
      ++count;
      ++i;
    } else if (i == ea.size() || eb[j].index < ea[i].index) {
      ++count;
      ++j;
    } else {
      if (ea[i].value != eb[j].value) ++count;
      ++i;
      ++j;
    }
  }
  return count;
}

void LabeledDataset::Add(FeatureVector x, int label, std::string id) {
  Require(spec_ != nullptr, ErrorCode::kInvalidArgument,
          "dataset has no feature space");
  Require(SameSpace(spec_, x.spec_ptr()), ErrorCode::kSpecMismatch,
          "example belongs to a different feature space");
  Require(label == kBenign || label == kMalware, ErrorCode::kInvalidArgument,
          "labels must be 0 (benign) or 1 (malware)");
  Require(id_set_.insert(id).second, ErrorCode::kInvalidArgument,
          "duplicate example id '" + id + "'");
  examples_.push_back(std::move(x));
  labels_.push_back(label);
  ids_.push_back(std::move(id));
}

std::size_t LabeledDataset::CountLabel(int label) const {
  return static_cast<std::size_t>(
      std::count(labels_.begin(), labels_.end(), label));
}

LabeledDataset LabeledDataset::Subset(
    std::span<const std::size_t> indices) const {
  LabeledDataset out(spec_);
  out.examples_.reserve(indices.size());
  for (auto i : indices) {
    Require(i < size(), ErrorCode::kInvalidArgument, "subset index out of range");
    out.examples_.push_back(examples_[i]);
    out.labels_.push_back(labels_[i]);
    out.ids_.push_back(ids_[i]);
    Require(out.id_set_.insert(ids_[i]).second, ErrorCode::kInvalidArgument,
            "subset repeats example '" + ids_[i] + "'");
  }
  return out;
}

LabeledDataset LabeledDataset::FilterLabel(int label) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < size(); ++i)
    if (labels_[i] == label) idx.push_back(i);
  return Subset(idx);
}

void SplitPlan::Validate() const {
  for (double f : {train_fraction, exploration_fraction, test_fraction}) {
    Require(f > 0.0 && f < 1.0, ErrorCode::kInvalidArgument,
            "split fractions must lie in (0,1)");
  }
  Require(std::abs(train_fraction + exploration_fraction + test_fraction -
                   1.0) <= 1e-9,
          ErrorCode::kInvalidArgument, "split fractions must sum to 1");
}

std::vector<std::size_t> AllocateLargestRemainder(
    std::size_t n, std::span<const double> fractions) {
  std::vector<std::size_t> counts(fractions.size());
  std::vector<double> remainders(fractions.size());
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    const double quota = fractions[k] * static_cast<double>(n);
    counts[k] = static_cast<std::size_t>(std::floor(quota + 1e-12));
    remainders[k] = quota - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  std::vector<std::size_t> order(fractions.size());
  std::iota(order.begin(), order.end(), 0);
  // stable_sort keeps earlier splits first among equal remainders.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return remainders[a] > remainders[b] + 1e-12;
  });
  for (std::size_t r = 0; assigned < n; ++r, ++assigned) {
    ++counts[order[r % order.size()]];
  }
  return counts;
}

DatasetSplit make_split(const LabeledDataset& dataset, const SplitPlan& plan) {
  plan.Validate();
  Require(!dataset.empty(), ErrorCode::kInvalidArgument,
          "cannot split an empty dataset");
  const double fractions[3] = {plan.train_fraction, plan.exploration_fraction,
                               plan.test_fraction};

  std::vector<std::vector<std::size_t>> groups;
  if (plan.stratified) {
    std::vector<std::size_t> benign, malware;
    for (std::size_t i = 0; i < dataset.size(); ++i)
      (dataset.label(i) == kMalware ? malware : benign).push_back(i);
    Require(!benign.empty() && !malware.empty(), ErrorCode::kInvalidArgument,
            "stratified split needs both classes present");
    groups = {std::move(benign), std::move(malware)};
  } else {
    std::vector<std::size_t> all(dataset.size());
    std::iota(all.begin(), all.end(), 0);
    groups = {std::move(all)};
  }

  Rng rng(plan.seed);
  std::vector<std::size_t> parts[3];
  for (auto& group : groups) {
    for (std::size_t i = group.size(); i > 1; --i) {
      std::swap(group[i - 1], group[rng.Below(i)]);
    }
    const auto counts = AllocateLargestRemainder(group.size(), fractions);
    std::size_t offset = 0;
    for (int k = 0; k < 3; ++k) {
      parts[k].insert(parts[k].end(), group.begin() + offset,
                      group.begin() + offset + counts[k]);
      offset += counts[k];
    }
  }
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return {dataset.Subset(parts[0]), dataset.Subset(parts[1]),
          dataset.Subset(parts[2])};
}

void SyntheticDatasetConfig::Validate() const {
  Require(n_features > 0, ErrorCode::kInvalidArgument, "n_features must be > 0");
  Require(n_goodware_indicative + n_malware_indicative + n_continuous <=
              n_features,
          ErrorCode::kInvalidArgument,
          "indicative and continuous feature counts exceed n_features");
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  Require(prob(p_on_in_own_class) && prob(p_on_in_other_class) &&
              prob(MalwareOwnP()) && prob(MalwareOtherP()) &&
              prob(p_background),
          ErrorCode::kInvalidArgument, "probabilities must lie in [0,1]");
  Require(p_on_in_own_class > p_on_in_other_class &&
              MalwareOwnP() > MalwareOtherP(),
          ErrorCode::kInvalidArgument,
          "p_on_in_own_class must exceed p_on_in_other_class");
  Require(benign_continuous_lo <= benign_continuous_hi &&
              malware_continuous_lo <= malware_continuous_hi,
          ErrorCode::kInvalidArgument, "continuous ranges must be ordered");
}

FeatureSpaceSpec SyntheticSpec(const SyntheticDatasetConfig& cfg) {
  FeatureSpaceSpec spec;
  spec.n_features = cfg.n_features;
  const std::size_t g = cfg.n_goodware_indicative;
  const std::size_t m = g + cfg.n_malware_indicative;
  const std::size_t c = m + cfg.n_continuous;
  for (std::size_t j = 0; j < cfg.n_features; ++j) {
    if (j < g) {
      spec.feature_kinds.push_back(FeatureKind::kBinary);
      spec.feature_groups.push_back("goodware_indicative");
    } else if (j < m) {
      spec.feature_kinds.push_back(FeatureKind::kBinary);
      spec.feature_groups.push_back("malware_indicative");
    } else if (j < c) {
      spec.feature_kinds.push_back(FeatureKind::kContinuous);
      spec.feature_groups.push_back("continuous");
    } else {
      spec.feature_kinds.push_back(FeatureKind::kBinary);
      spec.feature_groups.push_back("background");
    }
  }
  return spec;
}

std::vector<double> FeatureFrequencies(const LabeledDataset& dataset, int label) {
  std::vector<double> freq(dataset.spec().n_features, 0.0);
  std::size_t rows = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset.label(i) != label) continue;
    ++rows;
    for (const auto& e : dataset.example(i).entries()) freq[e.index] += 1.0;
  }
  if (rows > 0)
    for (double& f : freq) f /= static_cast<double>(rows);
  return freq;
}

LabeledDataset synthesize_dataset(const SyntheticDatasetConfig& cfg) {
  cfg.Validate();
  const SpecPtr spec = MakeSpec(SyntheticSpec(cfg));
  const std::size_t g = cfg.n_goodware_indicative;
  const std::size_t m = g + cfg.n_malware_indicative;
  const std::size_t c = m + cfg.n_continuous;

  LabeledDataset ds(spec);
  Rng rng(cfg.seed);
  auto make_row = [&](bool malware) {
    std::vector<FeatureVector::Entry> entries;
    for (std::size_t j = 0; j < cfg.n_features; ++j) {
      double v = 0.0;
      if (j < g) {
        v = rng.Bernoulli(malware ? cfg.p_on_in_other_class
                                  : cfg.p_on_in_own_class);
      } else if (j < m) {
        v = rng.Bernoulli(malware ? cfg.MalwareOwnP() : cfg.MalwareOtherP());
      } else if (j < c) {
        v = malware ? rng.Uniform(cfg.malware_continuous_lo,
                                  cfg.malware_continuous_hi)
                    : rng.Uniform(cfg.benign_continuous_lo,
                                  cfg.benign_continuous_hi);
      } else {
        v = rng.Bernoulli(cfg.p_background);
      }
      if (v != 0.0) entries.push_back({static_cast<std::uint32_t>(j), v});
    }
    return FeatureVector(spec, std::move(entries));
  };
  char id[32];
  for (std::size_t i = 0; i < cfg.n_benign; ++i) {
    std::snprintf(id, sizeof(id), "b%06zu", i);
    ds.Add(make_row(false), kBenign, id);
  }
  for (std::size_t i = 0; i < cfg.n_malware; ++i) {
    std::snprintf(id, sizeof(id), "m%06zu", i);
    ds.Add(make_row(true), kMalware, id);
  }
  return ds;
}

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  Require(static_cast<bool>(in), ErrorCode::kIo,
          "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFileAtomic(const std::filesystem::path& path,
                     const std::string& contents) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    Require(static_cast<bool>(out), ErrorCode::kIo,
            "cannot write '" + tmp.string() + "'");
    out << contents;
    out.flush();
    Require(static_cast<bool>(out), ErrorCode::kIo,
            "write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  Require(!ec, ErrorCode::kIo,
          "cannot rename into '" + path.string() + "': " + ec.message());
}

LabeledDataset parse_sparse_dataset(const std::string& text,
                                    const SpecPtr& spec) {
  Require(spec != nullptr, ErrorCode::kInvalidArgument, "missing feature space");
  LabeledDataset ds(spec);
  std::size_t line_no = 0;
  std::size_t row = 0;
  std::string_view rest(text);
  while (!rest.empty()) {
    const std::size_t nl = rest.find('\n');
    std::string_view line = rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{}
                                        : rest.substr(nl + 1);
    ++line_no;
    line = Trim(line);
    if (line.empty() || line.front() == '#') continue;
    auto fail = [&](const std::string& what) {
      Fail(ErrorCode::kParse,
           "line " + std::to_string(line_no) + ": " + what);
    };
    std::vector<std::string_view> tokens;
    for (auto tok : SplitOn(line, ' ')) {
      if (!tok.empty()) tokens.push_back(tok);
    }
    int label;
    if (tokens[0] == "0") {
      label = kBenign;
    } else if (tokens[0] == "1") {
      label = kMalware;
    } else {
      fail("label must be 0 or 1");
    }
    std::vector<FeatureVector::Entry> entries;
    for (std::size_t t = 1; t < tokens.size(); ++t) {
      const std::size_t colon = tokens[t].find(':');
      if (colon == std::string_view::npos) fail("expected index:value");
      std::uint64_t index;
      double value;
      if (!ParseU64(tokens[t].substr(0, colon), index))
        fail("bad feature index");
      if (!ParseDouble(tokens[t].substr(colon + 1), value))
        fail("bad feature value");
      if (index >= spec->n_features)
        fail("feature index " + std::to_string(index) + " >= n_features");
      if (!entries.empty() && index <= entries.back().index)
        fail("indices must be strictly increasing");
      if (spec->IsBinary(index) && value != 0.0 && value != 1.0)
        fail("non-binary value on binary feature " + std::to_string(index));
      entries.push_back({static_cast<std::uint32_t>(index), value});
    }
    ds.Add(FeatureVector(spec, std::move(entries)), label,
           "row" + std::to_string(row++));
  }
  return ds;
}

LabeledDataset load_sparse_dataset(const std::filesystem::path& path,
                                   const SpecPtr& spec) {
  return parse_sparse_dataset(ReadFile(path), spec);
}

std::string format_sparse_dataset(const LabeledDataset& dataset) {
  std::string out;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out += dataset.label(i) == kMalware ? '1' : '0';
    for (const auto& e : dataset.example(i).entries()) {
      out += ' ';
      out += std::to_string(e.index);
      out += ':';
      out += dataset.spec().IsBinary(e.index) ? std::string("1")
                                              : FormatDouble(e.value);
    }
    out += '\n';
  }
  return out;
}

void save_sparse_dataset(const LabeledDataset& dataset,
                         const std::filesystem::path& path) {
  WriteFileAtomic(path, format_sparse_dataset(dataset));
}

namespace {

template <typename T, typename ToString>
std::string RunLengthEncode(const std::vector<T>& values, ToString to_string) {
  std::string out;
  for (std::size_t i = 0; i < values.size();) {
    std::size_t j = i;
    while (j < values.size() && values[j] == values[i]) ++j;
    if (!out.empty()) out += ',';
    out += to_string(values[i]) + "*" + std::to_string(j - i);
    i = j;
  }
  return out;
}

std::vector<std::string> RunLengthDecode(std::string_view encoded) {
  std::vector<std::string> out;
  for (auto item : SplitOn(encoded, ',')) {
    item = Trim(item);
    const std::size_t star = item.rfind('*');
    std::uint64_t count;
    Require(star != std::string_view::npos && star > 0 &&
                ParseU64(item.substr(star + 1), count),
            ErrorCode::kParse,
            "bad run-length item '" + std::string(item) + "'");
    out.insert(out.end(), count, std::string(item.substr(0, star)));
  }
  return out;
}

}  // namespace

std::string format_spec_file(const FeatureSpaceSpec& spec) {
  spec.Validate();
  std::string out = "n_features=" + std::to_string(spec.n_features) + "\n";
  out += "feature_kinds=" +
         RunLengthEncode(spec.feature_kinds,
                         [](FeatureKind k) {
                           return std::string(k == FeatureKind::kBinary
                                                  ? "binary"
                                                  : "continuous");
                         }) +
         "\n";
  out += "feature_groups=" +
         RunLengthEncode(spec.feature_groups,
                         [](const std::string& s) { return s; }) +
         "\n";
  return out;
}

FeatureSpaceSpec parse_spec_file(const std::string& text) {
  FeatureSpaceSpec spec;
  bool have_n = false, have_kinds = false, have_groups = false;
  std::size_t line_no = 0;
  for (auto line : SplitOn(text, '\n')) {
    ++line_no;
    line = Trim(line);
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    Require(eq != std::string_view::npos, ErrorCode::kParse,
            "spec line " + std::to_string(line_no) + ": expected key=value");
    const auto key = Trim(line.substr(0, eq));
    const auto value = Trim(line.substr(eq + 1));
    if (key == "n_features") {
      std::uint64_t n;
      Require(ParseU64(value, n), ErrorCode::kParse,
              "spec line " + std::to_string(line_no) + ": bad n_features");
      spec.n_features = n;
      have_n = true;
    } else if (key == "feature_kinds") {
      for (const auto& k : RunLengthDecode(value)) {
        if (k == "binary") {
          spec.feature_kinds.push_back(FeatureKind::kBinary);
        } else if (k == "continuous") {
          spec.feature_kinds.push_back(FeatureKind::kContinuous);
        } else {
          Fail(ErrorCode::kParse, "unknown feature kind '" + k + "'");
        }
      }
      have_kinds = true;
    } else if (key == "feature_groups") {
      spec.feature_groups = RunLengthDecode(value);
      have_groups = true;
    } else {
      Fail(ErrorCode::kParse, "spec line " + std::to_string(line_no) +
                                  ": unknown key '" + std::string(key) + "'");
    }
  }
  Require(have_n && have_kinds && have_groups, ErrorCode::kParse,
          "spec file needs n_features, feature_kinds and feature_groups");
  spec.Validate();
  return spec;
}

FeatureSpaceSpec load_spec_file(const std::filesystem::path& path) {
  return parse_spec_file(ReadFile(path));
}

void save_spec_file(const FeatureSpaceSpec& spec,
                    const std::filesystem::path& path) {
  WriteFileAtomic(path, format_spec_file(spec));
}

}  // namespace uap
