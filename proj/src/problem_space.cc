#include "uap/problem_space.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace uap {

namespace {

bool IsProbability(double p) { return p >= 0.0 && p <= 1.0; }

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string_view SamplerName(SamplerKind k) {
  switch (k) {
    case SamplerKind::kSetToOne:
      return "set_to_one";
    case SamplerKind::kAddUniform:
      return "add_uniform";
    case SamplerKind::kSetUniform:
      return "set_uniform";
  }
  return "?";
}

}  // namespace

Toolkit::Toolkit(std::vector<Transformation> transformations)
    : transformations_(std::move(transformations)) {
  std::sort(transformations_.begin(), transformations_.end(),
            [](const Transformation& a, const Transformation& b) {
              return a.id < b.id;
            });
  for (std::size_t i = 1; i < transformations_.size(); ++i) {
    Require(transformations_[i - 1].id != transformations_[i].id,
            ErrorCode::kInvalidArgument,
            "duplicate transformation id " +
                std::to_string(transformations_[i].id));
  }
  for (auto& t : transformations_) {
    if (auto* mask = std::get_if<DeterministicMask>(&t.effect)) {
      auto& f = mask->set_features;
      std::sort(f.begin(), f.end());
      f.erase(std::unique(f.begin(), f.end()), f.end());
    }
  }
}

void Toolkit::Validate(const FeatureSpaceSpec& spec) const {
  for (const auto& t : transformations_) {
    const std::string who = "transformation " + std::to_string(t.id);
    if (const auto* mask = std::get_if<DeterministicMask>(&t.effect)) {
      for (auto f : mask->set_features) {
        Require(f < spec.n_features, ErrorCode::kSpecMismatch,
                who + ": feature " + std::to_string(f) + " out of range");
        Require(spec.IsBinary(f), ErrorCode::kInvalidArgument,
                who + ": masks may only touch binary features");
      }
      continue;
    }
    const auto& st = std::get<StochasticEffect>(t.effect);
    Require(IsProbability(st.corruption_probability) &&
                IsProbability(st.parse_error_probability),
            ErrorCode::kInvalidArgument, who + ": bad failure probability");
    for (const auto& e : st.entries) {
      Require(e.feature < spec.n_features, ErrorCode::kSpecMismatch,
              who + ": feature " + std::to_string(e.feature) + " out of range");
      Require(IsProbability(e.modify_probability), ErrorCode::kInvalidArgument,
              who + ": modify probability outside [0,1]");
      const bool binary = spec.IsBinary(e.feature);
      if (e.sampler.kind == SamplerKind::kSetToOne) continue;
      Require(!binary, ErrorCode::kInvalidArgument,
              who + ": binary feature " + std::to_string(e.feature) +
                  " only supports set_to_one");
      Require(e.sampler.lo <= e.sampler.hi && std::isfinite(e.sampler.lo) &&
                  std::isfinite(e.sampler.hi),
              ErrorCode::kInvalidArgument, who + ": bad sampler range");
    }
  }
}

const Transformation& Toolkit::Get(int id) const {
  const auto it = std::lower_bound(
      transformations_.begin(), transformations_.end(), id,
      [](const Transformation& t, int v) { return t.id < v; });
  Require(it != transformations_.end() && it->id == id, ErrorCode::kNotFound,
          "unknown transformation id " + std::to_string(id));
  return *it;
}

bool Toolkit::Contains(int id) const {
  return std::binary_search(
      transformations_.begin(), transformations_.end(), id,
      [](const auto& a, const auto& b) {
        if constexpr (std::is_same_v<std::decay_t<decltype(a)>, int>) {
          return a < b.id;
        } else {
          return a.id < b;
        }
      });
}

std::vector<int> Toolkit::ids() const {
  std::vector<int> out;
  for (const auto& t : transformations_) out.push_back(t.id);
  return out;
}

bool Toolkit::AllDeterministic() const {
  return std::all_of(transformations_.begin(), transformations_.end(),
                     [](const Transformation& t) {
                       return std::holds_alternative<DeterministicMask>(t.effect);
                     });
}

std::string FormatToolkit(const Toolkit& toolkit) {
  std::string out = "toolkit v1\n";
  for (const auto& t : toolkit.transformations()) {
    out += "transformation " + std::to_string(t.id) + " " + t.name + "\n";
    if (const auto* mask = std::get_if<DeterministicMask>(&t.effect)) {
      out += "mask";
      for (auto f : mask->set_features) out += " " + std::to_string(f);
      out += "\n";
    } else {
      const auto& st = std::get<StochasticEffect>(t.effect);
      out += "corruption " + Num(st.corruption_probability) + "\n";
      out += "parse_error " + Num(st.parse_error_probability) + "\n";
      for (const auto& e : st.entries) {
        out += "effect " + std::to_string(e.feature) + " " +
               Num(e.modify_probability) + " " +
               std::string(SamplerName(e.sampler.kind));
        if (e.sampler.kind != SamplerKind::kSetToOne)
          out += " " + Num(e.sampler.lo) + " " + Num(e.sampler.hi);
        out += "\n";
      }
    }
    out += "end\n";
  }
  return out;
}

Toolkit ParseToolkit(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  std::vector<Transformation> out;
  Transformation* current = nullptr;
  bool is_mask = false, is_stochastic = false;
  auto fail = [&](const std::string& what) {
    Fail(ErrorCode::kParse, "toolkit line " + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key) || key[0] == '#') continue;
    if (!header) {
      std::string version;
      if (key != "toolkit" || !(ls >> version) || version != "v1")
        fail("expected 'toolkit v1' header");
      header = true;
      continue;
    }
    if (key == "transformation") {
      if (current) fail("missing 'end' before new transformation");
      int id;
      if (!(ls >> id)) fail("bad transformation id");
      std::string name;
      std::getline(ls, name);
      const auto first = name.find_first_not_of(" \t");
      name = first == std::string::npos ? "t" + std::to_string(id)
                                        : name.substr(first);
      out.push_back(Transformation{id, name, StochasticEffect{}});
      current = &out.back();
      is_mask = is_stochastic = false;
      continue;
    }
    if (!current) fail("record outside a transformation block");
    if (key == "end") {
      if (!is_mask && !is_stochastic) current->effect = StochasticEffect{};
      current = nullptr;
    } else if (key == "mask") {
      if (is_stochastic) fail("mask mixed with stochastic records");
      if (!is_mask) current->effect = DeterministicMask{};
      is_mask = true;
      long long f;
      auto& mask = std::get<DeterministicMask>(current->effect);
      while (ls >> f) {
        if (f < 0) fail("negative feature index");
        mask.set_features.push_back(static_cast<std::uint32_t>(f));
      }
      if (!ls.eof()) fail("bad mask index");
    } else if (key == "corruption" || key == "parse_error" || key == "effect") {
      if (is_mask) fail("stochastic record inside a mask transformation");
      is_stochastic = true;
      auto& st = std::get<StochasticEffect>(current->effect);
      if (key == "corruption") {
        if (!(ls >> st.corruption_probability)) fail("bad corruption probability");
      } else if (key == "parse_error") {
        if (!(ls >> st.parse_error_probability)) fail("bad parse_error probability");
      } else {
        FeatureEffect e;
        long long f;
        std::string sampler;
        if (!(ls >> f >> e.modify_probability >> sampler) || f < 0)
          fail("effect needs <feature> <p_modify> <sampler>");
        e.feature = static_cast<std::uint32_t>(f);
        if (sampler == "set_to_one") {
          e.sampler.kind = SamplerKind::kSetToOne;
        } else if (sampler == "add_uniform" || sampler == "set_uniform") {
          e.sampler.kind = sampler == "add_uniform" ? SamplerKind::kAddUniform
                                                    : SamplerKind::kSetUniform;
          if (!(ls >> e.sampler.lo >> e.sampler.hi)) fail("sampler needs <lo> <hi>");
        } else {
          fail("unknown sampler '" + sampler + "'");
        }
        st.entries.push_back(e);
      }
    } else {
      fail("unknown record '" + key + "'");
    }
  }
  if (!header) Fail(ErrorCode::kParse, "toolkit file is empty");
  if (current) Fail(ErrorCode::kParse, "toolkit file ends inside a transformation");
  return Toolkit(std::move(out));
}

Toolkit LoadToolkit(const std::filesystem::path& path) {
  return ParseToolkit(ReadFile(path));
}

void SaveToolkit(const Toolkit& toolkit, const std::filesystem::path& path) {
  WriteFileAtomic(path, FormatToolkit(toolkit));
}

void ValidateChain(const TransformationChain& chain, const Toolkit& toolkit,
                   std::size_t max_len) {
  Require(chain.size() <= max_len, ErrorCode::kInvalidArgument,
          "chain longer than the configured maximum of " +
              std::to_string(max_len));
  for (int id : chain) {
    Require(toolkit.Contains(id), ErrorCode::kNotFound,
            "unknown transformation id " + std::to_string(id));
  }
}

std::string FormatChain(const TransformationChain& chain) {
  std::string out = "chain v1:";
  for (std::size_t i = 0; i < chain.size(); ++i) {
    out += i == 0 ? " " : ",";
    out += std::to_string(chain[i]);
  }
  return out;
}

TransformationChain ParseChain(const std::string& line) {
  const std::string prefix = "chain v1:";
  Require(line.rfind(prefix, 0) == 0, ErrorCode::kParse,
          "chain line must start with 'chain v1:'");
  TransformationChain chain;
  std::string body = line.substr(prefix.size());
  for (char& c : body)
    if (c == ',') c = ' ';
  std::istringstream in(body);
  std::string tok;
  while (in >> tok) {
    char* end = nullptr;
    const long v = std::strtol(tok.c_str(), &end, 10);
    Require(end == tok.c_str() + tok.size(), ErrorCode::kParse,
            "bad chain element '" + tok + "'");
    chain.push_back(static_cast<int>(v));
  }
  return chain;
}

ApplicationOutcome apply_transformation(const FeatureVector& x,
                                        const Transformation& t, Rng& rng) {
  FeatureVector out = x;
  if (const auto* mask = std::get_if<DeterministicMask>(&t.effect)) {
    for (auto f : mask->set_features) {
      Require(f < x.n_features(), ErrorCode::kSpecMismatch,
              "transformation touches a feature outside the space");
      out.Set(f, 1.0);
    }
    return ApplicationOutcome::Transformed(std::move(out));
  }
  const auto& st = std::get<StochasticEffect>(t.effect);
  if (rng.Uniform() < st.parse_error_probability)
    return ApplicationOutcome::ParseError();
  if (rng.Uniform() < st.corruption_probability)
    return ApplicationOutcome::Corrupted();
  for (const auto& e : st.entries) {
    Require(e.feature < x.n_features(), ErrorCode::kSpecMismatch,
            "transformation touches a feature outside the space");
    if (!(rng.Uniform() < e.modify_probability)) continue;
    switch (e.sampler.kind) {
      case SamplerKind::kSetToOne:
        out.Set(e.feature, 1.0);
        break;
      case SamplerKind::kAddUniform:
        out.Set(e.feature, out.Get(e.feature) + rng.Uniform(e.sampler.lo, e.sampler.hi));
        break;
      case SamplerKind::kSetUniform:
        out.Set(e.feature, rng.Uniform(e.sampler.lo, e.sampler.hi));
        break;
    }
  }
  return ApplicationOutcome::Transformed(std::move(out));
}

ApplicationOutcome apply_transformation(const FeatureVector& x,
                                        const Toolkit& toolkit, int id,
                                        Rng& rng) {
  return apply_transformation(x, toolkit.Get(id), rng);
}

ApplicationOutcome apply_chain(const FeatureVector& x,
                               const TransformationChain& chain,
                               const Toolkit& toolkit, Rng& rng) {
  ApplicationOutcome state = ApplicationOutcome::Transformed(x);
  for (int id : chain) {
    state = apply_transformation(state.features, toolkit.Get(id), rng);
    if (!state.transformed()) break;
  }
  return state;
}

std::vector<ApplicationOutcome> apply_chain_to_set(
    std::span<const FeatureVector> xs, const TransformationChain& chain,
    const Toolkit& toolkit, std::uint64_t seed) {
  std::vector<ApplicationOutcome> out;
  out.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    Rng rng(DeriveSeed(seed, i));
    out.push_back(apply_chain(xs[i], chain, toolkit, rng));
  }
  return out;
}

std::vector<FeatureVector> TruePositiveMalware(
    const Classifier& model, const LabeledDataset& set,
    const PredictionThreshold& threshold) {
  const auto scores = model.ScoreBatch(set.examples());
  std::vector<FeatureVector> out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.label(i) == kMalware && scores[i] >= threshold.value)
      out.push_back(set.example(i));
  }
  return out;
}

double OutcomeUer(const Classifier& model,
                  std::span<const ApplicationOutcome> outcomes,
                  const PredictionThreshold& threshold) {
  std::vector<FeatureVector> live;
  std::size_t denom = 0;
  for (const auto& o : outcomes) {
    if (o.kind == OutcomeKind::kParseError) continue;
    ++denom;
    if (o.transformed()) live.push_back(o.features);
  }
  if (denom == 0) return 0.0;
  std::size_t evasive = 0;
  for (double s : model.ScoreBatch(live)) evasive += s < threshold.value;
  return static_cast<double>(evasive) / static_cast<double>(denom);
}

double OutcomeMeanScore(const Classifier& model,
                        std::span<const ApplicationOutcome> outcomes) {
  std::vector<FeatureVector> live;
  std::size_t denom = 0, corrupted = 0;
  for (const auto& o : outcomes) {
    if (o.kind == OutcomeKind::kParseError) continue;
    ++denom;
    if (o.transformed()) {
      live.push_back(o.features);
    } else {
      ++corrupted;
    }
  }
  if (denom == 0) return 1.0;
  double total = static_cast<double>(corrupted);
  for (double s : model.ScoreBatch(live)) total += s;
  return total / static_cast<double>(denom);
}

std::uint64_t search_rounds_estimate(std::uint64_t exploration_size,
                                     std::uint64_t max_len,
                                     std::uint64_t toolkit_size) {
  return exploration_size * max_len * toolkit_size;
}

}  // namespace uap
