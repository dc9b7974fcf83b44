#include "cli/config.h"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <sstream>

#include "uap/common.h"
#include "uap/feature_data.h"

namespace uap::cli {

namespace {

std::string Trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> SplitList(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = Trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

const KeyDef* FindKey(std::string_view name) {
  for (const auto& k : KnownKeys())
    if (k.name == name) return &k;
  return nullptr;
}

bool ParseDouble(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  errno = 0;
  out = std::strtod(s.c_str(), &end);
  return errno == 0 && end == s.c_str() + s.size();
}

bool ParseInt(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  errno = 0;
  out = std::strtoll(s.c_str(), &end, 10);
  return errno == 0 && end == s.c_str() + s.size();
}

bool ParseUint(const std::string& s, std::uint64_t& out) {
  if (s.empty() || s[0] == '-') return false;
  char* end = nullptr;
  errno = 0;
  out = std::strtoull(s.c_str(), &end, 10);
  return errno == 0 && end == s.c_str() + s.size();
}

bool ParseBool(const std::string& s, bool& out) {
  if (s == "true" || s == "1") return out = true, true;
  if (s == "false" || s == "0") return out = false, true;
  return false;
}

void CheckValue(const KeyDef& def, const std::string& value) {
  bool ok = true;
  switch (def.type) {
    case KeyType::kString:
    case KeyType::kStringList:
      break;
    case KeyType::kInt: {
      std::int64_t v;
      ok = ParseInt(value, v);
      break;
    }
    case KeyType::kUint: {
      std::uint64_t v;
      ok = ParseUint(value, v);
      break;
    }
    case KeyType::kDouble: {
      double v;
      ok = ParseDouble(value, v);
      break;
    }
    case KeyType::kBool: {
      bool v;
      ok = ParseBool(value, v);
      break;
    }
    case KeyType::kDoubleList:
      for (const auto& item : SplitList(value)) {
        double v;
        ok = ok && ParseDouble(item, v);
      }
      break;
  }
  Require(ok, ErrorCode::kInvalidArgument,
          "config key '" + std::string(def.name) + "': bad value '" + value + "'");
}

}  // namespace

const std::vector<KeyDef>& KnownKeys() {
  static const std::vector<KeyDef> keys = {
      {"seed", KeyType::kUint, "", "global seed (required here or via --seed)"},
      {"scenario", KeyType::kString, "default", "run label in summaries; default uses the output directory name"},
      {"data.path", KeyType::kString, "", "sparse dataset file; empty = synthesize"},
      {"data.spec", KeyType::kString, "", "spec sidecar for data.path"},
      {"data.preset", KeyType::kString, "drebin_like", "drebin_like | windows_like"},
      {"synth.n_features", KeyType::kUint, "500", "synth.* defaults are the drebin_like preset"},
      {"synth.n_benign", KeyType::kUint, "2000", ""},
      {"synth.n_malware", KeyType::kUint, "2000", ""},
      {"synth.n_goodware", KeyType::kUint, "40", "goodware-indicative features"},
      {"synth.n_malware_features", KeyType::kUint, "40", "malware-indicative features"},
      {"synth.p_own", KeyType::kDouble, "0.8", ""},
      {"synth.p_other", KeyType::kDouble, "0.02", ""},
      {"synth.malware_p_own", KeyType::kDouble, "0.1", "< 0 reuses synth.p_own"},
      {"synth.malware_p_other", KeyType::kDouble, "0.05", "< 0 reuses synth.p_other"},
      {"synth.n_continuous", KeyType::kUint, "0", ""},
      {"synth.p_background", KeyType::kDouble, "0.05", ""},
      {"split.train", KeyType::kDouble, "0.6", ""},
      {"split.exploration", KeyType::kDouble, "0.2", ""},
      {"split.test", KeyType::kDouble, "0.2", ""},
      {"split.stratified", KeyType::kBool, "true", ""},
      {"model.family", KeyType::kString, "mlp", "lr | svm | mlp | gbdt"},
      {"model.arch", KeyType::kString, "standard", "standard | small | deep (mlp)"},
      {"model.path", KeyType::kString, "", "trained model consumed by attacks"},
      {"train.epochs", KeyType::kInt, "20", ""},
      {"train.batch_size", KeyType::kInt, "256", ""},
      {"train.learning_rate", KeyType::kDouble, "0.001", ""},
      {"train.optimizer", KeyType::kString, "adam", "adam | sgd"},
      {"train.c", KeyType::kDouble, "1.0", "inverse L2 strength (lr, svm)"},
      {"train.dropout", KeyType::kDouble, "0.2", "mlp dropout rate"},
      {"gbdt.n_trees", KeyType::kUint, "100", ""},
      {"gbdt.max_leaves", KeyType::kUint, "31", ""},
      {"gbdt.shrinkage", KeyType::kDouble, "0.1", ""},
      {"gbdt.min_samples_leaf", KeyType::kUint, "20", ""},
      {"attack.method", KeyType::kString, "avg_jacobian",
       "avg_jacobian | linear | input_specific (attack-fs)"},
      {"attack.l0", KeyType::kUint, "20", "feature-space budget"},
      {"attack.toolkit", KeyType::kString, "",
       "toolkit file; empty = generate gadgets from an LR surrogate"},
      {"attack.gadgets", KeyType::kUint, "50", ""},
      {"attack.gadget_pool", KeyType::kUint, "40", ""},
      {"attack.gadget_primary", KeyType::kUint, "2", ""},
      {"attack.gadget_side_mean", KeyType::kDouble, "18", ""},
      {"attack.gadget_side_exclude", KeyType::kUint, "40",
       "most malware-leaning features side effects avoid"},
      {"attack.strategy", KeyType::kString, "greedy_uer",
       "greedy_uer | greedy_confidence | gp | random"},
      {"attack.max_len", KeyType::kUint, "10", ""},
      {"attack.exploration_size", KeyType::kUint, "0",
       "cap on exploration malware used by searches; 0 = all"},
      {"attack.random_chains", KeyType::kUint, "1000", ""},
      {"gp.population", KeyType::kUint, "20", ""},
      {"gp.generations", KeyType::kUint, "20", ""},
      {"gp.mutation", KeyType::kDouble, "0.1", ""},
      {"gp.crossover", KeyType::kDouble, "0.7", ""},
      {"chain.path", KeyType::kString, "", "chain file (evaluate)"},
      {"uap.path", KeyType::kString, "", "UAP file (evaluate)"},
      {"defense.kind", KeyType::kString, "uap_problem_space",
       "feature_space | uap_problem_space | stat_model"},
      {"defense.mode", KeyType::kString, "mixed", "pure | mixed"},
      {"defense.last_n", KeyType::kInt, "3", ""},
      {"defense.l0", KeyType::kUint, "20", ""},
      {"eval.threshold", KeyType::kDouble, "0.5", "decision threshold C"},
      {"eval.fpr_levels", KeyType::kDoubleList, "0.01,0.001", ""},
      {"eval.report_fpr", KeyType::kDouble, "0.01", "FPR level of report.csv"},
      {"eval.mc_reps", KeyType::kUint, "1", "Monte-Carlo repetitions"},
      {"eval.lengths", KeyType::kDoubleList, "1,4,10", "chain lengths reported"},
      {"transfer.models", KeyType::kStringList, "", "model files"},
      {"report.inputs", KeyType::kStringList, "", "run directories"},
  };
  return keys;
}

Config Config::Parse(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = Trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    Require(eq != std::string::npos, ErrorCode::kParse,
            "config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = Trim(line.substr(0, eq));
    Require(!cfg.Has(key), ErrorCode::kParse,
            "config line " + std::to_string(line_no) + ": key '" + key +
                "' repeated");
    cfg.Set(key, Trim(line.substr(eq + 1)));
  }
  return cfg;
}

Config Config::Load(const std::filesystem::path& path) {
  return Parse(ReadFile(path));
}

void Config::Override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  Require(eq != std::string::npos, ErrorCode::kInvalidArgument,
          "--set expects key=value, got '" + assignment + "'");
  Set(Trim(assignment.substr(0, eq)), Trim(assignment.substr(eq + 1)));
}

void Config::Set(const std::string& key, const std::string& value) {
  const KeyDef* def = FindKey(key);
  Require(def != nullptr, ErrorCode::kInvalidArgument,
          "unknown config key '" + key + "'");
  CheckValue(*def, value);
  values_[key] = value;
}

std::string Config::Raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it != values_.end()) return it->second;
  const KeyDef* def = FindKey(key);
  Require(def != nullptr, ErrorCode::kInvalidArgument,
          "unknown config key '" + key + "'");
  return std::string(def->default_value);
}

std::string Config::GetString(const std::string& key) const { return Raw(key); }

std::int64_t Config::GetInt(const std::string& key) const {
  std::int64_t v = 0;
  Require(ParseInt(Raw(key), v), ErrorCode::kInvalidArgument,
          "config key '" + key + "' is not an integer");
  return v;
}

std::uint64_t Config::GetUint(const std::string& key) const {
  std::uint64_t v = 0;
  Require(ParseUint(Raw(key), v), ErrorCode::kInvalidArgument,
          "config key '" + key + "' is not set to an unsigned integer");
  return v;
}

double Config::GetDouble(const std::string& key) const {
  double v = 0;
  Require(ParseDouble(Raw(key), v), ErrorCode::kInvalidArgument,
          "config key '" + key + "' is not a number");
  return v;
}

bool Config::GetBool(const std::string& key) const {
  bool v = false;
  Require(ParseBool(Raw(key), v), ErrorCode::kInvalidArgument,
          "config key '" + key + "' is not a boolean");
  return v;
}

std::vector<double> Config::GetDoubleList(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : SplitList(Raw(key))) {
    double v;
    Require(ParseDouble(item, v), ErrorCode::kInvalidArgument,
            "config key '" + key + "': bad list item '" + item + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> Config::GetStringList(const std::string& key) const {
  return SplitList(Raw(key));
}

std::map<std::string, std::string> Config::Resolved() const {
  std::map<std::string, std::string> out;
  for (const auto& k : KnownKeys()) out[std::string(k.name)] = std::string(k.default_value);
  for (const auto& [k, v] : values_) out[k] = v;
  return out;
}

}  // namespace uap::cli
