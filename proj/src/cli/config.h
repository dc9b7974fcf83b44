#ifndef UAP_CLI_CONFIG_H_
#define UAP_CLI_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace uap::cli {

enum class KeyType { kString, kInt, kUint, kDouble, kBool, kDoubleList, kStringList };

struct KeyDef {
  std::string_view name;
  KeyType type;
  std::string_view default_value;
  std::string_view help;
};

// Every accepted key with its type and default.
const std::vector<KeyDef>& KnownKeys();

// Experiment config: "key = value" lines with dotted keys, '#' comments.
// Unknown keys and values that do not parse as the key's type are rejected
// when the config is loaded, before any command does work.
class Config {
 public:
  static Config Parse(const std::string& text);
  static Config Load(const std::filesystem::path& path);

  // "key=value" override from the command line.
  void Override(const std::string& assignment);
  void Set(const std::string& key, const std::string& value);

  bool Has(const std::string& key) const { return values_.count(key) != 0; }
  std::string GetString(const std::string& key) const;
  std::int64_t GetInt(const std::string& key) const;
  std::uint64_t GetUint(const std::string& key) const;
  double GetDouble(const std::string& key) const;
  bool GetBool(const std::string& key) const;
  std::vector<double> GetDoubleList(const std::string& key) const;
  std::vector<std::string> GetStringList(const std::string& key) const;

  // Explicit values merged over defaults, sorted by key.
  std::map<std::string, std::string> Resolved() const;

 private:
  std::string Raw(const std::string& key) const;
  std::map<std::string, std::string> values_;
};

}  // namespace uap::cli

#endif  // UAP_CLI_CONFIG_H_
