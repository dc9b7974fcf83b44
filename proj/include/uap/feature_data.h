#ifndef UAP_FEATURE_DATA_H_
#define UAP_FEATURE_DATA_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

namespace uap {

enum class FeatureKind : std::uint8_t { kBinary, kContinuous };

// Describes the feature space every vector, dataset and model is tied to.
struct FeatureSpaceSpec {
  std::size_t n_features = 0;
  std::vector<FeatureKind> feature_kinds;
  std::vector<std::string> feature_groups;

  // Throws kInvalidArgument when the per-feature tables do not match
  // n_features or a group label is empty.
  void Validate() const;

  bool IsBinary(std::size_t index) const {
    return feature_kinds[index] == FeatureKind::kBinary;
  }

  static FeatureSpaceSpec AllBinary(std::size_t n_features,
                                    const std::string& group = "binary");

  bool operator==(const FeatureSpaceSpec&) const = default;
};

using SpecPtr = std::shared_ptr<const FeatureSpaceSpec>;

SpecPtr MakeSpec(FeatureSpaceSpec spec);

// True when both pointers name the same space, either by identity or by
// identical contents.
bool SameSpace(const SpecPtr& a, const SpecPtr& b);

// Sparse feature vector. Entries are kept sorted by index and only non-zero
// values are stored, so an absent index means 0.
class FeatureVector {
 public:
  struct Entry {
    std::uint32_t index;
    double value;
    bool operator==(const Entry&) const = default;
  };

  FeatureVector() = default;
  explicit FeatureVector(SpecPtr spec);
  // Entries may be in any order; duplicates and zero values are rejected or
  // dropped respectively.
  FeatureVector(SpecPtr spec, std::vector<Entry> entries);

  // Convenience for binary spaces: sets every listed index to 1.
  static FeatureVector FromIndices(SpecPtr spec,
                                   std::span<const std::uint32_t> indices);

  const FeatureSpaceSpec& spec() const { return *spec_; }
  const SpecPtr& spec_ptr() const { return spec_; }
  std::size_t n_features() const { return spec_ ? spec_->n_features : 0; }

  double Get(std::size_t index) const;
  // Setting 0 removes the entry. Binary features accept only 0 or 1.
  void Set(std::size_t index, double value);

  std::span<const Entry> entries() const { return entries_; }
  std::size_t nnz() const { return entries_.size(); }

  std::vector<double> ToDense() const;

  // Compares values only; callers check the space separately.
  bool operator==(const FeatureVector& other) const {
    return entries_ == other.entries_;
  }

 private:
  SpecPtr spec_;
  std::vector<Entry> entries_;
};

// Hamming-style distance: number of indices whose values differ.
std::size_t l0_distance(const FeatureVector& a, const FeatureVector& b);

enum Label : int { kBenign = 0, kMalware = 1 };

class LabeledDataset {
 public:
  LabeledDataset() = default;
  explicit LabeledDataset(SpecPtr spec) : spec_(std::move(spec)) {}

  // Rejects duplicate ids, labels outside {0,1}, and vectors from another
  // space.
  void Add(FeatureVector x, int label, std::string id);

  const SpecPtr& spec_ptr() const { return spec_; }
  const FeatureSpaceSpec& spec() const { return *spec_; }
  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }

  const std::vector<FeatureVector>& examples() const { return examples_; }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<std::string>& ids() const { return ids_; }

  const FeatureVector& example(std::size_t i) const { return examples_[i]; }
  int label(std::size_t i) const { return labels_[i]; }

  std::size_t CountLabel(int label) const;
  LabeledDataset Subset(std::span<const std::size_t> indices) const;
  LabeledDataset FilterLabel(int label) const;

 private:
  SpecPtr spec_;
  std::vector<FeatureVector> examples_;
  std::vector<int> labels_;
  std::vector<std::string> ids_;
  std::unordered_set<std::string> id_set_;
};

struct SplitPlan {
  double train_fraction = 0.6;
  double exploration_fraction = 0.2;
  double test_fraction = 0.2;
  bool stratified = true;
  std::uint64_t seed = 0;

  void Validate() const;
};

struct DatasetSplit {
  LabeledDataset train;
  LabeledDataset exploration;
  LabeledDataset test;
};

// Allocates n items over the three fractions with the largest-remainder
// method; equal remainders go to the earlier split.
std::vector<std::size_t> AllocateLargestRemainder(
    std::size_t n, std::span<const double> fractions);

DatasetSplit make_split(const LabeledDataset& dataset, const SplitPlan& plan);

// Feature layout of synthesized data, in index order:
//   [0, g)            goodware-indicative binary features
//   [g, g+m)          malware-indicative binary features
//   [g+m, g+m+c)      continuous features
//   [g+m+c, n)        background binary features
// Goodware-indicative features fire with p_on_in_own_class on benign rows and
// p_on_in_other_class on malware rows; malware-indicative ones mirror that.
// Continuous features are uniform on a class-conditional range. Background
// features fire with p_background regardless of class.
struct SyntheticDatasetConfig {
  std::size_t n_features = 500;
  std::size_t n_benign = 2000;
  std::size_t n_malware = 2000;
  std::size_t n_goodware_indicative = 40;
  std::size_t n_malware_indicative = 40;
  double p_on_in_own_class = 0.8;
  double p_on_in_other_class = 0.02;
  // Malware-indicative features use their own pair when set (>= 0); this lets
  // the goodware side be strong while malware evidence stays weak.
  double malware_p_on_in_own_class = -1.0;
  double malware_p_on_in_other_class = -1.0;
  std::size_t n_continuous = 0;
  double benign_continuous_lo = 0.0;
  double benign_continuous_hi = 0.6;
  double malware_continuous_lo = 0.4;
  double malware_continuous_hi = 1.0;
  double p_background = 0.01;
  std::uint64_t seed = 0;

  void Validate() const;
  double MalwareOwnP() const {
    return malware_p_on_in_own_class >= 0 ? malware_p_on_in_own_class
                                          : p_on_in_own_class;
  }
  double MalwareOtherP() const {
    return malware_p_on_in_other_class >= 0 ? malware_p_on_in_other_class
                                            : p_on_in_other_class;
  }
};

// Fraction of rows with the given label where each feature is non-zero.
std::vector<double> FeatureFrequencies(const LabeledDataset& dataset, int label);

FeatureSpaceSpec SyntheticSpec(const SyntheticDatasetConfig& cfg);
LabeledDataset synthesize_dataset(const SyntheticDatasetConfig& cfg);

// Sparse text format: one example per line, "<label> idx:value ...", indices
// 0-based and strictly increasing, '#' lines are comments.
LabeledDataset load_sparse_dataset(const std::filesystem::path& path,
                                   const SpecPtr& spec);
LabeledDataset parse_sparse_dataset(const std::string& text,
                                    const SpecPtr& spec);
// Canonical form: no comments, binary values written as 1, continuous values
// with 17 significant digits.
std::string format_sparse_dataset(const LabeledDataset& dataset);
void save_sparse_dataset(const LabeledDataset& dataset,
                         const std::filesystem::path& path);

// Sidecar spec file, key=value lines:
//   n_features=<n>
//   feature_kinds=binary*480,continuous*20
//   feature_groups=api_calls*300,activities*200
// Both per-feature tables are run-length encoded as <value>*<count> items.
std::string format_spec_file(const FeatureSpaceSpec& spec);
FeatureSpaceSpec parse_spec_file(const std::string& text);
FeatureSpaceSpec load_spec_file(const std::filesystem::path& path);
void save_spec_file(const FeatureSpaceSpec& spec,
                    const std::filesystem::path& path);

// Reads a whole file; throws kIo on failure.
std::string ReadFile(const std::filesystem::path& path);
// Writes via a temporary sibling and rename so readers never see a partial
// file.
void WriteFileAtomic(const std::filesystem::path& path,
                     const std::string& contents);

}  // namespace uap

#endif  // UAP_FEATURE_DATA_H_
