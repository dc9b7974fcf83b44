#include <algorithm>
#include <cmath>
#include <limits>

#include "uap/common.h"
#include "uap/models.h"

namespace uap {

double DecisionTree::Predict(const FeatureVector& x) const {
  if (nodes.empty()) return 0.0;
  int n = 0;
  while (!nodes[static_cast<std::size_t>(n)].is_leaf()) {
    const TreeNode& node = nodes[static_cast<std::size_t>(n)];
    n = x.Get(static_cast<std::size_t>(node.feature)) <= node.threshold
            ? node.left
            : node.right;
  }
  return nodes[static_cast<std::size_t>(n)].value;
}

std::size_t DecisionTree::LeafCount() const {
  return static_cast<std::size_t>(std::count_if(
      nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

TreeEnsembleModel::TreeEnsembleModel(std::size_t n_features, double base_score,
                                     double shrinkage, std::size_t max_leaves,
                                     std::vector<DecisionTree> trees)
    : n_features_(n_features),
      base_score_(base_score),
      shrinkage_(shrinkage),
      max_leaves_(max_leaves),
      trees_(std::move(trees)) {
  Require(n_features_ > 0, ErrorCode::kInvalidArgument,
          "tree ensemble needs n_features > 0");
  Require(std::isfinite(base_score_), ErrorCode::kNumerical,
          "base score must be finite");
  for (const auto& t : trees_) {
    Require(t.LeafCount() <= max_leaves_, ErrorCode::kInvalidArgument,
            "tree exceeds max_leaves");
    for (const auto& node : t.nodes) {
      Require(std::isfinite(node.threshold) && std::isfinite(node.value),
              ErrorCode::kNumerical, "tree parameters must be finite");
      if (!node.is_leaf()) {
        Require(static_cast<std::size_t>(node.feature) < n_features_ &&
                    node.left > 0 && node.right > 0 &&
                    static_cast<std::size_t>(node.left) < t.nodes.size() &&
                    static_cast<std::size_t>(node.right) < t.nodes.size(),
                ErrorCode::kInvalidArgument, "malformed tree node");
      }
    }
  }
}

double TreeEnsembleModel::RawScore(const FeatureVector& x) const {
  CheckSpace(x);
  double raw = base_score_;
  for (const auto& t : trees_) raw += t.Predict(x);
  return raw;
}

double TreeEnsembleModel::Score(const FeatureVector& x) const {
  return Sigmoid(RawScore(x));
}

std::unique_ptr<Classifier> TreeEnsembleModel::Clone() const {
  return std::make_unique<TreeEnsembleModel>(*this);
}

void GbdtConfig::Validate() const {
  Require(max_leaves >= 1, ErrorCode::kInvalidArgument, "max_leaves must be >= 1");
  Require(shrinkage > 0.0 && std::isfinite(shrinkage),
          ErrorCode::kInvalidArgument, "shrinkage must be > 0");
  Require(min_samples_leaf >= 1, ErrorCode::kInvalidArgument,
          "min_samples_leaf must be >= 1");
  Require(l2_leaf >= 0.0 && min_sum_hessian >= 0.0,
          ErrorCode::kInvalidArgument, "regularisers must be non-negative");
}

namespace {

struct ColumnEntry {
  std::uint32_t row;
  double value;
};

struct Stats {
  double g = 0.0;
  double h = 0.0;
  std::size_t count = 0;

  void Add(double gi, double hi) {
    g += gi;
    h += hi;
    ++count;
  }
};

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
  bool valid() const { return feature >= 0; }
};

// Builds one tree on fixed gradients. Columns hold the non-zero entries of
// every feature sorted by value; zero-valued rows of a node are accounted for
// as one block using the node totals.
class TreeGrower {
 public:
  TreeGrower(const GbdtConfig& cfg,
             const std::vector<std::vector<ColumnEntry>>& columns,
             std::size_t n_rows)
      : cfg_(cfg), columns_(columns), row_leaf_(n_rows, 0) {}

  DecisionTree Grow(const std::vector<double>& grad,
                    const std::vector<double>& hess,
                    std::vector<int>& row_node) {
    grad_ = &grad;
    hess_ = &hess;
    DecisionTree tree;
    tree.nodes.push_back(TreeNode{});
    std::fill(row_leaf_.begin(), row_leaf_.end(), 0);
    Stats root;
    for (std::size_t r = 0; r < grad.size(); ++r) root.Add(grad[r], hess[r]);

    struct Leaf {
      int node;
      Stats stats;
      SplitCandidate split;
    };
    std::vector<Leaf> leaves{{0, root, BestSplit(0, root)}};

    while (leaves.size() < cfg_.max_leaves) {
      std::size_t best = leaves.size();
      for (std::size_t i = 0; i < leaves.size(); ++i) {
        if (!leaves[i].split.valid()) continue;
        if (best == leaves.size() || leaves[i].split.gain > leaves[best].split.gain)
          best = i;
      }
      if (best == leaves.size()) break;

      const Leaf parent = leaves[best];
      const int left = static_cast<int>(tree.nodes.size());
      const int right = left + 1;
      tree.nodes.push_back(TreeNode{});
      tree.nodes.push_back(TreeNode{});
      TreeNode& pnode = tree.nodes[static_cast<std::size_t>(parent.node)];
      pnode.feature = parent.split.feature;
      pnode.threshold = parent.split.threshold;
      pnode.left = left;
      pnode.right = right;

      // Rows default left (value 0 <= threshold iff threshold >= 0), then the
      // non-zero entries of the split column are routed explicitly.
      const bool zero_goes_left = 0.0 <= parent.split.threshold;
      Stats ls, rs;
      for (std::size_t r = 0; r < row_leaf_.size(); ++r) {
        if (row_leaf_[r] != parent.node) continue;
        row_leaf_[r] = zero_goes_left ? left : right;
      }
      for (const auto& e : columns_[static_cast<std::size_t>(parent.split.feature)]) {
        if (row_leaf_[e.row] != left && row_leaf_[e.row] != right) continue;
        row_leaf_[e.row] = e.value <= parent.split.threshold ? left : right;
      }
      for (std::size_t r = 0; r < row_leaf_.size(); ++r) {
        if (row_leaf_[r] == left) ls.Add(grad[r], hess[r]);
        else if (row_leaf_[r] == right) rs.Add(grad[r], hess[r]);
      }
      leaves[best] = {left, ls, BestSplit(left, ls)};
      leaves.push_back({right, rs, BestSplit(right, rs)});
    }

    for (const auto& leaf : leaves) {
      tree.nodes[static_cast<std::size_t>(leaf.node)].value =
          cfg_.shrinkage * LeafValue(leaf.stats);
    }
    row_node = row_leaf_;
    return tree;
  }

 private:
  double LeafValue(const Stats& s) const {
    const double denom = s.h + cfg_.l2_leaf;
    return denom > 0 ? -s.g / denom : 0.0;
  }

  double Objective(double g, double h) const {
    const double denom = h + cfg_.l2_leaf;
    return denom > 0 ? g * g / denom : 0.0;
  }

  bool Admissible(const Stats& s) const {
    return s.count >= cfg_.min_samples_leaf && s.h >= cfg_.min_sum_hessian;
  }

  SplitCandidate BestSplit(int node, const Stats& total) {
    SplitCandidate best;
    if (total.count < 2 * cfg_.min_samples_leaf) return best;
    const double parent_obj = Objective(total.g, total.h);
    for (std::size_t f = 0; f < columns_.size(); ++f) {
      // Non-zero entries of this node, already ordered by value.
      buffer_.clear();
      Stats nonzero;
      for (const auto& e : columns_[f]) {
        if (row_leaf_[e.row] != node) continue;
        buffer_.push_back(e);
        nonzero.Add((*grad_)[e.row], (*hess_)[e.row]);
      }
      Stats zero{total.g - nonzero.g, total.h - nonzero.h,
                 total.count - nonzero.count};

      // Walk distinct values in ascending order, inserting the zero block
      // between negative and positive entries.
      Stats left;
      bool zero_done = zero.count == 0;
      double prev_value = 0.0;
      bool have_prev = false;
      auto consider = [&](double next_value) {
        if (!have_prev) return;
        const Stats right{total.g - left.g, total.h - left.h,
                          total.count - left.count};
        if (!Admissible(left) || !Admissible(right)) return;
        const double gain =
            Objective(left.g, left.h) + Objective(right.g, right.h) - parent_obj;
        if (gain > best.gain + 1e-12) {
          best.gain = gain;
          best.feature = static_cast<int>(f);
          best.threshold = prev_value + (next_value - prev_value) / 2.0;
          if (!(best.threshold < next_value)) best.threshold = prev_value;
        }
      };
      std::size_t i = 0;
      while (i < buffer_.size() || !zero_done) {
        double value;
        if (!zero_done && (i == buffer_.size() || buffer_[i].value > 0.0)) {
          value = 0.0;
          consider(value);
          left.g += zero.g;
          left.h += zero.h;
          left.count += zero.count;
          zero_done = true;
        } else {
          value = buffer_[i].value;
          consider(value);
          while (i < buffer_.size() && buffer_[i].value == value) {
            left.Add((*grad_)[buffer_[i].row], (*hess_)[buffer_[i].row]);
            ++i;
          }
        }
        prev_value = value;
        have_prev = true;
      }
    }
    return best;
  }

  const GbdtConfig& cfg_;
  const std::vector<std::vector<ColumnEntry>>& columns_;
  std::vector<int> row_leaf_;
  std::vector<ColumnEntry> buffer_;
  const std::vector<double>* grad_ = nullptr;
  const std::vector<double>* hess_ = nullptr;
};

}  // namespace

TreeEnsembleModel train_gbdt(const LabeledDataset& train,
                             const GbdtConfig& cfg) {
  cfg.Validate();
  Require(!train.empty(), ErrorCode::kInvalidArgument, "empty training set");
  const std::size_t n_pos = train.CountLabel(kMalware);
  const std::size_t n_rows = train.size();
  Require(n_pos > 0 && n_pos < n_rows, ErrorCode::kInvalidArgument,
          "training data must contain both classes");
  const std::size_t n_features = train.spec().n_features;

  std::vector<std::vector<ColumnEntry>> columns(n_features);
  for (std::size_t r = 0; r < n_rows; ++r) {
    for (const auto& e : train.example(r).entries())
      columns[e.index].push_back({static_cast<std::uint32_t>(r), e.value});
  }
  for (auto& col : columns) {
    std::stable_sort(col.begin(), col.end(),
                     [](const ColumnEntry& a, const ColumnEntry& b) {
                       return a.value < b.value;
                     });
  }

  const double prior = static_cast<double>(n_pos) / static_cast<double>(n_rows);
  const double base = std::log(prior / (1.0 - prior));
  std::vector<double> raw(n_rows, base), grad(n_rows), hess(n_rows);
  std::vector<int> row_node;
  std::vector<DecisionTree> trees;
  TreeGrower grower(cfg, columns, n_rows);
  for (std::size_t t = 0; t < cfg.n_trees; ++t) {
    for (std::size_t r = 0; r < n_rows; ++r) {
      const double p = Sigmoid(raw[r]);
      grad[r] = p - train.label(r);
      hess[r] = p * (1.0 - p);
    }
    DecisionTree tree = grower.Grow(grad, hess, row_node);
    for (std::size_t r = 0; r < n_rows; ++r)
      raw[r] += tree.nodes[static_cast<std::size_t>(row_node[r])].value;
    trees.push_back(std::move(tree));
  }
  return TreeEnsembleModel(n_features, base, cfg.shrinkage, cfg.max_leaves,
                           std::move(trees));
}

}  // namespace uap
