#pragma once

#include "mvbcf/common.hpp"

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mvbcf {

/// Numeric split: rows with x[variable] < cutpoint go left.
struct SplitRule {
  int variable = 0;
  double cutpoint = 0.0;

  bool goes_left(double value) const { return value < cutpoint; }
  friend bool operator==(const SplitRule&, const SplitRule&) = default;
};

struct TreePriorConfig {
  double alpha = 0.95;
  double beta = 2.0;
};

/// Minimum number of training rows per leaf.
inline constexpr int kMinLeafSize = 5;

/// Binary tree with vector-valued leaves. Nodes live in a flat array; node 0 is
/// the root. Leaf ordinals follow depth-first (left before right) order.
class Tree {
 public:
  struct Node {
    int parent = -1;
    int left = -1;
    int right = -1;
    int depth = 0;
    SplitRule rule;
    Vector leaf;

    bool is_leaf() const { return left < 0; }
  };

  Tree() : Tree(1) {}
  explicit Tree(int leaf_dim);

  int leaf_dim() const { return leaf_dim_; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[id]; }
  Node& node(int id) { return nodes_[id]; }

  /// Node ids of leaves in depth-first order; position = leaf ordinal.
  std::vector<int> leaves() const;
  std::vector<int> internal_nodes() const;
  /// Internal nodes whose two children are both leaves.
  std::vector<int> prunable_nodes() const;
  /// (parent, child) pairs where both are internal.
  std::vector<std::pair<int, int>> swappable_pairs() const;
  int num_leaves() const;
  int max_depth() const;

  /// Turns leaf `id` into an internal node with two zero-valued leaves.
  void split(int id, SplitRule rule);
  /// Collapses internal node `id` (whose children are leaves) into a zero leaf.
  void prune(int id);

  /// Leaf node id reached by a row accessor `value(variable)`.
  template <class ValueFn>
  int find_leaf(ValueFn&& value) const {
    int id = 0;
    while (!nodes_[id].is_leaf()) {
      const Node& n = nodes_[id];
      id = n.rule.goes_left(value(n.rule.variable)) ? n.left : n.right;
    }
    return id;
  }

  /// Leaf value for row `row` of `X`.
  const Vector& predict_row(const Matrix& X, Eigen::Index row) const {
    return nodes_[find_leaf([&](int v) { return X(row, v); })].leaf;
  }

  void set_leaf_values(std::span<const Vector> values);

  /// Self-describing nested text: `(s var cut LEFT RIGHT)` / `(l v1 ... vp)`.
  std::string serialize() const;
  static Tree deserialize(std::string_view text, int leaf_dim);

  friend bool operator==(const Tree& a, const Tree& b);

 private:
  void compact();

  int leaf_dim_;
  std::vector<Node> nodes_;
};

/// Sorted distinct observed values per covariate column; split candidates.
class CutGrid {
 public:
  CutGrid() = default;
  explicit CutGrid(const Matrix& X);

  int num_variables() const { return static_cast<int>(values_.size()); }
  const std::vector<double>& cuts(int variable) const { return values_[variable]; }

 private:
  std::vector<std::vector<double>> values_;
};

/// Leaf ordinal of every row of X.
std::vector<int> partition(const Tree& tree, const Matrix& X);

/// Sum over leaves of log(1 - alpha (1+d)^-beta) plus, over internal nodes,
/// log(alpha) - beta log(1+d).
double log_tree_prior(const Tree& tree, const TreePriorConfig& prior);

enum class MoveKind { Grow, Prune, Change, Swap };
const char* to_string(MoveKind kind);

struct MoveWeights {
  double grow = 0.25;
  double prune = 0.25;
  double change = 0.4;
  double swap = 0.1;
};

struct MoveProposal {
  MoveKind kind = MoveKind::Grow;
  Tree new_tree;
  /// log q(T | T') - log q(T' | T).
  double log_transition_ratio = 0.0;
  /// Partition of the training rows under `new_tree`.
  std::vector<int> leaf_of_row;
};

/// Draws one structural move. Infeasible move kinds are excluded by
/// renormalising the weights. Returns nullopt when the drawn proposal leaves a
/// leaf with fewer than `min_leaf_size` rows; callers treat it as a rejection.
std::optional<MoveProposal> propose_move(const Tree& tree, const Matrix& X, const CutGrid& grid,
                                         Rng& rng, const MoveWeights& weights = {},
                                         int min_leaf_size = kMinLeafSize);

/// Per-leaf sufficient statistics for residual rows R (n x p) and, for
/// treatment-effect trees, indicator rows Z (n x p).
struct LeafStats {
  int count = 0;
  Vector sum;         // sum_i R_i
  Matrix outer;       // sum_i R_i R_i^T
  Matrix ztz;         // sum_i Z_i Z_i^T
  Matrix zr;          // sum_i Z_i R_i^T
  bool has_treatment = false;
};

std::vector<LeafStats> leaf_suffstats(std::span<const int> leaf_of_row, int num_leaves,
                                      const Matrix& residuals, const Matrix* Z = nullptr);
std::vector<LeafStats> leaf_suffstats(const Tree& tree, const Matrix& X, const Matrix& residuals,
                                      const Matrix* Z = nullptr);

/// One Metropolis-Hastings structure update. `log_marginal(tree, leaf_of_row)`
/// returns the integrated likelihood of the current residuals. On acceptance
/// `tree` and `leaf_of_row` are replaced. Leaf values are left to the caller.
template <class LogMarginal>
bool mh_structure_step(Tree& tree, std::vector<int>& leaf_of_row, const Matrix& X,
                       const CutGrid& grid, const TreePriorConfig& prior, Rng& rng,
                       LogMarginal&& log_marginal, const MoveWeights& weights = {}) {
  auto proposal = propose_move(tree, X, grid, rng, weights);
  if (!proposal) return false;
  const double log_ratio = log_tree_prior(proposal->new_tree, prior) - log_tree_prior(tree, prior) +
                           log_marginal(proposal->new_tree, proposal->leaf_of_row) -
                           log_marginal(tree, leaf_of_row) + proposal->log_transition_ratio;
  if (!std::isfinite(log_ratio) && !(log_ratio < 0)) {
    throw Error(ErrorKind::ViolatedInvariant, "non-finite Metropolis-Hastings log ratio");
  }
  if (std::log(rng.uniform()) < log_ratio) {
    tree = std::move(proposal->new_tree);
    leaf_of_row = std::move(proposal->leaf_of_row);
    return true;
  }
  return false;
}

}  // namespace mvbcf
