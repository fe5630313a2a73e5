#include "mvbcf/tree.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>

namespace mvbcf {

Tree::Tree(int leaf_dim) : leaf_dim_(leaf_dim) {
  if (leaf_dim < 1) throw Error(ErrorKind::InvalidParameter, "leaf dimension must be positive");
  Node root;
  root.leaf = Vector::Zero(leaf_dim);
  nodes_.push_back(std::move(root));
}

std::vector<int> Tree::leaves() const {
  std::vector<int> out;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    if (nodes_[id].is_leaf()) {
      out.push_back(id);
    } else {
      stack.push_back(nodes_[id].right);
      stack.push_back(nodes_[id].left);
    }
  }
  return out;
}

std::vector<int> Tree::internal_nodes() const {
  std::vector<int> out;
  for (int id = 0; id < num_nodes(); ++id) {
    if (!nodes_[id].is_leaf()) out.push_back(id);
  }
  return out;
}

std::vector<int> Tree::prunable_nodes() const {
  std::vector<int> out;
  for (int id = 0; id < num_nodes(); ++id) {
    const Node& n = nodes_[id];
    if (!n.is_leaf() && nodes_[n.left].is_leaf() && nodes_[n.right].is_leaf()) out.push_back(id);
  }
  return out;
}

std::vector<std::pair<int, int>> Tree::swappable_pairs() const {
  std::vector<std::pair<int, int>> out;
  for (int id = 0; id < num_nodes(); ++id) {
    const Node& n = nodes_[id];
    if (n.is_leaf()) continue;
    if (!nodes_[n.left].is_leaf()) out.emplace_back(id, n.left);
    if (!nodes_[n.right].is_leaf()) out.emplace_back(id, n.right);
  }
  return out;
}

int Tree::num_leaves() const {
  return static_cast<int>(std::count_if(nodes_.begin(), nodes_.end(),
                                        [](const Node& n) { return n.is_leaf(); }));
}

int Tree::max_depth() const {
  int depth = 0;
  for (const Node& n : nodes_) depth = std::max(depth, n.depth);
  return depth;
}

void Tree::split(int id, SplitRule rule) {
  if (!nodes_[id].is_leaf()) throw Error(ErrorKind::ViolatedInvariant, "split on internal node");
  const int depth = nodes_[id].depth + 1;
  for (int side = 0; side < 2; ++side) {
    Node child;
    child.parent = id;
    child.depth = depth;
    child.leaf = Vector::Zero(leaf_dim_);
    nodes_.push_back(std::move(child));
  }
  Node& n = nodes_[id];
  n.left = num_nodes() - 2;
  n.right = num_nodes() - 1;
  n.rule = rule;
  n.leaf = Vector();
}

void Tree::prune(int id) {
  Node& n = nodes_[id];
  if (n.is_leaf() || !nodes_[n.left].is_leaf() || !nodes_[n.right].is_leaf()) {
    throw Error(ErrorKind::ViolatedInvariant, "prune needs an internal node with two leaf children");
  }
  nodes_[n.left].parent = -2;  // detached
  nodes_[n.right].parent = -2;
  n.left = n.right = -1;
  n.rule = SplitRule{};
  n.leaf = Vector::Zero(leaf_dim_);
  compact();
}

void Tree::compact() {
  std::vector<Node> kept;
  kept.reserve(nodes_.size());
  // Pre-order copy keeps the root at 0 and renumbers children.
  std::function<int(int, int)> copy = [&](int id, int parent) -> int {
    const int new_id = static_cast<int>(kept.size());
    kept.push_back(nodes_[id]);
    kept[new_id].parent = parent;
    if (!nodes_[id].is_leaf()) {
      const int left = copy(nodes_[id].left, new_id);
      const int right = copy(nodes_[id].right, new_id);
      kept[new_id].left = left;
      kept[new_id].right = right;
    }
    return new_id;
  };
  copy(0, -1);
  nodes_ = std::move(kept);
}

void Tree::set_leaf_values(std::span<const Vector> values) {
  const std::vector<int> ids = leaves();
  if (values.size() != ids.size()) throw Error(ErrorKind::Shape, "leaf value count mismatch");
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (values[k].size() != leaf_dim_) throw Error(ErrorKind::Shape, "leaf value dimension mismatch");
    nodes_[ids[k]].leaf = values[k];
  }
}

namespace {

void append_number(std::string& out, double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  out.append(buf, res.ptr);
}

class TreeParser {
 public:
  TreeParser(std::string_view text, int leaf_dim) : text_(text), leaf_dim_(leaf_dim) {}

  Tree parse() {
    Tree tree(leaf_dim_);
    parse_node(tree, 0);
    skip_space();
    if (pos_ != text_.size()) fail("trailing characters");
    return tree;
  }

 private:
  void parse_node(Tree& tree, int id) {
    expect('(');
    skip_space();
    if (pos_ >= text_.size()) fail("unexpected end");
    const char tag = text_[pos_++];
    if (tag == 'l') {
      Vector leaf(leaf_dim_);
      for (int k = 0; k < leaf_dim_; ++k) leaf(k) = number();
      tree.node(id).leaf = leaf;
    } else if (tag == 's') {
      SplitRule rule;
      rule.variable = static_cast<int>(number());
      rule.cutpoint = number();
      tree.split(id, rule);
      const int left = tree.node(id).left;
      const int right = tree.node(id).right;
      parse_node(tree, left);
      parse_node(tree, right);
    } else {
      fail("unknown node tag");
    }
    expect(')');
  }

  double number() {
    skip_space();
    double value = 0.0;
    auto res = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), value);
    if (res.ec != std::errc()) fail("bad number");
    pos_ = static_cast<std::size_t>(res.ptr - text_.data());
    return value;
  }

  void expect(char c) {
    skip_space();
    if (pos_ >= text_.size() || text_[pos_] != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorKind::Parse, "tree text at offset " + std::to_string(pos_) + ": " + what);
  }

  std::string_view text_;
  int leaf_dim_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string Tree::serialize() const {
  std::string out;
  std::function<void(int)> emit = [&](int id) {
    const Node& n = nodes_[id];
    if (n.is_leaf()) {
      out += "(l";
      for (int k = 0; k < leaf_dim_; ++k) {
        out += ' ';
        append_number(out, n.leaf(k));
      }
      out += ')';
    } else {
      out += "(s ";
      out += std::to_string(n.rule.variable);
      out += ' ';
      append_number(out, n.rule.cutpoint);
      out += ' ';
      emit(n.left);
      out += ' ';
      emit(n.right);
      out += ')';
    }
  };
  emit(0);
  return out;
}

Tree Tree::deserialize(std::string_view text, int leaf_dim) {
  return TreeParser(text, leaf_dim).parse();
}

// Structural: same rules and leaf values reached by the same paths,
// regardless of node storage order.
bool operator==(const Tree& a, const Tree& b) {
  if (a.leaf_dim_ != b.leaf_dim_ || a.nodes_.size() != b.nodes_.size()) return false;
  std::vector<std::pair<int, int>> stack{{0, 0}};
  while (!stack.empty()) {
    const auto [i, j] = stack.back();
    stack.pop_back();
    const Tree::Node& x = a.nodes_[i];
    const Tree::Node& y = b.nodes_[j];
    if (x.is_leaf() != y.is_leaf()) return false;
    if (x.is_leaf()) {
      if (x.leaf != y.leaf) return false;
      continue;
    }
    if (!(x.rule == y.rule)) return false;
    stack.emplace_back(x.left, y.left);
    stack.emplace_back(x.right, y.right);
  }
  return true;
}

CutGrid::CutGrid(const Matrix& X) : values_(static_cast<std::size_t>(X.cols())) {
  for (Eigen::Index v = 0; v < X.cols(); ++v) {
    std::vector<double>& cuts = values_[static_cast<std::size_t>(v)];
    cuts.assign(X.col(v).data(), X.col(v).data() + X.rows());
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  }
}

std::vector<int> partition(const Tree& tree, const Matrix& X) {
  std::vector<int> ordinal(static_cast<std::size_t>(tree.num_nodes()), -1);
  const std::vector<int> leaf_ids = tree.leaves();
  for (std::size_t k = 0; k < leaf_ids.size(); ++k) ordinal[leaf_ids[k]] = static_cast<int>(k);
  std::vector<int> out(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    out[i] = ordinal[tree.find_leaf([&](int v) { return X(i, v); })];
  }
  return out;
}

double log_tree_prior(const Tree& tree, const TreePriorConfig& prior) {
  double total = 0.0;
  for (int id = 0; id < tree.num_nodes(); ++id) {
    const auto& n = tree.node(id);
    const double depth_term = std::pow(1.0 + n.depth, -prior.beta);
    if (n.is_leaf()) {
      total += std::log1p(-prior.alpha * depth_term);
    } else {
      total += std::log(prior.alpha) - prior.beta * std::log1p(static_cast<double>(n.depth));
    }
  }
  return total;
}

const char* to_string(MoveKind kind) {
  switch (kind) {
    case MoveKind::Grow: return "grow";
    case MoveKind::Prune: return "prune";
    case MoveKind::Change: return "change";
    case MoveKind::Swap: return "swap";
  }
  return "unknown";
}

namespace {

struct FeasibleMoves {
  double grow = 0, prune = 0, change = 0, swap = 0;

  FeasibleMoves(const Tree& tree, const MoveWeights& w) {
    grow = w.grow;
    if (tree.num_nodes() > 1) {
      prune = w.prune;
      change = w.change;
      if (!tree.swappable_pairs().empty()) swap = w.swap;
    }
  }
  double total() const { return grow + prune + change + swap; }
  double log_prob(MoveKind kind) const {
    const double w = kind == MoveKind::Grow     ? grow
                     : kind == MoveKind::Prune  ? prune
                     : kind == MoveKind::Change ? change
                                                : swap;
    return std::log(w / total());
  }
};

SplitRule draw_rule(const CutGrid& grid, Rng& rng) {
  SplitRule rule;
  rule.variable = static_cast<int>(rng.index(static_cast<std::size_t>(grid.num_variables())));
  const auto& cuts = grid.cuts(rule.variable);
  rule.cutpoint = cuts[rng.index(cuts.size())];
  return rule;
}


}  // namespace

std::optional<MoveProposal> propose_move(const Tree& tree, const Matrix& X, const CutGrid& grid,
                                         Rng& rng, const MoveWeights& weights, int min_leaf_size) {
  if (grid.num_variables() == 0) throw Error(ErrorKind::Configuration, "no split covariates");
  const FeasibleMoves forward(tree, weights);
  if (!(forward.total() > 0.0)) return std::nullopt;
  double u = rng.uniform() * forward.total();
  MoveKind kind = MoveKind::Swap;
  if ((u -= forward.grow) < 0) {
    kind = MoveKind::Grow;
  } else if ((u -= forward.prune) < 0) {
    kind = MoveKind::Prune;
  } else if ((u -= forward.change) < 0) {
    kind = MoveKind::Change;
  }
  if (kind == MoveKind::Swap && forward.swap == 0) kind = MoveKind::Change;  // rounding guard

  MoveProposal out;
  out.kind = kind;
  out.new_tree = tree;
  switch (kind) {
    case MoveKind::Grow: {
      const std::vector<int> leaf_ids = tree.leaves();
      const int id = leaf_ids[rng.index(leaf_ids.size())];
      out.new_tree.split(id, draw_rule(grid, rng));
      const FeasibleMoves backward(out.new_tree, weights);
      const double log_forward =
          forward.log_prob(MoveKind::Grow) - std::log(static_cast<double>(leaf_ids.size()));
      const double log_backward =
          backward.log_prob(MoveKind::Prune) -
          std::log(static_cast<double>(out.new_tree.prunable_nodes().size()));
      out.log_transition_ratio = log_backward - log_forward;
      break;
    }
    case MoveKind::Prune: {
      const std::vector<int> candidates = tree.prunable_nodes();
      const int id = candidates[rng.index(candidates.size())];
      out.new_tree.prune(id);
      const FeasibleMoves backward(out.new_tree, weights);
      const double log_forward =
          forward.log_prob(MoveKind::Prune) - std::log(static_cast<double>(candidates.size()));
      const double log_backward =
          backward.log_prob(MoveKind::Grow) - std::log(static_cast<double>(out.new_tree.num_leaves()));
      out.log_transition_ratio = log_backward - log_forward;
      break;
    }
    case MoveKind::Change: {
      const std::vector<int> internal = tree.internal_nodes();
      const int id = internal[rng.index(internal.size())];
      out.new_tree.node(id).rule = draw_rule(grid, rng);
      out.log_transition_ratio = 0.0;
      break;
    }
    case MoveKind::Swap: {
      const auto pairs = tree.swappable_pairs();
      const auto [parent, child] = pairs[rng.index(pairs.size())];
      std::swap(out.new_tree.node(parent).rule, out.new_tree.node(child).rule);
      out.log_transition_ratio = 0.0;
      break;
    }
  }

  out.leaf_of_row = partition(out.new_tree, X);
  std::vector<int> counts(static_cast<std::size_t>(out.new_tree.num_leaves()), 0);
  for (int k : out.leaf_of_row) ++counts[k];
  if (*std::min_element(counts.begin(), counts.end()) < min_leaf_size) return std::nullopt;
  return out;
}

std::vector<LeafStats> leaf_suffstats(std::span<const int> leaf_of_row, int num_leaves,
                                      const Matrix& residuals, const Matrix* Z) {
  const Eigen::Index n = residuals.rows();
  const Eigen::Index p = residuals.cols();
  if (static_cast<Eigen::Index>(leaf_of_row.size()) != n) {
    throw Error(ErrorKind::Shape, "residual rows do not align with the partition");
  }
  if (Z && (Z->rows() != n || Z->cols() != p)) {
    throw Error(ErrorKind::Shape, "treatment matrix shape differs from residuals");
  }
  std::vector<LeafStats> stats(static_cast<std::size_t>(num_leaves));
  for (LeafStats& s : stats) {
    s.sum = Vector::Zero(p);
    s.outer = Matrix::Zero(p, p);
    if (Z) {
      s.has_treatment = true;
      s.ztz = Matrix::Zero(p, p);
      s.zr = Matrix::Zero(p, p);
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    LeafStats& s = stats[leaf_of_row[i]];
    ++s.count;
    for (Eigen::Index a = 0; a < p; ++a) {
      const double ra = residuals(i, a);
      s.sum(a) += ra;
      for (Eigen::Index b = 0; b <= a; ++b) s.outer(a, b) += ra * residuals(i, b);
      if (Z) {
        const double za = (*Z)(i, a);
        if (za != 0.0) {
          for (Eigen::Index b = 0; b < p; ++b) {
            s.ztz(a, b) += za * (*Z)(i, b);
            s.zr(a, b) += za * residuals(i, b);
          }
        }
      }
    }
  }
  for (std::size_t k = 0; k < stats.size(); ++k) {
    LeafStats& s = stats[k];
    if (s.count == 0) {
      throw Error(ErrorKind::ViolatedInvariant, "leaf " + std::to_string(k) + " holds no rows");
    }
    s.outer.triangularView<Eigen::StrictlyUpper>() = s.outer.transpose();
  }
  return stats;
}

std::vector<LeafStats> leaf_suffstats(const Tree& tree, const Matrix& X, const Matrix& residuals,
                                      const Matrix* Z) {
  const std::vector<int> leaf_of_row = partition(tree, X);
  return leaf_suffstats(leaf_of_row, tree.num_leaves(), residuals, Z);
}

}  // namespace mvbcf
