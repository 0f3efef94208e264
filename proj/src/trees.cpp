#include "biparse/trees.hpp"

#include <algorithm>

namespace biparse {

namespace {

void collect_leaves(const CNode& node, std::vector<Token>& out) {
  if (node.is_leaf()) {
    out.push_back({node.word, node.label});
    return;
  }
  for (const CNode& c : node.children) collect_leaves(c, out);
}

// Returns the fencepost after the subtree rooted at `node` starting at `begin`.
int collect_spans(const CNode& node, int begin, std::vector<LabeledSpan>& out) {
  if (node.is_leaf()) return begin + 1;
  // Absorb unary chains of internal nodes.
  std::string label = node.label;
  const CNode* cur = &node;
  while (cur->children.size() == 1 && !cur->children[0].is_leaf()) {
    cur = &cur->children[0];
    label += "+" + cur->label;
  }
  int end = begin;
  for (const CNode& c : cur->children) end = collect_spans(c, end, out);
  out.push_back({begin, end, label});
  return end;
}

}  // namespace

Sentence tree_sentence(const ConstituentTree& tree) {
  Sentence s;
  collect_leaves(tree.root, s.tokens);
  return s;
}

std::vector<LabeledSpan> to_labeled_spans(const ConstituentTree& tree) {
  std::vector<LabeledSpan> spans;
  collect_spans(tree.root, 0, spans);
  std::sort(spans.begin(), spans.end());
  return spans;
}

bool is_valid_tree(const DependencyTree& tree) {
  const int n = tree.size();
  if (n == 0) return false;
  int roots = 0;
  for (int i = 0; i < n; ++i) {
    const int h = tree.heads[static_cast<size_t>(i)];
    if (h < 0 || h > n || h == i + 1) return false;
    if (h == 0) ++roots;
  }
  if (roots != 1) return false;
  // Acyclic: every token must reach ROOT within n steps.
  for (int i = 0; i < n; ++i) {
    int cur = i + 1;
    int steps = 0;
    while (cur != 0) {
      cur = tree.heads[static_cast<size_t>(cur - 1)];
      if (++steps > n) return false;
    }
  }
  return true;
}

bool validate_projective(const DependencyTree& tree) {
  const int n = tree.size();
  // Arcs as (lo, hi) endpoint pairs over positions 0..n.
  std::vector<std::pair<int, int>> arcs;
  arcs.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int d = i + 1;
    const int h = tree.heads[static_cast<size_t>(i)];
    arcs.emplace_back(std::min(h, d), std::max(h, d));
  }
  for (size_t a = 0; a < arcs.size(); ++a) {
    for (size_t b = a + 1; b < arcs.size(); ++b) {
      const auto [a1, a2] = arcs[a];
      const auto [b1, b2] = arcs[b];
      if ((a1 < b1 && b1 < a2 && a2 < b2) || (b1 < a1 && a1 < b2 && b2 < a2)) return false;
    }
  }
  return true;
}

bool binary_tree_less(const BinaryTree& a, const BinaryTree& b) {
  const size_t n = std::min(a.nodes.size(), b.nodes.size());
  for (size_t i = 0; i < n; ++i) {
    const BinaryNode& x = a.nodes[i];
    const BinaryNode& y = b.nodes[i];
    if (x.split != y.split) return x.split < y.split;
    if (x.label != y.label) return x.label < y.label;
  }
  return a.nodes.size() < b.nodes.size();
}

namespace {

// Bracketings of (begin, end) as preorder node lists, canonical order.
std::vector<std::vector<BinaryNode>> bracketings_of(int begin, int end) {
  std::vector<std::vector<BinaryNode>> out;
  if (end - begin == 1) {
    out.push_back({{begin, end, -1, 0}});
    return out;
  }
  for (int split = begin + 1; split < end; ++split) {
    const auto lefts = bracketings_of(begin, split);
    const auto rights = bracketings_of(split, end);
    for (const auto& l : lefts) {
      for (const auto& r : rights) {
        std::vector<BinaryNode> t;
        t.reserve(1 + l.size() + r.size());
        t.push_back({begin, end, split, 0});
        t.insert(t.end(), l.begin(), l.end());
        t.insert(t.end(), r.begin(), r.end());
        out.push_back(std::move(t));
      }
    }
  }
  return out;
}

}  // namespace

std::vector<std::vector<BinaryNode>> enumerate_bracketings(int n) {
  if (n < 1) throw Error("enumerate_bracketings: n must be >= 1");
  if (n > 8) throw Error("enumerate_bracketings: n > 8 not supported (Catalan growth)");
  return bracketings_of(0, n);
}

namespace {

// Assign labels to structure[pos...] recursively; canonical order is
// (split, label, left, right), which preorder label assignment respects.
void assign_labels(const std::vector<BinaryNode>& structure, size_t pos, int num_labels,
                   std::vector<BinaryNode>& current,
                   const std::function<void(const BinaryTree&)>& visit) {
  if (pos == structure.size()) {
    BinaryTree t;
    t.nodes = current;
    visit(t);
    return;
  }
  const bool is_root = pos == 0;
  for (int label = is_root ? 1 : 0; label < num_labels; ++label) {
    current[pos].label = label;
    assign_labels(structure, pos + 1, num_labels, current, visit);
  }
}

}  // namespace

void enumerate_constituent_trees(int n, int num_labels,
                                 const std::function<void(const BinaryTree&)>& visit) {
  if (n > 8) throw Error("enumerate_constituent_trees: n > 8 not supported (Catalan growth)");
  if (num_labels < 2) throw Error("enumerate_constituent_trees: need the empty label plus one");
  for (const auto& structure : enumerate_bracketings(n)) {
    std::vector<BinaryNode> current = structure;
    assign_labels(structure, 0, num_labels, current, visit);
  }
}

std::vector<std::vector<int>> enumerate_projective_trees(int n) {
  if (n < 1) throw Error("enumerate_projective_trees: n must be >= 1");
  if (n > 7) throw Error("enumerate_projective_trees: n > 7 not supported");
  std::vector<std::vector<int>> out;
  std::vector<int> heads(static_cast<size_t>(n), 0);
  DependencyTree probe;
  probe.rels.assign(static_cast<size_t>(n), "");
  // Odometer over all head assignments.
  while (true) {
    probe.heads = heads;
    if (is_valid_tree(probe) && validate_projective(probe)) out.push_back(heads);
    int i = 0;
    while (i < n) {
      ++heads[static_cast<size_t>(i)];
      if (heads[static_cast<size_t>(i)] <= n) break;
      heads[static_cast<size_t>(i)] = 0;
      ++i;
    }
    if (i == n) break;
  }
  return out;
}

}  // namespace biparse
