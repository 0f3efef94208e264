#pragma once

#include <functional>
#include <string>
#include <vector>

#include "biparse/error.hpp"

namespace biparse {

struct Token {
  std::string form;
  std::string pos;
  bool operator==(const Token&) const = default;
};

struct Sentence {
  std::vector<Token> tokens;
  int size() const { return static_cast<int>(tokens.size()); }
  bool operator==(const Sentence&) const = default;
};

// Constituency tree node. Leaves carry (pos, word); internal nodes carry a
// phrase label and children.
struct CNode {
  std::string label;  // phrase label, or POS tag at leaves
  std::string word;   // leaves only
  std::vector<CNode> children;
  bool is_leaf() const { return children.empty(); }
  bool operator==(const CNode&) const = default;
};

struct ConstituentTree {
  CNode root;
  int n = 0;  // token count
  bool operator==(const ConstituentTree&) const = default;
};

Sentence tree_sentence(const ConstituentTree& tree);

// Labeled fencepost span [begin, end) in decoder space: unary chains
// collapsed into "+"-joined labels, preterminals excluded.
struct LabeledSpan {
  int begin = 0;
  int end = 0;
  std::string label;
  bool operator==(const LabeledSpan&) const = default;
  bool operator<(const LabeledSpan& o) const {
    if (begin != o.begin) return begin < o.begin;
    if (end != o.end) return end < o.end;
    return label < o.label;
  }
};

// One span per internal node after unary-chain collapse, ordered by (begin,
// end, label).
std::vector<LabeledSpan> to_labeled_spans(const ConstituentTree& tree);

// Per-token head in [0..n] (0 = ROOT) and relation label; token i is the
// (i+1)-th word.
struct DependencyTree {
  std::vector<int> heads;
  std::vector<std::string> rels;
  int size() const { return static_cast<int>(heads.size()); }
  bool operator==(const DependencyTree&) const = default;
};

// Single root, in-range heads, acyclic.
bool is_valid_tree(const DependencyTree& tree);

// True iff no two arcs (ROOT arcs included) cross when drawn above the
// sentence with ROOT at position 0.
bool validate_projective(const DependencyTree& tree);

// ---------------------------------------------------------------------------
// Decoder tree space: binary trees over fencepost spans with integer label
// ids, 0 = empty label. Used by CKY, the hinge loss, and the brute-force
// oracles.

struct BinaryNode {
  int begin = 0;
  int end = 0;
  int split = -1;  // -1 for width-1 spans
  int label = 0;   // 0 = empty
  bool operator==(const BinaryNode&) const = default;
};

// Nodes in preorder: parent, then left subtree, then right subtree.
struct BinaryTree {
  std::vector<BinaryNode> nodes;
  bool operator==(const BinaryTree&) const = default;
};

// Canonical order on equal-size binary trees: preorder comparison by
// (split, label). Matches the CKY tie-break (smaller split, then lower
// label id).
bool binary_tree_less(const BinaryTree& a, const BinaryTree& b);

// All binary bracketings of n tokens as preorder (begin, end, split)
// triples, in canonical order. Catalan(n-1) of them; n <= 8 enforced.
std::vector<std::vector<BinaryNode>> enumerate_bracketings(int n);

// Every labeled binary tree over n tokens: each span takes any label id in
// [0, num_labels), the root a non-empty one. Canonical enumeration order;
// n <= 8 enforced. Intended for tiny n; counts grow as Catalan * L^(2n-1).
void enumerate_constituent_trees(int n, int num_labels,
                                 const std::function<void(const BinaryTree&)>& visit);

// Every projective single-root head vector over n tokens (unlabeled);
// n <= 7 enforced. Filter-based: all head assignments checked for
// single-rootedness, treeness and projectivity.
std::vector<std::vector<int>> enumerate_projective_trees(int n);

}  // namespace biparse
