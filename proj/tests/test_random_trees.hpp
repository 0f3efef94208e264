#pragma once

// Random tree generators shared by round-trip and metric tests.

#include <string>
#include <vector>

#include "biparse/rng.hpp"
#include "biparse/treebank.hpp"
#include "biparse/trees.hpp"

namespace testutil {

inline const std::vector<std::string>& label_pool() {
  static const std::vector<std::string> p{"S", "NP", "VP", "PP", "ADJP", "SBAR"};
  return p;
}

inline const std::vector<std::string>& pos_pool() {
  static const std::vector<std::string> p{"DT", "NN", "VBD", "IN", "JJ", "PRP", ","};
  return p;
}

inline const std::vector<std::string>& word_pool() {
  static const std::vector<std::string> p{"the",  "cat",   "sat",   "on",  "mat", "big",
                                          "dogs", "run",   "fast",  "she", "saw", "it",
                                          "old",  "house", "caf\xc3\xa9"};
  return p;
}

inline biparse::CNode random_subtree(biparse::Rng& rng, int n_tokens, int depth) {
  using biparse::CNode;
  if (n_tokens == 1) {
    CNode leaf{pos_pool()[static_cast<size_t>(rng.randint(0, static_cast<int>(pos_pool().size())))],
               word_pool()[static_cast<size_t>(rng.randint(0, static_cast<int>(word_pool().size())))],
               {}};
    // Occasionally hang a unary chain (possibly several levels) above a leaf.
    CNode node = leaf;
    int chain = rng.randint(0, 3) == 0 ? rng.randint(1, 3) : 0;
    while (chain-- > 0) {
      CNode wrap{label_pool()[static_cast<size_t>(rng.randint(0, static_cast<int>(label_pool().size())))],
                 "",
                 {node}};
      node = std::move(wrap);
    }
    return node;
  }
  // Split into 2..min(4, n_tokens) children.
  const int max_children = std::min(4, n_tokens);
  const int k = 2 + (max_children > 2 ? rng.randint(0, max_children - 1) : 0);
  const int children = std::min(k, n_tokens);
  std::vector<int> sizes(static_cast<size_t>(children), 1);
  for (int extra = n_tokens - children; extra > 0; --extra)
    ++sizes[static_cast<size_t>(rng.randint(0, children))];
  biparse::CNode node{
      label_pool()[static_cast<size_t>(rng.randint(0, static_cast<int>(label_pool().size())))], "", {}};
  for (int s : sizes) node.children.push_back(random_subtree(rng, s, depth + 1));
  return node;
}

inline biparse::ConstituentTree random_tree(biparse::Rng& rng, int n_tokens) {
  biparse::ConstituentTree t;
  t.root = random_subtree(rng, n_tokens, 0);
  if (t.root.is_leaf()) {
    // Root must be a phrase node.
    t.root = biparse::CNode{"S", "", {t.root}};
  }
  t.n = n_tokens;
  return t;
}

inline biparse::DepSentence random_dep_sentence(biparse::Rng& rng, int n_tokens) {
  static const std::vector<std::string> rels{"nsubj", "dobj", "det", "prep", "pobj", "amod", "root"};
  biparse::DepSentence ds;
  for (int i = 0; i < n_tokens; ++i) {
    ds.sentence.tokens.push_back(
        {word_pool()[static_cast<size_t>(rng.randint(0, static_cast<int>(word_pool().size())))],
         pos_pool()[static_cast<size_t>(rng.randint(0, static_cast<int>(pos_pool().size())))]});
  }
  // Random tree: attach token i to a random earlier token or ROOT chain;
  // then fix single-rootedness by re-rooting extras onto the first root.
  std::vector<int> heads(static_cast<size_t>(n_tokens), 0);
  for (int i = 1; i < n_tokens; ++i) heads[static_cast<size_t>(i)] = rng.randint(0, i + 1);
  int first_root = -1;
  for (int i = 0; i < n_tokens; ++i) {
    if (heads[static_cast<size_t>(i)] == 0) {
      if (first_root == -1) first_root = i + 1;
      else heads[static_cast<size_t>(i)] = first_root;
    }
  }
  if (first_root == -1) heads[0] = 0;
  ds.tree.heads = heads;
  for (int i = 0; i < n_tokens; ++i)
    ds.tree.rels.push_back(heads[static_cast<size_t>(i)] == 0
                               ? "root"
                               : rels[static_cast<size_t>(rng.randint(0, 6))]);
  return ds;
}

}  // namespace testutil
