#pragma once

#include <functional>
#include <vector>

#include "biparse/config.hpp"
#include "biparse/tensor.hpp"
#include "biparse/treebank.hpp"
#include "biparse/trees.hpp"

namespace biparse {

// Gold constituents in decoder space: (i, j) -> label id, 0 where gold has
// no constituent.
class GoldSpans {
 public:
  GoldSpans(int n, const std::vector<LabeledSpan>& spans, const Vocabulary& vocab);
  GoldSpans(int n, const std::vector<std::tuple<int, int, int>>& id_spans);  // for tests

  int label_at(int i, int j) const { return map_[static_cast<size_t>(i) * (n_ + 1) + j]; }
  int n() const { return n_; }
  // Non-empty gold entries as (i, j, label id).
  const std::vector<std::tuple<int, int, int>>& entries() const { return entries_; }

 private:
  int n_;
  std::vector<int> map_;
  std::vector<std::tuple<int, int, int>> entries_;
};

// s(i, j, l) for fenceposts i < j over a sentence of n tokens. Label id 0 is
// the empty label, hard-wired to score 0; ids 1..num_labels-1 are learned.
struct SpanScores {
  int n = 0;
  int num_labels = 1;
  Tensor scores;  // [span_count, num_labels-1]
  std::vector<std::pair<int, int>> span_list;  // row -> (i, j), i ascending then j
  std::vector<int> row_of;                     // (i, j) -> row

  double value(int i, int j, int label) const;
  int flat_index(int i, int j, int label) const;  // label >= 1
  int row(int i, int j) const { return row_of[static_cast<size_t>(i) * (n + 1) + j]; }
};

// Two-layer feed-forward span scorer over fencepost differences of the
// constituent encoder output.
class ConstituentDecoder {
 public:
  ConstituentDecoder(const ModelConfig& config, int num_labels, ParameterStore& store, Rng& rng);

  SpanScores score_spans(Graph& g, Tensor h_const, int n) const;
  int num_labels() const { return num_labels_; }

 private:
  int d_model_;
  int num_labels_;
  Parameter *w1_, *b1_, *w2_, *b2_;
};

struct CkyResult {
  BinaryTree tree;
  double score = 0.0;
};

// Exact CKY over an arbitrary span score function. Ties broken by smaller
// split point, then lower label id. The root label is never empty.
CkyResult cky_decode_raw(int n, int num_labels,
                         const std::function<double(int, int, int)>& score);

CkyResult cky_decode(const SpanScores& scores);

// CKY over s'(i,j,l) = s(i,j,l) + 1[l != gold(i,j)]; the returned score is
// the augmented objective s(T) + delta(T, T*).
CkyResult loss_augmented_decode(const SpanScores& scores, const GoldSpans& gold);

// Label disagreements between the predicted structure (empty labels count)
// and the gold labeling function. Asymmetric: positions are the predicted
// tree's spans.
int hamming_delta(const BinaryTree& pred, const GoldSpans& gold);

// max(0, max_T[s(T) + delta(T, T*)] - s(T*)), differentiable through the
// span scores of the augmented-best and gold trees.
Tensor hinge_loss(Graph& g, const SpanScores& scores, const GoldSpans& gold,
                  CkyResult* augmented_out = nullptr);

// Sum of s(i,j,l) over a tree's labeled (non-empty) spans, as a tensor.
Tensor tree_score_tensor(Graph& g, const SpanScores& scores,
                         const std::vector<std::tuple<int, int, int>>& id_spans);

// Decoded binary tree -> n-ary tree: delete empty-label nodes, expand
// "+"-joined labels into unary chains, attach (pos, word) leaves.
ConstituentTree binary_to_tree(const BinaryTree& bin, const Sentence& sentence,
                               const Vocabulary& vocab);

}  // namespace biparse
