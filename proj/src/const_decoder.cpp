#include "biparse/const_decoder.hpp"

#include <algorithm>

namespace biparse {

GoldSpans::GoldSpans(int n, const std::vector<LabeledSpan>& spans, const Vocabulary& vocab)
    : n_(n), map_(static_cast<size_t>(n + 1) * (n + 1), 0) {
  for (const LabeledSpan& s : spans) {
    const int id = vocab.label_id(s.label);
    if (id < 0) throw DataError("gold label not in vocabulary: '" + s.label + "'");
    if (id == Vocabulary::kEmptyLabel) throw DataError("gold span with empty label");
    map_[static_cast<size_t>(s.begin) * (n_ + 1) + s.end] = id;
    entries_.emplace_back(s.begin, s.end, id);
  }
}

GoldSpans::GoldSpans(int n, const std::vector<std::tuple<int, int, int>>& id_spans)
    : n_(n), map_(static_cast<size_t>(n + 1) * (n + 1), 0) {
  for (const auto& [i, j, l] : id_spans) {
    map_[static_cast<size_t>(i) * (n_ + 1) + j] = l;
    if (l != 0) entries_.emplace_back(i, j, l);
  }
}

double SpanScores::value(int i, int j, int label) const {
  if (label == 0) return 0.0;
  return scores.value_at(flat_index(i, j, label));
}

int SpanScores::flat_index(int i, int j, int label) const {
  return row(i, j) * (num_labels - 1) + (label - 1);
}

ConstituentDecoder::ConstituentDecoder(const ModelConfig& config, int num_labels,
                                       ParameterStore& store, Rng& rng)
    : d_model_(config.d_model), num_labels_(num_labels) {
  if (num_labels_ < 2) throw ConfigError("constituent decoder needs at least one real label");
  w1_ = &store.add("const.span.w1", {d_model_, config.span_hidden}, Init::xavier, rng);
  b1_ = &store.add("const.span.b1", {config.span_hidden}, Init::zeros, rng);
  w2_ = &store.add("const.span.w2", {config.span_hidden, num_labels_ - 1}, Init::xavier, rng);
  b2_ = &store.add("const.span.b2", {num_labels_ - 1}, Init::zeros, rng);
}

SpanScores ConstituentDecoder::score_spans(Graph& g, Tensor h_const, int n) const {
  if (h_const.shape().size() != 2 || h_const.dim(0) != n + 2 || h_const.dim(1) != d_model_)
    throw DimError("score_spans: expected [" + std::to_string(n + 2) + "," +
                   std::to_string(d_model_) + "] encoder output, got " + shape_str(h_const.shape()));
  const int half = d_model_ / 2;
  // Fencepost features: forward half of row k, backward half of row k+1.
  Tensor fwd = g.slice(h_const, 1, 0, half);
  Tensor bwd = g.slice(h_const, 1, half, d_model_);
  Tensor fence = g.concat({g.slice(fwd, 0, 0, n + 1), g.slice(bwd, 0, 1, n + 2)}, 1);  // [n+1, d]

  SpanScores out;
  out.n = n;
  out.num_labels = num_labels_;
  out.row_of.assign(static_cast<size_t>(n + 1) * (n + 1), -1);
  std::vector<int> idx_i, idx_j;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j <= n; ++j) {
      out.row_of[static_cast<size_t>(i) * (n + 1) + j] = static_cast<int>(out.span_list.size());
      out.span_list.emplace_back(i, j);
      idx_i.push_back(i);
      idx_j.push_back(j);
    }
  }
  Tensor rep = g.sub(g.rows(fence, idx_j), g.rows(fence, idx_i));  // [spans, d_model]
  Tensor hidden = g.relu(g.add_rowwise(g.matmul(rep, g.param(*w1_)), g.param(*b1_)));
  out.scores = g.add_rowwise(g.matmul(hidden, g.param(*w2_)), g.param(*b2_));
  return out;
}

// ---------------------------------------------------------------------------
// CKY

namespace {

struct Cell {
  double total = 0.0;      // chart value including this span's own best label
  double inner = 0.0;      // children part only
  int split = -1;
  int label = 0;           // best label under the allow-empty rule
};

// Lowest label id maximizing score(i,j,.), optionally excluding the empty
// label.
std::pair<int, double> best_label(const std::function<double(int, int, int)>& score, int i, int j,
                                  int num_labels, bool allow_empty) {
  int best = allow_empty ? 0 : 1;
  double best_val = allow_empty ? score(i, j, 0) : score(i, j, 1);
  for (int l = best + 1; l < num_labels; ++l) {
    const double v = score(i, j, l);
    if (v > best_val) {
      best_val = v;
      best = l;
    }
  }
  return {best, best_val};
}

void backtrack(const std::vector<Cell>& chart, int n, int i, int j, int label, int split,
               BinaryTree& out) {
  out.nodes.push_back({i, j, split, label});
  if (j - i == 1) return;
  const Cell& left = chart[static_cast<size_t>(i) * (n + 1) + split];
  backtrack(chart, n, i, split, left.label, left.split, out);
  const Cell& right = chart[static_cast<size_t>(split) * (n + 1) + j];
  backtrack(chart, n, split, j, right.label, right.split, out);
}

}  // namespace

CkyResult cky_decode_raw(int n, int num_labels,
                         const std::function<double(int, int, int)>& score) {
  if (n < 1) throw Error("cky_decode: n must be >= 1");
  std::vector<Cell> chart(static_cast<size_t>(n + 1) * (n + 1));
  for (int width = 1; width <= n; ++width) {
    for (int i = 0; i + width <= n; ++i) {
      const int j = i + width;
      Cell& cell = chart[static_cast<size_t>(i) * (n + 1) + j];
      if (width == 1) {
        cell.inner = 0.0;
        cell.split = -1;
      } else {
        double best = -std::numeric_limits<double>::infinity();
        int best_split = -1;
        for (int k = i + 1; k < j; ++k) {
          const double v = chart[static_cast<size_t>(i) * (n + 1) + k].total +
                           chart[static_cast<size_t>(k) * (n + 1) + j].total;
          if (v > best) {
            best = v;
            best_split = k;
          }
        }
        cell.inner = best;
        cell.split = best_split;
      }
      const auto [lab, lab_val] = best_label(score, i, j, num_labels, /*allow_empty=*/true);
      cell.label = lab;
      cell.total = lab_val + cell.inner;
    }
  }
  // Root label must be non-empty.
  const Cell& top = chart[static_cast<size_t>(0) * (n + 1) + n];
  const auto [root_label, root_val] = best_label(score, 0, n, num_labels, /*allow_empty=*/false);
  CkyResult result;
  result.score = root_val + top.inner;
  backtrack(chart, n, 0, n, root_label, top.split, result.tree);
  return result;
}

CkyResult cky_decode(const SpanScores& scores) {
  return cky_decode_raw(scores.n, scores.num_labels,
                        [&scores](int i, int j, int l) { return scores.value(i, j, l); });
}

CkyResult loss_augmented_decode(const SpanScores& scores, const GoldSpans& gold) {
  if (gold.n() != scores.n) throw DataError("loss_augmented_decode: length mismatch");
  return cky_decode_raw(scores.n, scores.num_labels, [&scores, &gold](int i, int j, int l) {
    return scores.value(i, j, l) + (l != gold.label_at(i, j) ? 1.0 : 0.0);
  });
}

int hamming_delta(const BinaryTree& pred, const GoldSpans& gold) {
  int delta = 0;
  for (const BinaryNode& node : pred.nodes)
    if (node.label != gold.label_at(node.begin, node.end)) ++delta;
  return delta;
}

Tensor tree_score_tensor(Graph& g, const SpanScores& scores,
                         const std::vector<std::tuple<int, int, int>>& id_spans) {
  std::vector<int> flat;
  for (const auto& [i, j, l] : id_spans)
    if (l != 0) flat.push_back(scores.flat_index(i, j, l));
  if (flat.empty()) return g.scalar(0.0);
  return g.sum(g.gather(scores.scores, flat));
}

Tensor hinge_loss(Graph& g, const SpanScores& scores, const GoldSpans& gold,
                  CkyResult* augmented_out) {
  CkyResult aug = loss_augmented_decode(scores, gold);
  const int delta = hamming_delta(aug.tree, gold);
  std::vector<std::tuple<int, int, int>> pred_spans;
  for (const BinaryNode& nd : aug.tree.nodes)
    if (nd.label != 0) pred_spans.emplace_back(nd.begin, nd.end, nd.label);
  Tensor s_pred = tree_score_tensor(g, scores, pred_spans);
  Tensor s_gold = tree_score_tensor(g, scores, gold.entries());
  Tensor loss = g.relu(g.add_scalar(g.sub(s_pred, s_gold), g.scalar(static_cast<double>(delta))));
  if (augmented_out) *augmented_out = std::move(aug);
  return loss;
}

// ---------------------------------------------------------------------------
// Tree reconstruction

namespace {

struct BinReader {
  const BinaryTree& bin;
  const Sentence& sentence;
  const Vocabulary& vocab;
  size_t pos = 0;

  // Consumes the subtree at `pos` and returns its forest of children after
  // empty-label deletion (one node if labeled, possibly several if empty).
  std::vector<CNode> read() {
    const BinaryNode node = bin.nodes[pos++];
    std::vector<CNode> below;
    if (node.end - node.begin == 1) {
      const Token& t = sentence.tokens[static_cast<size_t>(node.begin)];
      below.push_back(CNode{t.pos, t.form, {}});
    } else {
      std::vector<CNode> left = read();
      std::vector<CNode> right = read();
      below = std::move(left);
      below.insert(below.end(), std::make_move_iterator(right.begin()),
                   std::make_move_iterator(right.end()));
    }
    if (node.label == 0) return below;
    // Expand "+"-joined labels into a unary chain, bottom-up.
    const std::string& joined = vocab.label_name(node.label);
    std::vector<std::string> parts;
    size_t start = 0;
    while (true) {
      const size_t plus = joined.find('+', start);
      parts.push_back(joined.substr(start, plus == std::string::npos ? plus : plus - start));
      if (plus == std::string::npos) break;
      start = plus + 1;
    }
    CNode cur{parts.back(), "", std::move(below)};
    for (auto it = parts.rbegin() + 1; it != parts.rend(); ++it) cur = CNode{*it, "", {std::move(cur)}};
    return {std::move(cur)};
  }
};

}  // namespace

ConstituentTree binary_to_tree(const BinaryTree& bin, const Sentence& sentence,
                               const Vocabulary& vocab) {
  if (bin.nodes.empty()) throw Error("binary_to_tree: empty tree");
  BinReader reader{bin, sentence, vocab};
  std::vector<CNode> roots = reader.read();
  if (roots.size() != 1) throw Error("binary_to_tree: root must carry a non-empty label");
  ConstituentTree t;
  t.root = std::move(roots[0]);
  t.n = sentence.size();
  return t;
}

}  // namespace biparse
