#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "biparse/trees.hpp"

using namespace biparse;

namespace {

CNode leaf(const std::string& pos, const std::string& word) { return {pos, word, {}}; }
CNode node(const std::string& label, std::vector<CNode> children) {
  return {label, "", std::move(children)};
}

ConstituentTree cat_sat_tree() {
  // (S (NP (DT The) (NN cat)) (VP (VBD sat)))
  ConstituentTree t;
  t.root = node("S", {node("NP", {leaf("DT", "The"), leaf("NN", "cat")}),
                      node("VP", {leaf("VBD", "sat")})});
  t.n = 3;
  return t;
}

}  // namespace

TEST_CASE("to_labeled_spans direct decomposition") {
  const auto spans = to_labeled_spans(cat_sat_tree());
  const std::vector<LabeledSpan> expect{{0, 2, "NP"}, {0, 3, "S"}, {2, 3, "VP"}};
  CHECK(spans == expect);
}

TEST_CASE("to_labeled_spans collapses unary chains top-down") {
  ConstituentTree t;
  t.root = node("S", {node("VP", {leaf("VB", "go")})});
  t.n = 1;
  const auto spans = to_labeled_spans(t);
  REQUIRE(spans.size() == 1);
  CHECK(spans[0] == LabeledSpan{0, 1, "S+VP"});
}

TEST_CASE("to_labeled_spans minimal tree") {
  ConstituentTree t;
  t.root = node("NP", {leaf("NN", "dog")});
  t.n = 1;
  const auto spans = to_labeled_spans(t);
  REQUIRE(spans.size() == 1);
  CHECK(spans[0] == LabeledSpan{0, 1, "NP"});
}

TEST_CASE("span count equals internal nodes after collapse") {
  // (TOP (S (NP (NP (DT a) (NN b)) (PP (IN c) (NP (NN d))))))
  ConstituentTree t;
  t.root = node(
      "TOP",
      {node("S", {node("NP", {node("NP", {leaf("DT", "a"), leaf("NN", "b")}),
                              node("PP", {leaf("IN", "c"), node("NP", {leaf("NN", "d")})})})})});
  t.n = 4;
  const auto spans = to_labeled_spans(t);
  // TOP+S+NP collapses; inner nodes: NP(0,2), PP(2,4), NP(3,4).
  CHECK(spans.size() == 4);
  CHECK(spans[0] == LabeledSpan{0, 2, "NP"});
  CHECK(spans[1] == LabeledSpan{0, 4, "TOP+S+NP"});
  CHECK(spans[2] == LabeledSpan{2, 4, "PP"});
  CHECK(spans[3] == LabeledSpan{3, 4, "NP"});
}

TEST_CASE("tree_sentence extracts tokens in order") {
  const Sentence s = tree_sentence(cat_sat_tree());
  REQUIRE(s.size() == 3);
  CHECK(s.tokens[0] == Token{"The", "DT"});
  CHECK(s.tokens[2] == Token{"sat", "VBD"});
}

TEST_CASE("validate_projective examples") {
  CHECK(validate_projective({{2, 0}, {"det", "root"}}));
  CHECK_FALSE(validate_projective({{3, 4, 0, 1}, {"a", "b", "c", "d"}}));
  CHECK(validate_projective({{0}, {"root"}}));
}

TEST_CASE("is_valid_tree rejects cycles, self-arcs and multi-roots") {
  CHECK(is_valid_tree({{2, 0}, {"x", "y"}}));
  CHECK_FALSE(is_valid_tree({{2, 1}, {"x", "y"}}));   // cycle, no root
  CHECK_FALSE(is_valid_tree({{0, 0}, {"x", "y"}}));   // two roots
  CHECK_FALSE(is_valid_tree({{1, 0}, {"x", "y"}}));   // self arc
  CHECK_FALSE(is_valid_tree({{3, 0}, {"x", "y"}}));   // head out of range
  CHECK_FALSE(is_valid_tree({{}, {}}));               // empty
}

TEST_CASE("enumerate_bracketings counts follow Catalan numbers") {
  CHECK(enumerate_bracketings(1).size() == 1);
  CHECK(enumerate_bracketings(2).size() == 1);
  CHECK(enumerate_bracketings(3).size() == 2);
  CHECK(enumerate_bracketings(4).size() == 5);
  CHECK(enumerate_bracketings(5).size() == 14);
  CHECK(enumerate_bracketings(6).size() == 42);
  CHECK_THROWS(enumerate_bracketings(9));
}

TEST_CASE("bracketings come in canonical (split-lex) order") {
  const auto all = enumerate_bracketings(4);
  for (size_t i = 0; i + 1 < all.size(); ++i) {
    BinaryTree a{all[i]}, b{all[i + 1]};
    CHECK(binary_tree_less(a, b));
  }
}

TEST_CASE("enumerate_constituent_trees labeled counts") {
  int count = 0;
  enumerate_constituent_trees(1, 2, [&](const BinaryTree&) { ++count; });
  CHECK(count == 1);  // single span, root must be non-empty

  count = 0;
  enumerate_constituent_trees(2, 2, [&](const BinaryTree&) { ++count; });
  // 3 spans: root in {1}, two width-1 spans in {0,1} -> 4.
  CHECK(count == 4);

  count = 0;
  enumerate_constituent_trees(3, 3, [&](const BinaryTree&) { ++count; });
  // 2 structures, 5 spans each: root has 2 non-empty choices, the other
  // 4 spans 3 choices each.
  CHECK(count == 2 * 2 * 3 * 3 * 3 * 3);
}

TEST_CASE("enumerate_projective_trees counts") {
  CHECK(enumerate_projective_trees(1).size() == 1);
  CHECK(enumerate_projective_trees(2).size() == 2);
  CHECK(enumerate_projective_trees(3).size() == 7);
  CHECK(enumerate_projective_trees(4).size() == 30);
  CHECK_THROWS(enumerate_projective_trees(8));
}

namespace {

// Independent recursive construction of projective single-root trees: pick a
// root r, then recursively head-attach the left and right intervals. Used to
// cross-check the filter-based enumeration.
//
// All ways to attach every token of [lo, hi] somewhere under `head` (which
// lies outside the interval), projectively. Tokens are 1-based.
void attach_interval(int lo, int hi, int head, std::vector<std::vector<std::pair<int, int>>>& out,
                     std::vector<std::pair<int, int>>& arcs) {
  if (lo > hi) {
    out.push_back(arcs);
    return;
  }
  // The child of `head` covering the edge of the interval nearest to head;
  // enumerate the child c and the sub-interval it governs.
  if (head < lo) {
    for (int c = lo; c <= hi; ++c) {
      // c governs [lo, c-1] fully and some prefix [c+1, m] of the rest.
      for (int m = c; m <= hi; ++m) {
        arcs.emplace_back(head, c);
        std::vector<std::vector<std::pair<int, int>>> subs;
        std::vector<std::pair<int, int>> sub_arcs;
        attach_interval(lo, c - 1, c, subs, sub_arcs);
        for (auto& s1 : subs) {
          std::vector<std::vector<std::pair<int, int>>> subs2;
          std::vector<std::pair<int, int>> sub_arcs2;
          attach_interval(c + 1, m, c, subs2, sub_arcs2);
          for (auto& s2 : subs2) {
            std::vector<std::vector<std::pair<int, int>>> subs3;
            std::vector<std::pair<int, int>> sub_arcs3;
            attach_interval(m + 1, hi, head, subs3, sub_arcs3);
            for (auto& s3 : subs3) {
              auto full = arcs;
              full.insert(full.end(), s1.begin(), s1.end());
              full.insert(full.end(), s2.begin(), s2.end());
              full.insert(full.end(), s3.begin(), s3.end());
              out.push_back(std::move(full));
            }
          }
        }
        arcs.pop_back();
      }
    }
  } else {
    // Mirror case: head to the right of the interval.
    for (int c = hi; c >= lo; --c) {
      for (int m = c; m >= lo; --m) {
        arcs.emplace_back(head, c);
        std::vector<std::vector<std::pair<int, int>>> subs;
        std::vector<std::pair<int, int>> sub_arcs;
        attach_interval(c + 1, hi, c, subs, sub_arcs);
        for (auto& s1 : subs) {
          std::vector<std::vector<std::pair<int, int>>> subs2;
          std::vector<std::pair<int, int>> sub_arcs2;
          attach_interval(m, c - 1, c, subs2, sub_arcs2);
          for (auto& s2 : subs2) {
            std::vector<std::vector<std::pair<int, int>>> subs3;
            std::vector<std::pair<int, int>> sub_arcs3;
            attach_interval(lo, m - 1, head, subs3, sub_arcs3);
            for (auto& s3 : subs3) {
              auto full = arcs;
              full.insert(full.end(), s1.begin(), s1.end());
              full.insert(full.end(), s2.begin(), s2.end());
              full.insert(full.end(), s3.begin(), s3.end());
              out.push_back(std::move(full));
            }
          }
        }
        arcs.pop_back();
      }
    }
  }
}

std::set<std::vector<int>> recursive_projective_trees(int n) {
  std::set<std::vector<int>> result;
  for (int root = 1; root <= n; ++root) {
    std::vector<std::vector<std::pair<int, int>>> outs;
    std::vector<std::pair<int, int>> arcs;
    // Left part governed by root, right part governed by root.
    std::vector<std::vector<std::pair<int, int>>> lefts;
    attach_interval(1, root - 1, root, lefts, arcs);
    for (auto& l : lefts) {
      std::vector<std::vector<std::pair<int, int>>> rights;
      std::vector<std::pair<int, int>> arcs2;
      attach_interval(root + 1, n, root, rights, arcs2);
      for (auto& r : rights) {
        std::vector<int> heads(static_cast<size_t>(n), 0);
        for (auto [h, d] : l) heads[static_cast<size_t>(d - 1)] = h;
        for (auto [h, d] : r) heads[static_cast<size_t>(d - 1)] = h;
        heads[static_cast<size_t>(root - 1)] = 0;
        result.insert(heads);
      }
    }
    (void)outs;
  }
  return result;
}

}  // namespace

TEST_CASE("projective enumeration matches independent recursive construction") {
  for (int n = 1; n <= 5; ++n) {
    const auto filtered = enumerate_projective_trees(n);
    const std::set<std::vector<int>> filtered_set(filtered.begin(), filtered.end());
    CHECK(filtered_set.size() == filtered.size());  // distinct
    const auto recursive = recursive_projective_trees(n);
    CHECK(filtered_set == recursive);
  }
}

TEST_CASE("every enumerated projective tree validates") {
  for (int n = 1; n <= 6; ++n) {
    for (const auto& heads : enumerate_projective_trees(n)) {
      DependencyTree t{heads, std::vector<std::string>(heads.size(), "dep")};
      CHECK(is_valid_tree(t));
      CHECK(validate_projective(t));
    }
  }
}
