#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "biparse/error.hpp"
#include "biparse/trees.hpp"

namespace biparse {

// ---------------------------------------------------------------------------
// Bracketed constituency treebanks (PTB style, UTF-8). Atoms must not
// contain parentheses or whitespace; PTB escapes these (-LRB-, -RRB-).

std::vector<ConstituentTree> read_bracketed(std::string_view text);
std::vector<ConstituentTree> read_bracketed_file(const std::string& path);
std::string write_bracketed(const ConstituentTree& tree);

// ---------------------------------------------------------------------------
// CoNLL-style dependency files. Blocks of lines separated by blank lines;
// 5 columns (id form pos head rel), 6 (id form lemma pos head rel) or
// CoNLL-X 8+ (head at column 7, relation at column 8); detected per line.

struct DepSentence {
  Sentence sentence;
  DependencyTree tree;
  bool operator==(const DepSentence&) const = default;
};

std::vector<DepSentence> read_conll(std::string_view text);
std::vector<DepSentence> read_conll_file(const std::string& path);
std::string write_conll(const Sentence& sentence, const DependencyTree& tree);

// ---------------------------------------------------------------------------
// Joint corpus.

struct CorpusEntry {
  Sentence sentence;
  std::optional<ConstituentTree> ctree;
  std::optional<DependencyTree> dtree;
};
using Corpus = std::vector<CorpusEntry>;

Corpus corpus_from_bracketed(const std::vector<ConstituentTree>& trees);
Corpus corpus_from_conll(const std::vector<DepSentence>& sents);
// Token-aligned zip of both annotations; forms must match pairwise. POS tags
// come from the bracketed preterminals.
Corpus merge_aligned(const std::vector<ConstituentTree>& ctrees,
                     const std::vector<DepSentence>& dsents);

// ---------------------------------------------------------------------------
// Vocabulary: word/char/POS/constituent-label/relation namespaces with
// reserved ids. Unknown words map to kUnk, never an error.

std::vector<std::string> utf8_codepoints(std::string_view s);

class Vocabulary {
 public:
  // Reserved ids in the word, char and POS namespaces.
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kRoot = 2;  // start boundary marker; doubles as ROOT
  static constexpr int kStop = 3;
  // Reserved id in the constituent label namespace (the empty label).
  static constexpr int kEmptyLabel = 0;

  static Vocabulary build(const Corpus& corpus, int min_word_freq);

  int word_id(const std::string& w) const;
  int char_id(const std::string& c) const;
  int pos_id(const std::string& p) const;
  int label_id(const std::string& l) const;  // -1 if unknown
  int rel_id(const std::string& r) const;    // -1 if unknown

  const std::string& label_name(int id) const;
  const std::string& rel_name(int id) const;
  const std::string& pos_name(int id) const;

  int n_words() const { return static_cast<int>(words_.names.size()); }
  int n_chars() const { return static_cast<int>(chars_.names.size()); }
  int n_pos() const { return static_cast<int>(pos_.names.size()); }
  int n_labels() const { return static_cast<int>(labels_.names.size()); }
  int n_rels() const { return static_cast<int>(rels_.names.size()); }

  const std::vector<std::string>& word_names() const { return words_.names; }

  // Training-corpus frequency (0 for unseen/reserved).
  int word_freq(const std::string& w) const;
  bool is_singleton(const std::string& w) const { return word_freq(w) == 1; }

  std::vector<int> char_ids(const std::string& form) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
  std::string serialize() const;
  uint64_t checksum() const;  // FNV-1a 64 of serialize()

 private:
  struct Namespace {
    std::vector<std::string> names;
    std::unordered_map<std::string, int> ids;
    int add(const std::string& name);
    int get(const std::string& name, int fallback) const;
  };

  Namespace words_, chars_, pos_, labels_, rels_;
  std::unordered_map<std::string, int> word_freq_;
};

// ---------------------------------------------------------------------------
// Pretrained word vectors: text file, one "word v1 ... vd" entry per line.
// Rows indexed by vocabulary word id; misses stay zero (lowercase fallback
// tried first).

struct PretrainedVectors {
  int dim = 0;
  std::vector<double> data;  // [n_words, dim] row-major
  int hits = 0;
};

PretrainedVectors load_pretrained_vectors(const std::string& path, const Vocabulary& vocab);

}  // namespace biparse
