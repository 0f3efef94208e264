#include "biparse/treebank.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace biparse {

namespace {

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

// Tracks line/column for error messages.
struct BracketLexer {
  std::string_view text;
  size_t pos = 0;
  int line = 1;
  int col = 1;

  void advance() {
    if (text[pos] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
    ++pos;
  }

  void skip_ws() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) advance();
  }

  bool eof() {
    skip_ws();
    return pos >= text.size();
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("bracketed parse error at line " + std::to_string(line) + ", column " +
                      std::to_string(col) + ": " + what);
  }

  char peek() {
    skip_ws();
    if (pos >= text.size()) fail("unexpected end of input");
    return text[pos];
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "', found '" + text[pos] + "'");
    advance();
  }

  std::string atom() {
    skip_ws();
    size_t start = pos;
    while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos])) &&
           text[pos] != '(' && text[pos] != ')')
      advance();
    return std::string(text.substr(start, pos - start));
  }
};

CNode parse_node(BracketLexer& lex) {
  lex.expect('(');
  CNode node;
  node.label = lex.atom();  // may be empty (outer wrapper)
  if (lex.peek() == ')') lex.fail("empty tree");
  if (lex.peek() == '(') {
    while (lex.peek() == '(') node.children.push_back(parse_node(lex));
    lex.expect(')');
    return node;
  }
  // Leaf: (POS word)
  node.word = lex.atom();
  if (node.word.empty()) lex.fail("expected word or subtree");
  if (node.label.empty()) lex.fail("leaf without POS tag");
  lex.expect(')');
  return node;
}

int count_leaves(const CNode& node) {
  if (node.is_leaf()) return 1;
  int n = 0;
  for (const CNode& c : node.children) n += count_leaves(c);
  return n;
}

void write_node(const CNode& node, std::string& out) {
  out += '(';
  out += node.label;
  if (node.is_leaf()) {
    out += ' ';
    out += node.word;
  } else {
    for (const CNode& c : node.children) {
      out += ' ';
      write_node(c, out);
    }
  }
  out += ')';
}

}  // namespace

std::vector<ConstituentTree> read_bracketed(std::string_view text) {
  BracketLexer lex{text};
  std::vector<ConstituentTree> trees;
  while (!lex.eof()) {
    CNode root = parse_node(lex);
    // Strip an empty-label outer wrapper: "( (S ...) )".
    if (root.label.empty()) {
      if (root.children.size() != 1)
        lex.fail("wrapper node with empty label must have exactly one child");
      root = std::move(root.children[0]);
    }
    ConstituentTree t;
    t.n = count_leaves(root);
    t.root = std::move(root);
    trees.push_back(std::move(t));
  }
  return trees;
}

std::vector<ConstituentTree> read_bracketed_file(const std::string& path) {
  try {
    return read_bracketed(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::string write_bracketed(const ConstituentTree& tree) {
  std::string out;
  write_node(tree.root, out);
  return out;
}

// ---------------------------------------------------------------------------
// CoNLL

std::vector<DepSentence> read_conll(std::string_view text) {
  std::vector<DepSentence> out;
  Sentence sent;
  std::vector<int> heads;
  std::vector<std::string> rels;
  int line_no = 0;
  int block_start_line = 1;

  auto flush = [&](int at_line) {
    if (sent.tokens.empty()) return;
    const int n = sent.size();
    for (int i = 0; i < n; ++i) {
      if (heads[static_cast<size_t>(i)] < 0 || heads[static_cast<size_t>(i)] > n)
        throw FormatError("head index " + std::to_string(heads[static_cast<size_t>(i)]) +
                          " out of range [0," + std::to_string(n) + "] in sentence " +
                          std::to_string(out.size() + 1) + " near line " + std::to_string(at_line));
    }
    out.push_back({std::move(sent), {std::move(heads), std::move(rels)}});
    sent = {};
    heads = {};
    rels = {};
  };

  size_t start = 0;
  while (start <= text.size()) {
    size_t nl = text.find('\n', start);
    std::string_view line =
        nl == std::string_view::npos ? text.substr(start) : text.substr(start, nl - start);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      flush(line_no - 1);
      block_start_line = line_no + 1;
    } else if (line[0] != '#') {
      const auto cols = split_ws(line);
      std::string form, pos, rel;
      int head = 0;
      if (cols.size() == 5) {
        form = cols[1];
        pos = cols[2];
        head = -1;
        try {
          head = std::stoi(cols[3]);
        } catch (...) {
          throw FormatError("bad head index '" + cols[3] + "' at line " + std::to_string(line_no));
        }
        rel = cols[4];
      } else if (cols.size() == 6) {
        form = cols[1];
        pos = cols[3];
        try {
          head = std::stoi(cols[4]);
        } catch (...) {
          throw FormatError("bad head index '" + cols[4] + "' at line " + std::to_string(line_no));
        }
        rel = cols[5];
      } else if (cols.size() >= 8) {
        form = cols[1];
        pos = cols[4];
        try {
          head = std::stoi(cols[6]);
        } catch (...) {
          throw FormatError("bad head index '" + cols[6] + "' at line " + std::to_string(line_no));
        }
        rel = cols[7];
      } else {
        throw FormatError("unsupported column count " + std::to_string(cols.size()) + " at line " +
                          std::to_string(line_no) + " (expected 5, 6 or 8+)");
      }
      const int expected_index = sent.size() + 1;
      int got_index = -1;
      try {
        got_index = std::stoi(cols[0]);
      } catch (...) {
      }
      if (got_index != expected_index)
        throw FormatError("token index '" + cols[0] + "' at line " + std::to_string(line_no) +
                          " does not match position " + std::to_string(expected_index));
      sent.tokens.push_back({std::move(form), std::move(pos)});
      heads.push_back(head);
      rels.push_back(std::move(rel));
    }
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  flush(line_no);
  (void)block_start_line;
  return out;
}

std::vector<DepSentence> read_conll_file(const std::string& path) {
  try {
    return read_conll(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::string write_conll(const Sentence& sentence, const DependencyTree& tree) {
  if (sentence.size() != tree.size())
    throw DataError("write_conll: sentence and tree sizes differ");
  std::string out;
  for (int i = 0; i < sentence.size(); ++i) {
    const Token& t = sentence.tokens[static_cast<size_t>(i)];
    out += std::to_string(i + 1);
    out += '\t';
    out += t.form;
    out += "\t_\t";
    out += t.pos;
    out += '\t';
    out += t.pos;
    out += "\t_\t";
    out += std::to_string(tree.heads[static_cast<size_t>(i)]);
    out += '\t';
    out += tree.rels[static_cast<size_t>(i)];
    out += "\t_\t_\n";
  }
  out += '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Corpus

Corpus corpus_from_bracketed(const std::vector<ConstituentTree>& trees) {
  Corpus corpus;
  corpus.reserve(trees.size());
  for (const auto& t : trees) corpus.push_back({tree_sentence(t), t, std::nullopt});
  return corpus;
}

Corpus corpus_from_conll(const std::vector<DepSentence>& sents) {
  Corpus corpus;
  corpus.reserve(sents.size());
  for (const auto& s : sents) corpus.push_back({s.sentence, std::nullopt, s.tree});
  return corpus;
}

Corpus merge_aligned(const std::vector<ConstituentTree>& ctrees,
                     const std::vector<DepSentence>& dsents) {
  if (ctrees.size() != dsents.size())
    throw DataError("aligned corpora differ in size: " + std::to_string(ctrees.size()) +
                    " constituency trees vs " + std::to_string(dsents.size()) +
                    " dependency sentences");
  Corpus corpus;
  corpus.reserve(ctrees.size());
  for (size_t i = 0; i < ctrees.size(); ++i) {
    Sentence s = tree_sentence(ctrees[i]);
    const Sentence& d = dsents[i].sentence;
    if (s.size() != d.size())
      throw DataError("sentence " + std::to_string(i + 1) + ": token counts differ (" +
                      std::to_string(s.size()) + " vs " + std::to_string(d.size()) + ")");
    for (int t = 0; t < s.size(); ++t) {
      if (s.tokens[static_cast<size_t>(t)].form != d.tokens[static_cast<size_t>(t)].form)
        throw DataError("sentence " + std::to_string(i + 1) + ", token " + std::to_string(t + 1) +
                        ": forms differ ('" + s.tokens[static_cast<size_t>(t)].form + "' vs '" +
                        d.tokens[static_cast<size_t>(t)].form + "')");
    }
    corpus.push_back({std::move(s), ctrees[i], dsents[i].tree});
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Vocabulary

std::vector<std::string> utf8_codepoints(std::string_view s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    size_t len = 1;
    if ((c & 0x80) == 0x00) len = 1;
    else if ((c & 0xE0) == 0xC0) len = 2;
    else if ((c & 0xF0) == 0xE0) len = 3;
    else if ((c & 0xF8) == 0xF0) len = 4;
    if (i + len > s.size()) len = s.size() - i;  // tolerate truncated sequences
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

int Vocabulary::Namespace::add(const std::string& name) {
  auto it = ids.find(name);
  if (it != ids.end()) return it->second;
  const int id = static_cast<int>(names.size());
  names.push_back(name);
  ids.emplace(name, id);
  return id;
}

int Vocabulary::Namespace::get(const std::string& name, int fallback) const {
  auto it = ids.find(name);
  return it == ids.end() ? fallback : it->second;
}

Vocabulary Vocabulary::build(const Corpus& corpus, int min_word_freq) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  Vocabulary v;
  for (Namespace* ns : {&v.words_, &v.chars_, &v.pos_}) {
    ns->add("<pad>");
    ns->add("<unk>");
    ns->add("<root>");
    ns->add("<stop>");
  }
  v.labels_.add("");  // reserved empty label

  std::unordered_map<std::string, int> freq;
  for (const CorpusEntry& e : corpus)
    for (const Token& t : e.sentence.tokens) ++freq[t.form];

  for (const CorpusEntry& e : corpus) {
    for (const Token& t : e.sentence.tokens) {
      if (freq[t.form] >= min_word_freq) v.words_.add(t.form);
      for (const auto& cp : utf8_codepoints(t.form)) v.chars_.add(cp);
      v.pos_.add(t.pos);
    }
    if (e.ctree)
      for (const LabeledSpan& s : to_labeled_spans(*e.ctree)) v.labels_.add(s.label);
    if (e.dtree)
      for (const std::string& r : e.dtree->rels) v.rels_.add(r);
  }
  v.word_freq_ = std::move(freq);
  return v;
}

int Vocabulary::word_id(const std::string& w) const { return words_.get(w, kUnk); }
int Vocabulary::char_id(const std::string& c) const { return chars_.get(c, kUnk); }
int Vocabulary::pos_id(const std::string& p) const { return pos_.get(p, kUnk); }
int Vocabulary::label_id(const std::string& l) const { return labels_.get(l, -1); }
int Vocabulary::rel_id(const std::string& r) const { return rels_.get(r, -1); }

const std::string& Vocabulary::label_name(int id) const {
  return labels_.names.at(static_cast<size_t>(id));
}
const std::string& Vocabulary::rel_name(int id) const {
  return rels_.names.at(static_cast<size_t>(id));
}
const std::string& Vocabulary::pos_name(int id) const {
  return pos_.names.at(static_cast<size_t>(id));
}

int Vocabulary::word_freq(const std::string& w) const {
  auto it = word_freq_.find(w);
  return it == word_freq_.end() ? 0 : it->second;
}

std::vector<int> Vocabulary::char_ids(const std::string& form) const {
  std::vector<int> out;
  for (const auto& cp : utf8_codepoints(form)) out.push_back(char_id(cp));
  if (out.empty()) out.push_back(kUnk);
  return out;
}

std::string Vocabulary::serialize() const {
  std::string out = "biparse-vocab v1\n";
  auto dump = [&out](const char* ns, const Namespace& n) {
    for (size_t i = 0; i < n.names.size(); ++i) {
      out += ns;
      out += '\t';
      out += n.names[i];
      out += '\t';
      out += std::to_string(i);
      out += '\n';
    }
  };
  dump("word", words_);
  dump("char", chars_);
  dump("pos", pos_);
  dump("label", labels_);
  dump("rel", rels_);
  // Frequencies drive train-time singleton UNK replacement; keep them stable
  // across save/load. Order follows the word namespace.
  for (const auto& w : words_.names) {
    auto it = word_freq_.find(w);
    if (it != word_freq_.end()) {
      out += "freq\t";
      out += w;
      out += '\t';
      out += std::to_string(it->second);
      out += '\n';
    }
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write vocabulary: " + path);
  os << serialize();
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::string text = read_file(path);
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "biparse-vocab v1")
    throw FormatError("not a vocabulary file (bad header): " + path);
  Vocabulary v;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    size_t start = 0;
    for (int k = 0; k < 2; ++k) {
      const size_t tab = line.find('\t', start);
      if (tab == std::string::npos)
        throw FormatError(path + ": malformed vocabulary line " + std::to_string(line_no));
      cols.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    cols.push_back(line.substr(start));
    const std::string& ns = cols[0];
    const std::string& token = cols[1];
    if (ns == "freq") {
      v.word_freq_[token] = std::stoi(cols[2]);
      continue;
    }
    Namespace* target = nullptr;
    if (ns == "word") target = &v.words_;
    else if (ns == "char") target = &v.chars_;
    else if (ns == "pos") target = &v.pos_;
    else if (ns == "label") target = &v.labels_;
    else if (ns == "rel") target = &v.rels_;
    else throw FormatError(path + ": unknown namespace '" + ns + "' at line " + std::to_string(line_no));
    const int id = target->add(token);
    if (id != std::stoi(cols[2]))
      throw FormatError(path + ": id mismatch for '" + token + "' at line " +
                        std::to_string(line_no) + " (expected dense ids)");
  }
  return v;
}

uint64_t Vocabulary::checksum() const {
  const std::string s = serialize();
  uint64_t h = 1469598103934665603ull;  // FNV-1a 64
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Pretrained vectors

PretrainedVectors load_pretrained_vectors(const std::string& path, const Vocabulary& vocab) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open vector file: " + path);
  std::unordered_map<std::string, std::vector<double>> table;
  std::string line;
  int dim = -1;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cols = split_ws(line);
    if (cols.size() < 2)
      throw FormatError(path + ": line " + std::to_string(line_no) + ": expected word plus floats");
    const int d = static_cast<int>(cols.size()) - 1;
    if (dim == -1) dim = d;
    else if (d != dim)
      throw FormatError(path + ": line " + std::to_string(line_no) + ": dimension " +
                        std::to_string(d) + " differs from " + std::to_string(dim));
    std::vector<double> vec(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) {
      try {
        vec[static_cast<size_t>(i)] = std::stod(cols[static_cast<size_t>(i) + 1]);
      } catch (...) {
        throw FormatError(path + ": line " + std::to_string(line_no) + ": bad float '" +
                          cols[static_cast<size_t>(i) + 1] + "'");
      }
    }
    table.emplace(cols[0], std::move(vec));
  }
  if (dim <= 0) throw FormatError(path + ": no vectors found");

  PretrainedVectors out;
  out.dim = dim;
  out.data.assign(static_cast<size_t>(vocab.n_words()) * static_cast<size_t>(dim), 0.0);
  const auto& names = vocab.word_names();
  for (size_t w = 0; w < names.size(); ++w) {
    auto it = table.find(names[w]);
    if (it == table.end()) {
      // Lowercase fallback widens coverage without touching vocab keys.
      std::string lower = names[w];
      std::transform(lower.begin(), lower.end(), lower.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      it = table.find(lower);
    }
    if (it == table.end()) continue;
    std::copy(it->second.begin(), it->second.end(), out.data.begin() + w * static_cast<size_t>(dim));
    ++out.hits;
  }
  return out;
}

}  // namespace biparse
