#include "biparse/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace biparse {

std::string to_string(CharEncoder v) { return v == CharEncoder::lstm ? "lstm" : "cnn"; }
std::string to_string(Composition v) { return v == Composition::sum ? "sum" : "concat"; }
std::string to_string(TrainMode v) {
  switch (v) {
    case TrainMode::joint: return "joint";
    case TrainMode::constituent_only: return "const";
    case TrainMode::dependency_only: return "dep";
  }
  return "joint";
}

CharEncoder char_encoder_from(const std::string& s) {
  if (s == "lstm" || s == "lstm-style" || s == "recurrent") return CharEncoder::lstm;
  if (s == "cnn" || s == "cnn-style" || s == "convolutional") return CharEncoder::cnn;
  throw ConfigError("char_encoder must be lstm or cnn, got '" + s + "'");
}

Composition composition_from(const std::string& s) {
  if (s == "sum") return Composition::sum;
  if (s == "concat") return Composition::concat;
  throw ConfigError("composition must be sum or concat, got '" + s + "'");
}

TrainMode train_mode_from(const std::string& s) {
  if (s == "joint") return TrainMode::joint;
  if (s == "const" || s == "constituent" || s == "constituent-only") return TrainMode::constituent_only;
  if (s == "dep" || s == "dependency" || s == "dependency-only") return TrainMode::dependency_only;
  throw ConfigError("mode must be joint, const or dep, got '" + s + "'");
}

void ModelConfig::validate() const {
  if (!use_word && !use_pos && !use_char)
    throw ConfigError("token representation needs at least one of word/pos/char");
  if (d_model <= 0 || d_model % 2 != 0)
    throw ConfigError("d_model must be positive and even (content/position halves), got " +
                      std::to_string(d_model));
  if (heads <= 0 || (d_model / 2) % heads != 0)
    throw ConfigError("heads must divide d_model/2 (= " + std::to_string(d_model / 2) + "), got " +
                      std::to_string(heads));
  if (total_layers < 1) throw ConfigError("total_layers must be >= 1");
  if (shared_layers < 0 || shared_layers > total_layers)
    throw ConfigError("shared_layers must lie in [0," + std::to_string(total_layers) + "], got " +
                      std::to_string(shared_layers));
  if (composition == Composition::sum) {
    const int dc = d_content();
    auto bad = [dc](bool used, int d) { return used && d != dc; };
    if (bad(use_word, d_word) || bad(use_pos, d_pos) || bad(use_char, d_char_out))
      throw ConfigError("sum composition requires d_word = d_pos = d_char_out = d_content (= " +
                        std::to_string(dc) + ")");
  }
  if (max_len < 4) throw ConfigError("max_len too small");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
  for (int d : {d_word, d_pos, d_char, d_char_out, d_ff, span_hidden, d_arc, d_label})
    if (d <= 0) throw ConfigError("all model dimensions must be positive");
}

void TrainConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (batch_tokens < 1) throw ConfigError("batch_tokens must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (lr <= 0.0) throw ConfigError("lr must be > 0");
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (min_word_freq < 1) throw ConfigError("min_word_freq must be >= 1");
  if (unk_replace_prob < 0.0 || unk_replace_prob > 1.0)
    throw ConfigError("unk_replace_prob must be in [0,1]");
}

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KvConfig KvConfig::from_string(const std::string& text, const std::string& origin) {
  KvConfig kv;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ": line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ": line " + std::to_string(line_no) + ": empty key");
    kv.entries_[key] = value;
  }
  return kv;
}

KvConfig KvConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return from_string(ss.str(), path);
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

int KvConfig::get_int(const std::string& key, int fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    size_t used = 0;
    const int v = std::stoi(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + it->second + "'");
  }
}

uint64_t KvConfig::get_u64(const std::string& key, uint64_t fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    size_t used = 0;
    const uint64_t v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config key '" + key + "' expects an unsigned integer, got '" + it->second + "'");
  }
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + it->second + "'");
  }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + it->second + "'");
}

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "use_word",      "use_pos",     "use_char",   "char_encoder", "composition",
      "d_word",        "d_pos",       "d_char",     "d_char_out",   "total_layers",
      "shared_layers", "heads",       "d_model",    "d_ff",         "max_len",
      "dropout",       "span_hidden", "d_arc",      "d_label",      "mode",
      "lambda",        "batch_tokens","max_epochs", "lr",           "warmup_steps",
      "seed",          "patience",    "min_word_freq", "unk_replace_prob", "clip_norm",
      "shuffle",       "stop_f1",     "stop_uas",   "stop_las",     "pretrained_vectors"};
  return keys;
}

}  // namespace

void KvConfig::check_known_keys() const {
  for (const auto& [key, value] : entries_) {
    (void)value;
    if (!known_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
}

ModelConfig model_config_from(const KvConfig& kv) {
  ModelConfig mc;
  mc.use_word = kv.get_bool("use_word", mc.use_word);
  mc.use_pos = kv.get_bool("use_pos", mc.use_pos);
  mc.use_char = kv.get_bool("use_char", mc.use_char);
  mc.char_encoder = char_encoder_from(kv.get_string("char_encoder", to_string(mc.char_encoder)));
  mc.composition = composition_from(kv.get_string("composition", to_string(mc.composition)));
  mc.d_word = kv.get_int("d_word", mc.d_word);
  mc.d_pos = kv.get_int("d_pos", mc.d_pos);
  mc.d_char = kv.get_int("d_char", mc.d_char);
  mc.d_char_out = kv.get_int("d_char_out", mc.d_char_out);
  mc.total_layers = kv.get_int("total_layers", mc.total_layers);
  mc.shared_layers = kv.get_int("shared_layers", mc.shared_layers);
  mc.heads = kv.get_int("heads", mc.heads);
  mc.d_model = kv.get_int("d_model", mc.d_model);
  mc.d_ff = kv.get_int("d_ff", mc.d_ff);
  mc.max_len = kv.get_int("max_len", mc.max_len);
  mc.dropout = kv.get_double("dropout", mc.dropout);
  mc.span_hidden = kv.get_int("span_hidden", mc.span_hidden);
  mc.d_arc = kv.get_int("d_arc", mc.d_arc);
  mc.d_label = kv.get_int("d_label", mc.d_label);
  mc.validate();
  return mc;
}

TrainConfig train_config_from(const KvConfig& kv) {
  TrainConfig tc;
  tc.mode = train_mode_from(kv.get_string("mode", to_string(tc.mode)));
  tc.lambda = kv.get_double("lambda", tc.lambda);
  tc.batch_tokens = kv.get_int("batch_tokens", tc.batch_tokens);
  tc.max_epochs = kv.get_int("max_epochs", tc.max_epochs);
  tc.lr = kv.get_double("lr", tc.lr);
  tc.warmup_steps = kv.get_int("warmup_steps", tc.warmup_steps);
  tc.seed = kv.get_u64("seed", tc.seed);
  tc.patience = kv.get_int("patience", tc.patience);
  tc.min_word_freq = kv.get_int("min_word_freq", tc.min_word_freq);
  tc.unk_replace_prob = kv.get_double("unk_replace_prob", tc.unk_replace_prob);
  tc.clip_norm = kv.get_double("clip_norm", tc.clip_norm);
  tc.shuffle = kv.get_bool("shuffle", tc.shuffle);
  tc.stop_f1 = kv.get_double("stop_f1", tc.stop_f1);
  tc.stop_uas = kv.get_double("stop_uas", tc.stop_uas);
  tc.stop_las = kv.get_double("stop_las", tc.stop_las);
  tc.validate();
  return tc;
}

std::string config_echo(const ModelConfig& mc, const TrainConfig& tc) {
  std::map<std::string, std::string> kv;
  auto put = [&kv](const std::string& k, const std::string& v) { kv[k] = v; };
  auto num = [](double v) {
    std::ostringstream ss;
    ss << v;
    return ss.str();
  };
  put("use_word", mc.use_word ? "true" : "false");
  put("use_pos", mc.use_pos ? "true" : "false");
  put("use_char", mc.use_char ? "true" : "false");
  put("char_encoder", to_string(mc.char_encoder));
  put("composition", to_string(mc.composition));
  put("d_word", std::to_string(mc.d_word));
  put("d_pos", std::to_string(mc.d_pos));
  put("d_char", std::to_string(mc.d_char));
  put("d_char_out", std::to_string(mc.d_char_out));
  put("total_layers", std::to_string(mc.total_layers));
  put("shared_layers", std::to_string(mc.shared_layers));
  put("heads", std::to_string(mc.heads));
  put("d_model", std::to_string(mc.d_model));
  put("d_ff", std::to_string(mc.d_ff));
  put("max_len", std::to_string(mc.max_len));
  put("dropout", num(mc.dropout));
  put("span_hidden", std::to_string(mc.span_hidden));
  put("d_arc", std::to_string(mc.d_arc));
  put("d_label", std::to_string(mc.d_label));
  put("mode", to_string(tc.mode));
  put("lambda", num(tc.lambda));
  put("batch_tokens", std::to_string(tc.batch_tokens));
  put("max_epochs", std::to_string(tc.max_epochs));
  put("lr", num(tc.lr));
  put("warmup_steps", std::to_string(tc.warmup_steps));
  put("seed", std::to_string(tc.seed));
  put("patience", std::to_string(tc.patience));
  put("min_word_freq", std::to_string(tc.min_word_freq));
  put("unk_replace_prob", num(tc.unk_replace_prob));
  put("clip_norm", num(tc.clip_norm));
  put("shuffle", tc.shuffle ? "true" : "false");
  put("stop_f1", num(tc.stop_f1));
  put("stop_uas", num(tc.stop_uas));
  put("stop_las", num(tc.stop_las));
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

}  // namespace biparse
