#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "biparse/error.hpp"

namespace biparse {

enum class CharEncoder { lstm, cnn };
enum class Composition { sum, concat };
enum class TrainMode { joint, constituent_only, dependency_only };

std::string to_string(CharEncoder v);
std::string to_string(Composition v);
std::string to_string(TrainMode v);
CharEncoder char_encoder_from(const std::string& s);
Composition composition_from(const std::string& s);
TrainMode train_mode_from(const std::string& s);

struct ModelConfig {
  // Token representation.
  bool use_word = true;
  bool use_pos = true;
  bool use_char = true;
  CharEncoder char_encoder = CharEncoder::lstm;
  Composition composition = Composition::sum;
  int d_word = 64;
  int d_pos = 64;
  int d_char = 32;      // character embedding size
  int d_char_out = 64;  // per-token output of the character encoder

  // Self-attention encoder. d_model splits into a content half and a
  // position half.
  int total_layers = 8;
  int shared_layers = 8;
  int heads = 4;
  int d_model = 128;
  int d_ff = 256;
  int max_len = 512;
  double dropout = 0.1;

  // Constituent decoder.
  int span_hidden = 128;

  // Dependency decoder. The reference scale uses 1024-dimensional
  // projections; 128 is the desk-scale default.
  int d_arc = 128;
  int d_label = 64;

  int d_content() const { return d_model / 2; }
  void validate() const;
};

struct TrainConfig {
  TrainMode mode = TrainMode::joint;
  double lambda = 1.0;
  int batch_tokens = 400;
  int max_epochs = 100;
  double lr = 0.002;
  int warmup_steps = 160;
  uint64_t seed = 42;
  int patience = 10;
  int min_word_freq = 1;
  double unk_replace_prob = 0.3;
  double clip_norm = 5.0;
  bool shuffle = true;
  // Early-exit thresholds on the dev metric; 0 disables each.
  double stop_f1 = 0.0;
  double stop_uas = 0.0;
  double stop_las = 0.0;

  void validate() const;
};

// Flat "key = value" config file. '#' starts a comment; keys are
// lower_snake_case; later assignments win.
class KvConfig {
 public:
  static KvConfig from_file(const std::string& path);
  static KvConfig from_string(const std::string& text, const std::string& origin = "<string>");

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

  // Throws ConfigError on keys outside the known set.
  void check_known_keys() const;

 private:
  std::map<std::string, std::string> entries_;
};

ModelConfig model_config_from(const KvConfig& kv);
TrainConfig train_config_from(const KvConfig& kv);

// Full echo of the merged configuration, one key per line, sorted.
std::string config_echo(const ModelConfig& mc, const TrainConfig& tc);

}  // namespace biparse
