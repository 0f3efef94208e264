#include "biparse/encoder.hpp"

#include <cmath>
#include <numeric>

namespace biparse {

TokenIds lookup_tokens(const Sentence& sentence, const Vocabulary& vocab, Rng* unk_rng,
                       double unk_prob) {
  TokenIds ids;
  ids.n = sentence.size();
  for (const Token& t : sentence.tokens) {
    int wid = vocab.word_id(t.form);
    if (unk_rng && unk_prob > 0.0 && wid != Vocabulary::kUnk && vocab.is_singleton(t.form) &&
        unk_rng->bernoulli(unk_prob))
      wid = Vocabulary::kUnk;
    ids.word_ids.push_back(wid);
    ids.pos_ids.push_back(vocab.pos_id(t.pos));
    ids.char_ids.push_back(vocab.char_ids(t.form));
  }
  return ids;
}

namespace {

constexpr int kConvWidths[3] = {2, 3, 4};

}  // namespace

Encoder::LayerParams Encoder::make_layer(const std::string& prefix, ParameterStore& store,
                                         Rng& rng) {
  const int d = config_.d_model;
  const int half = d / 2;
  const int ff = config_.d_ff;
  LayerParams lp;
  lp.wq_c = &store.add(prefix + ".attn.wq_c", {half, half}, Init::xavier, rng);
  lp.wk_c = &store.add(prefix + ".attn.wk_c", {half, half}, Init::xavier, rng);
  lp.wv_c = &store.add(prefix + ".attn.wv_c", {half, half}, Init::xavier, rng);
  lp.wo_c = &store.add(prefix + ".attn.wo_c", {half, half}, Init::xavier, rng);
  lp.wq_p = &store.add(prefix + ".attn.wq_p", {half, half}, Init::xavier, rng);
  lp.wk_p = &store.add(prefix + ".attn.wk_p", {half, half}, Init::xavier, rng);
  lp.wv_p = &store.add(prefix + ".attn.wv_p", {half, half}, Init::xavier, rng);
  lp.wo_p = &store.add(prefix + ".attn.wo_p", {half, half}, Init::xavier, rng);
  lp.ln1_g = &store.add(prefix + ".ln1.gain", {d}, Init::ones, rng);
  lp.ln1_b = &store.add(prefix + ".ln1.bias", {d}, Init::zeros, rng);
  lp.ln2_g = &store.add(prefix + ".ln2.gain", {d}, Init::ones, rng);
  lp.ln2_b = &store.add(prefix + ".ln2.bias", {d}, Init::zeros, rng);
  lp.fc_w1 = &store.add(prefix + ".ffn_c.w1", {half, ff}, Init::xavier, rng);
  lp.fc_b1 = &store.add(prefix + ".ffn_c.b1", {ff}, Init::zeros, rng);
  lp.fc_w2 = &store.add(prefix + ".ffn_c.w2", {ff, half}, Init::xavier, rng);
  lp.fc_b2 = &store.add(prefix + ".ffn_c.b2", {half}, Init::zeros, rng);
  lp.fp_w1 = &store.add(prefix + ".ffn_p.w1", {half, ff}, Init::xavier, rng);
  lp.fp_b1 = &store.add(prefix + ".ffn_p.b1", {ff}, Init::zeros, rng);
  lp.fp_w2 = &store.add(prefix + ".ffn_p.w2", {ff, half}, Init::xavier, rng);
  lp.fp_b2 = &store.add(prefix + ".ffn_p.b2", {half}, Init::zeros, rng);
  return lp;
}

Encoder::Encoder(const ModelConfig& config, const Vocabulary& vocab, ParameterStore& store,
                 Rng& rng, const PretrainedVectors* pretrained)
    : config_(config),
      n_words_(vocab.n_words()),
      n_pos_(vocab.n_pos()),
      n_chars_(vocab.n_chars()) {
  config_.validate();
  if (config_.use_word) {
    word_emb_ = &store.add("emb.word", {n_words_, config_.d_word}, Init::normal_0_1, rng);
    if (pretrained && pretrained->dim > 0) {
      pretrained_emb_ = &store.add("emb.pretrained", {n_words_, pretrained->dim}, Init::zeros, rng);
      pretrained_emb_->value = pretrained->data;
      pretrained_emb_->trainable = false;
      pretrained_proj_ =
          &store.add("emb.pretrained_proj", {pretrained->dim, config_.d_word}, Init::xavier, rng);
    }
  }
  if (config_.use_pos) pos_emb_ = &store.add("emb.pos", {n_pos_, config_.d_pos}, Init::normal_0_1, rng);
  if (config_.use_char) {
    char_emb_ = &store.add("emb.char", {n_chars_, config_.d_char}, Init::normal_0_1, rng);
    if (config_.char_encoder == CharEncoder::lstm) {
      const int h = config_.d_char_out / 2;
      if (h * 2 != config_.d_char_out)
        throw ConfigError("d_char_out must be even for the recurrent char encoder");
      char_fwd_w_ = &store.add("char.fwd.w", {config_.d_char + h, 4 * h}, Init::xavier, rng);
      char_fwd_b_ = &store.add("char.fwd.b", {4 * h}, Init::zeros, rng);
      char_bwd_w_ = &store.add("char.bwd.w", {config_.d_char + h, 4 * h}, Init::xavier, rng);
      char_bwd_b_ = &store.add("char.bwd.b", {4 * h}, Init::zeros, rng);
      // Forget-gate bias starts at 1.
      for (int i = h; i < 2 * h; ++i) {
        char_fwd_b_->value[static_cast<size_t>(i)] = 1.0;
        char_bwd_b_->value[static_cast<size_t>(i)] = 1.0;
      }
    } else {
      for (int w : kConvWidths) {
        conv_w_.push_back(&store.add("char.conv" + std::to_string(w) + ".w",
                                     {w * config_.d_char, config_.d_char_out}, Init::xavier, rng));
        conv_b_.push_back(&store.add("char.conv" + std::to_string(w) + ".b",
                                     {config_.d_char_out}, Init::zeros, rng));
      }
      char_proj_w_ = &store.add("char.proj.w", {3 * config_.d_char_out, config_.d_char_out},
                                Init::xavier, rng);
      char_proj_b_ = &store.add("char.proj.b", {config_.d_char_out}, Init::zeros, rng);
    }
  }
  if (config_.composition == Composition::concat) {
    int total = 0;
    if (config_.use_word) total += config_.d_word;
    if (config_.use_pos) total += config_.d_pos;
    if (config_.use_char) total += config_.d_char_out;
    comp_w_ = &store.add("comp.proj.w", {total, config_.d_content()}, Init::xavier, rng);
    comp_b_ = &store.add("comp.proj.b", {config_.d_content()}, Init::zeros, rng);
  }
  position_table_ =
      &store.add("position_table", {config_.max_len, config_.d_model / 2}, Init::normal_0_1, rng);

  for (int i = 0; i < config_.shared_layers; ++i)
    shared_layers_.push_back(make_layer("enc.shared" + std::to_string(i), store, rng));
  for (int i = config_.shared_layers; i < config_.total_layers; ++i) {
    const_layers_.push_back(make_layer("enc.const" + std::to_string(i), store, rng));
    dep_layers_.push_back(make_layer("enc.dep" + std::to_string(i), store, rng));
  }
}

Tensor Encoder::maybe_dropout(Graph& g, Tensor t, Rng* rng) const {
  if (!rng || config_.dropout == 0.0) return t;
  return g.dropout(t, config_.dropout, *rng);
}

Tensor Encoder::encode_chars(Graph& g, const std::vector<std::vector<int>>& char_seqs,
                             Rng* dropout_rng) const {
  (void)dropout_rng;
  if (!config_.use_char) throw ConfigError("char encoder disabled by config");
  Tensor table = g.param(*char_emb_);
  std::vector<Tensor> rows;
  rows.reserve(char_seqs.size());
  if (config_.char_encoder == CharEncoder::lstm) {
    const int h = config_.d_char_out / 2;
    Tensor wf = g.param(*char_fwd_w_);
    Tensor bf = g.param(*char_fwd_b_);
    Tensor wb = g.param(*char_bwd_w_);
    Tensor bb = g.param(*char_bwd_b_);
    auto run_dir = [&](const std::vector<int>& seq, bool reverse, Tensor w, Tensor b) {
      Tensor hs = g.constant({1, h}, 0.0);
      Tensor cs = g.constant({1, h}, 0.0);
      Tensor emb = g.rows(table, seq);
      const int len = static_cast<int>(seq.size());
      for (int s = 0; s < len; ++s) {
        const int t = reverse ? len - 1 - s : s;
        Tensor x_t = g.slice(emb, 0, t, t + 1);
        Tensor z = g.concat({x_t, hs}, 1);
        Tensor gates = g.add_rowwise(g.matmul(z, w), b);
        Tensor i_g = g.sigmoid(g.slice(gates, 1, 0, h));
        Tensor f_g = g.sigmoid(g.slice(gates, 1, h, 2 * h));
        Tensor o_g = g.sigmoid(g.slice(gates, 1, 2 * h, 3 * h));
        Tensor c_in = g.tanh(g.slice(gates, 1, 3 * h, 4 * h));
        cs = g.add(g.mul(f_g, cs), g.mul(i_g, c_in));
        hs = g.mul(o_g, g.tanh(cs));
      }
      return hs;
    };
    for (const auto& seq : char_seqs) {
      if (seq.empty()) throw DataError("token with empty character sequence");
      Tensor fwd = run_dir(seq, false, wf, bf);
      Tensor bwd = run_dir(seq, true, wb, bb);
      rows.push_back(g.concat({fwd, bwd}, 1));
    }
  } else {
    Tensor proj_w = g.param(*char_proj_w_);
    Tensor proj_b = g.param(*char_proj_b_);
    for (const auto& seq : char_seqs) {
      if (seq.empty()) throw DataError("token with empty character sequence");
      Tensor emb = g.rows(table, seq);
      std::vector<Tensor> pooled;
      for (size_t wi = 0; wi < conv_w_.size(); ++wi) {
        Tensor conv = g.conv1d(emb, g.param(*conv_w_[wi]), g.param(*conv_b_[wi]), kConvWidths[wi]);
        pooled.push_back(g.max_axis0(g.relu(conv)));
      }
      Tensor cat = g.reshape(g.concat(pooled, 0), {1, 3 * config_.d_char_out});
      rows.push_back(g.add_rowwise(g.matmul(cat, proj_w), proj_b));
    }
  }
  return g.concat(rows, 0);
}

Tensor Encoder::token_content(Graph& g, const TokenIds& ids, Rng* dropout_rng) const {
  const int rows = ids.n + 2;
  std::vector<Tensor> parts;

  std::vector<int> padded_words{Vocabulary::kRoot};
  padded_words.insert(padded_words.end(), ids.word_ids.begin(), ids.word_ids.end());
  padded_words.push_back(Vocabulary::kStop);

  Tensor word_part, pos_part, char_part;
  if (config_.use_word) {
    word_part = g.rows(g.param(*word_emb_), padded_words);
    if (pretrained_emb_) {
      Tensor pre = g.rows(g.param(*pretrained_emb_), padded_words);
      word_part = g.add(word_part, g.matmul(pre, g.param(*pretrained_proj_)));
    }
    parts.push_back(word_part);
  }
  if (config_.use_char) {
    std::vector<std::vector<int>> padded_chars;
    padded_chars.reserve(static_cast<size_t>(rows));
    padded_chars.push_back({Vocabulary::kRoot});
    for (const auto& cs : ids.char_ids) padded_chars.push_back(cs);
    padded_chars.push_back({Vocabulary::kStop});
    char_part = encode_chars(g, padded_chars, dropout_rng);
    parts.push_back(char_part);
  }
  if (config_.use_pos) {
    std::vector<int> padded_pos{Vocabulary::kRoot};
    padded_pos.insert(padded_pos.end(), ids.pos_ids.begin(), ids.pos_ids.end());
    padded_pos.push_back(Vocabulary::kStop);
    pos_part = g.rows(g.param(*pos_emb_), padded_pos);
    parts.push_back(pos_part);
  }

  Tensor content;
  if (config_.composition == Composition::sum) {
    content = parts[0];
    for (size_t i = 1; i < parts.size(); ++i) content = g.add(content, parts[i]);
  } else {
    content = parts.size() == 1 ? parts[0] : g.concat(parts, 1);
    content = g.add_rowwise(g.matmul(content, g.param(*comp_w_)), g.param(*comp_b_));
  }
  return content;
}

Tensor Encoder::run_layer(Graph& g, Tensor x, const LayerParams& lp, Rng* dropout_rng) const {
  const int d = config_.d_model;
  const int half = d / 2;
  const int heads = config_.heads;
  const int hd = half / heads;
  const int t = x.dim(0);
  const double scale = 1.0 / std::sqrt(2.0 * hd);

  Tensor c = g.slice(x, 1, 0, half);
  Tensor p = g.slice(x, 1, half, d);
  Tensor qc = g.matmul(c, g.param(*lp.wq_c));
  Tensor kc = g.matmul(c, g.param(*lp.wk_c));
  Tensor vc = g.matmul(c, g.param(*lp.wv_c));
  Tensor qp = g.matmul(p, g.param(*lp.wq_p));
  Tensor kp = g.matmul(p, g.param(*lp.wk_p));
  Tensor vp = g.matmul(p, g.param(*lp.wv_p));

  std::vector<Tensor> head_c, head_p;
  for (int hidx = 0; hidx < heads; ++hidx) {
    const int b = hidx * hd, e = (hidx + 1) * hd;
    Tensor qch = g.slice(qc, 1, b, e);
    Tensor kch = g.slice(kc, 1, b, e);
    Tensor qph = g.slice(qp, 1, b, e);
    Tensor kph = g.slice(kp, 1, b, e);
    // Content and position channels contribute separate dot products.
    Tensor logits = g.scale(g.add(g.matmul(qch, g.transpose(kch)), g.matmul(qph, g.transpose(kph))),
                            scale);
    Tensor probs = g.softmax(logits, 1);
    probs = maybe_dropout(g, probs, dropout_rng);
    head_c.push_back(g.matmul(probs, g.slice(vc, 1, b, e)));
    head_p.push_back(g.matmul(probs, g.slice(vp, 1, b, e)));
  }
  Tensor oc = g.matmul(heads == 1 ? head_c[0] : g.concat(head_c, 1), g.param(*lp.wo_c));
  Tensor op = g.matmul(heads == 1 ? head_p[0] : g.concat(head_p, 1), g.param(*lp.wo_p));
  Tensor attn_out = g.concat({oc, op}, 1);
  x = g.layer_norm(g.add(x, maybe_dropout(g, attn_out, dropout_rng)), g.param(*lp.ln1_g),
                   g.param(*lp.ln1_b));

  Tensor c2 = g.slice(x, 1, 0, half);
  Tensor p2 = g.slice(x, 1, half, d);
  Tensor fc = g.add_rowwise(
      g.matmul(g.relu(g.add_rowwise(g.matmul(c2, g.param(*lp.fc_w1)), g.param(*lp.fc_b1))),
               g.param(*lp.fc_w2)),
      g.param(*lp.fc_b2));
  Tensor fp = g.add_rowwise(
      g.matmul(g.relu(g.add_rowwise(g.matmul(p2, g.param(*lp.fp_w1)), g.param(*lp.fp_b1))),
               g.param(*lp.fp_w2)),
      g.param(*lp.fp_b2));
  Tensor ffn_out = g.concat({fc, fp}, 1);
  x = g.layer_norm(g.add(x, maybe_dropout(g, ffn_out, dropout_rng)), g.param(*lp.ln2_g),
                   g.param(*lp.ln2_b));
  (void)t;
  return x;
}

Tensor Encoder::attend(Graph& g, Tensor x, int layer, bool const_path, Rng* dropout_rng) const {
  if (layer < config_.shared_layers) return run_layer(g, x, shared_layers_[static_cast<size_t>(layer)], dropout_rng);
  const auto& layers = const_path ? const_layers_ : dep_layers_;
  return run_layer(g, x, layers[static_cast<size_t>(layer - config_.shared_layers)], dropout_rng);
}

Encoder::Output Encoder::encode(Graph& g, const TokenIds& ids, Rng* dropout_rng) const {
  const int rows = ids.n + 2;
  if (rows > config_.max_len)
    throw DataError("sentence length " + std::to_string(ids.n) + " exceeds max_len " +
                    std::to_string(config_.max_len));
  Tensor content = token_content(g, ids, dropout_rng);
  std::vector<int> positions(static_cast<size_t>(rows));
  std::iota(positions.begin(), positions.end(), 0);
  Tensor pos = g.rows(g.param(*position_table_), positions);
  Tensor x = g.concat({content, pos}, 1);
  x = maybe_dropout(g, x, dropout_rng);

  for (const auto& lp : shared_layers_) x = run_layer(g, x, lp, dropout_rng);

  Tensor xc = x;
  for (const auto& lp : const_layers_) xc = run_layer(g, xc, lp, dropout_rng);
  Tensor xd = x;
  for (const auto& lp : dep_layers_) xd = run_layer(g, xd, lp, dropout_rng);
  return {xc, xd};
}

}  // namespace biparse
