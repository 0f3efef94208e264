#pragma once

#include <vector>

#include "biparse/config.hpp"
#include "biparse/tensor.hpp"
#include "biparse/treebank.hpp"
#include "biparse/trees.hpp"

namespace biparse {

// Model-ready id view of a sentence. Boundary markers are added inside the
// encoder, not here.
struct TokenIds {
  std::vector<int> word_ids;
  std::vector<int> pos_ids;
  std::vector<std::vector<int>> char_ids;
  int n = 0;
};

// unk_rng non-null enables train-time stochastic UNK replacement of
// singleton words with probability unk_prob.
TokenIds lookup_tokens(const Sentence& sentence, const Vocabulary& vocab, Rng* unk_rng = nullptr,
                       double unk_prob = 0.0);

// Token representation and the partitioned self-attention stack. Rows of the
// encoded matrix are [content ; position] halves; row 0 is the start marker
// (which doubles as ROOT for the dependency decoder), row n+1 the stop
// marker.
class Encoder {
 public:
  Encoder(const ModelConfig& config, const Vocabulary& vocab, ParameterStore& store,
          Rng& init_rng, const PretrainedVectors* pretrained = nullptr);

  struct Output {
    Tensor h_const;  // [n+2, d_model]
    Tensor h_dep;    // [n+2, d_model]
  };

  // dropout_rng non-null => training mode.
  Output encode(Graph& g, const TokenIds& ids, Rng* dropout_rng) const;

  // Character encoder over one character-id sequence per row; [rows, d_char_out].
  Tensor encode_chars(Graph& g, const std::vector<std::vector<int>>& char_seqs,
                      Rng* dropout_rng) const;

  // Composed token content for the padded sequence; [n+2, d_content].
  Tensor token_content(Graph& g, const TokenIds& ids, Rng* dropout_rng) const;

  // One attention layer; exposed for gradient checks.
  Tensor attend(Graph& g, Tensor x, int layer, bool const_path, Rng* dropout_rng) const;

  const ModelConfig& config() const { return config_; }

 private:
  struct LayerParams {
    Parameter *wq_c, *wk_c, *wv_c, *wo_c;
    Parameter *wq_p, *wk_p, *wv_p, *wo_p;
    Parameter *ln1_g, *ln1_b, *ln2_g, *ln2_b;
    Parameter *fc_w1, *fc_b1, *fc_w2, *fc_b2;
    Parameter *fp_w1, *fp_b1, *fp_w2, *fp_b2;
  };

  LayerParams make_layer(const std::string& prefix, ParameterStore& store, Rng& rng);
  Tensor run_layer(Graph& g, Tensor x, const LayerParams& lp, Rng* dropout_rng) const;
  Tensor maybe_dropout(Graph& g, Tensor t, Rng* dropout_rng) const;

  ModelConfig config_;
  int n_words_, n_pos_, n_chars_;

  Parameter* word_emb_ = nullptr;
  Parameter* pretrained_emb_ = nullptr;  // frozen
  Parameter* pretrained_proj_ = nullptr;
  Parameter* pos_emb_ = nullptr;
  Parameter* char_emb_ = nullptr;
  // CharLSTM (one direction each).
  Parameter *char_fwd_w_ = nullptr, *char_fwd_b_ = nullptr;
  Parameter *char_bwd_w_ = nullptr, *char_bwd_b_ = nullptr;
  // CharCNN.
  std::vector<Parameter*> conv_w_, conv_b_;
  Parameter *char_proj_w_ = nullptr, *char_proj_b_ = nullptr;
  // Concat composition projection.
  Parameter *comp_w_ = nullptr, *comp_b_ = nullptr;
  // Learned position table [max_len, d_model/2].
  Parameter* position_table_ = nullptr;

  std::vector<LayerParams> shared_layers_, const_layers_, dep_layers_;
};

}  // namespace biparse
