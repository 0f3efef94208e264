#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "biparse/encoder.hpp"
#include "gradcheck.hpp"
#include "param_flatten.hpp"

using namespace biparse;

namespace {

ModelConfig tiny_config() {
  ModelConfig mc;
  mc.d_model = 16;
  mc.heads = 2;
  mc.d_ff = 12;
  mc.total_layers = 2;
  mc.shared_layers = 1;
  mc.d_word = 8;
  mc.d_pos = 8;
  mc.d_char = 6;
  mc.d_char_out = 8;
  mc.span_hidden = 10;
  mc.d_arc = 10;
  mc.d_label = 6;
  mc.max_len = 16;
  mc.dropout = 0.0;
  return mc;
}

Vocabulary tiny_vocab() {
  const auto trees = read_bracketed(
      "(S (NP (DT the) (NN cat)) (VP (VBD sat) (PP (IN on) (NP (DT the) (NN mat)))))"
      "(S (NP (NN dog)) (VP (VBD ran)))");
  return Vocabulary::build(corpus_from_bracketed(trees), 1);
}

Sentence make_sentence(std::initializer_list<std::pair<const char*, const char*>> toks) {
  Sentence s;
  for (const auto& [form, pos] : toks) s.tokens.push_back({form, pos});
  return s;
}

}  // namespace

TEST_CASE("identical tokens produce identical char-encoder rows") {
  for (CharEncoder ce : {CharEncoder::lstm, CharEncoder::cnn}) {
    ModelConfig mc = tiny_config();
    mc.char_encoder = ce;
    const Vocabulary vocab = tiny_vocab();
    Rng rng(1);
    ParameterStore store;
    Encoder enc(mc, vocab, store, rng);
    Graph g;
    const auto ids = vocab.char_ids("cat");
    Tensor out = enc.encode_chars(g, {ids, vocab.char_ids("dog"), ids}, nullptr);
    REQUIRE(out.shape() == Shape{3, mc.d_char_out});
    for (int j = 0; j < mc.d_char_out; ++j) {
      CHECK(out.values()[j] == out.values()[2 * static_cast<size_t>(mc.d_char_out) + j]);
      // And the different token differs somewhere (checked once below).
    }
    bool differs = false;
    for (int j = 0; j < mc.d_char_out; ++j)
      if (out.values()[j] != out.values()[static_cast<size_t>(mc.d_char_out) + j]) differs = true;
    CHECK(differs);
  }
}

TEST_CASE("single-char token is valid through both char encoders") {
  for (CharEncoder ce : {CharEncoder::lstm, CharEncoder::cnn}) {
    ModelConfig mc = tiny_config();
    mc.char_encoder = ce;
    const Vocabulary vocab = tiny_vocab();
    Rng rng(2);
    ParameterStore store;
    Encoder enc(mc, vocab, store, rng);
    Graph g;
    Tensor out = enc.encode_chars(g, {vocab.char_ids("a")}, nullptr);
    CHECK(out.shape() == Shape{1, mc.d_char_out});
    for (double v : out.values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("sum composition with word only equals the word embedding rows") {
  ModelConfig mc = tiny_config();
  mc.use_char = false;
  mc.use_pos = false;
  const Vocabulary vocab = tiny_vocab();
  Rng rng(3);
  ParameterStore store;
  Encoder enc(mc, vocab, store, rng);
  Graph g;
  const Sentence s = make_sentence({{"the", "DT"}, {"cat", "NN"}});
  const TokenIds ids = lookup_tokens(s, vocab);
  Tensor content = enc.token_content(g, ids, nullptr);
  REQUIRE(content.shape() == Shape{4, mc.d_content()});
  const Parameter* emb = store.find("emb.word");
  const int cat_id = vocab.word_id("cat");
  for (int j = 0; j < mc.d_word; ++j)
    CHECK(content.values()[2 * static_cast<size_t>(mc.d_word) + j] ==
          emb->value[static_cast<size_t>(cat_id) * mc.d_word + j]);
}

TEST_CASE("sum composition is additive in the enabled sources") {
  ModelConfig mc = tiny_config();
  mc.use_char = false;
  const Vocabulary vocab = tiny_vocab();
  Rng rng(4);
  ParameterStore store;
  Encoder enc(mc, vocab, store, rng);
  const Sentence s = make_sentence({{"dog", "NN"}});
  const TokenIds ids = lookup_tokens(s, vocab);
  Graph g;
  Tensor both = enc.token_content(g, ids, nullptr);
  // Zero the POS table: content must reduce to the word component.
  std::fill(store.find("emb.pos")->value.begin(), store.find("emb.pos")->value.end(), 0.0);
  Graph g2;
  Tensor word_only = enc.token_content(g2, ids, nullptr);
  const Parameter* emb = store.find("emb.word");
  const int dog = vocab.word_id("dog");
  for (int j = 0; j < mc.d_word; ++j)
    CHECK(word_only.values()[static_cast<size_t>(mc.d_word) + j] ==
          emb->value[static_cast<size_t>(dog) * mc.d_word + j]);
  CHECK(both.size() == word_only.size());
}

TEST_CASE("concat composition projects to d_content") {
  ModelConfig mc = tiny_config();
  mc.composition = Composition::concat;
  mc.d_word = 10;  // 10 + 8 + 6 concatenated, projected to 8
  mc.d_pos = 6;
  const Vocabulary vocab = tiny_vocab();
  Rng rng(5);
  ParameterStore store;
  Encoder enc(mc, vocab, store, rng);
  Graph g;
  const Sentence s = make_sentence({{"the", "DT"}, {"cat", "NN"}, {"sat", "VBD"}});
  Tensor content = enc.token_content(g, lookup_tokens(s, vocab), nullptr);
  CHECK(content.shape() == Shape{5, mc.d_content()});
}

TEST_CASE("sum composition with unequal dims is a config error") {
  ModelConfig mc = tiny_config();
  mc.d_word = 12;
  CHECK_THROWS_AS(mc.validate(), ConfigError);
}

TEST_CASE("odd d_model is a config error") {
  ModelConfig mc = tiny_config();
  mc.d_model = 15;
  CHECK_THROWS_AS(mc.validate(), ConfigError);
}

TEST_CASE("ablation switches change the parameter count") {
  const Vocabulary vocab = tiny_vocab();
  auto count_for = [&](bool use_pos) {
    ModelConfig mc = tiny_config();
    mc.use_pos = use_pos;
    Rng rng(6);
    ParameterStore store;
    Encoder enc(mc, vocab, store, rng);
    return store.total_params();
  };
  CHECK(count_for(true) > count_for(false));
}

TEST_CASE("parameter count strictly decreases as shared layers go 0 to total") {
  const Vocabulary vocab = tiny_vocab();
  long long prev = -1;
  for (int k = 0; k <= 2; ++k) {
    ModelConfig mc = tiny_config();
    mc.shared_layers = k;
    Rng rng(7);
    ParameterStore store;
    Encoder enc(mc, vocab, store, rng);
    const long long total = store.total_params();
    if (prev >= 0) CHECK(total < prev);
    prev = total;
  }
}

TEST_CASE("full sharing makes both encoder outputs elementwise identical") {
  ModelConfig mc = tiny_config();
  mc.shared_layers = mc.total_layers;
  const Vocabulary vocab = tiny_vocab();
  Rng rng(8);
  ParameterStore store;
  Encoder enc(mc, vocab, store, rng);
  Graph g;
  const Sentence s = make_sentence({{"the", "DT"}, {"cat", "NN"}});
  const auto out = enc.encode(g, lookup_tokens(s, vocab), nullptr);
  REQUIRE(out.h_const.size() == out.h_dep.size());
  for (int i = 0; i < out.h_const.size(); ++i)
    CHECK(out.h_const.values()[i] == out.h_dep.values()[i]);
}

TEST_CASE("zero sharing gives different decoder views under random init") {
  ModelConfig mc = tiny_config();
  mc.shared_layers = 0;
  const Vocabulary vocab = tiny_vocab();
  Rng rng(9);
  ParameterStore store;
  Encoder enc(mc, vocab, store, rng);
  Graph g;
  const Sentence s = make_sentence({{"the", "DT"}, {"cat", "NN"}});
  const auto out = enc.encode(g, lookup_tokens(s, vocab), nullptr);
  bool differs = false;
  for (int i = 0; i < out.h_const.size(); ++i)
    if (out.h_const.values()[i] != out.h_dep.values()[i]) differs = true;
  CHECK(differs);
}

TEST_CASE("encoder is position sensitive") {
  ModelConfig mc = tiny_config();
  const Vocabulary vocab = tiny_vocab();
  Rng rng(10);
  ParameterStore store;
  Encoder enc(mc, vocab, store, rng);
  const Sentence fwd = make_sentence({{"the", "DT"}, {"cat", "NN"}, {"sat", "VBD"}});
  const Sentence rev = make_sentence({{"sat", "VBD"}, {"cat", "NN"}, {"the", "DT"}});
  Graph g1, g2;
  const auto o1 = enc.encode(g1, lookup_tokens(fwd, vocab), nullptr);
  const auto o2 = enc.encode(g2, lookup_tokens(rev, vocab), nullptr);
  // Compare the middle token's row (same word 'cat' both times, same
  // absolute position): context must change it.
  bool differs = false;
  const int d = mc.d_model;
  for (int j = 0; j < d; ++j)
    if (o1.h_const.values()[2 * static_cast<size_t>(d) + j] !=
        o2.h_const.values()[2 * static_cast<size_t>(d) + j])
      differs = true;
  CHECK(differs);
}

TEST_CASE("encode deterministic with dropout disabled") {
  ModelConfig mc = tiny_config();
  const Vocabulary vocab = tiny_vocab();
  Rng rng(11);
  ParameterStore store;
  Encoder enc(mc, vocab, store, rng);
  const Sentence s = make_sentence({{"dog", "NN"}, {"ran", "VBD"}});
  auto run = [&] {
    Graph g;
    const auto out = enc.encode(g, lookup_tokens(s, vocab), nullptr);
    return std::vector<double>(out.h_dep.values().begin(), out.h_dep.values().end());
  };
  CHECK(run() == run());
}

TEST_CASE("attend on a single position keeps shape and stays finite") {
  ModelConfig mc = tiny_config();
  const Vocabulary vocab = tiny_vocab();
  Rng rng(12);
  ParameterStore store;
  Encoder enc(mc, vocab, store, rng);
  Graph g;
  std::vector<double> x(static_cast<size_t>(mc.d_model));
  Rng xr(13);
  for (double& v : x) v = xr.normal();
  Tensor out = enc.attend(g, g.input({1, mc.d_model}, x), 0, true, nullptr);
  CHECK(out.shape() == Shape{1, mc.d_model});
  for (double v : out.values()) CHECK(std::isfinite(v));
}

TEST_CASE("stochastic UNK replacement only hits singletons during training") {
  const Vocabulary vocab = tiny_vocab();  // every word occurs once except 'the'
  const Sentence s = make_sentence({{"dog", "NN"}, {"the", "DT"}});
  Rng unk_rng(14);
  int dog_unked = 0, the_unked = 0;
  for (int i = 0; i < 200; ++i) {
    const TokenIds ids = lookup_tokens(s, vocab, &unk_rng, 0.3);
    if (ids.word_ids[0] == Vocabulary::kUnk) ++dog_unked;
    if (ids.word_ids[1] == Vocabulary::kUnk) ++the_unked;
  }
  CHECK(dog_unked > 20);
  CHECK(dog_unked < 120);
  CHECK(the_unked == 0);
  // Eval mode never replaces.
  const TokenIds ids = lookup_tokens(s, vocab);
  CHECK(ids.word_ids[0] != Vocabulary::kUnk);
}

TEST_CASE("gradient check through char encoders on a 2-token sentence") {
  for (CharEncoder ce : {CharEncoder::lstm, CharEncoder::cnn}) {
    ModelConfig mc = tiny_config();
    mc.char_encoder = ce;
    const Vocabulary vocab = tiny_vocab();
    Rng rng(15);
    ParameterStore store;
    Encoder enc(mc, vocab, store, rng);
    const std::vector<std::vector<int>> seqs{vocab.char_ids("cat"), vocab.char_ids("on")};

    Rng wrng(16);
    std::vector<double> weights(static_cast<size_t>(2 * mc.d_char_out));
    for (double& v : weights) v = wrng.uniform(-1.0, 1.0);

    auto eval = [&](std::span<const double> flat, std::vector<double>* grads) {
      testutil::unflatten_params(store, flat);
      Graph g;
      Tensor out = enc.encode_chars(g, seqs, nullptr);
      Tensor loss = g.sum(g.mul(out, g.input(out.shape(), weights)));
      if (grads) {
        store.zero_grads();
        g.backward(loss);
        *grads = testutil::collect_grads(store);
      }
      return loss.item();
    };

    const std::vector<double> x0 = testutil::flatten_params(store);
    std::vector<double> analytic;
    eval(x0, &analytic);
    const auto res = gradcheck::check([&](std::span<const double> xs) { return eval(xs, nullptr); },
                                      x0, analytic, 1e-6);
    INFO("char encoder " << to_string(ce) << " worst " << res.worst_index);
    CHECK(res.max_rel_err < 1e-4);
    testutil::unflatten_params(store, x0);
  }
}

TEST_CASE("gradient check through one full attention layer") {
  ModelConfig mc = tiny_config();
  mc.total_layers = 1;
  mc.shared_layers = 1;
  mc.use_char = false;  // keep the parameter count small; chars covered above
  const Vocabulary vocab = tiny_vocab();
  Rng rng(17);
  ParameterStore store;
  Encoder enc(mc, vocab, store, rng);
  const Sentence s = make_sentence({{"the", "DT"}, {"cat", "NN"}, {"sat", "VBD"}});
  const TokenIds ids = lookup_tokens(s, vocab);

  Rng wrng(18);
  std::vector<double> weights(static_cast<size_t>(5 * mc.d_model));
  for (double& v : weights) v = wrng.uniform(-1.0, 1.0);

  auto eval = [&](std::span<const double> flat, std::vector<double>* grads) {
    testutil::unflatten_params(store, flat);
    Graph g;
    const auto out = enc.encode(g, ids, nullptr);
    Tensor loss = g.sum(g.mul(out.h_const, g.input(out.h_const.shape(), weights)));
    if (grads) {
      store.zero_grads();
      g.backward(loss);
      *grads = testutil::collect_grads(store);
    }
    return loss.item();
  };

  const std::vector<double> x0 = testutil::flatten_params(store);
  std::vector<double> analytic;
  eval(x0, &analytic);
  const auto res = gradcheck::check([&](std::span<const double> xs) { return eval(xs, nullptr); },
                                    x0, analytic, 1e-6);
  INFO("worst index " << res.worst_index << " analytic " << res.analytic << " numeric "
                      << res.numeric);
  CHECK(res.max_rel_err < 1e-4);
}
