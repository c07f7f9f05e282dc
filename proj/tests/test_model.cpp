#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "xlgen/decode.hpp"
#include "xlgen/langspace.hpp"
#include "xlgen/metalearn.hpp"
#include "xlgen/model.hpp"
#include "xlgen/model_forward.hpp"
#include "xlgen/objective.hpp"
#include "xlgen/train.hpp"

using namespace xlgen;

namespace {

Tokenizer tiny_tokenizer() { return Tokenizer::charset({"aa", "bb"}, 2, "abcdef"); }

ModelConfig tiny_config(const Tokenizer& tok) {
  ModelConfig cfg;
  cfg.vocab_size = tok.vocab_size();
  cfg.d_model = 4;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 8;
  cfg.max_positions = 16;
  return cfg;
}

std::vector<TokenPair> tiny_batch(const Tokenizer& tok) {
  Example e1{"abc", "cb", "aa", Task::summarization};
  Example e2{"fed", "def", "bb", Task::summarization};
  std::vector<TokenPair> batch;
  for (const auto& ex : {e1, e2}) {
    auto [input, target] = tag_example(ex, tok);
    batch.push_back({input.tokens, target});
  }
  return batch;
}

}  // namespace

TEST_CASE("init_model is deterministic and rejects bad dims") {
  Tokenizer tok = tiny_tokenizer();
  ModelConfig cfg = tiny_config(tok);
  Model a = init_model(cfg, tok, 7);
  Model b = init_model(cfg, tok, 7);
  for (const auto& [name, t] : a.params.tensors) CHECK(bitwise_equal(t, b.params.at(name)));
  Model c = init_model(cfg, tok, 8);
  CHECK(params_hash(c.params) != params_hash(a.params));

  ModelConfig bad = cfg;
  bad.d_model = 32;
  bad.n_heads = 5;
  CHECK_THROWS_AS(init_model(bad, tok, 1), ConfigError);
}

TEST_CASE("parameter count matches the analytic formula") {
  Tokenizer tok = Tokenizer::bytes({"en", "hi", "es"}, 16);
  ModelConfig cfg;
  cfg.vocab_size = tok.vocab_size();
  cfg.d_model = 64;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.d_ff = 128;
  cfg.max_positions = 64;
  Model m = init_model(cfg, tok, 1);
  CHECK(m.params.num_scalars() == expected_parameter_count(cfg));

  // d*V + L*(2d + 4d^2 + 2*d*ff) + L*(3d + 8d^2 + 2*d*ff) + 2d
  const std::size_t d = 64, ff = 128, V = tok.vocab_size(), L = 2;
  const std::size_t by_hand = V * d + L * (2 * d + 4 * d * d + 2 * d * ff) +
                              L * (3 * d + 8 * d * d + 2 * d * ff) + 2 * d;
  CHECK(m.params.num_scalars() == by_hand);
}

TEST_CASE("loss with identical embedding rows is log V per position") {
  // All-equal embedding rows force uniform output logits regardless of the
  // decoder state, so unsmoothed cross entropy is exactly ln V.
  Tokenizer tok = tiny_tokenizer();
  ModelConfig cfg = tiny_config(tok);
  Model m = init_model(cfg, tok, 3);
  Tensor& emb = m.params.at("token_embeddings");
  for (int r = 0; r < emb.rows; ++r) {
    for (int c = 0; c < emb.cols; ++c) emb.at(r, c) = 0.3 + 0.1 * c;
  }
  Example ex{"abc", "fa", "aa", Task::summarization};
  auto [input, target] = tag_example(ex, tok);
  const double l = loss(m, input, target, 0.0);
  CHECK(l == Catch::Approx(std::log(double(tok.vocab_size()))).epsilon(1e-12));
}

TEST_CASE("label smoothing floor at the optimal distribution") {
  // Logits equal to log q, where q is the smoothed target distribution,
  // reach the analytic entropy floor H(q).
  const int vocab = 9;
  const double eps = 0.1;
  const double q_hit = 1.0 - eps + eps / vocab;
  const double q_miss = eps / vocab;
  Graph<double> g;
  Tensor logits(4, vocab);
  std::vector<int> targets{2, 0, 5, 7};
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < vocab; ++c) {
      logits.at(r, c) = std::log(c == targets[r] ? q_hit : q_miss);
    }
  }
  auto loss_id = g.ce_label_smooth(g.input(logits, false), targets, eps);
  const double floor = -(q_hit * std::log(q_hit) + (vocab - 1) * q_miss * std::log(q_miss));
  CHECK(g.val(loss_id).v[0] == Catch::Approx(4.0 * floor).epsilon(1e-12));
}

TEST_CASE("model gradients match central finite differences") {
  Tokenizer tok = tiny_tokenizer();
  ModelConfig cfg = tiny_config(tok);
  Model m = init_model(cfg, tok, 11);
  REQUIRE(m.params.num_scalars() <= 1000);

  SeqBatchObjective obj(cfg, tiny_batch(tok), 0.1);
  ParameterSet grad;
  obj.value_and_grad(m.params, grad);

  const double h = 1e-5;
  double max_rel = 0.0;
  for (auto& [name, t] : m.params.tensors) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double keep = t.v[i];
      t.v[i] = keep + h;
      const double up = obj.value(m.params);
      t.v[i] = keep - h;
      const double dn = obj.value(m.params);
      t.v[i] = keep;
      const double fd = (up - dn) / (2 * h);
      const double a = grad.at(name).v[i];
      const double rel = std::fabs(a - fd) / std::max(1e-6, std::fabs(a) + std::fabs(fd));
      max_rel = std::max(max_rel, rel);
    }
  }
  CHECK(max_rel < 1e-4);
}

TEST_CASE("loss is permutation covariant in the batch") {
  Tokenizer tok = tiny_tokenizer();
  ModelConfig cfg = tiny_config(tok);
  Model m = init_model(cfg, tok, 13);
  auto batch = tiny_batch(tok);
  SeqBatchObjective fwd(cfg, batch, 0.1);
  std::reverse(batch.begin(), batch.end());
  SeqBatchObjective rev(cfg, batch, 0.1);
  CHECK(std::fabs(fwd.value(m.params) - rev.value(m.params)) < 1e-6);
}

TEST_CASE("freeze mask keeps tensors bitwise unchanged through training") {
  Tokenizer tok = tiny_tokenizer();
  ModelConfig cfg = tiny_config(tok);
  Model m = init_model(cfg, tok, 17);
  m = apply_freeze(std::move(m), FreezeMask{{"token_embeddings", "decoder.*"}});
  const ParameterSet before = m.params;

  Example ex{"abcfed", "fedabc", "aa", Task::summarization};
  std::vector<Example> data(8, ex);
  TrainConfig tc;
  tc.steps = 100;
  tc.lr = 1e-2;
  tc.batch_size = 4;
  Rng rng(5);
  supervised_train(m, task_batch_provider(data, tok, tc.batch_size), tc, rng);

  bool encoder_changed = false;
  for (const auto& [name, t] : m.params.tensors) {
    if (m.freeze.matches(name)) {
      CHECK(bitwise_equal(t, before.at(name)));
    } else if (!bitwise_equal(t, before.at(name))) {
      encoder_changed = true;
    }
  }
  CHECK(encoder_changed);
}

TEST_CASE("freezing everything makes training a no-op") {
  Tokenizer tok = tiny_tokenizer();
  ModelConfig cfg = tiny_config(tok);
  Model m = init_model(cfg, tok, 19);
  m = apply_freeze(std::move(m), FreezeMask{{"*"}});
  const std::uint64_t before = params_hash(m.params);

  Example ex{"abc", "cba", "aa", Task::summarization};
  Model adapted = few_shot_adapt(m, {ex}, 10, 0.1, m.freeze);
  CHECK(params_hash(adapted.params) == before);

  CHECK_THROWS_AS(apply_freeze(m, FreezeMask{{"nonexistent.*"}}), ConfigError);
}

TEST_CASE("incremental decoding matches the differentiable forward pass") {
  Tokenizer tok = tiny_tokenizer();
  ModelConfig cfg = tiny_config(tok);
  cfg.n_layers = 2;
  Model m = init_model(cfg, tok, 23);
  Example ex{"fcba", "bdf", "bb", Task::summarization};
  auto [input, target] = tag_example(ex, tok);
  const auto dec_in = decoder_input_for(target);
  const Tensor logits = forward_logits(cfg, m.params, input.tokens, dec_in);

  const Tensor memory = encode_source(cfg, m.params, input.tokens);
  DecoderCache cache = make_decoder_cache(cfg, m.params, memory);
  for (std::size_t t = 0; t < dec_in.size(); ++t) {
    const auto step_logits = decode_step(cfg, m.params, cache, dec_in[t]);
    for (int v = 0; v < logits.cols; ++v) {
      CHECK(step_logits[v] == Catch::Approx(logits.at(static_cast<int>(t), v)).margin(1e-9));
    }
  }
}

TEST_CASE("encoder plain path matches the graph path") {
  Tokenizer tok = tiny_tokenizer();
  ModelConfig cfg = tiny_config(tok);
  Model m = init_model(cfg, tok, 29);
  std::vector<int> tokens = {tok.source_tag_id("aa"), tok.target_tag_id("aa")};
  auto more = tok.encode("cafe");
  tokens.insert(tokens.end(), more.begin(), more.end());
  const Tensor a = forward_encode(cfg, m.params, tokens);
  const Tensor b = encode_source(cfg, m.params, tokens);
  REQUIRE(a.rows == b.rows);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.v[i] == Catch::Approx(b.v[i]).margin(1e-10));
}

namespace {

// Greedy reference: argmax step by step with the same suppression rules.
std::vector<int> greedy_reference(const Model& m, const TaggedSequence& input,
                                  const DecodeConfig& cfg) {
  const Tensor memory = encode_source(m.config, m.params, input.tokens);
  DecoderCache cache = make_decoder_cache(m.config, m.params, memory);
  std::vector<int> out;
  int last = Tokenizer::kPad;
  const int max_len = std::min(cfg.max_len, m.config.max_positions - 1);
  while (static_cast<int>(out.size()) < max_len) {
    auto logits = decode_step(m.config, m.params, cache, last);
    logits[Tokenizer::kPad] = -1e300;
    if (static_cast<int>(out.size()) < cfg.min_len) logits[Tokenizer::kEos] = -1e300;
    int best = 0;
    for (int v = 1; v < static_cast<int>(logits.size()); ++v) {
      if (logits[v] > logits[best]) best = v;
    }
    if (best == Tokenizer::kEos) break;
    out.push_back(best);
    last = best;
  }
  return out;
}

double replay_logprob(const Model& m, const TaggedSequence& input, const std::vector<int>& out,
                      bool finished) {
  // Independent scoring: fresh cache, feed the whole prefix.
  const Tensor memory = encode_source(m.config, m.params, input.tokens);
  DecoderCache cache = make_decoder_cache(m.config, m.params, memory);
  double total = 0.0;
  int last = Tokenizer::kPad;
  for (int tokid : out) {
    auto lp = detail::log_softmax(decode_step(m.config, m.params, cache, last));
    total += lp[tokid];
    last = tokid;
  }
  if (finished) {
    auto lp = detail::log_softmax(decode_step(m.config, m.params, cache, last));
    total += lp[Tokenizer::kEos];
  }
  return total;
}

}  // namespace

TEST_CASE("beam size one equals greedy decoding") {
  Tokenizer tok = tiny_tokenizer();
  ModelConfig cfg = tiny_config(tok);
  for (std::uint64_t seed : {31, 37, 41}) {
    Model m = init_model(cfg, tok, seed);
    Example ex{"abcdef", "x", "aa", Task::summarization};
    auto [input, target] = tag_example(ex, tok);
    DecodeConfig dc;
    dc.beam_size = 1;
    dc.max_len = 8;
    dc.min_len = 1;
    CHECK(generate(m, input, dc) == greedy_reference(m, input, dc));
  }
}

TEST_CASE("beam search equals exhaustive enumeration on a short horizon") {
  Tokenizer tok = Tokenizer::charset({"aa"}, 0, "abc");  // vocab 8
  ModelConfig cfg;
  cfg.vocab_size = tok.vocab_size();
  cfg.d_model = 4;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 8;
  cfg.max_positions = 8;
  Model m = init_model(cfg, tok, 43);
  Example ex{"cab", "x", "aa", Task::summarization};
  auto [input, target] = tag_example(ex, tok);

  DecodeConfig dc;
  dc.beam_size = 64;  // retains every hypothesis: beam == exhaustive search
  dc.max_len = 2;
  dc.min_len = 1;
  const std::vector<int> got = generate(m, input, dc);

  // Enumerate every sequence of length <= 2 over the non-control vocabulary,
  // finished (EOS appended) or cut off at the horizon.
  std::vector<int> alphabet;
  for (int v = 0; v < tok.vocab_size(); ++v) {
    if (v != Tokenizer::kPad && v != Tokenizer::kEos) alphabet.push_back(v);
  }
  double best_score = -1e300;
  std::vector<int> best_seq;
  auto consider = [&](const std::vector<int>& seq, bool finished) {
    const double s = replay_logprob(m, input, seq, finished);
    if (s > best_score) {
      best_score = s;
      best_seq = seq;
    }
  };
  for (int a : alphabet) {
    consider({a}, true);
    for (int b : alphabet) consider({a, b}, true);
  }
  for (int a : alphabet) {
    for (int b : alphabet) consider({a, b}, false);  // open at max_len
  }
  CHECK(got == best_seq);
}

TEST_CASE("generate respects min_len and max_len") {
  Tokenizer tok = tiny_tokenizer();
  ModelConfig cfg = tiny_config(tok);
  for (std::uint64_t seed : {47, 53}) {
    Model m = init_model(cfg, tok, seed);
    Example ex{"fed", "x", "bb", Task::summarization};
    auto [input, target] = tag_example(ex, tok);
    DecodeConfig dc;
    dc.beam_size = 3;
    dc.max_len = 7;
    dc.min_len = 5;
    const auto out = generate(m, input, dc);
    CHECK(out.size() >= 5);
    CHECK(out.size() <= 7);
    for (int t : out) {
      CHECK(t != Tokenizer::kEos);
      CHECK(t != Tokenizer::kPad);
    }
  }
}

TEST_CASE("language tag representation basics") {
  Tokenizer tok = tiny_tokenizer();
  ModelConfig cfg = tiny_config(tok);
  Model m = init_model(cfg, tok, 59);

  Example ex{"abcabc", "x", "aa", Task::summarization};
  auto [probe, t1] = tag_example(ex, tok);
  const auto once = language_tag_representation(m, "aa", {probe});
  const auto twice = language_tag_representation(m, "aa", {probe, probe});
  for (std::size_t i = 0; i < once.size(); ++i) {
    CHECK(once[i] == Catch::Approx(twice[i]).margin(1e-12));
  }
  CHECK_THROWS_AS(language_tag_representation(m, "aa", {}), DataError);

  // Same probe text under two languages: the representations differ only
  // through the tag embeddings; making the tag rows equal collapses them.
  Example ex_bb{"abcabc", "x", "bb", Task::summarization};
  auto [probe_bb, t2] = tag_example(ex_bb, tok);
  const auto rep_aa = language_tag_representation(m, "aa", {probe});
  const auto rep_bb = language_tag_representation(m, "bb", {probe_bb});
  CHECK(cosine_distance(rep_aa, rep_bb) > 1e-8);

  Model same_tags = m;
  Tensor& emb = same_tags.params.at("token_embeddings");
  for (int c = 0; c < emb.cols; ++c) {
    emb.at(tok.source_tag_id("bb"), c) = emb.at(tok.source_tag_id("aa"), c);
    emb.at(tok.target_tag_id("bb"), c) = emb.at(tok.target_tag_id("aa"), c);
  }
  const auto rep_aa2 = language_tag_representation(same_tags, "aa", {probe});
  const auto rep_bb2 = language_tag_representation(same_tags, "bb", {probe_bb});
  for (std::size_t i = 0; i < rep_aa2.size(); ++i) {
    CHECK(rep_aa2[i] == Catch::Approx(rep_bb2[i]).margin(1e-12));
  }
}
