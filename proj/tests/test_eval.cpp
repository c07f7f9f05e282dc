#include <catch2/catch_amalgamated.hpp>

#include "xlgen/checkpoint.hpp"
#include "xlgen/eval.hpp"

#include <filesystem>

using namespace xlgen;

namespace {

Tokenizer tiny_tokenizer() { return Tokenizer::charset({"aa", "bb", "cc"}, 2, "abcdef"); }

ModelConfig tiny_config(const Tokenizer& tok) {
  ModelConfig cfg;
  cfg.vocab_size = tok.vocab_size();
  cfg.d_model = 4;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 8;
  cfg.max_positions = 24;
  return cfg;
}

std::map<std::string, Dataset> tiny_test_sets(const std::vector<std::string>& langs) {
  std::map<std::string, Dataset> out;
  for (const auto& lang : langs) {
    Dataset ds;
    ds.lang = lang;
    ds.split = "test";
    for (int i = 0; i < 3; ++i) {
      ds.examples.push_back({"abc" + std::string(1, char('a' + i)), "cba", lang,
                             Task::summarization});
    }
    out[lang] = ds;
  }
  return out;
}

DecodeConfig tiny_decode() {
  DecodeConfig dc;
  dc.beam_size = 2;
  dc.max_len = 6;
  dc.min_len = 1;
  return dc;
}

}  // namespace

TEST_CASE("zero_shot_evaluate guards against contamination") {
  Tokenizer tok = tiny_tokenizer();
  Model m = init_model(tiny_config(tok), tok, 3);
  auto sets = tiny_test_sets({"aa", "bb"});
  CHECK_THROWS_AS(
      zero_shot_evaluate(m, sets, tiny_decode(), "seq_acc", {"bb", "cc"}, false),
      ContaminationError);
  // explicit override runs
  EvalReport r = zero_shot_evaluate(m, sets, tiny_decode(), "seq_acc", {"bb", "cc"}, true);
  CHECK(r.per_lang.size() == 2);
}

TEST_CASE("zero_shot_evaluate leaves parameters bitwise unchanged") {
  Tokenizer tok = tiny_tokenizer();
  Model m = init_model(tiny_config(tok), tok, 5);
  const std::uint64_t before = params_hash(m.params);
  auto sets = tiny_test_sets({"aa"});
  zero_shot_evaluate(m, sets, tiny_decode(), "rouge_l");
  CHECK(params_hash(m.params) == before);
}

TEST_CASE("zero_shot_evaluate report shape and average") {
  Tokenizer tok = tiny_tokenizer();
  Model m = init_model(tiny_config(tok), tok, 7);
  auto sets = tiny_test_sets({"aa", "bb", "cc"});
  std::vector<GeneratedSample> dump;
  EvalReport r = zero_shot_evaluate(m, sets, tiny_decode(), "rouge_l", {}, false, {}, 1, 512,
                                    &dump, "test-provenance");
  REQUIRE(r.per_lang.size() == 3);
  double mean = 0.0;
  for (const auto& [lang, res] : r.per_lang) {
    CHECK(res.n == 3);
    CHECK(res.score >= 0.0);
    CHECK(res.score <= 1.0);
    mean += res.score / 3.0;
  }
  CHECK(r.average == Catch::Approx(mean).margin(1e-12));
  CHECK(dump.size() == 9);
  CHECK(r.model_provenance == "test-provenance");
  // table renders one column per language plus avg
  const std::string table = r.text_table();
  CHECK(table.find("aa") != std::string::npos);
  CHECK(table.find("avg") != std::string::npos);
  // json round-trips deterministically
  CHECK(r.to_json().dump() == r.to_json().dump());
}

TEST_CASE("evaluation metrics are reproducible across thread counts") {
  Tokenizer tok = tiny_tokenizer();
  Model m = init_model(tiny_config(tok), tok, 11);
  auto sets = tiny_test_sets({"aa", "bb"});
  EvalReport serial = zero_shot_evaluate(m, sets, tiny_decode(), "seq_acc", {}, false, {}, 1);
  EvalReport parallel = zero_shot_evaluate(m, sets, tiny_decode(), "seq_acc", {}, false, {}, 4);
  CHECK(serial.to_json().dump() == parallel.to_json().dump());
}

TEST_CASE("tag_distance_matrix is symmetric with zero diagonal") {
  Tokenizer tok = tiny_tokenizer();
  Model m = init_model(tiny_config(tok), tok, 13);
  std::vector<std::string> langs{"aa", "bb", "cc"};
  std::map<std::string, std::vector<TaggedSequence>> probes;
  for (const auto& lang : langs) {
    Example ex{"fedcba", "x", lang, Task::summarization};
    auto [probe, target] = tag_example(ex, tok);
    probes[lang] = {probe};
  }
  const Tensor d = tag_distance_matrix(m, langs, probes);
  REQUIRE(d.rows == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(d.at(i, i) == 0.0);
    for (int j = 0; j < 3; ++j) {
      CHECK(d.at(i, j) == Catch::Approx(d.at(j, i)).margin(1e-15));
      CHECK(d.at(i, j) >= 0.0);
      CHECK(d.at(i, j) <= 2.0);
    }
  }
  CHECK_THROWS_AS(tag_distance_matrix(m, {"aa"}, probes), DataError);
}

TEST_CASE("checkpoint round trip is bit exact with provenance") {
  Tokenizer tok = tiny_tokenizer();
  Model m = init_model(tiny_config(tok), tok, 17);
  m.freeze.patterns = {"token_embeddings", "decoder.*"};
  Checkpoint ckpt;
  ckpt.model = m;
  StageRecord rec;
  rec.stage = "adaptive_pretrain";
  rec.languages = {"aa", "bb", "cc"};
  rec.params_hash = params_hash(m.params);
  rec.info = nlohmann::json{{"steps", 100}};
  ckpt.provenance.push_back(rec);

  const auto path = (std::filesystem::temp_directory_path() / "ckpt_test.json").string();
  save_checkpoint(ckpt, path);
  Checkpoint back = load_checkpoint(path);
  CHECK(params_hash(back.model.params) == params_hash(m.params));
  for (const auto& [name, t] : m.params.tensors) {
    CHECK(bitwise_equal(t, back.model.params.at(name)));
  }
  CHECK(back.model.config.d_model == m.config.d_model);
  CHECK(back.model.tokenizer.vocab_size() == tok.vocab_size());
  CHECK(back.model.freeze.patterns == m.freeze.patterns);
  REQUIRE(back.provenance.size() == 1);
  CHECK(back.provenance[0].stage == "adaptive_pretrain");
  CHECK(back.has_stage("adaptive_pretrain"));
  CHECK(!back.has_stage("meta_train"));
  CHECK(back.training_languages().empty());  // pretraining is unsupervised

  // tampering is caught by the hash
  Checkpoint tampered = ckpt;
  tampered.model.params.at("encoder.final_norm.gain").v[0] += 1.0;
  const auto path2 = (std::filesystem::temp_directory_path() / "ckpt_tampered.json").string();
  save_checkpoint(tampered, path2);  // provenance hash still the old one
  CHECK_THROWS_AS(load_checkpoint(path2), DataError);
}
