#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "xlgen/metalearn.hpp"
#include "xlgen/model_forward.hpp"
#include "xlgen/train.hpp"

using namespace xlgen;

namespace {

/// L(theta) = 0.5 * (theta - target)^2 on a single scalar parameter.
struct QuadraticObjective : Objective {
  double target;
  explicit QuadraticObjective(double t) : target(t) {}

  static double theta(const ParameterSet& p) { return p.at("theta").v[0]; }

  double value(const ParameterSet& p) const override {
    const double d = theta(p) - target;
    return 0.5 * d * d;
  }
  double value_and_grad(const ParameterSet& p, ParameterSet& grad) const override {
    grad = zeros_like(p);
    grad.at("theta").v[0] = theta(p) - target;
    return value(p);
  }
  double value_grad_hvp(const ParameterSet& p, const ParameterSet& dir, ParameterSet& grad,
                        ParameterSet& hvp) const override {
    value_and_grad(p, grad);
    hvp = dir;  // Hessian is the identity
    return value(p);
  }
};

ParameterSet scalar_params(double value) {
  ParameterSet p;
  Tensor t(1, 1);
  t.v[0] = value;
  p.tensors.emplace("theta", t);
  return p;
}

MetaConfig quad_config() {
  MetaConfig cfg;
  cfg.alpha = 0.1;
  cfg.beta = 0.5;
  cfg.m = 1;
  cfg.batch_size = 2;
  cfg.tasks_per_meta_batch = 1;
  cfg.outer_optimizer = "sgd";
  return cfg;
}

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

std::vector<TokenPair> make_batch(const Tokenizer& tok, const std::vector<Example>& exs) {
  std::vector<TokenPair> out;
  for (const auto& ex : exs) {
    auto [input, target] = tag_example(ex, tok);
    out.push_back({input.tokens, target});
  }
  return out;
}

}  // namespace

TEST_CASE("inner_adapt closed-form quadratic") {
  QuadraticObjective support(1.0);
  FreezeMask none;

  // zero step size: identical parameters
  auto a0 = inner_adapt(scalar_params(0.0), support, 0.0, 3, none, false);
  CHECK(a0.tensors.at("theta").v[0] == 0.0);
  CHECK(a0.steps_taken == 3);

  // one step: theta' = 0 - 0.1 * (0 - 1) = 0.1
  auto a1 = inner_adapt(scalar_params(0.0), support, 0.1, 1, none, false);
  CHECK(a1.tensors.at("theta").v[0] == Catch::Approx(0.1).margin(1e-15));

  // two steps: 0.1 + 0.1 * 0.9 = 0.19
  auto a2 = inner_adapt(scalar_params(0.0), support, 0.1, 2, none, false);
  CHECK(a2.tensors.at("theta").v[0] == Catch::Approx(0.19).margin(1e-15));
}

TEST_CASE("inner_adapt never mutates theta") {
  ParameterSet theta = scalar_params(0.25);
  const std::uint64_t before = params_hash(theta);
  QuadraticObjective support(2.0);
  auto adapted = inner_adapt(theta, support, 0.05, 4, FreezeMask{}, true);
  CHECK(params_hash(theta) == before);
  CHECK(adapted.lineage == before);
  CHECK(adapted.iterates.size() == 4);
}

TEST_CASE("meta_step closed-form second and first order") {
  QuadraticObjective support(1.0);
  QuadraticObjective query(1.0);
  std::vector<MetaTask> tasks{{&support, &query}};
  FreezeMask none;

  // second order: meta-grad = (1 - alpha) * (theta' - 1) = -0.81
  {
    ParameterSet theta = scalar_params(0.0);
    MetaConfig cfg = quad_config();
    SgdOptimizer opt(cfg.beta);
    const double mloss = meta_step(theta, tasks, cfg, none, opt);
    CHECK(theta.at("theta").v[0] == Catch::Approx(0.405).margin(1e-6));
    // pre-update query loss at theta' = 0.1: 0.5 * 0.81
    CHECK(mloss == Catch::Approx(0.405).margin(1e-12));
  }
  // first order: meta-grad = theta' - 1 = -0.9
  {
    ParameterSet theta = scalar_params(0.0);
    MetaConfig cfg = quad_config();
    cfg.order = "first";
    SgdOptimizer opt(cfg.beta);
    meta_step(theta, tasks, cfg, none, opt);
    CHECK(theta.at("theta").v[0] == Catch::Approx(0.45).margin(1e-6));
  }
  // stationary query: theta' is already optimal for the query target
  {
    QuadraticObjective q2(0.1);
    std::vector<MetaTask> t2{{&support, &q2}};
    ParameterSet theta = scalar_params(0.0);
    MetaConfig cfg = quad_config();
    SgdOptimizer opt(cfg.beta);
    meta_step(theta, t2, cfg, none, opt);
    CHECK(theta.at("theta").v[0] == Catch::Approx(0.0).margin(1e-15));
  }
}

TEST_CASE("meta_step rejects an empty task list") {
  ParameterSet theta = scalar_params(0.0);
  MetaConfig cfg = quad_config();
  SgdOptimizer opt(cfg.beta);
  CHECK_THROWS_AS(meta_step(theta, {}, cfg, FreezeMask{}, opt), DataError);
}

TEST_CASE("second-order meta-gradient matches finite differences on a seq2seq model") {
  Tokenizer tok = tiny_tokenizer();
  ModelConfig cfg = tiny_config(tok);
  Model m = init_model(cfg, tok, 101);
  REQUIRE(m.params.num_scalars() <= 1000);

  SeqBatchObjective support(cfg, make_batch(tok, {{"abc", "cb", "aa", Task::summarization},
                                                  {"fed", "de", "aa", Task::summarization}}),
                            0.1);
  SeqBatchObjective query(cfg, make_batch(tok, {{"bce", "eb", "aa", Task::summarization},
                                                {"add", "da", "aa", Task::summarization}}),
                          0.1);
  const double alpha = 0.05;
  const double h = 1e-5;

  for (int m_steps : {1, 2}) {
    for (bool with_mask : {false, true}) {
      FreezeMask mask;
      if (with_mask) mask.patterns = {"token_embeddings", "decoder.*"};
      auto [meta_grad, qloss] =
          meta_task_gradient(m.params, support, query, alpha, m_steps, true, mask);

      auto query_after_adapt = [&](const ParameterSet& p) {
        auto adapted = inner_adapt(p, support, alpha, m_steps, mask, false);
        return query.value(adapted.tensors);
      };
      double max_rel = 0.0;
      ParameterSet probe = m.params;
      for (auto& [name, t] : probe.tensors) {
        for (std::size_t i = 0; i < t.size(); ++i) {
          const double keep = t.v[i];
          t.v[i] = keep + h;
          const double up = query_after_adapt(probe);
          t.v[i] = keep - h;
          const double dn = query_after_adapt(probe);
          t.v[i] = keep;
          const double fd = (up - dn) / (2 * h);
          const double a = meta_grad.at(name).v[i];
          const double rel = std::fabs(a - fd) / std::max(1e-6, std::fabs(a) + std::fabs(fd));
          max_rel = std::max(max_rel, rel);
        }
      }
      INFO("m=" << m_steps << " mask=" << with_mask);
      CHECK(max_rel < 1e-4);
    }
  }
}

TEST_CASE("first and second order gradients converge as alpha shrinks") {
  Tokenizer tok = tiny_tokenizer();
  ModelConfig cfg = tiny_config(tok);
  Model m = init_model(cfg, tok, 103);
  SeqBatchObjective support(cfg, make_batch(tok, {{"abc", "cb", "aa", Task::summarization}}), 0.1);
  SeqBatchObjective query(cfg, make_batch(tok, {{"bce", "eb", "aa", Task::summarization}}), 0.1);
  FreezeMask none;

  auto gap_at = [&](double alpha) {
    auto [second, l2] = meta_task_gradient(m.params, support, query, alpha, 1, true, none);
    auto [first, l1] = meta_task_gradient(m.params, support, query, alpha, 1, false, none);
    axpy(-1.0, first, second);
    return std::sqrt(dot(second, second));
  };
  const double g1 = gap_at(0.02);
  const double g2 = gap_at(0.01);
  const double g4 = gap_at(0.005);
  // O(alpha): halving alpha roughly halves the gap
  CHECK(g1 / g2 == Catch::Approx(2.0).epsilon(0.2));
  CHECK(g2 / g4 == Catch::Approx(2.0).epsilon(0.2));
}

TEST_CASE("frozen parameters are bitwise unchanged through the meta path") {
  Tokenizer tok = tiny_tokenizer();
  ModelConfig cfg = tiny_config(tok);
  Model m = init_model(cfg, tok, 107);
  FreezeMask mask{{"token_embeddings", "decoder.*"}};

  std::map<std::string, Dataset> meta_sets;
  for (const char* lang : {"aa", "bb"}) {
    Dataset ds;
    ds.lang = lang;
    for (int i = 0; i < 8; ++i) {
      ds.examples.push_back({"abc" + std::string(1, char('a' + i % 6)), "cb", lang,
                             Task::summarization});
    }
    meta_sets[lang] = ds;
  }
  MetaConfig cfg_meta;
  cfg_meta.alpha = 0.05;
  cfg_meta.beta = 0.01;
  cfg_meta.m = 2;
  cfg_meta.batch_size = 4;
  cfg_meta.tasks_per_meta_batch = 2;
  cfg_meta.epochs = 2;
  cfg_meta.smoothing = 0.1;

  Rng rng(7);
  Model trained = meta_train(m, meta_sets, cfg_meta, mask, rng);
  bool unfrozen_changed = false;
  for (const auto& [name, t] : trained.params.tensors) {
    if (mask.matches(name)) {
      CHECK(bitwise_equal(t, m.params.at(name)));
    } else if (!bitwise_equal(t, m.params.at(name))) {
      unfrozen_changed = true;
    }
  }
  CHECK(unfrozen_changed);
}

TEST_CASE("meta_train with zero epochs returns the model unchanged") {
  Tokenizer tok = tiny_tokenizer();
  ModelConfig cfg = tiny_config(tok);
  Model m = init_model(cfg, tok, 109);
  std::map<std::string, Dataset> meta_sets;
  Dataset ds;
  ds.lang = "aa";
  for (int i = 0; i < 8; ++i) ds.examples.push_back({"abcd", "dc", "aa", Task::summarization});
  meta_sets["aa"] = ds;
  MetaConfig mc;
  mc.epochs = 0;
  mc.batch_size = 4;
  Rng rng(1);
  Model out = meta_train(m, meta_sets, mc, FreezeMask{}, rng);
  CHECK(params_hash(out.params) == params_hash(m.params));
}

TEST_CASE("meta_train is deterministic and thread-count invariant") {
  Tokenizer tok = tiny_tokenizer();
  ModelConfig cfg = tiny_config(tok);
  Model m = init_model(cfg, tok, 113);
  std::map<std::string, Dataset> meta_sets;
  for (const char* lang : {"aa", "bb"}) {
    Dataset ds;
    ds.lang = lang;
    for (int i = 0; i < 10; ++i) {
      ds.examples.push_back({std::string("fab") + char('a' + i % 6), "ba", lang,
                             Task::summarization});
    }
    meta_sets[lang] = ds;
  }
  MetaConfig mc;
  mc.alpha = 0.05;
  mc.beta = 0.01;
  mc.m = 1;
  mc.batch_size = 4;
  mc.tasks_per_meta_batch = 3;
  mc.epochs = 2;

  auto run = [&](int threads, bool serial) {
    MetaConfig c = mc;
    c.threads = threads;
    c.strict_serial = serial;
    Rng rng(99);
    return params_hash(meta_train(m, meta_sets, c, FreezeMask{}, rng).params);
  };
  const auto h1 = run(1, false);
  CHECK(run(1, false) == h1);   // same seed, same result
  CHECK(run(4, false) == h1);   // parallel tasks reduce deterministically
  CHECK(run(4, true) == h1);    // strict serial mode agrees
}

TEST_CASE("few_shot_adapt no-ops and improvement") {
  Tokenizer tok = tiny_tokenizer();
  ModelConfig cfg = tiny_config(tok);
  Model m = init_model(cfg, tok, 127);
  std::vector<Example> support(4, {"abcd", "dcba", "aa", Task::summarization});

  Model s0 = few_shot_adapt(m, support, 0, 0.1);
  CHECK(params_hash(s0.params) == params_hash(m.params));
  Model lr0 = few_shot_adapt(m, support, 5, 0.0);
  CHECK(params_hash(lr0.params) == params_hash(m.params));

  auto [input, target] = tag_example(support[0], tok);
  const double before = loss(m, input, target, 0.0);
  Model adapted = few_shot_adapt(m, support, 25, 0.5);
  const double after = loss(adapted, input, target, 0.0);
  CHECK(after < before);
}

namespace {

/// Small MLP regression objective for the sine-family experiment:
/// pred = gelu(x*w1 + b1) * w2 + b2, loss = mean squared error.
struct MlpRegressionObjective : Objective {
  Tensor x;  // n x 1
  Tensor y;  // n x 1

  MlpRegressionObjective(Tensor xs, Tensor ys) : x(std::move(xs)), y(std::move(ys)) {}

  template <typename S>
  typename Graph<S>::Id build(Graph<S>& g, const StagedParams<S>& p) const {
    const int n = x.rows;
    Tensor ones(n, 1);
    ones.fill(1.0);
    auto ones_id = g.constant(ones);
    auto h = g.gelu(g.add(g.matmul(g.constant(x), p.at("w1")), g.matmul(ones_id, p.at("b1"))));
    auto pred = g.add(g.matmul(h, p.at("w2")), g.matmul(ones_id, p.at("b2")));
    Tensor neg_y = y;
    for (auto& v : neg_y.v) v = -v;
    return g.scale(g.sum_squares(g.add_const(pred, neg_y)), 1.0 / n);
  }

  double value(const ParameterSet& p) const override {
    Graph<double> g;
    auto staged = stage_params(g, p);
    return g.val(build(g, staged)).v[0];
  }
  double value_and_grad(const ParameterSet& p, ParameterSet& grad) const override {
    Graph<double> g;
    auto staged = stage_params(g, p);
    auto l = build(g, staged);
    g.backward(l);
    grad = zeros_like(p);
    for (const auto& [name, id] : staged.ids) {
      if (!g.grad(id).empty()) grad.tensors[name] = g.grad(id);
    }
    return g.val(l).v[0];
  }
  double value_grad_hvp(const ParameterSet& p, const ParameterSet& dir, ParameterSet& grad,
                        ParameterSet& hvp) const override {
    Graph<Dual> g;
    auto staged = stage_params_dual(g, p, dir);
    auto l = build(g, staged);
    g.backward(l);
    grad = zeros_like(p);
    hvp = zeros_like(p);
    for (const auto& [name, id] : staged.ids) {
      const auto& gt = g.grad(id);
      if (gt.empty()) continue;
      for (std::size_t i = 0; i < gt.size(); ++i) {
        grad.tensors[name].v[i] = gt.v[i].a;
        hvp.tensors[name].v[i] = gt.v[i].b;
      }
    }
    return g.val(l).v[0].a;
  }
};

ParameterSet mlp_params(int hidden, Rng& rng) {
  ParameterSet p;
  p.tensors.emplace("w1", Tensor(1, hidden));
  p.tensors.emplace("b1", Tensor(1, hidden));
  p.tensors.emplace("w2", Tensor(hidden, 1));
  p.tensors.emplace("b2", Tensor(1, 1));
  for (auto& [name, t] : p.tensors) {
    if (name[0] == 'w') {
      for (auto& v : t.v) v = rng.gaussian() / std::sqrt(double(t.rows));
    }
  }
  return p;
}

MlpRegressionObjective sine_batch(double amplitude, double phase, int n, Rng& rng) {
  Tensor x(n, 1), y(n, 1);
  for (int i = 0; i < n; ++i) {
    x.v[i] = rng.uniform(-5.0, 5.0);
    y.v[i] = amplitude * std::sin(x.v[i] + phase);
  }
  return {std::move(x), std::move(y)};
}

}  // namespace

TEST_CASE("sine regression: meta-trained init adapts better than joint training") {
  Rng rng(2024);
  const int hidden = 24;
  const double inner_lr = 0.02;
  const int meta_steps = 400;
  auto sample_task = [&](Rng& r) {
    return std::pair<double, double>{r.uniform(0.5, 2.0), r.uniform(0.0, M_PI)};
  };

  // Meta-training with one-step inner adaptation.
  ParameterSet meta = mlp_params(hidden, rng);
  MetaConfig cfg;
  cfg.alpha = inner_lr;
  cfg.beta = 1e-2;
  cfg.m = 1;
  cfg.batch_size = 10;
  cfg.tasks_per_meta_batch = 4;
  AdamWOptimizer opt(cfg.beta);
  for (int step = 0; step < meta_steps; ++step) {
    std::vector<MlpRegressionObjective> objs;
    for (int t = 0; t < cfg.tasks_per_meta_batch; ++t) {
      auto [a, ph] = sample_task(rng);
      objs.push_back(sine_batch(a, ph, 5, rng));
      objs.push_back(sine_batch(a, ph, 5, rng));
    }
    std::vector<MetaTask> tasks;
    for (int t = 0; t < cfg.tasks_per_meta_batch; ++t) {
      tasks.push_back({&objs[2 * t], &objs[2 * t + 1]});
    }
    meta_step(meta, tasks, cfg, FreezeMask{}, opt);
  }

  // Joint baseline: same data budget, plain supervised training.
  ParameterSet joint = mlp_params(hidden, rng);
  AdamWOptimizer jopt(1e-2);
  Rng jrng(2024);
  for (int step = 0; step < meta_steps; ++step) {
    Tensor x(40, 1), y(40, 1);
    for (int t = 0; t < 4; ++t) {
      auto [a, ph] = sample_task(jrng);
      for (int i = 0; i < 10; ++i) {
        const int row = t * 10 + i;
        x.v[row] = jrng.uniform(-5.0, 5.0);
        y.v[row] = a * std::sin(x.v[row] + ph);
      }
    }
    MlpRegressionObjective obj(std::move(x), std::move(y));
    ParameterSet grad;
    obj.value_and_grad(joint, grad);
    jopt.step(joint, grad, FreezeMask{});
  }

  // Fresh tasks: loss on a query set after one adaptation step on 5 points.
  Rng eval_rng(555);
  double meta_loss = 0.0, joint_loss = 0.0;
  const int eval_tasks = 20;
  for (int t = 0; t < eval_tasks; ++t) {
    auto [a, ph] = sample_task(eval_rng);
    auto support = sine_batch(a, ph, 5, eval_rng);
    auto query = sine_batch(a, ph, 50, eval_rng);
    auto meta_adapted = inner_adapt(meta, support, inner_lr, 1, FreezeMask{}, false);
    auto joint_adapted = inner_adapt(joint, support, inner_lr, 1, FreezeMask{}, false);
    meta_loss += query.value(meta_adapted.tensors) / eval_tasks;
    joint_loss += query.value(joint_adapted.tensors) / eval_tasks;
  }
  INFO("meta " << meta_loss << " vs joint " << joint_loss);
  CHECK(meta_loss < joint_loss);
}
