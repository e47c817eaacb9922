#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "hlan/config.hpp"
#include "hlan/trainer.hpp"
#include "model_util.hpp"

using namespace hlan;
using namespace hlan::testing;

namespace {

std::vector<EncodedDocument> random_docs(const ModelConfig& c, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<EncodedDocument> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(random_doc(c, rng, 0.1));
    out.back().id = "d" + std::to_string(i);
  }
  return out;
}

ModelParams fresh(const ModelConfig& c, std::uint64_t seed) { return init_params(c, {}, seed); }

std::size_t index_of(const ModelParams& p, const std::string& name) {
  auto named = p.named();
  for (std::size_t i = 0; i < named.size(); ++i)
    if (named[i].first == name) return i;
  throw std::logic_error(name);
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("hlan_trainer_" + name);
  std::filesystem::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("bce_loss") {
  CHECK(bce_loss(Tensor::vector({0}), Tensor::vector({1})) == doctest::Approx(0.693147).epsilon(1e-6));
  // saturated logits stay finite and go to zero when they agree with the target
  const double l = bce_loss(Tensor::vector({800, -800}), Tensor::vector({1, 0}));
  CHECK(std::isfinite(l));
  CHECK(l == 0.0);
  CHECK(std::isfinite(bce_loss(Tensor::vector({800}), Tensor::vector({0}))));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-6, 6);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor s = Tensor::matrix(7, 5), y = Tensor::matrix(7, 5);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = u(rng), y[i] = rng() % 2;
    double naive = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double p = 1 / (1 + std::exp(-static_cast<double>(s[i])));
      naive -= y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p);
    }
    Tensor g;
    CHECK(std::abs(bce_loss(s, y, &g) - naive) <= 1e-10);
    for (std::size_t i = 0; i < s.size(); ++i) {
      Tensor a = s, b = s;
      a[i] += 1e-6, b[i] -= 1e-6;
      CHECK(g[i] == doctest::Approx((bce_loss(a, y) - bce_loss(b, y)) / 2e-6).epsilon(1e-6));
    }
  }
  CHECK_THROWS_AS(bce_loss(Tensor::vector({0, 1}), Tensor::vector({1})), DimensionError);
}

TEST_CASE("l2_penalty") {
  const ModelConfig c = tiny_config(Variant::hlan);
  ModelParams p = random_params(c, 3);
  CHECK(l2_penalty(p, 0) == 0.0);

  ModelParams z = zero_params(c);
  z.W.at(0, 0) = 3, z.W.at(0, 1) = 4;
  z.b[0] = 100, z.W_e.at(2, 0) = 100, z.word_fwd.b_r[0] = 100;  // not penalised
  CHECK(l2_penalty(z, 1) == doctest::Approx(25));

  // gradient against central differences
  ParamGrads g = zero_grads(p);
  const double lambda = 0.3;
  l2_penalty(p, lambda, &g);
  auto named = p.named();
  for (std::size_t i = 0; i < named.size(); ++i) {
    Tensor& t = *named[i].second;
    for (std::size_t j : {std::size_t{0}, t.size() / 2, t.size() - 1}) {
      const real keep = t[j];
      t[j] = keep + 1e-5;
      const double up = l2_penalty(p, lambda);
      t[j] = keep - 1e-5;
      const double down = l2_penalty(p, lambda);
      t[j] = keep;
      CHECK(g[i][j] == doctest::Approx((up - down) / 2e-5).epsilon(1e-6));
      if (!ModelParams::regularized(named[i].first)) CHECK(g[i][j] == 0.0);
    }
  }
}

TEST_CASE("adam_step") {
  const ModelConfig c = tiny_config(Variant::hagru);
  TrainConfig tc;
  ModelParams p = random_params(c, 9);
  const ModelParams before = p;

  SUBCASE("zero gradient leaves parameters alone and decays moments") {
    AdamState s = AdamState::zeros(p);
    adam_step(p, zero_grads(p), s, tc);
    CHECK(p == before);
    CHECK(s.step == 1);
    for (auto& m : s.m) m = Tensor(m.shape(), 0.5);
    for (auto& v : s.v) v = Tensor(v.shape(), 0.25);
    ModelParams q = p;
    adam_step(q, zero_grads(q), s, tc);
    CHECK(s.m[3][0] == doctest::Approx(0.45));
    CHECK(s.v[3][0] == doctest::Approx(0.25 * 0.999));
  }

  SUBCASE("first step moves each coordinate by lr against the gradient sign") {
    AdamState s = AdamState::zeros(p);
    ParamGrads g = zero_grads(p);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-2, 2);
    for (auto& t : g)
      for (real& v : t.values()) v = u(rng);
    adam_step(p, g, s, tc);
    auto a = before.named();
    auto b = p.named();
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < a[i].second->size(); ++j) {
        const double step = (*b[i].second)[j] - (*a[i].second)[j];
        const double want = g[i][j] > 0 ? -tc.learning_rate : tc.learning_rate;
        CHECK(step == doctest::Approx(want).epsilon(1e-6));
      }
  }

  SUBCASE("100 steps on w^2 follow a direct simulation and reach |w| < 0.05") {
    ModelParams q = zero_params(c);
    const std::size_t bi = index_of(q, "b");
    q.b[0] = 1;
    TrainConfig fast = tc;
    fast.learning_rate = 0.1;
    AdamState s = AdamState::zeros(q);
    double w = 1, m = 0, v = 0;
    for (int t = 1; t <= 100; ++t) {
      ParamGrads g = zero_grads(q);
      g[bi][0] = 2 * q.b[0];
      adam_step(q, g, s, fast);
      const double gw = 2 * w;
      m = 0.9 * m + 0.1 * gw;
      v = 0.999 * v + 0.001 * gw * gw;
      w -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      REQUIRE(q.b[0] == doctest::Approx(w).epsilon(1e-12));
    }
    CHECK(std::abs(q.b[0]) < 0.05);
  }

  SUBCASE("non-finite gradients are rejected with the parameter name") {
    AdamState s = AdamState::zeros(p);
    ParamGrads g = zero_grads(p);
    g[index_of(p, "sent_bwd.W_hz")][4] = std::nan("");
    try {
      adam_step(p, g, s, tc);
      FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
      CHECK(std::string(e.what()).find("sent_bwd.W_hz") != std::string::npos);
    }
    CHECK(p == before);
    CHECK(s.step == 0);
  }
}

TEST_CASE("batch gradient matches a dense per-document tape") {
  for (Variant v : {Variant::hlan, Variant::hagru, Variant::han}) {
    ModelConfig c = tiny_config(v);
    const ModelParams p = random_params(c, 21);
    const auto docs = random_docs(c, 5, 77);
    std::vector<const EncodedDocument*> ptrs;
    std::vector<std::uint64_t> seeds;
    for (const auto& d : docs) ptrs.push_back(&d), seeds.push_back(derive_seed({9, ptrs.size()}));

    ParamGrads want = zero_grads(p);
    double want_loss = 0;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      ad::Tape tape;
      const ad::ParamVars pv = ad::bind(tape, p, true);
      ad::ForwardOptions opt;
      opt.train = true, opt.dropout_seed = seeds[i];
      ad::Var loss = ad::bce_with_logits(ad::forward_graph(tape, pv, c, docs[i], opt).logits, docs[i].target);
      tape.backward(loss);
      want_loss += loss.value()[0];
      const auto vars = pv.list();
      for (std::size_t k = 0; k < vars.size(); ++k)
        for (std::size_t j = 0; j < want[k].size(); ++j) want[k][j] += tape.grad(vars[k].id)[j];
    }
    const BatchGradient got = batch_gradient(p, c, ptrs, seeds, kernels::Exec::serial);
    CHECK(got.loss == doctest::Approx(want_loss).epsilon(1e-12));
    double worst = 0;
    for (std::size_t k = 0; k < want.size(); ++k)
      for (std::size_t j = 0; j < want[k].size(); ++j) worst = std::max(worst, std::abs(got.grads[k][j] - want[k][j]));
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("serial and parallel batch gradients are bit-identical") {
  const int keep = kernels::max_threads();
  kernels::set_threads(4);
  for (Variant v : {Variant::hlan, Variant::hagru, Variant::han}) {
    const ModelConfig c = tiny_config(v);
    const ModelParams p = random_params(c, 4);
    const auto docs = random_docs(c, 12, 8);
    std::vector<const EncodedDocument*> ptrs;
    std::vector<std::uint64_t> seeds;
    for (const auto& d : docs) ptrs.push_back(&d), seeds.push_back(derive_seed({1, ptrs.size()}));
    const BatchGradient a = batch_gradient(p, c, ptrs, seeds, kernels::Exec::serial);
    const BatchGradient b = batch_gradient(p, c, ptrs, seeds, kernels::Exec::parallel);
    CHECK(a.loss == b.loss);
    bool same = true;
    for (std::size_t k = 0; k < a.grads.size(); ++k) same = same && a.grads[k].values() == b.grads[k].values();
    CHECK(same);
    CHECK(predict_probabilities(p, c, docs, kernels::Exec::serial).values() ==
          predict_probabilities(p, c, docs, kernels::Exec::parallel).values());
  }
  kernels::set_threads(keep);
}

TEST_CASE("loss falls over the first five Adam steps for every variant") {
  for (Variant v : {Variant::hlan, Variant::hagru, Variant::han}) {
    ModelConfig c = tiny_config(v);
    c.dropout = 0;
    ModelParams p = fresh(c, 31);
    const auto docs = random_docs(c, 8, 32);
    std::vector<const EncodedDocument*> ptrs;
    for (const auto& d : docs) ptrs.push_back(&d);
    TrainConfig tc;
    AdamState s = AdamState::zeros(p);
    double prev = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 6; ++step) {
      BatchGradient bg = batch_gradient(p, c, ptrs, {});
      const double loss = bg.loss + l2_penalty(p, tc.l2_lambda, &bg.grads);
      CHECK_MESSAGE(loss < prev, to_string(v) << " step " << step);
      prev = loss;
      clip_global_norm(bg.grads, tc.clip_norm);
      adam_step(p, bg.grads, s, tc);
    }
  }
}

TEST_CASE("clip_global_norm") {
  ParamGrads g{Tensor::vector({3, 0}), Tensor::vector({4})};
  CHECK(clip_global_norm(g, 10) == 5.0);
  CHECK(g[0][0] == 3.0);
  CHECK(clip_global_norm(g, 1) == 5.0);
  CHECK(g[0][0] == doctest::Approx(0.6));
  CHECK(g[1][0] == doctest::Approx(0.8));
}

TEST_CASE("predict thresholds strictly and monotonically") {
  ModelConfig c = tiny_config(Variant::hlan);
  c.num_labels = 3;
  ModelParams p = zero_params(c);
  const std::vector<double> probs{0.6, 0.4, 0.5};
  for (std::size_t l = 0; l < 3; ++l) p.b[l] = static_cast<real>(std::log(probs[l] / (1 - probs[l])));
  std::mt19937_64 rng(1);
  const EncodedDocument d = random_doc(c, rng);
  auto pr = predict(p, c, d, 0.5);
  CHECK(pr.labels == LabelSet{0});
  CHECK(pr.probabilities[2] == doctest::Approx(0.5));
  CHECK(predict(p, c, d, 1e-9).labels.size() == 3);
  for (double lo = 0.05; lo < 0.95; lo += 0.05)
    for (double hi = lo; hi < 0.95; hi += 0.05) {
      const LabelSet a = predict(p, c, d, lo).labels, b = predict(p, c, d, hi).labels;
      CHECK(std::includes(a.begin(), a.end(), b.begin(), b.end()));
    }
  CHECK_THROWS_AS(predict(p, c, d, 0), ConfigError);
  CHECK_THROWS_AS(predict(p, c, d, 1), ConfigError);
}

TEST_CASE("early stopping with a metric that never improves") {
  ModelConfig c = tiny_config(Variant::hagru);
  const auto train_docs = random_docs(c, 10, 1), valid_docs = random_docs(c, 6, 2);
  TrainConfig tc;
  tc.learning_rate = 0;  // parameters never move, so the metric is flat
  tc.patience = 1;
  tc.batch_size = 4;
  const auto dir = temp_dir("patience");
  TrainOutputs out;
  out.dir = dir;
  out.labels = {"a", "b", "c", "d"};
  const auto r = train(train_docs, valid_docs, c, fresh(c, 3), tc, out);
  CHECK(r.history.size() == 2);
  CHECK(r.best_epoch == 1);
  CHECK(r.stop_reason == "patience");
  CHECK(r.history[0].improved);
  CHECK_FALSE(r.history[1].improved);
  CHECK(load_checkpoint(dir / "best.ckpt").epoch == 1);
  CHECK(load_checkpoint(dir / "last.ckpt").epoch == 2);
  std::ifstream h(dir / "history.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(h, line)) {
    const json j = json::parse(line);
    CHECK(j.contains("train_loss"));
    CHECK(j.contains("micro_f1"));
    CHECK(j.contains("precision_at_k"));
    ++lines;
  }
  CHECK(lines == 2);
}

TEST_CASE("training is deterministic and keeps the argmax checkpoint") {
  ModelConfig c = tiny_config(Variant::hlan);
  c.dropout = 0.3;
  const auto train_docs = random_docs(c, 24, 5), valid_docs = random_docs(c, 10, 6);
  TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.batch_size = 5;
  tc.max_epochs = 6;
  tc.patience = 3;
  tc.early_stop_metric = StopMetric::precision_at_k;
  tc.k = 2;
  const auto dir = temp_dir("determinism");
  TrainOutputs out;
  out.dir = dir;
  const auto a = train(train_docs, valid_docs, c, fresh(c, 3), tc, out);
  const auto b = train(train_docs, valid_docs, c, fresh(c, 3), tc);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].metric == b.history[i].metric);
  }
  CHECK(a.best == b.best);
  std::size_t arg = 0;
  for (std::size_t i = 0; i < a.history.size(); ++i)
    if (a.history[i].metric > a.history[arg].metric) arg = i;
  CHECK(a.best_epoch == arg + 1);
  CHECK(load_checkpoint(dir / "best.ckpt").params == a.best);

  tc.seed = 2;
  const auto d = train(train_docs, valid_docs, c, fresh(c, 3), tc);
  CHECK(d.history[0].train_loss != a.history[0].train_loss);
}

TEST_CASE("divergence aborts and names the last good checkpoint") {
  ModelConfig c = tiny_config(Variant::han);
  const auto train_docs = random_docs(c, 6, 1), valid_docs = random_docs(c, 3, 2);
  ModelParams p = fresh(c, 1);
  p.W.at(0, 0) = std::numeric_limits<real>::quiet_NaN();
  TrainConfig tc;
  try {
    train(train_docs, valid_docs, c, p, tc);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("last good checkpoint") != std::string::npos);
  }
  CHECK_THROWS_AS(train({}, valid_docs, c, fresh(c, 1), tc), DataError);
  tc.batch_size = 0;
  CHECK_THROWS_AS(train(train_docs, valid_docs, c, fresh(c, 1), tc), ConfigError);
}

TEST_CASE("train config json") {
  TrainConfig tc;
  tc.batch_size = 7, tc.early_stop_metric = StopMetric::precision_at_k, tc.k = 3;
  TrainConfig back;
  update_from_json(back, to_json(tc));
  CHECK(back == tc);
  CHECK_THROWS_AS(update_from_json(back, json{{"batchsize", 3}}), ConfigError);
  CHECK_THROWS_AS(update_from_json(back, json{{"early_stop_metric", "auc"}}), ConfigError);
}

TEST_CASE("a separable synthetic corpus is learned") {
  SynthConfig sc;
  sc.num_labels = 4, sc.num_docs = 240, sc.num_valid = 60, sc.num_test = 10;
  sc.cardinality_mean = 1.5, sc.vocab_size = 200, sc.doc_sentences = 4, sc.sentence_len = 10, sc.seed = 3;
  const auto corpus = generate_synthetic(sc);
  const Vocabulary vocab = Vocabulary::build(corpus.splits.train, 1);
  const LabelUniverse labels(corpus.labels);
  ModelConfig c;
  c.num_labels = 4, c.vocab_size = vocab.size(), c.d_e = 16, c.d_h = 16;
  c.sentences = 4, c.sentence_len = 10, c.variant = Variant::hlan, c.dropout = 0.1;
  const auto tr = encode_all(corpus.splits.train, vocab, labels, c.encoding());
  const auto va = encode_all(corpus.splits.valid, vocab, labels, c.encoding());
  TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.batch_size = 16;
  tc.max_epochs = 30;
  tc.patience = 30;
  auto r = train(tr, va, c, init_params(c, {}, 5), tc);
  double best = 0;
  for (const auto& e : r.history) best = std::max(best, e.micro_f1);
  MESSAGE("best validation micro-F1 " << best << " after " << r.history.size() << " epochs");
  CHECK(best >= 0.95);
}
