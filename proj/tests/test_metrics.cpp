#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "hlan/metrics.hpp"
#include "metrics_oracle.hpp"

using namespace hlan;
using namespace hlan::testing;

TEST_CASE("confusion examples") {
  std::vector<LabelSet> pred{{0, 1}, {2}}, truth{{0}, {1, 2}};
  auto c = confusion(pred, truth, 3);
  CHECK(c.total_tp() == 2);
  CHECK(c.total_fp() == 1);
  CHECK(c.total_fn() == 1);
  for (std::size_t l = 0; l < 3; ++l) CHECK(c.tp[l] + c.fp[l] + c.fn[l] + c.tn[l] == 2);

  auto m = micro_macro(c);
  CHECK(m.micro.precision == doctest::Approx(2.0 / 3));
  CHECK(m.micro.recall == doctest::Approx(2.0 / 3));
  CHECK(m.micro.f1 == doctest::Approx(2.0 / 3));
  CHECK(m.macro.precision == doctest::Approx(2.0 / 3));

  auto same = confusion(truth, truth, 3);
  CHECK(same.total_fp() == 0);
  CHECK(same.total_fn() == 0);
  auto perfect = micro_macro(same);
  CHECK(perfect.micro.f1 == 1.0);
  CHECK(perfect.macro.precision == 1.0);
  CHECK(perfect.macro.recall == 1.0);

  auto none = confusion({{}, {}}, truth, 3);
  CHECK(none.total_tp() == 0);
  CHECK(none.total_fp() == 0);
  CHECK(none.total_fn() == 3);

  CHECK_THROWS_AS(confusion({{5}}, {{0}}, 3), DataError);
  CHECK_THROWS_AS(confusion({{0}}, {{0}, {1}}, 3), DimensionError);
}

TEST_CASE("auc examples") {
  CHECK(rank_auc({0.9, 0.2}, {1, 0}) == 1.0);
  CHECK(rank_auc({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0}) == 0.5);
  CHECK_THROWS_AS(rank_auc({0.1, 0.2}, {1, 1}), DataError);

  Tensor s = Tensor::from_rows({{0.9, 0.1}, {0.2, 0.3}}), t = Tensor::from_rows({{1, 1}, {0, 1}});
  auto macro = auc(s, t, AucMode::macro);
  CHECK(macro.value == 1.0);
  CHECK(macro.skipped == std::vector<std::size_t>{1});
}

TEST_CASE("precision_at_k examples") {
  Tensor s = Tensor::from_rows({{0.9, 0.1, 0.3}});
  CHECK(precision_at_k(s, Tensor::from_rows({{1, 0, 0}}), 1) == 1.0);
  Tensor many = Tensor::matrix(1, 6, 0.5);
  CHECK(precision_at_k(many, Tensor::matrix(1, 6), 5) == 0.0);
  // ties go to the lowest index
  CHECK(top_k_labels(std::span<const real>(many.data(), 6), 2) == std::vector<std::size_t>{0, 1});
  CHECK_THROWS_AS(precision_at_k(s, Tensor::from_rows({{1, 0, 0}}), 4), ConfigError);
}

TEST_CASE("metrics agree with brute-force oracles on random instances") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    auto m = random_instance(rng);
    const std::size_t L = m.scores.cols();
    auto got = micro_macro(confusion(to_sets(m.pred), to_sets(m.truth), L));
    auto want = naive_prf(m.pred, m.truth);
    CHECK(got.micro.precision == want.micro_p);
    CHECK(got.micro.recall == want.micro_r);
    CHECK(got.micro.f1 == want.micro_f1);
    CHECK(got.macro.precision == want.macro_p);
    CHECK(got.macro.recall == want.macro_r);
    CHECK(got.macro.f1 == want.macro_f1);
    for (std::size_t k = 1; k <= L; ++k)
      CHECK(precision_at_k(m.scores, m.truth, k) == naive_precision_at_k(m.scores, m.truth, k));

    std::vector<double> s(m.scores.values().begin(), m.scores.values().end());
    std::vector<int> y;
    std::vector<std::uint8_t> y8;
    for (real v : m.truth.values()) y.push_back(v > 0.5), y8.push_back(v > 0.5);
    const long P = std::count(y.begin(), y.end(), 1);
    if (P > 0 && P < static_cast<long>(y.size()))
      CHECK(std::abs(auc(m.scores, m.truth, AucMode::micro).value - trapezoid_auc(s, y)) <= 1e-9);
  }
}

TEST_CASE("precision at |Y| is the mean truth fraction") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = random_instance(rng);
    const std::size_t L = m.scores.cols();
    double want = 0;
    for (std::size_t d = 0; d < m.truth.rows(); ++d) {
      double n = 0;
      for (std::size_t l = 0; l < L; ++l) n += m.truth.at(d, l);
      want += n / static_cast<double>(L);
    }
    want /= static_cast<double>(m.truth.rows());
    CHECK(precision_at_k(m.scores, m.truth, L) == doctest::Approx(want).epsilon(1e-14));
  }
}

TEST_CASE("micro-F1 is invariant under relabeling") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = random_instance(rng);
    const std::size_t D = m.pred.rows(), L = m.pred.cols();
    std::vector<std::size_t> perm(L);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor p2 = Tensor::matrix(D, L), t2 = Tensor::matrix(D, L);
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t l = 0; l < L; ++l) p2.at(d, perm[l]) = m.pred.at(d, l), t2.at(d, perm[l]) = m.truth.at(d, l);
    CHECK(micro_macro(confusion(to_sets(m.pred), to_sets(m.truth), L)).micro.f1 ==
          micro_macro(confusion(to_sets(p2), to_sets(t2), L)).micro.f1);
  }
}

TEST_CASE("precision@k does not increase once the top k hold every truth label") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = random_instance(rng);
    const std::size_t L = m.scores.cols();
    for (std::size_t d = 0; d < m.scores.rows(); ++d) {
      Tensor s = Tensor::matrix(1, L), t = Tensor::matrix(1, L);
      std::copy_n(m.scores.row(d), L, s.data());
      std::copy_n(m.truth.row(d), L, t.data());
      std::size_t truth_size = 0;
      for (real v : t.values()) truth_size += v > 0.5;
      auto ranked = top_k_labels({s.data(), L}, L);
      std::size_t covered = 0, seen = 0;  // smallest k whose top-k holds all truth labels
      for (std::size_t i = 0; i < L && seen < truth_size; ++i) seen += t[ranked[i]] > 0.5, covered = i + 1;
      for (std::size_t k = std::max<std::size_t>(1, covered); k < L; ++k)
        CHECK(precision_at_k(s, t, k + 1) <= precision_at_k(s, t, k));
    }
  }
  // truth size <= k alone is not enough: a miss at rank 1 then a hit at rank 2
  Tensor s = Tensor::from_rows({{0.9, 0.5, 0.1}}), t = Tensor::from_rows({{0, 1, 0}});
  CHECK(precision_at_k(s, t, 1) == 0.0);
  CHECK(precision_at_k(s, t, 2) == 0.5);
}

TEST_CASE("evaluate report") {
  Tensor p = Tensor::from_rows({{0.9, 0.6, 0.1}, {0.2, 0.4, 0.7}});
  Tensor t = Tensor::from_rows({{1, 0, 0}, {0, 1, 1}});
  auto r = evaluate(p, t, 0.5, 1);
  CHECK(r.prf.micro.precision == doctest::Approx(2.0 / 3));
  CHECK(r.prf.micro.recall == doctest::Approx(2.0 / 3));
  CHECK(r.precision_at_k == 1.0);
  CHECK(r.frequency == std::vector<std::size_t>{1, 1, 1});
  CHECK(threshold_labels(std::vector<real>{0.6, 0.4, 0.5}, 0.5) == LabelSet{0});
  CHECK(threshold_labels(std::vector<real>{0.6, 0.4, 0.5}, 1e-9).size() == 3);
}

TEST_CASE("jaccard analysis") {
  CHECK(jaccard({"a", "b"}, {"b", "c"}) == doctest::Approx(1.0 / 3));
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  std::vector<std::string> labels;
  Tensor m = Tensor::matrix(30, 8);
  for (std::size_t i = 0; i < 30; ++i) labels.push_back("y" + std::to_string(i));
  for (real& v : m.values()) v = g(rng);
  // table misses y29
  Tensor tm = Tensor::matrix(29, 8);
  std::copy_n(m.data(), 29 * 8, tm.data());
  EmbeddingTable table(std::vector<std::string>(labels.begin(), labels.end() - 1), tm);
  auto same = jaccard_le_analysis(m, labels, table, 10);
  CHECK(same.mean == 1.0);
  CHECK(same.stddev == 0.0);
  CHECK(same.excluded == std::vector<std::string>{"y29"});
  // scaling rows does not move cosine neighbours
  Tensor scaled = m;
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t j = 0; j < 8; ++j) scaled.at(i, j) *= static_cast<real>(1 + i);
  CHECK(jaccard_le_analysis(scaled, labels, table, 10).mean == 1.0);

  Tensor noise = Tensor::matrix(30, 8);
  for (real& v : noise.values()) v = g(rng);
  CHECK(jaccard_le_analysis(noise, labels, table, 10).mean < 0.8);
  CHECK_THROWS_AS(jaccard_le_analysis(m, labels, table, 29), ConfigError);
}
