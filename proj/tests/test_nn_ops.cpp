#include <cmath>
#include <random>

#include "doctest.h"
#include "hlan/kernels.hpp"
#include "hlan/nn_ops.hpp"
#include "test_util.hpp"

using namespace hlan;
using namespace hlan::ad;
using hlan::testing::check_graph;
using hlan::testing::probe;
using hlan::testing::random_tensor;

namespace {

struct GruParams {
  std::vector<Tensor> w;  // er, ez, ec, hr, hz, hc, br, bz

  GruParams(std::mt19937_64& rng, std::size_t d_in, std::size_t h, real scale = 0.6) {
    for (int i = 0; i < 3; ++i) w.push_back(random_tensor(rng, {d_in, h}, -scale, scale));
    for (int i = 0; i < 3; ++i) w.push_back(random_tensor(rng, {h, h}, -scale, scale));
    for (int i = 0; i < 2; ++i) w.push_back(random_tensor(rng, {h}, -scale, scale));
  }
};

GruWeights bind_gru(Tape& t, const std::vector<Tensor>& w, std::size_t offset = 0) {
  std::vector<Var> v;
  for (std::size_t i = 0; i < 8; ++i) v.push_back(t.parameter(w[offset + i]));
  return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
}

GruWeights from_vars(const std::vector<Var>& v, std::size_t offset) {
  return {v[offset], v[offset + 1], v[offset + 2], v[offset + 3],
          v[offset + 4], v[offset + 5], v[offset + 6], v[offset + 7]};
}

real ref_sigmoid(real x) {
  if (x >= 0) return 1 / (1 + std::exp(-x));
  const real e = std::exp(x);
  return e / (1 + e);
}

// Straight scalar loops over the GRU equations.
std::vector<real> scalar_gru_cell(const std::vector<real>& e, const std::vector<real>& h,
                                  const std::vector<Tensor>& w) {
  const std::size_t d = e.size(), H = h.size();
  auto affine = [&](const Tensor& we, const std::vector<real>& x, const Tensor& wh,
                    const std::vector<real>& hh, std::size_t j) {
    real a = 0, b = 0;
    for (std::size_t i = 0; i < d; ++i) a += x[i] * we.at(i, j);
    for (std::size_t i = 0; i < H; ++i) b += hh[i] * wh.at(i, j);
    return a + b;
  };
  std::vector<real> r(H), z(H), rh(H), out(H);
  for (std::size_t j = 0; j < H; ++j) {
    r[j] = ref_sigmoid(affine(w[0], e, w[3], h, j) + w[6][j]);
    z[j] = ref_sigmoid(affine(w[1], e, w[4], h, j) + w[7][j]);
  }
  for (std::size_t j = 0; j < H; ++j) rh[j] = r[j] * h[j];
  for (std::size_t j = 0; j < H; ++j) {
    const real c = std::tanh(affine(w[2], e, w[5], rh, j));
    out[j] = (1 - z[j]) * h[j] + z[j] * c;
  }
  return out;
}

}  // namespace

TEST_CASE("gru_cell with zero weights") {
  std::mt19937_64 rng(1);
  GruParams p(rng, 3, 4);
  for (Tensor& t : p.w) t.fill(0);
  Tape t;
  auto w = bind_gru(t, p.w);
  auto e = t.constant(random_tensor(rng, {1, 3}));
  auto h0 = gru_cell(e, t.constant(Tensor::matrix(1, 4)), w);
  for (real v : h0.value().values()) CHECK(v == 0.0);
  Tensor v = random_tensor(rng, {1, 4});
  auto h1 = gru_cell(e, t.constant(v), w);
  for (std::size_t j = 0; j < 4; ++j) CHECK(h1.value()[j] == 0.5 * v[j]);
}

TEST_CASE("gru_cell matches a scalar-loop reference exactly") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    GruParams p(rng, 5, 3);
    Tensor e = random_tensor(rng, {1, 5}), h = random_tensor(rng, {1, 3});
    Tape t;
    auto out = gru_cell(t.constant(e), t.constant(h), bind_gru(t, p.w)).value();
    auto ref = scalar_gru_cell(e.values(), h.values(), p.w);
    for (std::size_t j = 0; j < 3; ++j) CHECK(out[j] == ref[j]);
  }
}

TEST_CASE("gru_sequence equals unrolled gru_cell steps, both directions, with masks") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t B = 1 + rng() % 3, T = 1 + rng() % 5, d = 1 + rng() % 4, H = 1 + rng() % 4;
    GruParams p(rng, d, H);
    Tensor x = random_tensor(rng, {B * T, d});
    std::vector<std::uint8_t> mask(B * T);
    for (auto& m : mask) m = (rng() % 4) != 0;
    for (bool reverse : {false, true}) {
      Tape t;
      auto w = bind_gru(t, p.w);
      auto out = gru_sequence(t.constant(x), w, B, T, mask, reverse).value();
      for (std::size_t b = 0; b < B; ++b) {
        Tape tc;
        auto wc = bind_gru(tc, p.w);
        Var h = tc.constant(Tensor::matrix(1, H));
        for (std::size_t s = 0; s < T; ++s) {
          const std::size_t tpos = reverse ? T - 1 - s : s;
          const std::size_t row = b * T + tpos;
          if (!mask[row]) {
            for (std::size_t j = 0; j < H; ++j) CHECK(out.at(row, j) == 0.0);
            continue;
          }
          Tensor e = Tensor::matrix(1, d);
          std::copy_n(x.row(row), d, e.data());
          h = gru_cell(tc.constant(e), h, wc);
          for (std::size_t j = 0; j < H; ++j) CHECK(out.at(row, j) == h.value()[j]);
        }
      }
    }
  }
}

TEST_CASE("bigru properties") {
  std::mt19937_64 rng(6);
  const std::size_t T = 5, d = 3, H = 4;
  GruParams p(rng, d, H);
  SUBCASE("length-1 sequence gives 2*d_h state from the same input") {
    Tape t;
    auto w = bind_gru(t, p.w);
    auto x = t.constant(random_tensor(rng, {1, d}));
    std::vector<std::uint8_t> m{1};
    auto f = gru_sequence(x, w, 1, 1, m, false);
    auto b = gru_sequence(x, w, 1, 1, m, true);
    auto h = concat(f, b, 1);
    CHECK(h.shape() == Shape{1, 2 * H});
    CHECK(f.value() == b.value());
  }
  SUBCASE("palindrome with tied directions mirrors") {
    Tensor x = Tensor::matrix(T, d);
    for (std::size_t t = 0; t < T; ++t) {
      Tensor r = random_tensor(rng, {d});
      std::copy_n(r.data(), d, x.row(t));
    }
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d; ++j) x.at(T - 1 - t, j) = x.at(t, j);
    Tape tp;
    auto w = bind_gru(tp, p.w);
    std::vector<std::uint8_t> m(T, 1);
    auto f = gru_sequence(tp.constant(x), w, 1, T, m, false).value();
    auto b = gru_sequence(tp.constant(x), w, 1, T, m, true).value();
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < H; ++j) CHECK(f.at(t, j) == b.at(T - 1 - t, j));
  }
  SUBCASE("trailing PAD mask equals the truncated run") {
    const std::size_t keep = 3;
    Tensor x = random_tensor(rng, {T, d});
    Tensor xt = Tensor::matrix(keep, d);
    std::copy_n(x.data(), keep * d, xt.data());
    std::vector<std::uint8_t> m(T, 0), mt(keep, 1);
    for (std::size_t i = 0; i < keep; ++i) m[i] = 1;
    for (bool rev : {false, true}) {
      Tape tp;
      auto w = bind_gru(tp, p.w);
      auto full = gru_sequence(tp.constant(x), w, 1, T, m, rev).value();
      auto cut = gru_sequence(tp.constant(xt), w, 1, keep, mt, rev).value();
      for (std::size_t i = 0; i < keep * H; ++i) CHECK(full[i] == cut[i]);
      for (std::size_t i = keep * H; i < T * H; ++i) CHECK(full[i] == 0.0);
    }
  }
  SUBCASE("fully masked sequence yields zero states") {
    Tape tp;
    auto w = bind_gru(tp, p.w);
    std::vector<std::uint8_t> m(T, 0);
    auto out = gru_sequence(tp.constant(random_tensor(rng, {T, d})), w, 1, T, m, false).value();
    for (real v : out.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("gru_sequence gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const std::size_t B = 1 + rng() % 3, T = 1 + rng() % 4, d = 1 + rng() % 3, H = 1 + rng() % 3;
    GruParams p(rng, d, H, 0.9);
    std::vector<Tensor> params = p.w;
    params.push_back(random_tensor(rng, {B * T, d}));
    std::vector<std::uint8_t> mask(B * T);
    for (auto& m : mask) m = (rng() % 3) != 0;
    const bool reverse = seed % 2;
    auto rep = check_graph(params, [&](Tape&, const std::vector<Var>& v) {
      return probe(gru_sequence(v[8], from_vars(v, 0), B, T, mask, reverse), seed);
    });
    INFO("seed " << seed << " worst " << rep.worst);
    CHECK(rep.passed(1e-4));
  }
}

TEST_CASE("attention ops: values and gradients") {
  std::mt19937_64 rng(8);
  const std::size_t G = 3, T = 4, L = 2, D = 3;
  std::vector<std::uint8_t> mask(G * T, 1);
  mask[3] = mask[7] = mask[6] = 0;
  SUBCASE("segment_softmax normalizes each segment and column") {
    Tape t;
    auto y = segment_softmax(t.constant(random_tensor(rng, {G * T, L}, -5, 5)), T, mask).value();
    for (std::size_t g = 0; g < G; ++g)
      for (std::size_t l = 0; l < L; ++l) {
        real s = 0;
        for (std::size_t i = 0; i < T; ++i) {
          if (!mask[g * T + i]) CHECK(y.at(g * T + i, l) == 0.0);
          s += y.at(g * T + i, l);
        }
        CHECK(std::abs(s - 1) < 1e-12);
      }
    // matches plain softmax on the unmasked entries of one segment
    Tensor sc = random_tensor(rng, {T, 1});
    std::vector<std::uint8_t> m1(T, 1);
    auto a = segment_softmax(t.constant(sc), T, m1).value();
    auto b = softmax(t.constant(sc)).value();
    for (std::size_t i = 0; i < T; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-15));
  }
  SUBCASE("all-masked segment is all zero") {
    std::vector<std::uint8_t> m(T, 0);
    Tape t;
    auto y = segment_softmax(t.constant(random_tensor(rng, {T, L})), T, m).value();
    for (real v : y.values()) CHECK(v == 0.0);
  }
  SUBCASE("gradients") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::vector<Tensor> p{random_tensor(rng, {G * T, L}, -2, 2), random_tensor(rng, {G * T, D}),
                            random_tensor(rng, {L * G * T, D}), random_tensor(rng, {L, D})};
      auto rep = check_graph(p, [&](Tape&, const std::vector<Var>& v) {
        Var a = segment_softmax(v[0], T, mask);
        Var shared = segment_pool(a, v[1], T, true);
        Var own = segment_pool(a, v[2], T, false);
        Var dots = grouped_rowdot(v[2], v[3], G * T);
        return add(add(probe(shared, seed), probe(own, seed + 1)), probe(dots, seed + 2));
      });
      INFO("worst " << rep.worst);
      CHECK(rep.passed(1e-4));
    }
  }
  SUBCASE("grouped_rowdot with one group equals matmul_nt column") {
    Tensor u = random_tensor(rng, {T, D}), c = random_tensor(rng, {1, D});
    Tape t;
    auto a = grouped_rowdot(t.constant(u), t.constant(c), T).value();
    auto b = matmul_nt(t.constant(u), t.constant(c)).value();
    for (std::size_t i = 0; i < T; ++i) CHECK(a[i] == b[i]);
  }
}
