#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "hlan/explainer.hpp"
#include "model_util.hpp"

using namespace hlan;
using namespace hlan::testing;

namespace {

// Single shared context at both levels; sentence s has n_t tokens named
// s<s>t<t>.
std::pair<AttentionRecord, EncodedDocument> hand_record(const std::vector<real>& alpha_s, std::size_t nt,
                                                        real alpha_w) {
  AttentionRecord r;
  const std::size_t n = alpha_s.size();
  r.sentences = n, r.sentence_len = nt, r.word_contexts = 1, r.sent_contexts = 1;
  r.alpha_s = alpha_s;
  r.alpha_w.assign(n * nt, alpha_w);
  r.token_mask.assign(n * nt, 1);
  r.sentence_mask.assign(n, 1);
  EncodedDocument d;
  d.id = "hand";
  d.sentences = n, d.sentence_len = nt;
  d.token_mask = r.token_mask, d.sentence_mask = r.sentence_mask;
  d.grid.assign(n * nt, 2);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t t = 0; t < nt; ++t) d.tokens.push_back("s" + std::to_string(s) + "t" + std::to_string(t));
  return {r, d};
}

const std::vector<std::string> kNames{"a", "b", "c", "d"};

struct Sample {
  ModelConfig c;
  EncodedDocument doc;
  AttentionRecord rec;
};

Sample random_sample(Variant v, std::uint64_t seed) {
  Sample s;
  s.c = tiny_config(v);
  s.c.sentences = 5, s.c.sentence_len = 6;
  std::mt19937_64 rng(seed);
  s.doc = random_doc(s.c, rng);
  s.doc.tokens.assign(s.doc.grid.size(), "");
  for (std::size_t i = 0; i < s.doc.grid.size(); ++i)
    if (s.doc.token_mask[i]) s.doc.tokens[i] = "w" + std::to_string(s.doc.grid[i]);
  s.rec = forward(random_params(s.c, seed, 1.5), s.c, s.doc).attention;
  return s;
}

}  // namespace

TEST_CASE("sentence-weighted scores") {
  {
    auto [r, d] = hand_record({real(0.3), real(0.5), 0}, 2, real(0.1));
    r.alpha_w[2] = real(0.5);  // sentence 1, token 0
    const auto w = sentence_weighted_scores(r);
    CHECK(w.at(0, 0, 0) == doctest::Approx(0.15));
    CHECK(w.at(0, 1, 0) == 1.0);  // 5 * 0.5 * 0.5 clipped
    CHECK(w.at(0, 2, 0) == 0.0);
    CHECK(w.at(0, 2, 1) == 0.0);
  }
  CHECK_THROWS_AS(sentence_weighted_scores(hand_record({1}, 1, 1).first, 0), ConfigError);

  for (Variant v : {Variant::hlan, Variant::hagru, Variant::han})
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const Sample s = random_sample(v, seed);
      const auto w = sentence_weighted_scores(s.rec);
      CHECK(w.labels == (v == Variant::han ? 1u : 4u));
      for (std::size_t l = 0; l < w.labels; ++l)
        for (std::size_t i = 0; i < s.rec.sentences; ++i)
          for (std::size_t t = 0; t < s.rec.sentence_len; ++t) {
            const real a = w.at(l, i, t);
            CHECK(a >= 0);
            CHECK(a <= 1);
            const bool zero = s.rec.sentence(l, i) == 0 || s.rec.word(l, i, t) == 0;
            CHECK((a == 0) == zero);
          }
    }
}

TEST_CASE("highlight selection examples") {
  auto [r, d] = hand_record({real(0.54), real(0.18), real(0.05), real(0.23)}, 3, real(1.0 / 3));
  auto hs = select_highlights(r, d, {0}, kNames);
  REQUIRE(hs.size() == 1);
  std::vector<std::size_t> picked;
  for (const auto& s : hs[0].sentences) picked.push_back(s.sentence);
  CHECK(picked == std::vector<std::size_t>{0, 1, 3});
  CHECK(hs[0].sentences[0].score == doctest::Approx(0.54));
  CHECK(hs[0].sentences[0].text == "s0t0 s0t1 s0t2");
  CHECK(hs[0].words.size() == 9);  // every word of a selected sentence clears 0.01
  for (const auto& w : hs[0].words) CHECK(w.sentence != 2);

  auto [flat, fd] = hand_record({real(0.1), real(0.1), real(0.05)}, 2, real(0.5));
  auto empty = select_highlights(flat, fd, {0, 2}, kNames);
  REQUIRE(empty.size() == 2);
  CHECK(empty[0].sentences.empty());
  CHECK(empty[0].words.empty());
  CHECK(empty[1].label == "c");

  HighlightOptions bad;
  bad.sentence_threshold = 1;
  CHECK_THROWS_AS(select_highlights(r, d, {0}, kNames, bad), ConfigError);
}

TEST_CASE("highlights are anti-monotone in both thresholds and deterministic") {
  const std::vector<double> grid{0.02, 0.05, 0.1, 0.2, 0.3, 0.5};
  auto contains = [](const Highlight& big, const Highlight& small) {
    for (const auto& s : small.sentences)
      if (std::find(big.sentences.begin(), big.sentences.end(), s) == big.sentences.end()) return false;
    for (const auto& w : small.words)
      if (std::find(big.words.begin(), big.words.end(), w) == big.words.end()) return false;
    return true;
  };
  for (Variant v : {Variant::hlan, Variant::hagru, Variant::han})
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Sample s = random_sample(v, seed);
      for (WordBasis basis : {WordBasis::raw, WordBasis::weighted})
        for (double st : grid)
          for (double wt : grid) {
            HighlightOptions lo{st, wt, basis};
            const auto base = select_highlights(s.rec, s.doc, {0, 1, 2, 3}, kNames, lo);
            CHECK(base == select_highlights(s.rec, s.doc, {0, 1, 2, 3}, kNames, lo));
            for (const auto& h : base) {
              for (const auto& x : h.sentences) CHECK(x.score > st);
              for (const auto& x : h.words) CHECK((basis == WordBasis::raw ? x.score : x.weighted) > wt);
            }
            for (double up : grid) {
              if (up < st) continue;
              HighlightOptions hi_s{up, wt, basis}, hi_w{st, std::max(up, wt), basis};
              const auto a = select_highlights(s.rec, s.doc, {0, 1, 2, 3}, kNames, hi_s);
              const auto b = select_highlights(s.rec, s.doc, {0, 1, 2, 3}, kNames, hi_w);
              for (std::size_t l = 0; l < 4; ++l) {
                CHECK(contains(base[l], a[l]));
                CHECK(contains(base[l], b[l]));
              }
            }
          }
    }
}

TEST_CASE("HAN highlights are the same for every label") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Sample s = random_sample(Variant::han, seed);
    HighlightOptions o;
    o.sentence_threshold = 0.05;
    const auto hs = select_highlights(s.rec, s.doc, {0, 1, 2, 3}, kNames, o);
    for (const auto& h : hs) {
      CHECK(h.sentences == hs[0].sentences);
      CHECK(h.words == hs[0].words);
    }
  }
}

TEST_CASE("structured export round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "hlan_explainer";
  std::filesystem::create_directories(dir);
  for (Variant v : {Variant::hlan, Variant::hagru, Variant::han}) {
    const Sample s = random_sample(v, 3);
    HighlightOptions o;
    o.sentence_threshold = 0.01;
    auto hs = select_highlights(s.rec, s.doc, {1, 3}, kNames, o);
    write_structured(hs, dir / "h.jsonl");
    CHECK(read_structured(dir / "h.jsonl") == hs);
  }
  std::ostringstream out;
  write_structured({Highlight{"x", 0, "a", {}, {}}}, out);
  CHECK(out.str().empty());
  std::ofstream(dir / "bad.jsonl") << "{\"doc\":1}\n";
  CHECK_THROWS_AS(read_structured(dir / "bad.jsonl"), DataError);
}

TEST_CASE("visual export") {
  auto [r, d] = hand_record({real(0.6), real(0.4)}, 15, real(1.0 / 15));
  const std::string plain = render_visual(d, r, {});
  CHECK(plain.find("s0t0") != std::string::npos);
  CHECK(plain.find("rgba") == std::string::npos);
  CHECK(plain.find("<html") != std::string::npos);
  CHECK(plain.find("http") == std::string::npos);

  const auto hs = select_highlights(r, d, {0}, kNames);
  const std::string compact = render_visual(d, r, hs);
  CHECK(compact.find("s1t10") != std::string::npos);
  CHECK(compact.find("s1t11") == std::string::npos);
  CHECK(compact.find("rgba(230,60,50,0.200)") != std::string::npos);  // 5 * 0.6 / 15
  VisualOptions full;
  full.compact = false;
  CHECK(render_visual(d, r, hs, full).find("s1t14") != std::string::npos);

  d.id = "<script>";
  CHECK(render_visual(d, r, hs).find("<script>") == std::string::npos);
}
