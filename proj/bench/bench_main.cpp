// Serial vs OpenMP document-parallel timings for the batch gradient and for
// batched inference, plus single-document predict+explain latency.
//
//   hlan_bench [--docs N] [--threads T] [--latency]

#include <chrono>
#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "hlan/explainer.hpp"
#include "hlan/trainer.hpp"

using namespace hlan;
using Clock = std::chrono::steady_clock;

namespace {

EncodedDocument random_document(const ModelConfig& c, std::mt19937_64& rng, std::size_t tokens) {
  EncodedDocument d;
  d.id = "bench";
  d.sentences = c.sentences, d.sentence_len = c.sentence_len;
  d.grid.assign(c.sentences * c.sentence_len, Vocabulary::kPad);
  d.token_mask.assign(d.grid.size(), 0);
  d.sentence_mask.assign(c.sentences, 0);
  d.tokens.assign(d.grid.size(), "");
  std::uniform_int_distribution<std::int32_t> tok(2, static_cast<std::int32_t>(c.vocab_size) - 1);
  for (std::size_t i = 0; i < std::min(tokens, d.grid.size()); ++i) {
    d.grid[i] = tok(rng);
    d.token_mask[i] = 1;
    d.sentence_mask[i / c.sentence_len] = 1;
    d.tokens[i] = "w" + std::to_string(d.grid[i]);
  }
  d.target = Tensor(Shape{c.num_labels});
  d.target[rng() % c.num_labels] = 1;
  return d;
}

template <class F>
double seconds(F&& f) {
  const auto t0 = Clock::now();
  f();
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hlan kernels: serial vs parallel"};
  std::size_t docs = 64;
  int threads = 0;
  bool latency = false;
  app.add_option("--docs", docs, "documents per batch");
  app.add_option("--threads", threads, "OpenMP threads (default: OpenMP's choice)");
  app.add_flag("--latency", latency, "time predict+explain on one 2,500-token document at full size");
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) kernels::set_threads(threads);

  std::mt19937_64 rng(1);
  if (latency) {
    ModelConfig c;
    c.num_labels = 50, c.vocab_size = 5000, c.d_e = 100, c.d_h = 100, c.sentences = 100, c.sentence_len = 25;
    const ModelParams p = init_params(c, {}, 1);
    const EncodedDocument d = random_document(c, rng, 2500);
    std::vector<std::string> names;
    for (std::size_t l = 0; l < c.num_labels; ++l) names.push_back("y" + std::to_string(l));
    for (int rep = 0; rep < 3; ++rep) {
      std::size_t n = 0;
      const double s = seconds([&] {
        const ForwardResult r = forward(p, c, d);
        const LabelSet top = top_k_labels(r.probabilities.values(), 5);
        n = select_highlights(r.attention, d, top, names).size();
        (void)render_visual(d, r.attention, select_highlights(r.attention, d, top, names));
      });
      std::cout << "predict+explain, 2500 tokens, |Y|=50, d_h=100: " << s << " s (" << n << " labels)\n";
    }
    return 0;
  }

  std::cout << "threads available: " << kernels::max_threads() << "\n";
  for (Variant v : {Variant::hlan, Variant::hagru, Variant::han}) {
    ModelConfig c;
    c.num_labels = 20, c.vocab_size = 2000, c.d_e = 32, c.d_h = 32, c.sentences = 20, c.sentence_len = 25;
    c.variant = v;
    const ModelParams p = init_params(c, {}, 2);
    std::vector<EncodedDocument> batch;
    for (std::size_t i = 0; i < docs; ++i) batch.push_back(random_document(c, rng, 150 + rng() % 100));
    std::vector<const EncodedDocument*> ptrs;
    std::vector<std::uint64_t> seeds;
    for (const auto& d : batch) ptrs.push_back(&d), seeds.push_back(derive_seed({1, ptrs.size()}));

    BatchGradient a, b;
    const double ts = seconds([&] { a = batch_gradient(p, c, ptrs, seeds, kernels::Exec::serial); });
    const double tp = seconds([&] { b = batch_gradient(p, c, ptrs, seeds, kernels::Exec::parallel); });
    bool same = a.loss == b.loss;
    for (std::size_t k = 0; k < a.grads.size(); ++k) same = same && a.grads[k].values() == b.grads[k].values();
    Tensor pa, pb;
    const double is = seconds([&] { pa = predict_probabilities(p, c, batch, kernels::Exec::serial); });
    const double ip = seconds([&] { pb = predict_probabilities(p, c, batch, kernels::Exec::parallel); });
    std::cout << to_string(v) << "  gradient: serial " << ts << " s, parallel " << tp << " s (x" << ts / tp
              << ")  inference: serial " << is << " s, parallel " << ip << " s (x" << is / ip << ")  identical: "
              << (same && pa.values() == pb.values() ? "yes" : "NO") << "\n";
  }
}
