// Command-line entry point. Precedence: built-in defaults < --config file <
// command-line flags. Exit codes: 0 success, 1 usage or configuration error,
// 2 data/runtime error, 3 numeric divergence.

#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "hlan/pipeline.hpp"

namespace fs = std::filesystem;
using namespace hlan;

namespace {

struct Flags {
  std::string config, out, checkpoint, variant, le_init, corpus, vocab, split, label_emb;
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold;
  std::optional<std::size_t> k;
  std::optional<int> threads;
  // embed
  std::string target = "labels";
  std::vector<std::size_t> dims;
  // explain
  std::optional<std::size_t> limit;
  bool truth_labels = false, full = false;
};

void add_common(CLI::App* sub, Flags& f, bool wants_out = true) {
  sub->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("--seed", f.seed, "random seed for this stage");
  if (wants_out) sub->add_option("--out", f.out, "output directory")->required();
  sub->add_option("--threads", f.threads, "OpenMP threads (default: OpenMP's choice)");
}

void add_corpus(CLI::App* sub, Flags& f) {
  sub->add_option("--corpus", f.corpus, "corpus directory with train/valid/test.jsonl");
}

void add_model_input(CLI::App* sub, Flags& f) {
  sub->add_option("--checkpoint", f.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  sub->add_option("--vocab", f.vocab, "vocabulary (default: vocab.tsv beside the checkpoint)");
  sub->add_option("--split", f.split, "train, valid or test");
}

RunConfig resolve(const Flags& f, const std::string& cmd) {
  RunConfig c;
  if (!f.config.empty()) update_from_json(c, read_json_file(f.config));
  if (f.seed) {
    if (cmd == "gen-synth") c.synth.seed = *f.seed;
    if (cmd == "embed") c.word_embed.seed = c.label_embed.seed = *f.seed;
    if (cmd == "train" || cmd == "analyze-le") c.train.seed = *f.seed;
  }
  if (!f.variant.empty()) c.model.variant = parse_variant(f.variant);
  if (!f.le_init.empty()) {
    if (f.le_init != "on" && f.le_init != "off") throw ConfigError("--le-init expects on or off, got '" + f.le_init + "'");
    c.model.le_init = f.le_init == "on";
  }
  if (f.threshold) {
    if (cmd == "train") c.model.threshold = *f.threshold;
    else c.eval.threshold = *f.threshold;
  }
  if (f.k) {
    if (cmd == "train") c.train.k = *f.k;
    else c.eval.k = *f.k;
  }
  if (f.threads) c.train.threads = *f.threads;
  if (!f.corpus.empty()) c.data.corpus = f.corpus;
  if (!f.split.empty()) c.eval.split = f.split;
  if (f.limit) c.explain.limit = *f.limit;
  if (f.truth_labels) c.explain.truth_labels = true;
  if (f.full) c.explain.compact = false;
  if (c.train.threads > 0) kernels::set_threads(c.train.threads);
  return c;
}

std::optional<LabelUniverse> corpus_labels(const RunConfig& c) {
  if (c.data.corpus.empty()) return std::nullopt;
  const CorpusSplits s = load_splits(c.data.corpus);
  return LabelUniverse::from_corpora({&s.train, &s.valid, &s.test});
}

int run(const std::string& cmd, const Flags& f) {
  const RunConfig c = resolve(f, cmd);
  const fs::path out = f.out;
  if (cmd == "gen-synth") {
    run_gen_synth(c, out);
    std::cerr << "wrote corpus to " << out.string() << "\n";
  } else if (cmd == "embed") {
    for (const auto& p : run_embed(c, parse_embed_target(f.target), f.dims, out, std::cerr))
      std::cerr << "wrote " << p.string() << "\n";
  } else if (cmd == "train") {
    run_train(c, out, std::cerr);
  } else {
    const LoadedModel m = load_model(f.checkpoint, f.vocab, corpus_labels(c));
    if (cmd == "evaluate") {
      const MetricsReport r = run_evaluate(c, m, out);
      std::cerr << "micro-F1 " << r.prf.micro.f1 << "  macro-F1 " << r.prf.macro.f1 << "  micro-AUC " << r.micro_auc
                << "  P@" << r.k << " " << r.precision_at_k << "\n";
    } else if (cmd == "predict") {
      run_predict(c, m, out);
    } else if (cmd == "explain") {
      run_explain(c, m, out);
    } else if (cmd == "analyze-le") {
      const fs::path dir = f.label_emb.empty() ? fs::path(f.checkpoint).parent_path() : fs::path(f.label_emb);
      for (const auto& a : run_analyze_le(c, m, dir, f.k.value_or(10), out))
        std::cerr << a.layer << ": averaged Jaccard " << a.report.mean << " (random layers " << a.null.mean << " ± "
                  << a.null.stddev << ")\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical label-wise attention networks for multi-label document classification"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic corpus with planted label signals");
  add_common(gen, f);

  auto* embed = app.add_subcommand("embed", "train CBOW embeddings of words or label sets");
  add_common(embed, f);
  add_corpus(embed, f);
  embed->add_option("--target", f.target, "words or labels")->check(CLI::IsMember({"words", "labels"}));
  embed->add_option("--dims", f.dims, "embedding dimensions, comma separated")->delimiter(',')->required();

  auto* train = app.add_subcommand("train", "train a model with early stopping");
  add_common(train, f);
  add_corpus(train, f);
  train->add_option("--variant", f.variant, "hlan, hagru or han")->check(CLI::IsMember({"hlan", "hagru", "ha-gru", "han"}));
  train->add_option("--le-init", f.le_init, "label-embedding initialisation: on or off");
  train->add_option("--threshold", f.threshold, "calibration threshold stored with the model");
  train->add_option("--k", f.k, "k for precision@k early stopping");

  auto* eval = app.add_subcommand("evaluate", "compute metrics on a split");
  auto* pred = app.add_subcommand("predict", "write label sets and scores per document");
  auto* expl = app.add_subcommand("explain", "write highlighted sentences and words");
  for (auto* sub : {eval, pred, expl}) {
    add_common(sub, f);
    add_corpus(sub, f);
    add_model_input(sub, f);
    sub->add_option("--threshold", f.threshold, "calibration threshold (default: the model's)");
  }
  eval->add_option("--k", f.k, "k for precision@k (default: from the label count)");
  expl->add_option("--limit", f.limit, "explain only the first N documents");
  expl->add_flag("--truth-labels", f.truth_labels, "explain gold labels instead of predicted ones");
  expl->add_flag("--full", f.full, "show whole sentences instead of the first 11 tokens");

  auto* le = app.add_subcommand("analyze-le", "Jaccard overlap between label layers and label embeddings");
  add_common(le, f);
  add_corpus(le, f);
  add_model_input(le, f);
  le->add_option("--label-emb", f.label_emb, "directory of labels_<dim>.emb (default: beside the checkpoint)");
  le->add_option("--k", f.k, "neighbours per label (default 10)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    return run(cmd, f);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
