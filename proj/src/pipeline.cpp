#include "hlan/pipeline.hpp"

#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace hlan {

namespace fs = std::filesystem;

RunConfig::RunConfig() {
  label_embed.shuffle_within = true;  // label sets carry no order
  label_embed.dim = 0;                // set per layer
  word_embed.min_count = 1;
}

namespace {

json to_json(const DataConfig& c) {
  return {{"corpus", c.corpus},
          {"segment", to_string(c.segment)},
          {"min_count", c.min_count},
          {"word_embeddings", c.word_embeddings},
          {"label_embeddings", c.label_embeddings}};
}

void update_from_json(DataConfig& c, const json& j, const std::string& where) {
  detail::FieldReader(j, where)
      .field("corpus", c.corpus)
      .custom("segment",
              [&](const json& v, const std::string& at) {
                if (!v.is_string()) throw ConfigError(at + ": expected a string");
                c.segment = parse_segment_mode(v.get<std::string>());
              })
      .field("min_count", c.min_count)
      .field("word_embeddings", c.word_embeddings)
      .field("label_embeddings", c.label_embeddings)
      .finish();
}

json to_json(const ExplainConfig& c) {
  return {{"sentence_threshold", c.highlight.sentence_threshold},
          {"word_threshold", c.highlight.word_threshold},
          {"word_basis", c.highlight.word_basis == WordBasis::raw ? "raw" : "weighted"},
          {"mu", c.highlight.mu},
          {"compact", c.compact},
          {"truth_labels", c.truth_labels},
          {"limit", c.limit}};
}

void update_from_json(ExplainConfig& c, const json& j, const std::string& where) {
  detail::FieldReader(j, where)
      .field("sentence_threshold", c.highlight.sentence_threshold)
      .field("word_threshold", c.highlight.word_threshold)
      .custom("word_basis",
              [&](const json& v, const std::string& at) {
                if (v == "raw") c.highlight.word_basis = WordBasis::raw;
                else if (v == "weighted") c.highlight.word_basis = WordBasis::weighted;
                else throw ConfigError(at + ": expected \"raw\" or \"weighted\", got " + v.dump());
              })
      .field("mu", c.highlight.mu)
      .field("compact", c.compact)
      .field("truth_labels", c.truth_labels)
      .field("limit", c.limit)
      .finish();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

const Corpus& split_of(const CorpusSplits& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "valid") return s.valid;
  if (name == "test") return s.test;
  throw ConfigError("unknown split '" + name + "' (expected train, valid or test)");
}

CorpusSplits load_corpus_dir(const RunConfig& c) {
  if (c.data.corpus.empty()) throw ConfigError("data.corpus: no corpus directory given (--corpus)");
  return load_splits(c.data.corpus);
}

std::vector<std::vector<std::string>> label_sequences(const Corpus& corpus) {
  std::vector<std::vector<std::string>> out;
  for (const auto& d : corpus)
    if (!d.labels.empty()) out.push_back(d.labels);
  return out;
}

std::string emb_name(EmbedTarget t, std::size_t dim) {
  return std::string(t == EmbedTarget::words ? "words_" : "labels_") + std::to_string(dim) + ".emb";
}

// Label embedding of width `dim`: from `dir` when the file exists, otherwise
// trained on the label sets and saved to `save_dir`.
EmbeddingTable label_table(const RunConfig& c, const Corpus& train, std::size_t dim, const fs::path& dir,
                           const fs::path& save_dir, std::ostream& log) {
  if (!dir.empty()) {
    const fs::path p = dir / emb_name(EmbedTarget::labels, dim);
    if (fs::exists(p)) return load_embeddings(p);
  }
  CbowConfig cc = c.label_embed;
  cc.dim = dim;
  log << "training " << dim << "-d label embeddings\n";
  EmbeddingTable t = train_cbow(label_sequences(train), cc);
  save_embeddings(t, save_dir / emb_name(EmbedTarget::labels, dim));
  return t;
}

std::string safe_name(const std::string& id) {
  std::string out;
  for (char ch : id) out += std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.' ? ch : '_';
  return out.empty() ? "doc" : out;
}

}  // namespace

json to_json(const RunConfig& c) {
  json label = to_json(c.label_embed);
  label.erase("dim");
  return {{"synth", to_json(c.synth)}, {"word_embed", to_json(c.word_embed)}, {"label_embed", label},
          {"model", to_json(c.model)}, {"train", to_json(c.train)},         {"data", to_json(c.data)},
          {"eval", {{"k", c.eval.k}, {"threshold", c.eval.threshold}, {"split", c.eval.split}}},              {"explain", to_json(c.explain)}};
}

void update_from_json(RunConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  detail::FieldReader(j, "config")
      .custom("synth", [&](const json& v, const std::string& at) { update_from_json(c.synth, v, at); })
      .custom("word_embed", [&](const json& v, const std::string& at) { update_from_json(c.word_embed, v, at); })
      .custom("label_embed",
              [&](const json& v, const std::string& at) {
                if (v.contains("dim")) throw ConfigError(at + ".dim: label embedding widths follow the model layers");
                update_from_json(c.label_embed, v, at);
              })
      .custom("model", [&](const json& v, const std::string& at) { update_from_json(c.model, v, at); })
      .custom("train", [&](const json& v, const std::string& at) { update_from_json(c.train, v, at); })
      .custom("data", [&](const json& v, const std::string& at) { update_from_json(c.data, v, at); })
      .custom("eval",
              [&](const json& v, const std::string& at) {
                detail::FieldReader(v, at)
                    .field("k", c.eval.k)
                    .field("threshold", c.eval.threshold)
                    .field("split", c.eval.split)
                    .finish();
              })
      .custom("explain", [&](const json& v, const std::string& at) { update_from_json(c.explain, v, at); })
      .finish();
}

std::size_t default_k(std::size_t num_labels) {
  if (num_labels <= 30) return 1;
  if (num_labels <= 100) return 5;
  return 8;
}

void echo_config(const RunConfig& c, const fs::path& out) {
  fs::create_directories(out);
  write_text(out / "config.json", to_json(c).dump(2) + "\n");
}

void run_gen_synth(const RunConfig& c, const fs::path& out) {
  const SyntheticCorpus corpus = generate_synthetic(c.synth);
  save_synthetic(corpus, out);
  echo_config(c, out);
}

EmbedTarget parse_embed_target(const std::string& s) {
  if (s == "words") return EmbedTarget::words;
  if (s == "labels") return EmbedTarget::labels;
  throw ConfigError("unknown embedding target '" + s + "' (expected words or labels)");
}

std::vector<fs::path> run_embed(const RunConfig& c, EmbedTarget target, const std::vector<std::size_t>& dims,
                                const fs::path& out, std::ostream& log) {
  if (dims.empty()) throw ConfigError("embed: no dimensions requested");
  const CorpusSplits splits = load_corpus_dir(c);
  std::vector<std::vector<std::string>> seqs;
  if (target == EmbedTarget::labels) {
    seqs = label_sequences(splits.train);
    if (seqs.empty()) throw DataError("embed: the training split has no label sets");
  } else {
    for (const auto& d : splits.train) seqs.push_back(tokenize(d.text));
  }
  echo_config(c, out);
  std::vector<fs::path> written;
  for (std::size_t dim : dims) {
    CbowConfig cc = target == EmbedTarget::labels ? c.label_embed : c.word_embed;
    cc.dim = dim;
    log << "embedding " << (target == EmbedTarget::labels ? "labels" : "words") << " at " << dim << " dimensions\n";
    const EmbeddingTable t = train_cbow(seqs, cc);
    written.push_back(out / emb_name(target, dim));
    save_embeddings(t, written.back());
  }
  return written;
}

TrainResult run_train(const RunConfig& c, const fs::path& out, std::ostream& log) {
  const CorpusSplits splits = load_corpus_dir(c);
  if (splits.train.empty() || splits.valid.empty()) throw DataError("train: train and valid splits must be non-empty");
  const Vocabulary vocab = Vocabulary::build(splits.train, c.data.min_count);
  const LabelUniverse labels = LabelUniverse::from_corpora({&splits.train, &splits.valid, &splits.test});
  ModelConfig mc = c.model;
  mc.num_labels = labels.size();
  mc.vocab_size = vocab.size();
  mc.validate();
  RunConfig resolved = c;
  resolved.model = mc;
  echo_config(resolved, out);
  vocab.save(out / "vocab.tsv");

  InitSources src;
  src.vocab = &vocab;
  src.labels = &labels;
  std::optional<EmbeddingTable> words;
  if (!c.data.word_embeddings.empty()) {
    words = load_embeddings(c.data.word_embeddings);
    src.words = &*words;
  }
  std::map<std::size_t, EmbeddingTable> tables;
  if (mc.le_init) {
    std::set<std::size_t> dims{mc.doc_dim()};
    if (mc.variant == Variant::hlan) dims.insert(mc.word_ctx_dim());
    if (mc.variant != Variant::han) dims.insert(mc.sent_ctx_dim());
    for (std::size_t d : dims) {
      EmbeddingTable t = label_table(c, splits.train, d, c.data.label_embeddings, out, log);
      // keep a copy beside the checkpoint for analyze-le
      const fs::path beside = out / emb_name(EmbedTarget::labels, d);
      if (!fs::exists(beside)) save_embeddings(t, beside);
      tables.emplace(d, std::move(t));
    }
    src.label_tables.projection = &tables.at(mc.doc_dim());
    if (mc.variant == Variant::hlan) src.label_tables.word_context = &tables.at(mc.word_ctx_dim());
    if (mc.variant != Variant::han) src.label_tables.sentence_context = &tables.at(mc.sent_ctx_dim());
  }
  ModelParams init = init_params(mc, src, c.train.seed);

  const EncodeConfig enc = mc.encoding(c.data.segment);
  const auto tr = encode_all(splits.train, vocab, labels, enc);
  const auto va = encode_all(splits.valid, vocab, labels, enc);
  log << "training " << to_string(mc.variant) << (mc.le_init ? "+LE" : "") << " on " << tr.size() << " documents, "
      << labels.size() << " labels, vocabulary " << vocab.size() << "\n";
  TrainOutputs outputs;
  outputs.dir = out;
  outputs.labels = labels.labels();
  outputs.vocab_hash = vocab.hash();
  outputs.on_epoch = [&](const EpochRecord& r) {
    log << "epoch " << r.epoch << "  loss " << r.train_loss << "  valid micro-F1 " << r.micro_f1 << "  P@"
        << c.train.k << " " << r.precision_at_k << (r.improved ? "  *" : "") << "\n"
        << std::flush;
  };
  TrainResult result = train(tr, va, mc, std::move(init), c.train, outputs);
  log << "best epoch " << result.best_epoch << " (stopped: " << result.stop_reason << ")\n";
  return result;
}

LoadedModel load_model(const fs::path& checkpoint, const fs::path& vocab_path,
                       const std::optional<LabelUniverse>& corpus_labels) {
  LoadedModel m;
  m.checkpoint = load_checkpoint(checkpoint);
  const fs::path vp = vocab_path.empty() ? checkpoint.parent_path() / "vocab.tsv" : vocab_path;
  if (!fs::exists(vp)) throw DataError("vocabulary file " + vp.string() + " not found (use --vocab)");
  m.vocab = Vocabulary::load(vp);
  m.labels = LabelUniverse(m.checkpoint.labels);
  const auto diff = compatibility_diff(m.checkpoint, corpus_labels ? *corpus_labels : m.labels, m.vocab);
  if (!diff.empty()) {
    std::string msg = "checkpoint " + checkpoint.string() + " does not match the inputs:";
    for (const auto& d : diff) msg += "\n  " + d;
    throw DataError(msg);
  }
  return m;
}

namespace {

std::vector<EncodedDocument> encode_split(const RunConfig& c, const LoadedModel& m) {
  const CorpusSplits splits = load_corpus_dir(c);
  return encode_all(split_of(splits, c.eval.split), m.vocab, m.labels, m.checkpoint.config.encoding(c.data.segment));
}

double threshold_of(const RunConfig& c, const LoadedModel& m) {
  const double th = c.eval.threshold > 0 ? c.eval.threshold : m.checkpoint.config.threshold;
  if (!(th > 0 && th < 1)) throw ConfigError("threshold must lie in (0, 1), got " + std::to_string(th));
  return th;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

MetricsReport run_evaluate(const RunConfig& c, const LoadedModel& m, const fs::path& out) {
  const auto docs = encode_split(c, m);
  if (docs.empty()) throw DataError("evaluate: split '" + c.eval.split + "' is empty");
  const ModelConfig& mc = m.checkpoint.config;
  const std::size_t L = mc.num_labels;
  const std::size_t k = c.eval.k ? c.eval.k : default_k(L);
  const Tensor probs = predict_probabilities(m.checkpoint.params, mc, docs);
  const MetricsReport r = evaluate(probs, target_matrix(docs, L), threshold_of(c, m), k);

  echo_config(c, out);
  std::string text;
  text += "model\t" + to_string(mc.variant) + (mc.le_init ? "+LE" : "") + "\n";
  text += "split\t" + c.eval.split + "\ndocs\t" + std::to_string(r.docs) + "\nthreshold\t" + fmt(r.threshold) + "\n\n";
  text += "\tAUC\tP\tR\tF1\n";
  text += "macro\t" + fmt(r.macro_auc) + "\t" + fmt(r.prf.macro.precision) + "\t" + fmt(r.prf.macro.recall) + "\t" +
          fmt(r.prf.macro.f1) + "\n";
  text += "micro\t" + fmt(r.micro_auc) + "\t" + fmt(r.prf.micro.precision) + "\t" + fmt(r.prf.micro.recall) + "\t" +
          fmt(r.prf.micro.f1) + "\n\n";
  text += "P@" + std::to_string(k) + "\t" + fmt(r.precision_at_k) + "\n";
  if (!r.auc_skipped.empty())
    text += "macro AUC skips " + std::to_string(r.auc_skipped.size()) + " label(s) without both classes\n";
  write_text(out / "metrics.txt", text);

  json j{{"split", c.eval.split},
         {"docs", r.docs},
         {"threshold", r.threshold},
         {"k", k},
         {"micro", {{"auc", r.micro_auc}, {"precision", r.prf.micro.precision}, {"recall", r.prf.micro.recall}, {"f1", r.prf.micro.f1}}},
         {"macro", {{"auc", r.macro_auc}, {"precision", r.prf.macro.precision}, {"recall", r.prf.macro.recall}, {"f1", r.prf.macro.f1}}},
         {"precision_at_k", r.precision_at_k},
         {"auc_skipped", r.auc_skipped}};
  write_text(out / "metrics.json", j.dump(2) + "\n");

  std::string tsv = "label\tprecision\trecall\tf1\tfrequency\n";
  for (std::size_t l = 0; l < L; ++l) {
    const PRF& p = r.prf.per_label[l];
    tsv += m.labels.label(l) + "\t" + fmt(p.precision) + "\t" + fmt(p.recall) + "\t" + fmt(p.f1) + "\t" +
           std::to_string(r.frequency[l]) + "\n";
  }
  write_text(out / "per_label.tsv", tsv);
  return r;
}

void run_predict(const RunConfig& c, const LoadedModel& m, const fs::path& out) {
  const auto docs = encode_split(c, m);
  const ModelConfig& mc = m.checkpoint.config;
  const Tensor probs = predict_probabilities(m.checkpoint.params, mc, docs);
  const double th = threshold_of(c, m);
  echo_config(c, out);
  std::string text;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const std::span<const real> p(probs.row(d), mc.num_labels);
    json labels = json::array(), scores = json::object();
    for (std::size_t l : threshold_labels(p, th)) labels.push_back(m.labels.label(l));
    for (std::size_t l = 0; l < mc.num_labels; ++l) scores[m.labels.label(l)] = p[l];
    text += json{{"id", docs[d].id}, {"labels", labels}, {"scores", scores}}.dump() + "\n";
  }
  write_text(out / "predictions.jsonl", text);
}

void run_explain(const RunConfig& c, const LoadedModel& m, const fs::path& out) {
  auto docs = encode_split(c, m);
  if (c.explain.limit && docs.size() > c.explain.limit) docs.resize(c.explain.limit);
  const ModelConfig& mc = m.checkpoint.config;
  const double th = threshold_of(c, m);
  echo_config(c, out);
  fs::create_directories(out / "visual");
  std::ofstream structured(out / "explanations.jsonl", std::ios::binary);
  if (!structured) throw DataError("cannot write " + (out / "explanations.jsonl").string());
  VisualOptions vo;
  vo.compact = c.explain.compact;
  vo.mu = c.explain.highlight.mu;
  std::set<std::string> used;
  for (const EncodedDocument& doc : docs) {
    const ForwardResult r = forward(m.checkpoint.params, mc, doc);
    const LabelSet labels = c.explain.truth_labels ? doc.label_indices() : threshold_labels(r.probabilities.values(), th);
    const auto hs = select_highlights(r.attention, doc, labels, m.labels.labels(), c.explain.highlight);
    write_structured(hs, structured);
    std::string name = safe_name(doc.id);
    while (!used.insert(name).second) name += "_";
    write_visual(doc, r.attention, hs, out / "visual" / (name + ".html"), vo);
  }
  if (!structured) throw DataError("write failed: " + (out / "explanations.jsonl").string());
}

std::vector<LayerAnalysis> run_analyze_le(const RunConfig& c, const LoadedModel& m, const fs::path& dir,
                                          std::size_t k, const fs::path& out) {
  const ModelConfig& mc = m.checkpoint.config;
  const ModelParams& p = m.checkpoint.params;
  echo_config(c, out);
  std::optional<CorpusSplits> splits;
  auto table_for = [&](std::size_t dim) {
    const fs::path f = dir / emb_name(EmbedTarget::labels, dim);
    if (fs::exists(f)) return load_embeddings(f);
    if (!splits) splits = load_corpus_dir(c);
    std::ostringstream quiet;
    return label_table(c, splits->train, dim, {}, out, quiet);
  };
  std::vector<std::pair<std::string, const Tensor*>> layers{{"W", &p.W}};
  if (mc.variant == Variant::hlan) layers.push_back({"V_w", &p.V_w});
  if (mc.variant != Variant::han) layers.push_back({"V_s", &p.V_s});
  std::vector<LayerAnalysis> res;
  json j = json::array();
  for (const auto& [name, t] : layers) {
    const EmbeddingTable table = table_for(t->cols());
    LayerAnalysis a;
    a.layer = name;
    a.report = jaccard_le_analysis(*t, m.labels.labels(), table, k);
    a.null = random_layer_null(table, m.labels.labels(), t->cols(), k, 20, derive_seed({c.train.seed, t->cols()}));
    json per = json::object();
    for (std::size_t i = 0; i < a.report.labels.size(); ++i) per[a.report.labels[i]] = a.report.per_label[i];
    j.push_back({{"layer", name},
                 {"k", k},
                 {"mean", a.report.mean},
                 {"stddev", a.report.stddev},
                 {"random_layer_mean", a.null.mean},
                 {"random_layer_stddev", a.null.stddev},
                 {"excluded", a.report.excluded},
                 {"per_label", per}});
    res.push_back(std::move(a));
  }
  write_text(out / "le_analysis.json", j.dump(2) + "\n");
  return res;
}

}  // namespace hlan
