#pragma once
// Pipeline stages behind the command-line tool. Every stage writes the
// resolved run configuration to <out>/config.json.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hlan/config.hpp"
#include "hlan/explainer.hpp"
#include "hlan/metrics.hpp"
#include "hlan/trainer.hpp"

namespace hlan {

struct DataConfig {
  std::string corpus;                 // directory with train/valid/test.jsonl
  SegmentMode segment = SegmentMode::chunk;
  std::size_t min_count = 1;          // vocabulary cutoff
  std::string word_embeddings;        // optional file copied into W_e
  std::string label_embeddings;       // optional directory of labels_<dim>.emb for le_init
};

struct EvalConfig {
  std::size_t k = 0;                  // 0: chosen from the label count
  double threshold = 0;               // 0: the checkpoint's threshold
  std::string split = "test";
};

struct ExplainConfig {
  HighlightOptions highlight;
  bool compact = true;
  bool truth_labels = false;          // explain gold labels instead of predictions
  std::size_t limit = 0;              // 0: every document of the split
};

struct RunConfig {
  SynthConfig synth;
  CbowConfig word_embed;
  CbowConfig label_embed;
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  ExplainConfig explain;

  RunConfig();
};

json to_json(const RunConfig& c);
void update_from_json(RunConfig& c, const json& j);

// 1 for small label sets, 5 around 50 labels, 8 beyond.
std::size_t default_k(std::size_t num_labels);

// Writes <out>/config.json.
void echo_config(const RunConfig& c, const std::filesystem::path& out);

void run_gen_synth(const RunConfig& c, const std::filesystem::path& out);

enum class EmbedTarget { words, labels };
EmbedTarget parse_embed_target(const std::string& s);

// One <target>_<dim>.emb per requested dimension, trained on the training
// split. Returns the written paths.
std::vector<std::filesystem::path> run_embed(const RunConfig& c, EmbedTarget target,
                                             const std::vector<std::size_t>& dims,
                                             const std::filesystem::path& out, std::ostream& log);

// Builds the vocabulary and label universe, initialises (optionally from
// label embeddings trained on the training label sets) and trains. Writes
// vocab.tsv, labels_<dim>.emb when le_init is on, history.jsonl, best.ckpt
// and last.ckpt.
TrainResult run_train(const RunConfig& c, const std::filesystem::path& out, std::ostream& log);

struct LoadedModel {
  Checkpoint checkpoint;
  Vocabulary vocab;
  LabelUniverse labels;
};

// Loads <checkpoint> and the vocabulary (vocab_path, or vocab.tsv beside the
// checkpoint) and refuses label or vocabulary mismatches with `corpus_labels`.
LoadedModel load_model(const std::filesystem::path& checkpoint, const std::filesystem::path& vocab_path,
                       const std::optional<LabelUniverse>& corpus_labels);

// Writes metrics.txt, metrics.json and per_label.tsv.
MetricsReport run_evaluate(const RunConfig& c, const LoadedModel& m, const std::filesystem::path& out);

// Writes predictions.jsonl.
void run_predict(const RunConfig& c, const LoadedModel& m, const std::filesystem::path& out);

// Writes explanations.jsonl and visual/<doc>.html.
void run_explain(const RunConfig& c, const LoadedModel& m, const std::filesystem::path& out);

struct LayerAnalysis {
  std::string layer;
  JaccardReport report;
  JaccardNull null;
};

// Averaged top-k Jaccard of W, V_w (HLAN) and V_s (HLAN, HA-GRU) against the
// label embedding of matching width found in `embeddings_dir`; writes
// le_analysis.json.
std::vector<LayerAnalysis> run_analyze_le(const RunConfig& c, const LoadedModel& m,
                                          const std::filesystem::path& embeddings_dir, std::size_t k,
                                          const std::filesystem::path& out);

}  // namespace hlan
