#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hlan/corpus.hpp"
#include "hlan/embeddings.hpp"
#include "hlan/nn_ops.hpp"

namespace hlan {

// hlan: label-wise word and sentence attention.
// hagru: one shared word context, label-wise sentence attention.
// han: shared contexts at both levels, single document vector.
enum class Variant { hlan, hagru, han };

Variant parse_variant(const std::string& s);
std::string to_string(Variant v);

struct ModelConfig {
  std::size_t num_labels = 0;
  std::size_t vocab_size = 0;
  std::size_t d_e = 100;
  std::size_t d_h = 50;
  std::size_t d_w = 0;  // 0: 2 * d_h
  std::size_t d_s = 0;  // 0: 4 * d_h
  std::size_t sentences = 100;
  std::size_t sentence_len = 25;
  Variant variant = Variant::hlan;
  bool le_init = false;
  double threshold = 0.5;
  double dropout = 0.1;

  std::size_t word_ctx_dim() const { return d_w ? d_w : 2 * d_h; }
  std::size_t sent_ctx_dim() const { return d_s ? d_s : 4 * d_h; }
  std::size_t doc_dim() const { return 4 * d_h; }
  // Rows of V_w and V_s.
  std::size_t word_contexts() const { return variant == Variant::hlan ? num_labels : 1; }
  std::size_t sent_contexts() const { return variant == Variant::han ? 1 : num_labels; }
  EncodeConfig encoding(SegmentMode mode = SegmentMode::chunk) const {
    return {sentences, sentence_len, mode};
  }
  // Throws ConfigError naming the offending field.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct GruParams {
  Tensor W_er, W_ez, W_ec, W_hr, W_hz, W_hc, b_r, b_z;
};

struct ModelParams {
  Tensor W_e;                                        // [vocab x d_e]
  GruParams word_fwd, word_bwd;                      // d_e -> d_h
  GruParams sent_fwd, sent_bwd;                      // 2d_h -> 2d_h
  Tensor W_w, b_w;                                   // [2d_h x d_w], [d_w]
  Tensor W_S, b_S;                                   // [4d_h x d_s], [d_s]
  Tensor V_w, V_s;                                   // [Lw x d_w], [Ls x d_s]
  Tensor W, b;                                       // [|Y| x 4d_h], [|Y|]

  // Stable order used by checkpoints, optimizers and gradient checks.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  // Weight matrices that carry the L2 penalty (not biases, not W_e).
  static bool regularized(const std::string& name);

  bool operator==(const ModelParams& o) const;
};

// Zero tensors of the right shapes.
ModelParams zero_params(const ModelConfig& config);

struct LabelTables {
  const EmbeddingTable* projection = nullptr;        // dim 4 d_h -> W
  const EmbeddingTable* word_context = nullptr;      // dim d_w -> V_w (hlan)
  const EmbeddingTable* sentence_context = nullptr;  // dim d_s -> V_s (hlan, hagru)
};

struct InitSources {
  const Vocabulary* vocab = nullptr;
  const EmbeddingTable* words = nullptr;  // copied into W_e rows by token
  const LabelUniverse* labels = nullptr;  // needed for le_init
  LabelTables label_tables;
};

// Xavier-uniform matrices, zero biases, PAD row zero. W_e rows for tokens in
// `words` are copied. With le_init, per-label rows of W, V_w, V_s are the
// unit-normalised label embedding; labels missing from the table keep their
// Xavier rows. Random draws do not depend on le_init.
ModelParams init_params(const ModelConfig& config, const InitSources& sources, std::uint64_t seed);

namespace ad {

struct GruVars {
  Var W_er, W_ez, W_ec, W_hr, W_hz, W_hc, b_r, b_z;
  GruWeights weights() const { return {W_er, W_ez, W_ec, W_hr, W_hz, W_hc, b_r, b_z}; }
};

struct ParamVars {
  Var W_e;
  GruVars word_fwd, word_bwd, sent_fwd, sent_bwd;
  Var W_w, b_w, W_S, b_S, V_w, V_s, W, b;

  // Same order as ModelParams::named().
  std::vector<Var> list() const;
};

// trainable: parameter() leaves; otherwise gradient-free references.
ParamVars bind(Tape& tape, const ModelParams& params, bool trainable);

struct ForwardOptions {
  bool train = false;             // applies dropout to C_d
  std::uint64_t dropout_seed = 0;
  // Optional replacement for doc.grid (same length), e.g. ids into a
  // document-local embedding table.
  std::span<const std::int32_t> ids;
};

struct Graph {
  Var logits;   // [1 x |Y|]
  Var alpha_w;  // [G*n_t x Lw], invalid when G == 0
  Var alpha_s;  // [G x Ls], invalid when G == 0
  std::vector<std::size_t> active;  // grid rows of the G packed sentences
};

Graph forward_graph(Tape& tape, const ParamVars& p, const ModelConfig& config,
                    const EncodedDocument& doc, const ForwardOptions& options = {});

}  // namespace ad

struct AttentionRecord {
  std::size_t sentences = 0, sentence_len = 0;
  std::size_t word_contexts = 0, sent_contexts = 0;
  std::vector<real> alpha_w;  // [Lw][n][n_t]
  std::vector<real> alpha_s;  // [Ls][n]
  std::vector<std::uint8_t> token_mask, sentence_mask;

  // A shared context (Lw or Ls == 1) answers for every label.
  real word(std::size_t label, std::size_t s, std::size_t t) const {
    return alpha_w[((word_contexts == 1 ? 0 : label) * sentences + s) * sentence_len + t];
  }
  real sentence(std::size_t label, std::size_t s) const {
    return alpha_s[(sent_contexts == 1 ? 0 : label) * sentences + s];
  }
};

struct ForwardResult {
  Tensor probabilities;  // [|Y|]
  Tensor logits;         // [|Y|]
  AttentionRecord attention;
};

// Inference forward pass (no dropout).
ForwardResult forward(const ModelParams& params, const ModelConfig& config, const EncodedDocument& doc);

AttentionRecord make_record(const ad::Graph& g, const ModelConfig& config, const EncodedDocument& doc);

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::vector<std::string> labels;
  std::uint64_t vocab_hash = 0;
  std::size_t epoch = 0;
};

// Binary container: magic, version, JSON header (config, labels, vocabulary
// hash, parameter names and shapes), then raw little-endian values.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Empty when compatible; otherwise one line per difference.
std::vector<std::string> compatibility_diff(const Checkpoint& ckpt, const LabelUniverse& labels,
                                            const Vocabulary& vocab);

}  // namespace hlan
