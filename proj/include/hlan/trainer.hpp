#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hlan/kernels.hpp"
#include "hlan/metrics.hpp"
#include "hlan/model.hpp"

namespace hlan {

enum class StopMetric { micro_f1, precision_at_k };

StopMetric parse_stop_metric(const std::string& s);
std::string to_string(StopMetric m);

struct TrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  double l2_lambda = 1e-4;
  double clip_norm = 5.0;  // global gradient norm; 0 disables
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  StopMetric early_stop_metric = StopMetric::micro_f1;
  std::size_t k = 5;  // for precision_at_k
  std::uint64_t seed = 1;
  int threads = 0;    // 0: OpenMP default

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// splitmix64 over the parts, for per-(epoch, batch, doc) streams.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);

// Summed BCE of sigmoid(logits) against 0/1 targets, in the stable
// log-sum-exp form. grad (same shape) receives sigmoid(s) - y when given.
double bce_loss(const Tensor& logits, const Tensor& targets, Tensor* grad = nullptr);

// Gradients aligned with ModelParams::named().
using ParamGrads = std::vector<Tensor>;

ParamGrads zero_grads(const ModelParams& params);

// lambda * sum of squared entries of the regularised weight matrices; adds
// 2 lambda W into grads when given.
double l2_penalty(const ModelParams& params, double lambda, ParamGrads* grads = nullptr);

// Scales grads so their global L2 norm is at most max_norm; returns the norm
// before clipping.
double clip_global_norm(ParamGrads& grads, double max_norm);

struct AdamState {
  std::vector<Tensor> m, v;
  std::size_t step = 0;

  static AdamState zeros(const ModelParams& params);
};

// One bias-corrected Adam update. A non-finite gradient throws
// DivergenceError naming the parameter before anything is modified.
void adam_step(ModelParams& params, const ParamGrads& grads, AdamState& state, const TrainConfig& config);

struct BatchGradient {
  double loss = 0;  // summed BCE over the batch, no penalty
  ParamGrads grads;
};

// Gradient of the summed BCE over `docs`. Each document runs on its own tape;
// the word-embedding gradient is kept on a table of the document's distinct
// ids and scattered afterwards. Per-document results are merged in document
// order, so serial and parallel execution agree bit for bit. dropout_seeds[i]
// seeds document i; an empty span turns dropout off.
BatchGradient batch_gradient(const ModelParams& params, const ModelConfig& config,
                             std::span<const EncodedDocument* const> docs,
                             std::span<const std::uint64_t> dropout_seeds,
                             kernels::Exec exec = kernels::Exec::parallel);

// Probabilities [docs x |Y|] without dropout.
Tensor predict_probabilities(const ModelParams& params, const ModelConfig& config,
                             std::span<const EncodedDocument> docs, kernels::Exec exec = kernels::Exec::parallel);

// Targets stacked into [docs x |Y|].
Tensor target_matrix(std::span<const EncodedDocument> docs, std::size_t num_labels);

struct Prediction {
  LabelSet labels;       // p_l > threshold
  Tensor probabilities;  // [|Y|]
};

// threshold must lie in (0, 1).
Prediction predict(const ModelParams& params, const ModelConfig& config, const EncodedDocument& doc,
                   double threshold);

struct EpochRecord {
  std::size_t epoch = 0;     // 1-based
  double train_loss = 0;     // BCE per training document
  double micro_f1 = 0, macro_f1 = 0, micro_auc = 0, macro_auc = 0, precision_at_k = 0;
  double metric = 0;         // the early-stopping metric
  bool improved = false;
};

struct TrainOutputs {
  std::optional<std::filesystem::path> dir;  // history.jsonl, best.ckpt, last.ckpt
  std::vector<std::string> labels;           // stored in checkpoints
  std::uint64_t vocab_hash = 0;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  ModelParams best;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;
  std::string stop_reason;  // "patience" or "max_epochs"
};

// Shuffled minibatches per epoch, validation after each, best parameters by
// strictly greater metric, stop after `patience` epochs without improvement.
// A non-finite loss throws DivergenceError that names the last good
// checkpoint.
TrainResult train(const std::vector<EncodedDocument>& train_docs, const std::vector<EncodedDocument>& valid_docs,
                  const ModelConfig& model_config, ModelParams initial, const TrainConfig& config,
                  const TrainOutputs& outputs = {});

}  // namespace hlan
