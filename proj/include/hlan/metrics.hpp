#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hlan/embeddings.hpp"
#include "hlan/tensor.hpp"

namespace hlan {

using LabelSet = std::vector<std::size_t>;  // label indices

struct ConfusionCounts {
  std::size_t docs = 0;
  std::vector<std::size_t> tp, fp, fn, tn;  // per label

  std::size_t total_tp() const;
  std::size_t total_fp() const;
  std::size_t total_fn() const;
};

ConfusionCounts confusion(const std::vector<LabelSet>& predicted, const std::vector<LabelSet>& truth,
                          std::size_t num_labels);

struct PRF {
  double precision = 0, recall = 0, f1 = 0;
};

// A zero denominator gives 0. F1 is always the harmonic mean of the P and R
// next to it, macro included.
double harmonic(double p, double r);

struct MicroMacro {
  PRF micro, macro;
  std::vector<PRF> per_label;
};

MicroMacro micro_macro(const ConfusionCounts& counts);

// Mann-Whitney statistic, ties counting one half. Throws DataError when one
// class is absent.
double rank_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& positive);

enum class AucMode { micro, macro };

struct AucResult {
  double value = 0;
  std::vector<std::size_t> skipped;  // labels without both classes (macro)
};

// scores and truth are [docs x labels]; truth holds 0/1.
AucResult auc(const Tensor& scores, const Tensor& truth, AucMode mode);

// Mean over documents of |top-k ∩ truth| / k, top-k ties by ascending index.
double precision_at_k(const Tensor& scores, const Tensor& truth, std::size_t k);

std::vector<std::size_t> top_k_labels(std::span<const real> scores, std::size_t k);

struct MetricsReport {
  std::size_t docs = 0, k = 0;
  double threshold = 0.5;
  MicroMacro prf;
  double micro_auc = 0, macro_auc = 0;
  std::vector<std::size_t> auc_skipped;
  double precision_at_k = 0;
  std::vector<std::size_t> frequency;  // positives per label
};

MetricsReport evaluate(const Tensor& probabilities, const Tensor& truth, double threshold, std::size_t k);

// Labels with probability strictly above the threshold.
LabelSet threshold_labels(std::span<const real> probabilities, double threshold);

struct JaccardReport {
  double mean = 0, stddev = 0;  // population std over labels
  std::vector<std::string> labels;     // analysed labels
  std::vector<double> per_label;       // same order
  std::vector<std::string> excluded;   // missing from the embedding table
};

// Top-k cosine neighbours of each label among the analysed labels, from the
// rows of `layer` (row i <-> labels[i]) versus from `table`; Jaccard per label.
JaccardReport jaccard_le_analysis(const Tensor& layer, const std::vector<std::string>& labels,
                                  const EmbeddingTable& table, std::size_t k = 10);

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Averaged Jaccard of `trials` Gaussian random layers against `table`: the
// overlap expected when a layer carries no label-embedding structure.
struct JaccardNull {
  double mean = 0, stddev = 0;  // over trials
};
JaccardNull random_layer_null(const EmbeddingTable& table, const std::vector<std::string>& labels,
                              std::size_t dim, std::size_t k, std::size_t trials, std::uint64_t seed);

}  // namespace hlan
