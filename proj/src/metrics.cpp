#include "hlan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace hlan {

std::size_t ConfusionCounts::total_tp() const { return std::accumulate(tp.begin(), tp.end(), std::size_t{0}); }
std::size_t ConfusionCounts::total_fp() const { return std::accumulate(fp.begin(), fp.end(), std::size_t{0}); }
std::size_t ConfusionCounts::total_fn() const { return std::accumulate(fn.begin(), fn.end(), std::size_t{0}); }

ConfusionCounts confusion(const std::vector<LabelSet>& predicted, const std::vector<LabelSet>& truth,
                          std::size_t L) {
  if (predicted.size() != truth.size())
    throw DimensionError("confusion: " + std::to_string(predicted.size()) + " predictions vs " +
                         std::to_string(truth.size()) + " truths");
  ConfusionCounts c;
  c.docs = truth.size();
  c.tp.assign(L, 0), c.fp.assign(L, 0), c.fn.assign(L, 0), c.tn.assign(L, 0);
  std::vector<std::uint8_t> p(L), t(L);
  for (std::size_t d = 0; d < truth.size(); ++d) {
    std::fill(p.begin(), p.end(), 0);
    std::fill(t.begin(), t.end(), 0);
    for (auto* set : {&predicted[d], &truth[d]})
      for (std::size_t l : *set)
        if (l >= L)
          throw DataError("confusion: label index " + std::to_string(l) + " outside a universe of " +
                          std::to_string(L));
    for (std::size_t l : predicted[d]) p[l] = 1;
    for (std::size_t l : truth[d]) t[l] = 1;
    for (std::size_t l = 0; l < L; ++l) {
      if (p[l] && t[l]) ++c.tp[l];
      else if (p[l]) ++c.fp[l];
      else if (t[l]) ++c.fn[l];
      else ++c.tn[l];
    }
  }
  return c;
}

namespace {

double ratio(std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); }

}  // namespace

double harmonic(double p, double r) { return p + r == 0 ? 0.0 : 2 * p * r / (p + r); }

MicroMacro micro_macro(const ConfusionCounts& c) {
  MicroMacro m;
  const std::size_t L = c.tp.size();
  const std::size_t tp = c.total_tp(), fp = c.total_fp(), fn = c.total_fn();
  m.micro.precision = ratio(tp, tp + fp);
  m.micro.recall = ratio(tp, tp + fn);
  m.micro.f1 = harmonic(m.micro.precision, m.micro.recall);
  for (std::size_t l = 0; l < L; ++l) {
    PRF x;
    x.precision = ratio(c.tp[l], c.tp[l] + c.fp[l]);
    x.recall = ratio(c.tp[l], c.tp[l] + c.fn[l]);
    x.f1 = harmonic(x.precision, x.recall);
    m.macro.precision += x.precision;
    m.macro.recall += x.recall;
    m.per_label.push_back(x);
  }
  if (L) {
    m.macro.precision /= static_cast<double>(L);
    m.macro.recall /= static_cast<double>(L);
  }
  m.macro.f1 = harmonic(m.macro.precision, m.macro.recall);
  return m;
}

double rank_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& positive) {
  if (scores.size() != positive.size()) throw DimensionError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2;  // ranks i+1..j
    for (std::size_t q = i; q < j; ++q)
      if (positive[order[q]]) rank_sum += avg, ++pos;
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw DataError("auc is undefined without both positives and negatives");
  const double P = static_cast<double>(pos), N = static_cast<double>(neg);
  return (rank_sum - P * (P + 1) / 2) / (P * N);
}

namespace {

void check_pair(const Tensor& scores, const Tensor& truth, const char* what) {
  if (scores.rank() != 2 || !scores.same_shape(truth))
    throw DimensionError(std::string(what) + ": scores " + shape_str(scores.shape()) + " vs truth " +
                         shape_str(truth.shape()));
}

}  // namespace

AucResult auc(const Tensor& scores, const Tensor& truth, AucMode mode) {
  check_pair(scores, truth, "auc");
  const std::size_t D = scores.rows(), L = scores.cols();
  AucResult r;
  if (mode == AucMode::micro) {
    std::vector<double> s(scores.values().begin(), scores.values().end());
    std::vector<std::uint8_t> y(D * L);
    for (std::size_t i = 0; i < D * L; ++i) y[i] = truth[i] > 0.5;
    r.value = rank_auc(s, y);
    return r;
  }
  double total = 0;
  std::size_t used = 0;
  std::vector<double> s(D);
  std::vector<std::uint8_t> y(D);
  for (std::size_t l = 0; l < L; ++l) {
    std::size_t pos = 0;
    for (std::size_t d = 0; d < D; ++d) {
      s[d] = scores.at(d, l);
      y[d] = truth.at(d, l) > 0.5;
      pos += y[d];
    }
    if (pos == 0 || pos == D) {
      r.skipped.push_back(l);
      continue;
    }
    total += rank_auc(s, y);
    ++used;
  }
  if (used == 0) throw DataError("macro auc: no label has both positives and negatives");
  r.value = total / static_cast<double>(used);
  return r;
}

std::vector<std::size_t> top_k_labels(std::span<const real> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; });
  idx.resize(k);
  return idx;
}

double precision_at_k(const Tensor& scores, const Tensor& truth, std::size_t k) {
  check_pair(scores, truth, "precision_at_k");
  const std::size_t D = scores.rows(), L = scores.cols();
  if (k == 0 || k > L) throw ConfigError("precision@k needs 1 <= k <= " + std::to_string(L));
  if (D == 0) return 0;
  double total = 0;
  for (std::size_t d = 0; d < D; ++d) {
    std::size_t hit = 0;
    for (std::size_t l : top_k_labels({scores.row(d), L}, k)) hit += truth.at(d, l) > 0.5;
    total += static_cast<double>(hit) / static_cast<double>(k);
  }
  return total / static_cast<double>(D);
}

LabelSet threshold_labels(std::span<const real> p, double threshold) {
  LabelSet out;
  for (std::size_t l = 0; l < p.size(); ++l)
    if (p[l] > threshold) out.push_back(l);
  return out;
}

MetricsReport evaluate(const Tensor& probabilities, const Tensor& truth, double threshold, std::size_t k) {
  check_pair(probabilities, truth, "evaluate");
  const std::size_t D = probabilities.rows(), L = probabilities.cols();
  MetricsReport r;
  r.docs = D, r.k = k, r.threshold = threshold;
  std::vector<LabelSet> pred, gold;
  r.frequency.assign(L, 0);
  for (std::size_t d = 0; d < D; ++d) {
    pred.push_back(threshold_labels({probabilities.row(d), L}, threshold));
    gold.push_back(threshold_labels({truth.row(d), L}, 0.5));
    for (std::size_t l : gold.back()) ++r.frequency[l];
  }
  r.prf = micro_macro(confusion(pred, gold, L));
  // AUC needs both classes; report 0 with everything skipped otherwise.
  try {
    r.micro_auc = auc(probabilities, truth, AucMode::micro).value;
    auto m = auc(probabilities, truth, AucMode::macro);
    r.macro_auc = m.value;
    r.auc_skipped = m.skipped;
  } catch (const DataError&) {
    r.auc_skipped.resize(L);
    std::iota(r.auc_skipped.begin(), r.auc_skipped.end(), 0);
  }
  r.precision_at_k = precision_at_k(probabilities, truth, std::min(k, L));
  return r;
}

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::string> x = a, y = b, inter, uni;
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(inter));
  std::set_union(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(uni));
  return uni.empty() ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

JaccardReport jaccard_le_analysis(const Tensor& layer, const std::vector<std::string>& labels,
                                  const EmbeddingTable& table, std::size_t k) {
  if (layer.rank() != 2 || layer.rows() != labels.size())
    throw DimensionError("jaccard: layer " + shape_str(layer.shape()) + " vs " + std::to_string(labels.size()) +
                         " labels");
  JaccardReport r;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (table.contains(labels[i])) {
      rows.push_back(i);
      r.labels.push_back(labels[i]);
    } else {
      r.excluded.push_back(labels[i]);
    }
  }
  if (k >= r.labels.size())
    throw ConfigError("jaccard: k=" + std::to_string(k) + " needs more than " + std::to_string(r.labels.size()) +
                      " analysed labels");
  Tensor lm = Tensor::matrix(rows.size(), layer.cols()), em = Tensor::matrix(rows.size(), table.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(layer.row(rows[i]), layer.cols(), lm.row(i));
    std::copy_n(table.row(r.labels[i]).data(), table.dim(), em.row(i));
  }
  const EmbeddingTable lt(r.labels, std::move(lm)), et(r.labels, std::move(em));
  auto names = [](const std::vector<std::pair<std::string, double>>& v) {
    std::vector<std::string> out;
    for (const auto& [n, c] : v) out.push_back(n);
    return out;
  };
  for (const auto& label : r.labels)
    r.per_label.push_back(jaccard(names(top_k_similar(lt, label, k)), names(top_k_similar(et, label, k))));
  const double n = static_cast<double>(r.per_label.size());
  for (double v : r.per_label) r.mean += v;
  r.mean /= n;
  for (double v : r.per_label) r.stddev += (v - r.mean) * (v - r.mean);
  r.stddev = std::sqrt(r.stddev / n);
  return r;
}

JaccardNull random_layer_null(const EmbeddingTable& table, const std::vector<std::string>& labels, std::size_t dim,
                              std::size_t k, std::size_t trials, std::uint64_t seed) {
  if (trials == 0) throw ConfigError("random_layer_null: trials must be > 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> means;
  for (std::size_t t = 0; t < trials; ++t) {
    Tensor layer = Tensor::matrix(labels.size(), dim);
    for (real& v : layer.values()) v = static_cast<real>(g(rng));
    means.push_back(jaccard_le_analysis(layer, labels, table, k).mean);
  }
  JaccardNull out;
  for (double m : means) out.mean += m;
  out.mean /= static_cast<double>(trials);
  for (double m : means) out.stddev += (m - out.mean) * (m - out.mean);
  out.stddev = std::sqrt(out.stddev / static_cast<double>(trials));
  return out;
}

}  // namespace hlan
