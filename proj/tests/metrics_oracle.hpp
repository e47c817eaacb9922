#pragma once
// Deliberately naive re-computations of the evaluation metrics.

#include <algorithm>
#include <random>
#include <set>
#include <vector>

#include "hlan/metrics.hpp"

namespace hlan::testing {

struct NaiveCounts {
  long tp = 0, fp = 0, fn = 0;
};

inline NaiveCounts naive_counts(const Tensor& pred, const Tensor& truth, std::size_t label) {
  NaiveCounts c;
  for (std::size_t d = 0; d < pred.rows(); ++d) {
    const bool p = pred.at(d, label) > 0.5, t = truth.at(d, label) > 0.5;
    c.tp += p && t;
    c.fp += p && !t;
    c.fn += !p && t;
  }
  return c;
}

struct NaivePRF {
  double micro_p, micro_r, micro_f1, macro_p, macro_r, macro_f1;
};

inline double safe_div(double a, double b) { return b == 0 ? 0 : a / b; }
inline double f1_of(double p, double r) { return p + r == 0 ? 0 : 2 * p * r / (p + r); }

// pred and truth are 0/1 matrices [docs x labels].
inline NaivePRF naive_prf(const Tensor& pred, const Tensor& truth) {
  NaivePRF o{};
  long TP = 0, FP = 0, FN = 0;
  const std::size_t L = pred.cols();
  for (std::size_t l = 0; l < L; ++l) {
    auto c = naive_counts(pred, truth, l);
    TP += c.tp, FP += c.fp, FN += c.fn;
    o.macro_p += safe_div(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
    o.macro_r += safe_div(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
  }
  o.macro_p /= static_cast<double>(L);
  o.macro_r /= static_cast<double>(L);
  o.micro_p = safe_div(static_cast<double>(TP), static_cast<double>(TP + FP));
  o.micro_r = safe_div(static_cast<double>(TP), static_cast<double>(TP + FN));
  o.micro_f1 = f1_of(o.micro_p, o.micro_r);
  o.macro_f1 = f1_of(o.macro_p, o.macro_r);
  return o;
}

// Area under the ROC curve by trapezoids between consecutive distinct
// thresholds.
inline double trapezoid_auc(const std::vector<double>& s, const std::vector<int>& y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double P = 0, N = 0;
  for (int v : y) (v ? P : N) += 1;
  double prev_fpr = 0, prev_tpr = 0, area = 0;
  for (double th : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= th) (y[i] ? tp : fp) += 1;
    const double fpr = fp / N, tpr = tp / P;
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2;
    prev_fpr = fpr, prev_tpr = tpr;
  }
  return area;
}

inline double naive_precision_at_k(const Tensor& scores, const Tensor& truth, std::size_t k) {
  double total = 0;
  for (std::size_t d = 0; d < scores.rows(); ++d) {
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t l = 0; l < scores.cols(); ++l) order.emplace_back(-scores.at(d, l), l);
    std::sort(order.begin(), order.end());
    double hit = 0;
    for (std::size_t i = 0; i < k; ++i) hit += truth.at(d, order[i].second) > 0.5;
    total += hit / static_cast<double>(k);
  }
  return total / static_cast<double>(scores.rows());
}

// Random instance with quantised scores so ties occur.
struct MetricInstance {
  Tensor scores, truth, pred;
};

inline MetricInstance random_instance(std::mt19937_64& rng) {
  const std::size_t L = 1 + rng() % 10, D = 1 + rng() % 50;
  MetricInstance m{Tensor::matrix(D, L), Tensor::matrix(D, L), Tensor::matrix(D, L)};
  std::uniform_int_distribution<int> q(0, 20);
  const double pos_rate = std::uniform_real_distribution<double>(0.05, 0.6)(rng);
  std::bernoulli_distribution pos(pos_rate);
  for (std::size_t i = 0; i < D * L; ++i) {
    m.scores[i] = q(rng) / 20.0;
    m.truth[i] = pos(rng) ? 1 : 0;
    m.pred[i] = m.scores[i] > 0.5 ? 1 : 0;
  }
  return m;
}

inline std::vector<LabelSet> to_sets(const Tensor& m) {
  std::vector<LabelSet> out;
  for (std::size_t d = 0; d < m.rows(); ++d) out.push_back(threshold_labels({m.row(d), m.cols()}, 0.5));
  return out;
}

}  // namespace hlan::testing
