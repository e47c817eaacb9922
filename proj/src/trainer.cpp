#include "hlan/trainer.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "hlan/config.hpp"

namespace hlan {

StopMetric parse_stop_metric(const std::string& s) {
  if (s == "micro_f1") return StopMetric::micro_f1;
  if (s == "precision_at_k") return StopMetric::precision_at_k;
  throw ConfigError("unknown early-stop metric '" + s + "' (expected micro_f1 or precision_at_k)");
}

std::string to_string(StopMetric m) { return m == StopMetric::micro_f1 ? "micro_f1" : "precision_at_k"; }

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (patience < 1) throw ConfigError("train.patience must be >= 1");
  if (!(learning_rate >= 0)) throw ConfigError("train.learning_rate must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
  if (!(epsilon > 0)) throw ConfigError("train.epsilon must be > 0");
  if (!(l2_lambda >= 0)) throw ConfigError("train.l2_lambda must be >= 0");
  if (!(clip_norm >= 0)) throw ConfigError("train.clip_norm must be >= 0");
  if (k < 1) throw ConfigError("train.k must be >= 1");
}

std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t x = 0x9e3779b97f4a7c15ULL;
  for (std::uint64_t p : parts) {
    x ^= p + 0x9e3779b97f4a7c15ULL + (x << 6) + (x >> 2);
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    x = z ^ (z >> 31);
  }
  return x;
}

double bce_loss(const Tensor& logits, const Tensor& targets, Tensor* grad) {
  if (logits.size() != targets.size())
    throw DimensionError("bce: logits " + shape_str(logits.shape()) + " vs targets " + shape_str(targets.shape()));
  if (grad) *grad = Tensor(logits.shape(), 0);
  double loss = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double s = logits[i], y = targets[i];
    loss += std::max(s, 0.0) - s * y + std::log1p(std::exp(-std::abs(s)));
    if (grad) (*grad)[i] = static_cast<real>(kernels::sigmoid(logits[i]) - y);
  }
  return loss;
}

ParamGrads zero_grads(const ModelParams& params) {
  ParamGrads g;
  for (const auto& [name, t] : params.named()) g.emplace_back(t->shape(), 0);
  return g;
}

double l2_penalty(const ModelParams& params, double lambda, ParamGrads* grads) {
  double total = 0;
  std::size_t i = 0;
  for (const auto& [name, t] : params.named()) {
    if (ModelParams::regularized(name)) {
      for (real v : t->values()) total += static_cast<double>(v) * v;
      if (grads && lambda != 0) kernels::axpy(static_cast<real>(2 * lambda), t->data(), (*grads)[i].data(), t->size());
    }
    ++i;
  }
  return lambda * total;
}

double clip_global_norm(ParamGrads& grads, double max_norm) {
  double sq = 0;
  for (const Tensor& g : grads)
    for (real v : g.values()) sq += static_cast<double>(v) * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const real s = static_cast<real>(max_norm / norm);
    for (Tensor& g : grads)
      for (real& v : g.values()) v *= s;
  }
  return norm;
}

AdamState AdamState::zeros(const ModelParams& params) {
  AdamState s;
  s.m = zero_grads(params);
  s.v = zero_grads(params);
  return s;
}

void adam_step(ModelParams& params, const ParamGrads& grads, AdamState& state, const TrainConfig& c) {
  auto named = params.named();
  if (grads.size() != named.size() || state.m.size() != named.size() || state.v.size() != named.size())
    throw DimensionError("adam: " + std::to_string(grads.size()) + " gradients for " + std::to_string(named.size()) +
                         " parameters");
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (!grads[i].same_shape(*named[i].second) || !state.m[i].same_shape(grads[i]))
      throw DimensionError("adam: gradient of " + named[i].first + " has shape " + shape_str(grads[i].shape()) +
                           ", parameter has " + shape_str(named[i].second->shape()));
    for (std::size_t j = 0; j < grads[i].size(); ++j)
      if (!std::isfinite(grads[i][j]))
        throw DivergenceError("non-finite gradient in " + named[i].first + " at element " + std::to_string(j) +
                              " (step " + std::to_string(state.step + 1) + ")");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1 - std::pow(c.beta1, t), c2 = 1 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < named.size(); ++i) {
    Tensor& w = *named[i].second;
    Tensor &m = state.m[i], &v = state.v[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = static_cast<real>(c.beta1 * m[j] + (1 - c.beta1) * g[j]);
      v[j] = static_cast<real>(c.beta2 * v[j] + (1 - c.beta2) * g[j] * g[j]);
      const double mh = m[j] / c1, vh = v[j] / c2;
      w[j] = static_cast<real>(w[j] - c.learning_rate * mh / (std::sqrt(vh) + c.epsilon));
    }
  }
}

namespace {

struct DocGrad {
  double loss = 0;
  ParamGrads grads;               // W_e slot left empty
  std::vector<std::int32_t> ids;  // distinct vocabulary ids, ascending
  Tensor we_grad;                 // [ids x d_e]
};

DocGrad doc_gradient(const ModelParams& params, const ModelConfig& c, const EncodedDocument& doc, bool dropout,
                     std::uint64_t seed) {
  DocGrad out;
  out.ids = doc.grid;
  std::sort(out.ids.begin(), out.ids.end());
  out.ids.erase(std::unique(out.ids.begin(), out.ids.end()), out.ids.end());
  std::vector<std::int32_t> local(doc.grid.size());
  for (std::size_t i = 0; i < doc.grid.size(); ++i)
    local[i] = static_cast<std::int32_t>(std::lower_bound(out.ids.begin(), out.ids.end(), doc.grid[i]) - out.ids.begin());
  Tensor table = Tensor::matrix(out.ids.size(), c.d_e);
  for (std::size_t i = 0; i < out.ids.size(); ++i) {
    if (out.ids[i] < 0 || static_cast<std::size_t>(out.ids[i]) >= params.W_e.rows())
      throw DataError("document '" + doc.id + "' has token id " + std::to_string(out.ids[i]) +
                      " outside the embedding table");
    std::copy_n(params.W_e.row(out.ids[i]), c.d_e, table.row(i));
  }

  ad::Tape tape;
  ad::ParamVars pv = ad::bind(tape, params, true);
  pv.W_e = tape.variable(std::move(table));
  ad::ForwardOptions opt;
  opt.train = dropout;
  opt.dropout_seed = seed;
  opt.ids = local;
  const ad::Graph g = ad::forward_graph(tape, pv, c, doc, opt);
  ad::Var loss = ad::bce_with_logits(g.logits, doc.target);
  tape.backward(loss);
  out.loss = loss.value()[0];
  const auto vars = pv.list();
  out.grads.resize(vars.size());
  for (std::size_t i = 1; i < vars.size(); ++i) out.grads[i] = tape.grad(vars[i].id);
  out.we_grad = tape.grad(pv.W_e.id);
  return out;
}

void merge(BatchGradient& into, const DocGrad& dg, std::size_t d_e) {
  into.loss += dg.loss;
  for (std::size_t i = 1; i < dg.grads.size(); ++i)
    kernels::axpy(1, dg.grads[i].data(), into.grads[i].data(), dg.grads[i].size());
  for (std::size_t r = 0; r < dg.ids.size(); ++r)
    kernels::axpy(1, dg.we_grad.row(r), into.grads[0].row(dg.ids[r]), d_e);
}

// Runs body(i) for i in [0, n) across OpenMP threads; the first exception (by
// index) is rethrown after the loop.
template <class F>
void parallel_for(std::size_t n, F&& body) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

BatchGradient batch_gradient(const ModelParams& params, const ModelConfig& c,
                             std::span<const EncodedDocument* const> docs, std::span<const std::uint64_t> seeds,
                             kernels::Exec exec) {
  const bool dropout = !seeds.empty();
  if (dropout && seeds.size() != docs.size())
    throw DimensionError("batch_gradient: " + std::to_string(seeds.size()) + " dropout seeds for " +
                         std::to_string(docs.size()) + " documents");
  BatchGradient out;
  out.grads = zero_grads(params);
  if (exec == kernels::Exec::serial || docs.size() < 2 || kernels::max_threads() < 2) {
    for (std::size_t i = 0; i < docs.size(); ++i)
      merge(out, doc_gradient(params, c, *docs[i], dropout, dropout ? seeds[i] : 0), c.d_e);
    return out;
  }
  std::vector<DocGrad> parts(docs.size());
  parallel_for(docs.size(), [&](std::size_t i) {
    parts[i] = doc_gradient(params, c, *docs[i], dropout, dropout ? seeds[i] : 0);
  });
  for (const DocGrad& dg : parts) merge(out, dg, c.d_e);
  return out;
}

Tensor predict_probabilities(const ModelParams& params, const ModelConfig& c, std::span<const EncodedDocument> docs,
                             kernels::Exec exec) {
  const std::size_t L = c.num_labels;
  Tensor out = Tensor::matrix(docs.size(), L);
  auto one = [&](std::size_t d) {
    const ForwardResult r = forward(params, c, docs[d]);
    std::copy_n(r.probabilities.data(), L, out.row(d));
  };
  if (exec == kernels::Exec::serial || kernels::max_threads() < 2) {
    for (std::size_t d = 0; d < docs.size(); ++d) one(d);
  } else {
    parallel_for(docs.size(), one);
  }
  return out;
}

Tensor target_matrix(std::span<const EncodedDocument> docs, std::size_t L) {
  Tensor out = Tensor::matrix(docs.size(), L);
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (docs[d].target.size() != L)
      throw DimensionError("document '" + docs[d].id + "' has " + std::to_string(docs[d].target.size()) +
                           " targets, expected " + std::to_string(L));
    std::copy_n(docs[d].target.data(), L, out.row(d));
  }
  return out;
}

Prediction predict(const ModelParams& params, const ModelConfig& c, const EncodedDocument& doc, double threshold) {
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("threshold must lie in (0, 1), got " + std::to_string(threshold));
  Prediction p;
  p.probabilities = forward(params, c, doc).probabilities;
  p.labels = threshold_labels(p.probabilities.values(), threshold);
  return p;
}

namespace {

json record_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},         {"train_loss", r.train_loss}, {"micro_f1", r.micro_f1},
          {"macro_f1", r.macro_f1},   {"micro_auc", r.micro_auc},   {"macro_auc", r.macro_auc},
          {"precision_at_k", r.precision_at_k}, {"metric", r.metric}, {"improved", r.improved}};
}

}  // namespace

TrainResult train(const std::vector<EncodedDocument>& train_docs, const std::vector<EncodedDocument>& valid_docs,
                  const ModelConfig& mc, ModelParams initial, const TrainConfig& tc, const TrainOutputs& outputs) {
  mc.validate();
  tc.validate();
  if (train_docs.empty()) throw DataError("training split is empty");
  if (valid_docs.empty()) throw DataError("validation split is empty");
  if (tc.threads > 0) kernels::set_threads(tc.threads);
  const std::size_t k = std::min(tc.k, mc.num_labels);

  std::ofstream history;
  if (outputs.dir) {
    std::filesystem::create_directories(*outputs.dir);
    history.open(*outputs.dir / "history.jsonl");
    if (!history) throw DataError("cannot write " + (*outputs.dir / "history.jsonl").string());
  }
  auto checkpoint = [&](const ModelParams& p, std::size_t epoch, const char* name) {
    if (!outputs.dir) return;
    save_checkpoint({mc, p, outputs.labels, outputs.vocab_hash, epoch}, *outputs.dir / name);
  };

  TrainResult result;
  ModelParams params = std::move(initial);
  AdamState adam = AdamState::zeros(params);
  const Tensor truth = target_matrix(valid_docs, mc.num_labels);
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::size_t> order(train_docs.size());
  std::iota(order.begin(), order.end(), 0);
  result.stop_reason = "max_epochs";

  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(derive_seed({tc.seed, epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += tc.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      std::vector<const EncodedDocument*> docs;
      std::vector<std::uint64_t> seeds;
      for (std::size_t i = start; i < end; ++i) {
        docs.push_back(&train_docs[order[i]]);
        seeds.push_back(derive_seed({tc.seed, epoch, batch, order[i]}));
      }
      BatchGradient bg = batch_gradient(params, mc, docs, mc.dropout > 0 ? seeds : std::vector<std::uint64_t>{});
      const double penalty = l2_penalty(params, tc.l2_lambda, &bg.grads);
      auto diverged = [&](const std::string& why) {
        const std::string last = result.history.empty()
                                     ? std::string("no checkpoint written yet")
                                     : (outputs.dir ? (*outputs.dir / "last.ckpt").string() : std::string("last.ckpt")) +
                                           " (epoch " + std::to_string(result.history.size()) + ")";
        return DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(batch) + ": " + why + "; last good checkpoint: " + last);
      };
      if (!std::isfinite(bg.loss + penalty)) throw diverged("loss is " + std::to_string(bg.loss + penalty));
      clip_global_norm(bg.grads, tc.clip_norm);
      try {
        adam_step(params, bg.grads, adam, tc);
      } catch (const DivergenceError& e) {
        throw diverged(e.what());
      }
      epoch_loss += bg.loss;
    }

    const Tensor probs = predict_probabilities(params, mc, valid_docs);
    const MetricsReport rep = evaluate(probs, truth, mc.threshold, k);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(train_docs.size());
    rec.micro_f1 = rep.prf.micro.f1;
    rec.macro_f1 = rep.prf.macro.f1;
    rec.micro_auc = rep.micro_auc;
    rec.macro_auc = rep.macro_auc;
    rec.precision_at_k = rep.precision_at_k;
    rec.metric = tc.early_stop_metric == StopMetric::micro_f1 ? rec.micro_f1 : rec.precision_at_k;
    rec.improved = rec.metric > best_metric;
    if (rec.improved) {
      best_metric = rec.metric;
      result.best = params;
      result.best_epoch = epoch;
      since_best = 0;
      checkpoint(params, epoch, "best.ckpt");
    } else {
      ++since_best;
    }
    checkpoint(params, epoch, "last.ckpt");
    result.history.push_back(rec);
    if (history) history << record_json(rec).dump() << '\n' << std::flush;
    if (outputs.on_epoch) outputs.on_epoch(rec);
    if (since_best >= tc.patience) {
      result.stop_reason = "patience";
      break;
    }
  }
  if (result.best_epoch == 0) result.best = params;  // max_epochs == 0
  return result;
}

}  // namespace hlan
