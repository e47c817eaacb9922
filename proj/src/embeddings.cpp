#include "hlan/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "hlan/kernels.hpp"

namespace hlan {

EmbeddingTable::EmbeddingTable(std::vector<std::string> items, Tensor vectors)
    : items_(std::move(items)), vectors_(std::move(vectors)) {
  if (vectors_.rank() != 2 || vectors_.rows() != items_.size())
    throw DimensionError("embedding table: " + std::to_string(items_.size()) + " items vs vectors " +
                         shape_str(vectors_.shape()));
  for (std::size_t i = 0; i < items_.size(); ++i)
    if (!index_.emplace(items_[i], static_cast<int>(i)).second)
      throw DataError("embedding table: duplicate item '" + items_[i] + "'");
}

int EmbeddingTable::find(const std::string& item) const {
  auto it = index_.find(item);
  return it == index_.end() ? -1 : it->second;
}

std::span<const real> EmbeddingTable::row(const std::string& item) const {
  const int i = find(item);
  if (i < 0) throw DataError("embedding table has no item '" + item + "'");
  return row(static_cast<std::size_t>(i));
}

namespace {

using Mat = std::vector<double>;

double sigmoid(double x) { return kernels::sigmoid(x); }

// log sigma(x), stable for large |x|
double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

struct Sample {
  std::vector<std::size_t> context;
  std::size_t centre;

  // Items in the window are positives for this set, never negatives.
  bool excludes(std::size_t t) const {
    return t == centre || std::find(context.begin(), context.end(), t) != context.end();
  }
};

}  // namespace

EmbeddingTable train_cbow(const std::vector<std::vector<std::string>>& sequences,
                          const CbowConfig& cfg, std::vector<double>* epoch_loss) {
  if (cfg.dim == 0) throw ConfigError("cbow: dim must be > 0");
  if (cfg.window == 0) throw ConfigError("cbow: window must be > 0");
  if (sequences.empty()) throw DataError("cbow: no training sequences");

  std::map<std::string, std::size_t> freq;
  for (const auto& s : sequences)
    for (const auto& it : s) ++freq[it];
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [item, n] : freq)
    if (n >= cfg.min_count) ranked.emplace_back(item, n);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.empty()) throw DataError("cbow: no item reaches min_count");

  const std::size_t V = ranked.size(), d = cfg.dim;
  std::unordered_map<std::string, std::size_t> idx;
  std::vector<std::string> items;
  std::vector<double> noise_weight;
  for (std::size_t i = 0; i < V; ++i) {
    idx[ranked[i].first] = i;
    items.push_back(ranked[i].first);
    noise_weight.push_back(std::pow(static_cast<double>(ranked[i].second), 0.75));
  }
  std::vector<std::vector<std::size_t>> seqs;
  std::size_t total_words = 0;
  for (const auto& s : sequences) {
    std::vector<std::size_t> ids;
    for (const auto& it : s)
      if (auto f = idx.find(it); f != idx.end()) ids.push_back(f->second);
    total_words += ids.size();
    seqs.push_back(std::move(ids));
  }

  std::mt19937_64 rng(cfg.seed);
  Mat syn0(V * d), syn1(V * d, 0.0);
  {
    std::uniform_real_distribution<double> init(-0.5 / static_cast<double>(d), 0.5 / static_cast<double>(d));
    for (double& v : syn0) v = init(rng);
  }
  std::discrete_distribution<std::size_t> noise(noise_weight.begin(), noise_weight.end());

  auto samples_of = [&](const std::vector<std::size_t>& ids, std::vector<Sample>& out) {
    const std::size_t n = ids.size(), w = cfg.window;
    for (std::size_t i = 0; i < n; ++i) {
      Sample s{{}, ids[i]};
      const std::size_t lo = i >= w ? i - w : 0, hi = std::min(n, i + w + 1);
      for (std::size_t j = lo; j < hi; ++j)
        if (j != i) s.context.push_back(ids[j]);
      if (!s.context.empty()) out.push_back(std::move(s));
    }
  };

  // Fixed evaluation pairs and negatives for the reported objective.
  std::vector<Sample> eval;
  std::vector<std::vector<std::size_t>> eval_neg;
  if (epoch_loss) {
    epoch_loss->clear();
    std::mt19937_64 erng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    for (const auto& ids : seqs) samples_of(ids, eval);
    for (const auto& s : eval) {
      std::vector<std::size_t> neg;
      for (std::size_t k = 0; k < cfg.negatives; ++k) {
        const std::size_t t = noise(erng);
        if (!s.excludes(t)) neg.push_back(t);
      }
      eval_neg.push_back(std::move(neg));
    }
  }

  std::vector<double> h(d), neu1e(d);
  auto mean_context = [&](const Sample& s) {
    std::fill(h.begin(), h.end(), 0.0);
    for (std::size_t c : s.context)
      for (std::size_t j = 0; j < d; ++j) h[j] += syn0[c * d + j];
    const double inv = 1.0 / static_cast<double>(s.context.size());
    for (double& v : h) v *= inv;
  };
  auto dot_h = [&](std::size_t t) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += h[j] * syn1[t * d + j];
    return s;
  };

  const double total = static_cast<double>(std::max<std::size_t>(1, total_words * cfg.epochs));
  std::size_t processed = 0;
  std::vector<Sample> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (auto& ids : seqs) {
      if (cfg.shuffle_within) std::shuffle(ids.begin(), ids.end(), rng);
      batch.clear();
      samples_of(ids, batch);
      const double progress = static_cast<double>(processed) / total;
      const double lr = std::max(cfg.min_learning_rate,
                                 cfg.learning_rate - (cfg.learning_rate - cfg.min_learning_rate) * progress);
      processed += ids.size();
      for (const auto& s : batch) {
        mean_context(s);
        std::fill(neu1e.begin(), neu1e.end(), 0.0);
        for (std::size_t k = 0; k <= cfg.negatives; ++k) {
          std::size_t t;
          double label;
          if (k == 0) {
            t = s.centre, label = 1;
          } else {
            t = noise(rng);
            if (s.excludes(t)) continue;
            label = 0;
          }
          const double g = (label - sigmoid(dot_h(t))) * lr;
          for (std::size_t j = 0; j < d; ++j) {
            neu1e[j] += g * syn1[t * d + j];
            syn1[t * d + j] += g * h[j];
          }
        }
        const double inv = 1.0 / static_cast<double>(s.context.size());
        for (std::size_t c : s.context)
          for (std::size_t j = 0; j < d; ++j) syn0[c * d + j] += neu1e[j] * inv;
      }
    }
    if (epoch_loss) {
      double loss = 0;
      for (std::size_t i = 0; i < eval.size(); ++i) {
        mean_context(eval[i]);
        loss -= log_sigmoid(dot_h(eval[i].centre));
        for (std::size_t t : eval_neg[i]) loss -= log_sigmoid(-dot_h(t));
      }
      epoch_loss->push_back(eval.empty() ? 0.0 : loss / static_cast<double>(eval.size()));
    }
  }

  Tensor vectors = Tensor::matrix(V, d);
  for (std::size_t i = 0; i < V * d; ++i) vectors[i] = static_cast<real>(syn0[i]);
  return EmbeddingTable(std::move(items), std::move(vectors));
}

EmbeddingTable normalize_unit(EmbeddingTable table) {
  Tensor& m = table.vectors();
  const std::size_t d = table.dim();
  for (std::size_t i = 0; i < table.size(); ++i) {
    real* r = m.row(i);
    double sq = 0;
    for (std::size_t j = 0; j < d; ++j) sq += static_cast<double>(r[j]) * r[j];
    if (sq == 0) throw DataError("cannot normalise zero vector of item '" + table.item(i) + "'");
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t j = 0; j < d; ++j) r[j] = static_cast<real>(r[j] * inv);
  }
  table.set_normalized(true);
  return table;
}

double cosine(std::span<const real> a, std::span<const real> b) {
  if (a.size() != b.size()) throw DimensionError("cosine: length mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    ab += static_cast<double>(a[j]) * b[j];
    aa += static_cast<double>(a[j]) * a[j];
    bb += static_cast<double>(b[j]) * b[j];
  }
  if (aa == 0 || bb == 0) return 0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

std::vector<std::pair<std::string, double>> top_k_similar(const EmbeddingTable& table,
                                                          const std::string& item, std::size_t k) {
  const int q = table.find(item);
  if (q < 0) throw DataError("top_k_similar: unknown item '" + item + "'");
  if (k >= table.size())
    throw ConfigError("top_k_similar: k=" + std::to_string(k) + " needs more than " +
                      std::to_string(table.size()) + " items");
  std::vector<std::pair<std::string, double>> all;
  all.reserve(table.size() - 1);
  const auto qr = table.row(static_cast<std::size_t>(q));
  for (std::size_t i = 0; i < table.size(); ++i)
    if (static_cast<int>(i) != q) all.emplace_back(table.item(i), cosine(qr, table.row(i)));
  auto better = [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << table.dim() << '\t' << table.size() << '\n';
  char buf[40];
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.item(i) << '\t';
    const auto r = table.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(r[j]));
      if (j) out << ' ';
      out << buf;
    }
    out << '\n';
  }
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::size_t d = 0, n = 0;
  std::string line;
  if (!std::getline(in, line) || !(std::istringstream(line) >> d >> n) || d == 0)
    throw DataError("bad embedding header in " + path.string());
  std::vector<std::string> items;
  Tensor m = Tensor::matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw DataError(path.string() + ": expected " + std::to_string(n) + " rows");
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError(path.string() + ": malformed row " + std::to_string(i));
    items.push_back(line.substr(0, tab));
    std::istringstream vs(line.substr(tab + 1));
    for (std::size_t j = 0; j < d; ++j) {
      double v;
      if (!(vs >> v)) throw DataError(path.string() + ": row '" + items.back() + "' has fewer than " + std::to_string(d) + " values");
      m.at(i, j) = static_cast<real>(v);
    }
  }
  return EmbeddingTable(std::move(items), std::move(m));
}

}  // namespace hlan
