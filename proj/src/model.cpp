#include "hlan/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "hlan/config.hpp"
#include "hlan/kernels.hpp"

namespace hlan {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

Variant parse_variant(const std::string& s) {
  if (s == "hlan") return Variant::hlan;
  if (s == "hagru" || s == "ha-gru") return Variant::hagru;
  if (s == "han") return Variant::han;
  throw ConfigError("variant must be hlan, hagru or han, got '" + s + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::hlan: return "hlan";
    case Variant::hagru: return "hagru";
    case Variant::han: return "han";
  }
  return "?";
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model.") + name + " must be > 0");
  };
  positive(num_labels, "num_labels");
  positive(d_e, "d_e");
  positive(d_h, "d_h");
  positive(sentences, "sentences");
  positive(sentence_len, "sentence_len");
  if (vocab_size < 2) throw ConfigError("model.vocab_size must cover <pad> and <unk>");
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("model.threshold must lie in (0, 1)");
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("model.dropout must lie in [0, 1)");
}

// ------------------------------------------------------------------- params

namespace {

template <class P, class T>
std::vector<std::pair<std::string, T*>> named_impl(P& p) {
  std::vector<std::pair<std::string, T*>> out{{"W_e", &p.W_e}};
  auto gru = [&](const char* prefix, auto& g) {
    const std::string s(prefix);
    out.insert(out.end(), {{s + ".W_er", &g.W_er}, {s + ".W_ez", &g.W_ez}, {s + ".W_ec", &g.W_ec},
                           {s + ".W_hr", &g.W_hr}, {s + ".W_hz", &g.W_hz}, {s + ".W_hc", &g.W_hc},
                           {s + ".b_r", &g.b_r},   {s + ".b_z", &g.b_z}});
  };
  gru("word_fwd", p.word_fwd);
  gru("word_bwd", p.word_bwd);
  gru("sent_fwd", p.sent_fwd);
  gru("sent_bwd", p.sent_bwd);
  out.insert(out.end(), {{"W_w", &p.W_w}, {"b_w", &p.b_w}, {"W_S", &p.W_S}, {"b_S", &p.b_S},
                         {"V_w", &p.V_w}, {"V_s", &p.V_s}, {"W", &p.W}, {"b", &p.b}});
  return out;
}

GruParams zero_gru(std::size_t in, std::size_t h) {
  return {Tensor::matrix(in, h), Tensor::matrix(in, h), Tensor::matrix(in, h),
          Tensor::matrix(h, h),  Tensor::matrix(h, h),  Tensor::matrix(h, h),
          Tensor(Shape{h}),      Tensor(Shape{h})};
}

std::string leaf(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? name : name.substr(dot + 1);
}

void xavier(Tensor& t, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (real& v : t.values()) v = static_cast<real>(dist(rng));
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  return named_impl<ModelParams, Tensor>(*this);
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  return named_impl<const ModelParams, const Tensor>(*this);
}

bool ModelParams::regularized(const std::string& name) {
  if (name == "W_e") return false;
  const std::string l = leaf(name);
  return !l.empty() && (l[0] == 'W' || l[0] == 'V');
}

bool ModelParams::operator==(const ModelParams& o) const {
  auto a = named(), b = o.named();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(*a[i].second == *b[i].second)) return false;
  return true;
}

ModelParams zero_params(const ModelConfig& c) {
  c.validate();
  const std::size_t h = c.d_h, dw = c.word_ctx_dim(), ds = c.sent_ctx_dim();
  ModelParams p;
  p.W_e = Tensor::matrix(c.vocab_size, c.d_e);
  p.word_fwd = zero_gru(c.d_e, h);
  p.word_bwd = zero_gru(c.d_e, h);
  p.sent_fwd = zero_gru(2 * h, 2 * h);
  p.sent_bwd = zero_gru(2 * h, 2 * h);
  p.W_w = Tensor::matrix(2 * h, dw);
  p.b_w = Tensor(Shape{dw});
  p.W_S = Tensor::matrix(4 * h, ds);
  p.b_S = Tensor(Shape{ds});
  p.V_w = Tensor::matrix(c.word_contexts(), dw);
  p.V_s = Tensor::matrix(c.sent_contexts(), ds);
  p.W = Tensor::matrix(c.num_labels, 4 * h);
  p.b = Tensor(Shape{c.num_labels});
  return p;
}

ModelParams init_params(const ModelConfig& c, const InitSources& src, std::uint64_t seed) {
  ModelParams p = zero_params(c);
  std::mt19937_64 rng(seed);
  for (auto& [name, t] : p.named())
    if (t->rank() == 2) xavier(*t, rng);
  std::fill_n(p.W_e.row(Vocabulary::kPad), c.d_e, real{0});

  if (src.words) {
    if (!src.vocab) throw ConfigError("init: word embeddings given without a vocabulary");
    if (src.words->dim() != c.d_e)
      throw ConfigError("layer W_e has width " + std::to_string(c.d_e) + " but the word embedding table has dimension " +
                        std::to_string(src.words->dim()));
    if (src.vocab->size() != c.vocab_size)
      throw ConfigError("layer W_e has " + std::to_string(c.vocab_size) + " rows but the vocabulary has " +
                        std::to_string(src.vocab->size()));
    for (std::size_t i = 2; i < src.vocab->size(); ++i) {
      const int r = src.words->find(src.vocab->token(static_cast<std::int32_t>(i)));
      if (r >= 0) std::copy_n(src.words->row(static_cast<std::size_t>(r)).data(), c.d_e, p.W_e.row(i));
    }
  }

  if (c.le_init) {
    if (!src.labels) throw ConfigError("le_init needs the label universe");
    if (src.labels->size() != c.num_labels)
      throw ConfigError("le_init: label universe has " + std::to_string(src.labels->size()) +
                        " labels, model expects " + std::to_string(c.num_labels));
    auto apply = [&](const char* layer, const EmbeddingTable* table, Tensor& target) {
      if (!table) throw ConfigError(std::string("le_init: no label embedding table for layer ") + layer);
      if (table->dim() != target.cols())
        throw ConfigError(std::string("le_init: layer ") + layer + " has width " + std::to_string(target.cols()) +
                          " but its label embedding table has dimension " + std::to_string(table->dim()));
      const EmbeddingTable unit = normalize_unit(*table);
      for (std::size_t l = 0; l < c.num_labels; ++l) {
        const int r = unit.find(src.labels->label(l));
        if (r >= 0) std::copy_n(unit.row(static_cast<std::size_t>(r)).data(), target.cols(), target.row(l));
      }
    };
    apply("W", src.label_tables.projection, p.W);
    if (c.variant == Variant::hlan) apply("V_w", src.label_tables.word_context, p.V_w);
    if (c.variant != Variant::han) apply("V_s", src.label_tables.sentence_context, p.V_s);
  }
  return p;
}

// -------------------------------------------------------------------- graph

namespace ad {

std::vector<Var> ParamVars::list() const {
  std::vector<Var> out{W_e};
  for (const GruVars* g : {&word_fwd, &word_bwd, &sent_fwd, &sent_bwd})
    out.insert(out.end(), {g->W_er, g->W_ez, g->W_ec, g->W_hr, g->W_hz, g->W_hc, g->b_r, g->b_z});
  out.insert(out.end(), {W_w, b_w, W_S, b_S, V_w, V_s, W, b});
  return out;
}

ParamVars bind(Tape& tape, const ModelParams& params, bool trainable) {
  auto leaf_of = [&](const Tensor& t) { return trainable ? tape.parameter(t) : tape.reference(t); };
  auto gru = [&](const GruParams& g) {
    return GruVars{leaf_of(g.W_er), leaf_of(g.W_ez), leaf_of(g.W_ec), leaf_of(g.W_hr),
                   leaf_of(g.W_hz), leaf_of(g.W_hc), leaf_of(g.b_r),  leaf_of(g.b_z)};
  };
  ParamVars v;
  v.W_e = leaf_of(params.W_e);
  v.word_fwd = gru(params.word_fwd);
  v.word_bwd = gru(params.word_bwd);
  v.sent_fwd = gru(params.sent_fwd);
  v.sent_bwd = gru(params.sent_bwd);
  v.W_w = leaf_of(params.W_w), v.b_w = leaf_of(params.b_w);
  v.W_S = leaf_of(params.W_S), v.b_S = leaf_of(params.b_S);
  v.V_w = leaf_of(params.V_w), v.V_s = leaf_of(params.V_s);
  v.W = leaf_of(params.W), v.b = leaf_of(params.b);
  return v;
}

Graph forward_graph(Tape& tape, const ParamVars& p, const ModelConfig& c, const EncodedDocument& doc,
                    const ForwardOptions& opt) {
  const std::size_t n = c.sentences, nt = c.sentence_len, h = c.d_h;
  const std::size_t Lw = c.word_contexts();
  if (doc.sentences != n || doc.sentence_len != nt || doc.grid.size() != n * nt || doc.token_mask.size() != n * nt)
    throw DimensionError("document '" + doc.id + "' is encoded as " + std::to_string(doc.sentences) + "x" +
                         std::to_string(doc.sentence_len) + ", model expects " + std::to_string(n) + "x" +
                         std::to_string(nt));
  std::span<const std::int32_t> ids = opt.ids.empty() ? std::span<const std::int32_t>(doc.grid) : opt.ids;
  if (ids.size() != n * nt) throw DimensionError("forward: id override has the wrong length");

  Graph g;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t t = 0; t < nt; ++t)
      if (doc.token_mask[s * nt + t]) {
        g.active.push_back(s);
        break;
      }
  const std::size_t G = g.active.size();

  Var doc_rep;
  const std::size_t doc_rows = c.variant == Variant::han ? 1 : c.num_labels;
  if (G == 0) {
    doc_rep = tape.constant(Tensor::matrix(doc_rows, 4 * h));
  } else {
    std::vector<std::int32_t> pid(G * nt);
    std::vector<std::uint8_t> pmask(G * nt);
    for (std::size_t gi = 0; gi < G; ++gi) {
      const std::size_t off = g.active[gi] * nt;
      std::copy_n(ids.begin() + static_cast<std::ptrdiff_t>(off), nt, pid.begin() + static_cast<std::ptrdiff_t>(gi * nt));
      std::copy_n(doc.token_mask.begin() + static_cast<std::ptrdiff_t>(off), nt,
                  pmask.begin() + static_cast<std::ptrdiff_t>(gi * nt));
    }
    // word level
    Var emb = gather_rows(p.W_e, pid);
    Var hw = concat(gru_sequence(emb, p.word_fwd.weights(), G, nt, pmask, false),
                    gru_sequence(emb, p.word_bwd.weights(), G, nt, pmask, true), 1);
    Var vw = tanh(add_bias(matmul(hw, p.W_w), p.b_w));
    g.alpha_w = segment_softmax(matmul_nt(vw, p.V_w), nt, pmask);
    Var cs = segment_pool(g.alpha_w, hw, nt, true);  // [Lw*G x 2d_h], row l*G + g

    // sentence level: one sequence of G sentence vectors per word context
    const std::vector<std::uint8_t> all(Lw * G, 1);
    Var hs = concat(gru_sequence(cs, p.sent_fwd.weights(), Lw, G, all, false),
                    gru_sequence(cs, p.sent_bwd.weights(), Lw, G, all, true), 1);
    Var us = tanh(add_bias(matmul(hs, p.W_S), p.b_S));
    Var scores = Lw > 1 ? grouped_rowdot(us, p.V_s, G) : matmul_nt(us, p.V_s);  // [G x Ls]
    g.alpha_s = segment_softmax(scores, G, std::span<const std::uint8_t>(all.data(), G));
    doc_rep = segment_pool(g.alpha_s, hs, G, Lw == 1);  // [doc_rows x 4d_h]
  }

  if (opt.train && c.dropout > 0) {
    std::mt19937_64 rng(opt.dropout_seed);
    std::bernoulli_distribution keep(1 - c.dropout);
    Tensor mask = Tensor::matrix(doc_rows, 4 * h);
    const real s = static_cast<real>(1 / (1 - c.dropout));
    for (real& m : mask.values()) m = keep(rng) ? s : 0;
    doc_rep = mul(doc_rep, tape.constant(std::move(mask)));
  }

  g.logits = c.variant == Variant::han ? add_bias(matmul_nt(doc_rep, p.W), p.b)
                                       : add_bias(grouped_rowdot(doc_rep, p.W, 1), p.b);
  return g;
}

}  // namespace ad

AttentionRecord make_record(const ad::Graph& g, const ModelConfig& c, const EncodedDocument& doc) {
  AttentionRecord r;
  const std::size_t n = c.sentences, nt = c.sentence_len;
  r.sentences = n, r.sentence_len = nt;
  r.word_contexts = c.word_contexts(), r.sent_contexts = c.sent_contexts();
  r.alpha_w.assign(r.word_contexts * n * nt, 0);
  r.alpha_s.assign(r.sent_contexts * n, 0);
  r.token_mask = doc.token_mask;
  r.sentence_mask.assign(n, 0);
  for (std::size_t s : g.active) r.sentence_mask[s] = 1;
  if (g.active.empty()) return r;
  const Tensor& aw = g.alpha_w.value();
  const Tensor& as = g.alpha_s.value();
  for (std::size_t gi = 0; gi < g.active.size(); ++gi) {
    const std::size_t s = g.active[gi];
    for (std::size_t l = 0; l < r.word_contexts; ++l)
      for (std::size_t t = 0; t < nt; ++t) r.alpha_w[(l * n + s) * nt + t] = aw.at(gi * nt + t, l);
    for (std::size_t l = 0; l < r.sent_contexts; ++l) r.alpha_s[l * n + s] = as.at(gi, l);
  }
  return r;
}

ForwardResult forward(const ModelParams& params, const ModelConfig& config, const EncodedDocument& doc) {
  ad::Tape tape;
  const ad::ParamVars pv = ad::bind(tape, params, false);
  const ad::Graph g = ad::forward_graph(tape, pv, config, doc);
  ForwardResult out;
  const Tensor& lv = g.logits.value();
  out.logits = Tensor(Shape{lv.size()}, std::vector<real>(lv.values().begin(), lv.values().end()));
  out.probabilities = out.logits;
  for (real& v : out.probabilities.values()) v = kernels::sigmoid(v);
  out.attention = make_record(g, config, doc);
  return out;
}

// --------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[8] = {'H', 'L', 'A', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const std::string& what) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("checkpoint truncated in " + what);
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  json params = json::array();
  for (const auto& [name, t] : ck.params.named()) params.push_back({{"name", name}, {"shape", t->shape()}});
  const json header{{"config", to_json(ck.config)},
                    {"labels", ck.labels},
                    {"vocab_hash", ck.vocab_hash},
                    {"epoch", ck.epoch},
                    {"real", sizeof(real) == 8 ? "float64" : "float32"},
                    {"params", params}};
  const std::string hs = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put(out, kVersion);
  put(out, static_cast<std::uint64_t>(hs.size()));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, t] : ck.params.named())
    out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(real)));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw DataError(path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto hlen = get<std::uint64_t>(in, "header length");
  std::string hs(hlen, '\0');
  if (!in.read(hs.data(), static_cast<std::streamsize>(hlen))) throw DataError("checkpoint truncated in header");
  Checkpoint ck;
  json header;
  try {
    header = json::parse(hs);
    update_from_json(ck.config, header.at("config"), "checkpoint.config");
    ck.labels = header.at("labels").get<std::vector<std::string>>();
    ck.vocab_hash = header.at("vocab_hash").get<std::uint64_t>();
    ck.epoch = header.at("epoch").get<std::size_t>();
  } catch (const json::exception& e) {
    throw DataError("bad checkpoint header in " + path.string() + ": " + e.what());
  }
  const bool f64 = header.value("real", "float64") == "float64";
  ck.params = zero_params(ck.config);
  auto named = ck.params.named();
  const auto& plist = header.at("params");
  if (plist.size() != named.size()) throw DataError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto& [name, t] = named[i];
    if (plist[i].at("name") != name || plist[i].at("shape").get<Shape>() != t->shape())
      throw DataError("checkpoint parameter " + std::to_string(i) + " is " + plist[i].dump() + ", expected " + name +
                      " " + shape_str(t->shape()));
    for (real& v : t->values())
      v = f64 ? static_cast<real>(get<double>(in, name)) : static_cast<real>(get<float>(in, name));
  }
  return ck;
}

std::vector<std::string> compatibility_diff(const Checkpoint& ck, const LabelUniverse& labels,
                                            const Vocabulary& vocab) {
  std::vector<std::string> diff;
  if (ck.labels != labels.labels()) {
    std::string line = "label universe: checkpoint has " + std::to_string(ck.labels.size()) + ", data has " +
                       std::to_string(labels.size());
    for (std::size_t i = 0; i < std::min(ck.labels.size(), labels.size()); ++i)
      if (ck.labels[i] != labels.label(i)) {
        line += "; first difference at " + std::to_string(i) + ": " + ck.labels[i] + " vs " + labels.label(i);
        break;
      }
    diff.push_back(line);
  }
  if (ck.vocab_hash != vocab.hash() || ck.config.vocab_size != vocab.size())
    diff.push_back("vocabulary: checkpoint has " + std::to_string(ck.config.vocab_size) + " entries, given " +
                   std::to_string(vocab.size()) + (ck.vocab_hash != vocab.hash() ? " (different tokens)" : ""));
  return diff;
}

}  // namespace hlan
