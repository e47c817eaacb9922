#include "hlan/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace hlan {

using json = nlohmann::json;

namespace {

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool all_digits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

std::string zero_pad(std::size_t v, std::size_t width) {
  std::string s = std::to_string(v);
  return std::string(s.size() < width ? width - s.size() : 0, '0') + s;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace

TokenList tokenize(std::string_view text) {
  TokenList out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    out.push_back(all_digits(cur) ? std::string(kNumToken) : cur);
    cur.clear();
  };
  for (char c : text) {
    if (is_alnum(c))
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    else
      flush();
  }
  flush();
  return out;
}

SegmentMode parse_segment_mode(const std::string& s) {
  if (s == "chunk") return SegmentMode::chunk;
  if (s == "rule") return SegmentMode::rule;
  throw ConfigError("segment mode must be 'chunk' or 'rule', got '" + s + "'");
}

std::string to_string(SegmentMode m) { return m == SegmentMode::chunk ? "chunk" : "rule"; }

std::vector<TokenList> segment_tokens(const TokenList& tokens, std::size_t chunk_len) {
  if (chunk_len == 0) throw ConfigError("chunk segmentation needs sentence_len > 0");
  std::vector<TokenList> out;
  for (std::size_t i = 0; i < tokens.size(); i += chunk_len)
    out.emplace_back(tokens.begin() + i, tokens.begin() + std::min(tokens.size(), i + chunk_len));
  return out;
}

std::vector<TokenList> segment(std::string_view text, SegmentMode mode, std::size_t chunk_len) {
  if (mode == SegmentMode::chunk) return segment_tokens(tokenize(text), chunk_len);
  std::vector<TokenList> out;
  std::size_t start = 0;
  auto emit = [&](std::size_t end) {
    TokenList toks = tokenize(text.substr(start, end - start));
    if (!toks.empty()) out.push_back(std::move(toks));
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const bool at_end = i + 1 == text.size();
    if ((c == '.' || c == '!' || c == '?') &&
        (at_end || std::isspace(static_cast<unsigned char>(text[i + 1])))) {
      emit(i + 1);
      start = i + 1;
    } else if (c == '\n') {
      // blank line: newline, optional horizontal whitespace, newline
      std::size_t j = i + 1;
      while (j < text.size() && (text[j] == ' ' || text[j] == '\t' || text[j] == '\r')) ++j;
      if (j < text.size() && text[j] == '\n') {
        emit(i);
        start = j + 1;
        i = j;
      }
    }
  }
  if (start < text.size()) emit(text.size());
  return out;
}

// ---------------------------------------------------------------- Vocabulary

Vocabulary::Vocabulary() {
  tokens_ = {"<pad>", "<unk>"};
  counts_ = {0, 0};
  index_ = {{"<pad>", kPad}, {"<unk>", kUnk}};
}

Vocabulary Vocabulary::build(const std::vector<TokenList>& sequences, std::size_t min_count) {
  if (sequences.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& seq : sequences)
    for (const auto& tok : seq) ++freq[tok];
  std::vector<std::pair<std::string, std::size_t>> items;
  for (auto& [tok, n] : freq)
    if (n >= min_count) items.emplace_back(tok, n);
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary v;
  v.min_count_ = min_count;
  for (auto& [tok, n] : items) {
    v.index_[tok] = static_cast<std::int32_t>(v.tokens_.size());
    v.tokens_.push_back(tok);
    v.counts_.push_back(n);
  }
  return v;
}

Vocabulary Vocabulary::build(const Corpus& corpus, std::size_t min_count) {
  if (corpus.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::vector<TokenList> seqs;
  seqs.reserve(corpus.size());
  for (const auto& d : corpus) seqs.push_back(tokenize(d.text));
  return build(seqs, min_count);
}

std::int32_t Vocabulary::index(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  auto out = open_out(path);
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    out << tokens_[i] << '\t' << i << '\t' << counts_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  auto in = open_in(path);
  Vocabulary v;
  v.tokens_.clear(), v.counts_.clear(), v.index_.clear();
  std::string line;
  std::size_t min_seen = static_cast<std::size_t>(-1);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    std::size_t idx, count;
    if (!std::getline(ls, tok, '\t') || !(ls >> idx >> count))
      throw DataError("malformed vocabulary line in " + path.string() + ": " + line);
    if (idx != v.tokens_.size())
      throw DataError("vocabulary indices not consecutive at '" + tok + "' in " + path.string());
    v.index_[tok] = static_cast<std::int32_t>(idx);
    v.tokens_.push_back(tok);
    v.counts_.push_back(count);
    if (idx >= 2) min_seen = std::min(min_seen, count);
  }
  if (v.tokens_.size() < 2 || v.tokens_[kPad] != "<pad>" || v.tokens_[kUnk] != "<unk>")
    throw DataError("vocabulary " + path.string() + " lacks <pad>/<unk> at indices 0/1");
  v.min_count_ = v.tokens_.size() > 2 ? min_seen : 0;
  return v;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& t : tokens_) {
    for (unsigned char c : t) h = (h ^ c) * 1099511628211ull;
    h = (h ^ 0xffu) * 1099511628211ull;
  }
  return h;
}

// ------------------------------------------------------------- LabelUniverse

LabelUniverse::LabelUniverse(std::vector<std::string> labels) : labels_(std::move(labels)) {
  std::sort(labels_.begin(), labels_.end());
  labels_.erase(std::unique(labels_.begin(), labels_.end()), labels_.end());
  for (std::size_t i = 0; i < labels_.size(); ++i) index_[labels_[i]] = static_cast<int>(i);
}

LabelUniverse LabelUniverse::from_corpora(std::initializer_list<const Corpus*> corpora) {
  std::vector<std::string> all;
  for (const Corpus* c : corpora)
    for (const auto& d : *c) all.insert(all.end(), d.labels.begin(), d.labels.end());
  return LabelUniverse(std::move(all));
}

int LabelUniverse::find(const std::string& label) const {
  auto it = index_.find(label);
  return it == index_.end() ? -1 : it->second;
}

// ------------------------------------------------------------------ encoding

std::size_t EncodedDocument::unmasked_tokens() const {
  return static_cast<std::size_t>(std::count(token_mask.begin(), token_mask.end(), 1));
}

std::vector<std::size_t> EncodedDocument::label_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < target.size(); ++l)
    if (target[l] > 0.5) out.push_back(l);
  return out;
}

EncodedDocument encode(const RawDocument& doc, const Vocabulary& vocab, const LabelUniverse& labels,
                       const EncodeConfig& config) {
  const std::size_t n = config.sentences, nt = config.sentence_len;
  if (n == 0 || nt == 0) throw ConfigError("encode: sentences and sentence_len must be positive");
  EncodedDocument e;
  e.id = doc.id;
  e.sentences = n, e.sentence_len = nt;
  e.grid.assign(n * nt, Vocabulary::kPad);
  e.token_mask.assign(n * nt, 0);
  e.sentence_mask.assign(n, 0);
  e.tokens.assign(n * nt, std::string());
  const auto sents = segment(doc.text, config.mode, nt);
  for (std::size_t s = 0; s < std::min(n, sents.size()); ++s) {
    const auto& toks = sents[s];
    for (std::size_t t = 0; t < std::min(nt, toks.size()); ++t) {
      e.grid[s * nt + t] = vocab.index(toks[t]);
      e.token_mask[s * nt + t] = 1;
      e.tokens[s * nt + t] = toks[t];
    }
    e.sentence_mask[s] = toks.empty() ? 0 : 1;
  }
  e.target = Tensor(Shape{labels.size()}, 0);
  std::vector<std::string> unknown;
  for (const auto& l : doc.labels) {
    const int idx = labels.find(l);
    if (idx < 0)
      unknown.push_back(l);
    else
      e.target[idx] = 1;
  }
  if (!unknown.empty()) {
    std::string msg = "document '" + doc.id + "' has labels outside the label universe:";
    for (const auto& u : unknown) msg += " " + u;
    throw DataError(msg);
  }
  return e;
}

std::vector<EncodedDocument> encode_all(const Corpus& corpus, const Vocabulary& vocab,
                                        const LabelUniverse& labels, const EncodeConfig& config) {
  std::vector<EncodedDocument> out;
  out.reserve(corpus.size());
  for (const auto& d : corpus) out.push_back(encode(d, vocab, labels, config));
  return out;
}

// ----------------------------------------------------------------------- I/O

Corpus load_corpus(const std::filesystem::path& path) {
  auto in = open_in(path);
  Corpus out;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    RawDocument d;
    try {
      const json j = json::parse(line);
      d.id = j.at("id").get<std::string>();
      d.text = j.at("text").get<std::string>();
      d.labels = j.at("labels").get<std::vector<std::string>>();
    } catch (const json::exception& ex) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
    if (!seen.insert(d.id).second)
      throw DataError(path.string() + ": duplicate document id '" + d.id + "'");
    out.push_back(std::move(d));
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& d : corpus)
    out << json{{"id", d.id}, {"text", d.text}, {"labels", d.labels}}.dump() << '\n';
}

CorpusSplits load_splits(const std::filesystem::path& dir) {
  CorpusSplits s;
  s.train = load_corpus(dir / "train.jsonl");
  s.valid = load_corpus(dir / "valid.jsonl");
  s.test = load_corpus(dir / "test.jsonl");
  return s;
}

// ----------------------------------------------------------------- generator

SyntheticCorpus generate_synthetic(const SynthConfig& c) {
  if (c.num_labels < 2) throw ConfigError("num_labels must be >= 2");
  if (!(c.cardinality_mean > 0)) throw ConfigError("cardinality_mean must be > 0");
  if (c.signal_tokens_per_label == 0) throw ConfigError("signal_tokens_per_label must be >= 1");
  if (c.sentence_len == 0 || c.doc_sentences == 0)
    throw ConfigError("doc_sentences and sentence_len must be >= 1");
  if (2 * c.cooccurrence_pairs > c.num_labels)
    throw ConfigError("cooccurrence_pairs needs 2 labels per pair, only " +
                      std::to_string(c.num_labels) + " labels");
  if (c.pair_probability < 0 || c.pair_probability > 1)
    throw ConfigError("pair_probability must lie in [0, 1]");
  const std::size_t signal_budget = c.num_labels * c.signal_tokens_per_label;
  if (signal_budget >= c.vocab_size)
    throw ConfigError("vocab_size " + std::to_string(c.vocab_size) +
                      " leaves no background tokens after " + std::to_string(signal_budget) +
                      " signal tokens");

  std::mt19937_64 rng(c.seed);
  SyntheticCorpus out;
  const std::size_t width = std::max<std::size_t>(2, std::to_string(c.num_labels - 1).size());
  for (std::size_t l = 0; l < c.num_labels; ++l) {
    out.labels.push_back("c" + zero_pad(l, width));
    for (std::size_t j = 0; j < c.signal_tokens_per_label; ++j)
      out.signal_tokens[out.labels.back()].push_back("s" + zero_pad(l, width) + "x" +
                                                     std::to_string(j));
  }
  const std::size_t n_background = c.vocab_size - signal_budget;
  std::vector<std::string> background;
  std::vector<double> bg_weight;
  const std::size_t bg_width = std::to_string(n_background).size();
  for (std::size_t i = 0; i < n_background; ++i) {
    background.push_back("w" + zero_pad(i, bg_width));
    bg_weight.push_back(1.0 / static_cast<double>(i + 1));
  }
  std::discrete_distribution<std::size_t> bg_dist(bg_weight.begin(), bg_weight.end());

  std::vector<std::size_t> perm(c.num_labels);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> partner(c.num_labels, -1);
  for (std::size_t p = 0; p < c.cooccurrence_pairs; ++p) {
    const std::size_t a = std::min(perm[2 * p], perm[2 * p + 1]);
    const std::size_t b = std::max(perm[2 * p], perm[2 * p + 1]);
    partner[a] = static_cast<int>(b), partner[b] = static_cast<int>(a);
    out.pairs.emplace_back(out.labels[a], out.labels[b]);
  }
  std::sort(out.pairs.begin(), out.pairs.end());

  std::vector<double> label_weight(c.num_labels);
  for (std::size_t l = 0; l < c.num_labels; ++l)
    label_weight[l] = std::pow(static_cast<double>(l + 1), -c.label_skew);

  const bool at_least_one = c.cardinality_mean >= 1;
  std::poisson_distribution<int> extra(at_least_one ? c.cardinality_mean - 1 : c.cardinality_mean);
  std::uniform_real_distribution<double> unit(0, 1);
  const std::size_t min_sent = (c.doc_sentences + 1) / 2;
  std::uniform_int_distribution<std::size_t> n_sent(min_sent, c.doc_sentences);

  auto make_doc = [&](const std::string& id) {
    std::size_t k = static_cast<std::size_t>(extra(rng)) + (at_least_one ? 1 : 0);
    k = std::min(k, c.num_labels);
    std::vector<bool> chosen(c.num_labels, false);
    std::vector<std::size_t> picked;
    while (picked.size() < k) {
      std::vector<double> w = label_weight;
      for (std::size_t l = 0; l < c.num_labels; ++l)
        if (chosen[l]) w[l] = 0;
      std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
      const std::size_t a = pick(rng);
      chosen[a] = true;
      picked.push_back(a);
      const int b = partner[a];
      if (b >= 0 && !chosen[b] && picked.size() < k && unit(rng) < c.pair_probability) {
        chosen[b] = true;
        picked.push_back(static_cast<std::size_t>(b));
      }
    }
    std::sort(picked.begin(), picked.end());

    const std::size_t m = n_sent(rng);
    std::vector<std::vector<std::string>> sents(m, std::vector<std::string>(c.sentence_len));
    for (auto& s : sents)
      for (auto& tok : s) tok = background[bg_dist(rng)];
    if (picked.size() > m * c.sentence_len)
      throw ConfigError("document too short to plant " + std::to_string(picked.size()) + " signals");
    std::set<std::pair<std::size_t, std::size_t>> used;
    std::uniform_int_distribution<std::size_t> pick_sent(0, m - 1), pick_tok(0, c.sentence_len - 1);
    RawDocument d;
    d.id = id;
    for (std::size_t l : picked) {
      const auto& lab = out.labels[l];
      const auto& toks = out.signal_tokens[lab];
      const std::string& sig = toks[std::uniform_int_distribution<std::size_t>(0, toks.size() - 1)(rng)];
      std::pair<std::size_t, std::size_t> site;
      do site = {pick_sent(rng), pick_tok(rng)};
      while (!used.insert(site).second);
      sents[site.first][site.second] = sig;
      out.provenance[id][lab].push_back({site.first, site.second});
      d.labels.push_back(lab);
    }
    if (picked.empty()) out.provenance[id];
    std::string text;
    for (std::size_t s = 0; s < m; ++s) {
      for (std::size_t t = 0; t < c.sentence_len; ++t) {
        if (t) text += ' ';
        text += sents[s][t];
      }
      text += s + 1 < m ? ". " : ".";
    }
    d.text = std::move(text);
    return d;
  };

  const std::size_t id_width = std::to_string(std::max({c.num_docs, c.num_valid, c.num_test})).size();
  for (std::size_t i = 0; i < c.num_docs; ++i)
    out.splits.train.push_back(make_doc("train-" + zero_pad(i, id_width)));
  for (std::size_t i = 0; i < c.num_valid; ++i)
    out.splits.valid.push_back(make_doc("valid-" + zero_pad(i, id_width)));
  for (std::size_t i = 0; i < c.num_test; ++i)
    out.splits.test.push_back(make_doc("test-" + zero_pad(i, id_width)));
  return out;
}

void save_synthetic(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_corpus(corpus.splits.train, dir / "train.jsonl");
  save_corpus(corpus.splits.valid, dir / "valid.jsonl");
  save_corpus(corpus.splits.test, dir / "test.jsonl");
  {
    auto out = open_out(dir / "provenance.jsonl");
    for (const auto& [id, by_label] : corpus.provenance) {
      json sig = json::object();
      for (const auto& [label, sites] : by_label) {
        json arr = json::array();
        for (const auto& s : sites) arr.push_back({s.sentence, s.token});
        sig[label] = arr;
      }
      out << json{{"id", id}, {"signals", sig}}.dump() << '\n';
    }
  }
  json meta{{"labels", corpus.labels}, {"signal_tokens", corpus.signal_tokens}};
  json pairs = json::array();
  for (const auto& [a, b] : corpus.pairs) pairs.push_back({a, b});
  meta["pairs"] = pairs;
  auto out = open_out(dir / "synth_meta.json");
  out << meta.dump(2) << '\n';
}

Provenance load_provenance(const std::filesystem::path& path) {
  auto in = open_in(path);
  Provenance p;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      auto& entry = p[j.at("id").get<std::string>()];
      for (const auto& [label, sites] : j.at("signals").items())
        for (const auto& s : sites) entry[label].push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
    } catch (const json::exception& ex) {
      throw DataError(path.string() + ": " + ex.what());
    }
  }
  return p;
}

}  // namespace hlan
