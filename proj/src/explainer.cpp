#include "hlan/explainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hlan/config.hpp"

namespace hlan {

WeightedScores sentence_weighted_scores(const AttentionRecord& r, double mu) {
  if (!(mu > 0)) throw ConfigError("mu must be > 0");
  WeightedScores w;
  w.labels = std::max(r.word_contexts, r.sent_contexts);
  w.sentences = r.sentences, w.sentence_len = r.sentence_len;
  w.values.assign(w.labels * w.sentences * w.sentence_len, 0);
  for (std::size_t l = 0; l < w.labels; ++l)
    for (std::size_t s = 0; s < w.sentences; ++s) {
      const double as = r.sentence(l, s);
      for (std::size_t t = 0; t < w.sentence_len; ++t)
        w.values[(l * w.sentences + s) * w.sentence_len + t] =
            static_cast<real>(std::min(1.0, mu * as * static_cast<double>(r.word(l, s, t))));
    }
  return w;
}

namespace {

std::string sentence_text(const EncodedDocument& doc, std::size_t s) {
  std::string out;
  for (std::size_t t = 0; t < doc.sentence_len; ++t) {
    if (!doc.token_mask[s * doc.sentence_len + t]) continue;
    if (!out.empty()) out += ' ';
    out += doc.tokens[s * doc.sentence_len + t];
  }
  return out;
}

void check_threshold(double v, const char* what) {
  if (!(v > 0 && v < 1)) throw ConfigError(std::string(what) + " must lie in (0, 1), got " + std::to_string(v));
}

}  // namespace

std::vector<Highlight> select_highlights(const AttentionRecord& r, const EncodedDocument& doc,
                                         const std::vector<std::size_t>& label_indices,
                                         const std::vector<std::string>& names, const HighlightOptions& o) {
  check_threshold(o.sentence_threshold, "sentence threshold");
  check_threshold(o.word_threshold, "word threshold");
  if (doc.sentences != r.sentences || doc.sentence_len != r.sentence_len)
    throw DimensionError("highlights: document '" + doc.id + "' does not match its attention record");
  const WeightedScores w = sentence_weighted_scores(r, o.mu);
  std::vector<Highlight> out;
  for (std::size_t l : label_indices) {
    if (l >= names.size()) throw DataError("highlights: label index " + std::to_string(l) + " has no name");
    const std::size_t row = w.labels == 1 ? 0 : l;
    Highlight h;
    h.doc_id = doc.id, h.label_index = l, h.label = names[l];
    for (std::size_t s = 0; s < r.sentences; ++s) {
      if (!r.sentence_mask[s]) continue;
      const double as = r.sentence(l, s);
      if (!(as > o.sentence_threshold)) continue;
      h.sentences.push_back({s, as, sentence_text(doc, s)});
      for (std::size_t t = 0; t < r.sentence_len; ++t) {
        if (!r.token_mask[s * r.sentence_len + t]) continue;
        const double raw = r.word(l, s, t), weighted = w.at(row, s, t);
        const double basis = o.word_basis == WordBasis::raw ? raw : weighted;
        if (basis > o.word_threshold) h.words.push_back({s, t, raw, weighted, doc.tokens[s * r.sentence_len + t]});
      }
    }
    out.push_back(std::move(h));
  }
  return out;
}

void write_structured(const std::vector<Highlight>& hs, std::ostream& out) {
  for (const Highlight& h : hs) {
    const json base{{"doc", h.doc_id}, {"label", h.label}, {"label_index", h.label_index}};
    for (const SentenceHit& s : h.sentences) {
      json j = base;
      j["kind"] = "sentence", j["sentence"] = s.sentence, j["score"] = s.score, j["text"] = s.text;
      out << j.dump() << '\n';
    }
    for (const WordHit& w : h.words) {
      json j = base;
      j["kind"] = "word", j["sentence"] = w.sentence, j["token"] = w.token;
      j["score"] = w.score, j["weighted"] = w.weighted, j["text"] = w.text;
      out << j.dump() << '\n';
    }
  }
}

void write_structured(const std::vector<Highlight>& hs, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_structured(hs, out);
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<Highlight> read_structured(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Highlight> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const std::string doc = j.at("doc"), label = j.at("label"), kind = j.at("kind");
      const std::size_t li = j.at("label_index");
      if (out.empty() || out.back().doc_id != doc || out.back().label_index != li) {
        out.push_back({});
        out.back().doc_id = doc, out.back().label_index = li, out.back().label = label;
      }
      Highlight& h = out.back();
      if (kind == "sentence")
        h.sentences.push_back({j.at("sentence"), j.at("score"), j.at("text")});
      else if (kind == "word")
        h.words.push_back({j.at("sentence"), j.at("token"), j.at("score"), j.at("weighted"), j.at("text")});
      else
        throw DataError("unknown kind '" + kind + "'");
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(no) + ": " + e.what());
    }
  }
  return out;
}

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Linear light -> saturated.
std::string shade(double score, const char* rgb) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "background:rgba(%s,%.3f)", rgb, std::clamp(score, 0.0, 1.0));
  return buf;
}

}  // namespace

std::string render_visual(const EncodedDocument& doc, const AttentionRecord& r, const std::vector<Highlight>& hs,
                          const VisualOptions& o) {
  const WeightedScores w = sentence_weighted_scores(r, o.mu);
  const std::size_t shown = o.compact ? std::min(o.compact_tokens, doc.sentence_len) : doc.sentence_len;
  std::ostringstream html;
  html << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" << escape(doc.id) << "</title>\n"
       << "<style>body{font-family:sans-serif;font-size:14px}table{border-collapse:collapse;margin-bottom:1.5em}"
          "td{padding:2px 6px;vertical-align:top}td.s{font-family:monospace;text-align:right}"
          "span.t{padding:0 2px;margin:0 1px}</style></head><body>\n"
       << "<h1>" << escape(doc.id) << "</h1>\n";
  if (hs.empty()) {
    html << "<table>\n";
    for (std::size_t s = 0; s < doc.sentences; ++s) {
      if (!doc.sentence_mask[s]) continue;
      html << "<tr><td>";
      for (std::size_t t = 0; t < shown; ++t)
        if (doc.token_mask[s * doc.sentence_len + t])
          html << "<span class=\"t\">" << escape(doc.tokens[s * doc.sentence_len + t]) << "</span>";
      html << "</td></tr>\n";
    }
    html << "</table>\n";
  }
  for (const Highlight& h : hs) {
    const std::size_t row = w.labels == 1 ? 0 : h.label_index;
    html << "<h2>" << escape(h.label) << "</h2>\n<table>\n<tr><th>sentence score</th><th>text</th></tr>\n";
    for (std::size_t s = 0; s < doc.sentences; ++s) {
      if (!doc.sentence_mask[s]) continue;
      const double as = r.sentence(h.label_index, s);
      char num[32];
      std::snprintf(num, sizeof num, "%.3f", as);
      html << "<tr><td class=\"s\" style=\"" << shade(as, "70,110,220") << "\">" << num << "</td><td>";
      for (std::size_t t = 0; t < shown; ++t) {
        const std::size_t i = s * doc.sentence_len + t;
        if (!doc.token_mask[i]) continue;
        const double a = w.at(row, s, t);
        html << "<span class=\"t\" title=\"" << a << "\" style=\"" << shade(a, "230,60,50") << "\">"
             << escape(doc.tokens[i]) << "</span>";
      }
      html << "</td></tr>\n";
    }
    html << "</table>\n";
  }
  html << "</body></html>\n";
  return html.str();
}

void write_visual(const EncodedDocument& doc, const AttentionRecord& r, const std::vector<Highlight>& hs,
                  const std::filesystem::path& path, const VisualOptions& o) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << render_visual(doc, r, hs, o);
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace hlan
