#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hlan/model.hpp"

namespace hlan {

// alpha~ = min(1, mu * alpha_s * alpha_w) per label, sentence and token.
struct WeightedScores {
  std::size_t labels = 0, sentences = 0, sentence_len = 0;
  std::vector<real> values;  // [labels][n][n_t]

  real at(std::size_t label, std::size_t s, std::size_t t) const {
    return values[(label * sentences + s) * sentence_len + t];
  }
};

inline constexpr double kDefaultMu = 5;

// One row per label the record distinguishes: |Y| unless both levels share a
// context (HAN), in which case a single row answers for every label.
WeightedScores sentence_weighted_scores(const AttentionRecord& record, double mu = kDefaultMu);

struct SentenceHit {
  std::size_t sentence = 0;
  double score = 0;  // alpha_s
  std::string text;
  bool operator==(const SentenceHit&) const = default;
};

struct WordHit {
  std::size_t sentence = 0, token = 0;
  double score = 0;     // raw alpha_w
  double weighted = 0;  // alpha~
  std::string text;
  bool operator==(const WordHit&) const = default;
};

struct Highlight {
  std::string doc_id;
  std::size_t label_index = 0;
  std::string label;
  std::vector<SentenceHit> sentences;
  std::vector<WordHit> words;
  bool operator==(const Highlight&) const = default;
};

enum class WordBasis { raw, weighted };

struct HighlightOptions {
  double sentence_threshold = 0.1;
  double word_threshold = 0.01;
  WordBasis word_basis = WordBasis::raw;  // which score the word threshold applies to
  double mu = kDefaultMu;
};

// For each requested label: sentences with alpha_s above the sentence
// threshold, and words of those sentences whose score (per word_basis) is
// above the word threshold. Thresholds must lie in (0, 1).
std::vector<Highlight> select_highlights(const AttentionRecord& record, const EncodedDocument& doc,
                                         const std::vector<std::size_t>& label_indices,
                                         const std::vector<std::string>& label_names,
                                         const HighlightOptions& options = {});

// Newline-delimited records, one per selected sentence or word:
//   {"doc", "label", "label_index", "kind": "sentence", "sentence", "score", "text"}
//   {"doc", "label", "label_index", "kind": "word", "sentence", "token", "score", "weighted", "text"}
// A highlight without sentences writes nothing.
void write_structured(const std::vector<Highlight>& highlights, std::ostream& out);
void write_structured(const std::vector<Highlight>& highlights, const std::filesystem::path& path);
std::vector<Highlight> read_structured(const std::filesystem::path& path);

struct VisualOptions {
  bool compact = true;  // show the first 11 tokens of each sentence
  std::size_t compact_tokens = 11;
  double mu = kDefaultMu;
};

// Self-contained HTML: for each highlighted label, one row per sentence with
// its alpha_s and the tokens shaded by alpha~. Without highlights the page
// shows the plain document text.
std::string render_visual(const EncodedDocument& doc, const AttentionRecord& record,
                          const std::vector<Highlight>& highlights, const VisualOptions& options = {});
void write_visual(const EncodedDocument& doc, const AttentionRecord& record, const std::vector<Highlight>& highlights,
                  const std::filesystem::path& path, const VisualOptions& options = {});

}  // namespace hlan
