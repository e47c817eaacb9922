#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hlan/tensor.hpp"

namespace hlan {

struct RawDocument {
  std::string id;
  std::string text;
  std::vector<std::string> labels;

  bool operator==(const RawDocument&) const = default;
};

using Corpus = std::vector<RawDocument>;

struct CorpusSplits {
  Corpus train, valid, test;
};

using TokenList = std::vector<std::string>;

// Replacement for pure digit runs.
inline constexpr std::string_view kNumToken = "NUM";

// Lowercases, splits on runs of non-alphanumeric ASCII characters and maps
// digit-only tokens to NUM.
TokenList tokenize(std::string_view text);

enum class SegmentMode { chunk, rule };

SegmentMode parse_segment_mode(const std::string& s);
std::string to_string(SegmentMode m);

// chunk: consecutive windows of `chunk_len` tokens.
// rule: split on '.', '!' or '?' followed by whitespace or end of text, and on
// blank lines; empty sentences are dropped.
std::vector<TokenList> segment(std::string_view text, SegmentMode mode, std::size_t chunk_len);
std::vector<TokenList> segment_tokens(const TokenList& tokens, std::size_t chunk_len);

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;

  Vocabulary();

  // Tokens with frequency >= min_count, ordered by (frequency desc, token asc).
  static Vocabulary build(const std::vector<TokenList>& sequences, std::size_t min_count);
  static Vocabulary build(const Corpus& corpus, std::size_t min_count);

  std::int32_t index(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  const std::string& token(std::int32_t idx) const { return tokens_.at(idx); }
  std::size_t count(std::int32_t idx) const { return counts_.at(idx); }
  std::size_t size() const { return tokens_.size(); }
  std::size_t min_count() const { return min_count_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // `token<TAB>index<TAB>count` per line, specials included.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  // FNV-1a over the token list in index order.
  std::uint64_t hash() const;

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_ && counts_ == o.counts_; }

 private:
  std::vector<std::string> tokens_;
  std::vector<std::size_t> counts_;
  std::unordered_map<std::string, std::int32_t> index_;
  std::size_t min_count_ = 0;
};

// Lexicographically ordered label set; defines multi-hot positions.
class LabelUniverse {
 public:
  LabelUniverse() = default;
  explicit LabelUniverse(std::vector<std::string> labels);
  static LabelUniverse from_corpora(std::initializer_list<const Corpus*> corpora);

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& label(std::size_t i) const { return labels_.at(i); }
  // -1 when absent.
  int find(const std::string& label) const;

  bool operator==(const LabelUniverse& o) const { return labels_ == o.labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, int> index_;
};

struct EncodeConfig {
  std::size_t sentences = 100;       // n
  std::size_t sentence_len = 25;     // n_t
  SegmentMode mode = SegmentMode::chunk;
};

struct EncodedDocument {
  std::string id;
  std::size_t sentences = 0, sentence_len = 0;
  std::vector<std::int32_t> grid;         // n * n_t, PAD where masked
  std::vector<std::uint8_t> token_mask;   // n * n_t
  std::vector<std::uint8_t> sentence_mask;  // n
  std::vector<std::string> tokens;        // surface tokens, "" where masked
  Tensor target;                          // [|Y|] multi-hot

  std::size_t unmasked_tokens() const;
  std::vector<std::size_t> label_indices() const;
};

// Segments, maps to indices (UNK fallback), keeps the document head when
// truncating, and pads with PAD.
EncodedDocument encode(const RawDocument& doc, const Vocabulary& vocab, const LabelUniverse& labels,
                       const EncodeConfig& config);
std::vector<EncodedDocument> encode_all(const Corpus& corpus, const Vocabulary& vocab,
                                        const LabelUniverse& labels, const EncodeConfig& config);

// Newline-delimited JSON records with keys "id", "text", "labels".
Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
CorpusSplits load_splits(const std::filesystem::path& dir);

struct SynthConfig {
  std::size_t num_labels = 20;
  std::size_t num_docs = 2000;  // training documents
  std::size_t num_valid = 200;
  std::size_t num_test = 200;
  double cardinality_mean = 1.08;
  std::size_t vocab_size = 2000;
  std::size_t signal_tokens_per_label = 3;
  std::size_t cooccurrence_pairs = 0;
  double pair_probability = 0.9;  // chance a sampled paired label pulls in its partner
  double label_skew = 0.5;        // label frequency ~ rank^-skew
  std::size_t doc_sentences = 8;  // maximum; each document draws from [ceil(max/2), max]
  std::size_t sentence_len = 25;
  std::uint64_t seed = 13;
};

// Where a label's signal token was planted: sentence and token position in the
// generated text, which chunk segmentation with n_t == sentence_len and rule
// segmentation both reproduce.
struct SignalSite {
  std::size_t sentence = 0, token = 0;
  bool operator==(const SignalSite&) const = default;
};

using Provenance = std::map<std::string, std::map<std::string, std::vector<SignalSite>>>;

struct SyntheticCorpus {
  CorpusSplits splits;
  Provenance provenance;  // doc id -> label -> sites
  std::vector<std::string> labels;
  std::vector<std::pair<std::string, std::string>> pairs;
  std::map<std::string, std::vector<std::string>> signal_tokens;  // label -> tokens
};

SyntheticCorpus generate_synthetic(const SynthConfig& config);

// Writes train/valid/test.jsonl, provenance.jsonl and synth_meta.json.
void save_synthetic(const SyntheticCorpus& corpus, const std::filesystem::path& dir);
Provenance load_provenance(const std::filesystem::path& path);

}  // namespace hlan
