#include "hlan/config.hpp"

#include <algorithm>
#include <fstream>

namespace hlan {

namespace detail {

FieldReader::FieldReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
  if (!j_.is_object()) throw ConfigError(where_ + ": expected an object, got " + j_.dump());
}

void FieldReader::finish() const {
  for (const auto& [key, value] : j_.items())
    if (std::find(seen_.begin(), seen_.end(), key) == seen_.end())
      throw ConfigError(where_ + ": unknown field '" + key + "'");
}

}  // namespace detail

json to_json(const ModelConfig& c) {
  return {{"num_labels", c.num_labels}, {"vocab_size", c.vocab_size}, {"d_e", c.d_e},
          {"d_h", c.d_h},               {"d_w", c.word_ctx_dim()},    {"d_s", c.sent_ctx_dim()},
          {"sentences", c.sentences},   {"sentence_len", c.sentence_len},
          {"variant", to_string(c.variant)},
          {"le_init", c.le_init},       {"threshold", c.threshold},
          {"dropout", c.dropout}};
}

void update_from_json(ModelConfig& c, const json& j, const std::string& where) {
  detail::FieldReader r(j, where);
  r.field("num_labels", c.num_labels)
      .field("vocab_size", c.vocab_size)
      .field("d_e", c.d_e)
      .field("d_h", c.d_h)
      .field("d_w", c.d_w)
      .field("d_s", c.d_s)
      .field("sentences", c.sentences)
      .field("sentence_len", c.sentence_len)
      .custom("variant",
              [&](const json& v, const std::string& at) {
                if (!v.is_string()) throw ConfigError(at + ": expected a string");
                c.variant = parse_variant(v.get<std::string>());
              })
      .field("le_init", c.le_init)
      .field("threshold", c.threshold)
      .field("dropout", c.dropout)
      .finish();
}

json to_json(const SynthConfig& c) {
  return {{"num_labels", c.num_labels},
          {"num_docs", c.num_docs},
          {"num_valid", c.num_valid},
          {"num_test", c.num_test},
          {"cardinality_mean", c.cardinality_mean},
          {"vocab_size", c.vocab_size},
          {"signal_tokens_per_label", c.signal_tokens_per_label},
          {"cooccurrence_pairs", c.cooccurrence_pairs},
          {"pair_probability", c.pair_probability},
          {"label_skew", c.label_skew},
          {"doc_sentences", c.doc_sentences},
          {"sentence_len", c.sentence_len},
          {"seed", c.seed}};
}

void update_from_json(SynthConfig& c, const json& j, const std::string& where) {
  detail::FieldReader(j, where)
      .field("num_labels", c.num_labels)
      .field("num_docs", c.num_docs)
      .field("num_valid", c.num_valid)
      .field("num_test", c.num_test)
      .field("cardinality_mean", c.cardinality_mean)
      .field("vocab_size", c.vocab_size)
      .field("signal_tokens_per_label", c.signal_tokens_per_label)
      .field("cooccurrence_pairs", c.cooccurrence_pairs)
      .field("pair_probability", c.pair_probability)
      .field("label_skew", c.label_skew)
      .field("doc_sentences", c.doc_sentences)
      .field("sentence_len", c.sentence_len)
      .field("seed", c.seed)
      .finish();
}

json to_json(const CbowConfig& c) {
  return {{"dim", c.dim},
          {"window", c.window},
          {"min_count", c.min_count},
          {"negatives", c.negatives},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"min_learning_rate", c.min_learning_rate},
          {"shuffle_within", c.shuffle_within},
          {"seed", c.seed}};
}

void update_from_json(CbowConfig& c, const json& j, const std::string& where) {
  detail::FieldReader(j, where)
      .field("dim", c.dim)
      .field("window", c.window)
      .field("min_count", c.min_count)
      .field("negatives", c.negatives)
      .field("epochs", c.epochs)
      .field("learning_rate", c.learning_rate)
      .field("min_learning_rate", c.min_learning_rate)
      .field("shuffle_within", c.shuffle_within)
      .field("seed", c.seed)
      .finish();
}

json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"l2_lambda", c.l2_lambda},
          {"clip_norm", c.clip_norm},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"early_stop_metric", to_string(c.early_stop_metric)},
          {"k", c.k},
          {"seed", c.seed},
          {"threads", c.threads}};
}

void update_from_json(TrainConfig& c, const json& j, const std::string& where) {
  detail::FieldReader(j, where)
      .field("batch_size", c.batch_size)
      .field("learning_rate", c.learning_rate)
      .field("beta1", c.beta1)
      .field("beta2", c.beta2)
      .field("epsilon", c.epsilon)
      .field("l2_lambda", c.l2_lambda)
      .field("clip_norm", c.clip_norm)
      .field("max_epochs", c.max_epochs)
      .field("patience", c.patience)
      .custom("early_stop_metric",
              [&](const json& v, const std::string& at) {
                if (!v.is_string()) throw ConfigError(at + ": expected a string");
                c.early_stop_metric = parse_stop_metric(v.get<std::string>());
              })
      .field("k", c.k)
      .field("seed", c.seed)
      .field("threads", c.threads)
      .finish();
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace hlan
