#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hlan/tensor.hpp"

namespace hlan {

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::vector<std::string> items, Tensor vectors);

  std::size_t size() const { return items_.size(); }
  std::size_t dim() const { return vectors_.cols(); }
  bool normalized() const { return normalized_; }
  void set_normalized(bool v) { normalized_ = v; }

  const std::vector<std::string>& items() const { return items_; }
  const std::string& item(std::size_t i) const { return items_.at(i); }
  bool contains(const std::string& item) const { return index_.count(item) > 0; }
  // -1 when absent.
  int find(const std::string& item) const;
  const Tensor& vectors() const { return vectors_; }
  Tensor& vectors() { return vectors_; }
  std::span<const real> row(std::size_t i) const { return {vectors_.row(i), dim()}; }
  std::span<const real> row(const std::string& item) const;

  bool operator==(const EmbeddingTable& o) const {
    return items_ == o.items_ && vectors_ == o.vectors_;
  }

 private:
  std::vector<std::string> items_;
  std::unordered_map<std::string, int> index_;
  Tensor vectors_;
  bool normalized_ = false;
};

struct CbowConfig {
  std::size_t dim = 100;
  std::size_t window = 5;
  std::size_t min_count = 0;
  std::size_t negatives = 5;
  std::size_t epochs = 30;
  double learning_rate = 0.025;
  double min_learning_rate = 0.0001;
  // Shuffle every sequence before each epoch; used for unordered label sets.
  bool shuffle_within = false;
  std::uint64_t seed = 1;
};

// CBOW with negative sampling: the mean of the context vectors predicts the
// centre item against negatives drawn from unigram^0.75. A draw that hits the
// centre or any item of the current window is skipped. When `epoch_loss` is
// given it receives, after every epoch, the mean sampled objective over all
// training (context, centre) pairs with negatives fixed up front.
EmbeddingTable train_cbow(const std::vector<std::vector<std::string>>& sequences,
                          const CbowConfig& config, std::vector<double>* epoch_loss = nullptr);

EmbeddingTable normalize_unit(EmbeddingTable table);

double cosine(std::span<const real> a, std::span<const real> b);

// k nearest items by cosine, query excluded, ties by item ascending.
std::vector<std::pair<std::string, double>> top_k_similar(const EmbeddingTable& table,
                                                          const std::string& item, std::size_t k);

// Header `d<TAB>count`, then `item<TAB>v1 v2 ... vd`.
void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable load_embeddings(const std::filesystem::path& path);

}  // namespace hlan
