#pragma once

#include "vslam/features.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace vslam {

// Sparse bag-of-words vector: word id -> TF-IDF weight, L1-normalized.
using BowVector = std::map<int, double>;

// Hierarchical bag-of-binary-words vocabulary. Internal nodes carry cluster
// centers (bitwise majority of their members); leaves are the words and carry
// IDF weights from the training corpus.
class Vocabulary {
 public:
  Vocabulary() = default;

  // k-medians (bitwise-majority centers under Hamming distance) tree over the
  // training corpus. Each inner vector is one document for the IDF statistics.
  static Vocabulary train(const std::vector<std::vector<Descriptor>>& documents,
                          int branching = 10, int depth = 3,
                          std::uint64_t seed = 0);

  bool empty() const { return nodes_.empty(); }
  int branching() const { return branching_; }
  int depth() const { return depth_; }
  int num_words() const { return num_words_; }

  // Word id of one descriptor (tree descent by minimal Hamming distance).
  int word_id(const Descriptor& d) const;

  BowVector transform(const std::vector<Descriptor>& descriptors) const;

  // L1 similarity in [0, 1]: 1 - 0.5 * || a - b ||_1 on normalized vectors.
  static double similarity(const BowVector& a, const BowVector& b);

  // Versioned little-endian binary file. Throws std::runtime_error on I/O or
  // format problems.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  struct Node {
    std::uint32_t parent = 0;
    std::uint8_t is_leaf = 0;
    Descriptor center;
    double weight = 0.0;  // IDF, leaves only
    std::vector<std::uint32_t> children;  // rebuilt, not serialized
    int word = -1;                        // leaf word id, rebuilt
  };

  void rebuild_links();

  std::vector<Node> nodes_;
  int branching_ = 0;
  int depth_ = 0;
  int num_words_ = 0;
};

}  // namespace vslam
