#include "vslam/bow.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace vslam {

namespace {

constexpr char kMagic[8] = {'V', 'S', 'B', 'O', 'W', '\0', '\0', '\0'};
constexpr std::uint32_t kVersion = 1;

Descriptor bitwise_majority(const std::vector<const Descriptor*>& members) {
  Descriptor out;
  if (members.empty()) return out;
  for (int bit = 0; bit < 256; ++bit) {
    int ones = 0;
    for (const Descriptor* d : members) {
      ones += static_cast<int>((d->words[bit >> 6] >> (bit & 63)) & 1u);
    }
    if (2 * ones > static_cast<int>(members.size())) {
      out.words[bit >> 6] |= std::uint64_t(1) << (bit & 63);
    }
  }
  return out;
}

// Plain k-medians over Hamming space. Returns cluster centers; empty clusters
// are dropped.
std::vector<Descriptor> cluster_k_medians(const std::vector<const Descriptor*>& data,
                                          int k, std::mt19937_64& rng) {
  std::vector<Descriptor> centers;
  if (static_cast<int>(data.size()) <= k) {
    for (const Descriptor* d : data) {
      if (std::find(centers.begin(), centers.end(), *d) == centers.end()) centers.push_back(*d);
    }
    return centers;
  }
  // Distinct random seeds.
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  for (std::size_t i = 0; i < idx.size() && static_cast<int>(centers.size()) < k; ++i) {
    const Descriptor& d = *data[idx[i]];
    if (std::find(centers.begin(), centers.end(), d) == centers.end()) centers.push_back(d);
  }

  std::vector<int> assign(data.size(), 0);
  for (int iter = 0; iter < 10; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < data.size(); ++i) {
      int best = 0, best_d = hamming(*data[i], centers[0]);
      for (std::size_t c = 1; c < centers.size(); ++c) {
        const int d = hamming(*data[i], centers[c]);
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(c);
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    for (std::size_t c = 0; c < centers.size(); ++c) {
      std::vector<const Descriptor*> members;
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (assign[i] == static_cast<int>(c)) members.push_back(data[i]);
      }
      if (!members.empty()) centers[c] = bitwise_majority(members);
    }
  }
  // Drop empty clusters.
  std::vector<bool> used(centers.size(), false);
  for (std::size_t i = 0; i < data.size(); ++i) used[assign[i]] = true;
  std::vector<Descriptor> kept;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    if (used[c]) kept.push_back(centers[c]);
  }
  return kept;
}

template <typename T>
void put(std::ofstream& os, const T& v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

Vocabulary Vocabulary::train(const std::vector<std::vector<Descriptor>>& documents,
                             int branching, int depth, std::uint64_t seed) {
  if (branching < 2 || depth < 1) throw std::invalid_argument("vocabulary: bad shape");
  Vocabulary voc;
  voc.branching_ = branching;
  voc.depth_ = depth;

  std::vector<const Descriptor*> all;
  for (const auto& doc : documents) {
    for (const auto& d : doc) all.push_back(&d);
  }
  if (all.empty()) throw std::invalid_argument("vocabulary: empty training set");

  std::mt19937_64 rng(seed);
  voc.nodes_.push_back(Node{});  // root

  struct WorkItem {
    std::uint32_t node;
    std::vector<const Descriptor*> data;
    int level;
  };
  std::vector<WorkItem> stack = {{0, std::move(all), 0}};
  while (!stack.empty()) {
    WorkItem item = std::move(stack.back());
    stack.pop_back();
    if (item.level == depth || item.data.size() <= 1) {
      voc.nodes_[item.node].is_leaf = 1;
      continue;
    }
    const auto centers = cluster_k_medians(item.data, branching, rng);
    if (centers.size() <= 1) {
      voc.nodes_[item.node].is_leaf = 1;
      continue;
    }
    for (const Descriptor& c : centers) {
      Node child;
      child.parent = item.node;
      child.center = c;
      voc.nodes_.push_back(child);
    }
    const std::uint32_t first = static_cast<std::uint32_t>(voc.nodes_.size() - centers.size());
    // Partition the data among the children.
    std::vector<std::vector<const Descriptor*>> parts(centers.size());
    for (const Descriptor* d : item.data) {
      int best = 0, best_d = hamming(*d, centers[0]);
      for (std::size_t c = 1; c < centers.size(); ++c) {
        const int dist = hamming(*d, centers[c]);
        if (dist < best_d) {
          best_d = dist;
          best = static_cast<int>(c);
        }
      }
      parts[best].push_back(d);
    }
    for (std::size_t c = 0; c < centers.size(); ++c) {
      stack.push_back({first + static_cast<std::uint32_t>(c), std::move(parts[c]), item.level + 1});
    }
  }
  voc.rebuild_links();

  // IDF from document frequencies.
  std::map<int, int> doc_freq;
  for (const auto& doc : documents) {
    std::map<int, bool> seen;
    for (const auto& d : doc) seen[voc.word_id(d)] = true;
    for (const auto& [w, _] : seen) ++doc_freq[w];
  }
  const double n_docs = static_cast<double>(documents.size());
  for (auto& node : voc.nodes_) {
    if (!node.is_leaf) continue;
    const auto it = doc_freq.find(node.word);
    const double df = it == doc_freq.end() ? 0.0 : static_cast<double>(it->second);
    node.weight = std::log(n_docs / (1.0 + df)) + 1.0;  // smoothed, > 0
  }
  return voc;
}

void Vocabulary::rebuild_links() {
  num_words_ = 0;
  for (auto& n : nodes_) {
    n.children.clear();
    n.word = -1;
  }
  for (std::uint32_t i = 1; i < nodes_.size(); ++i) {
    nodes_[nodes_[i].parent].children.push_back(i);
  }
  for (auto& n : nodes_) {
    if (n.is_leaf) n.word = num_words_++;
  }
}

int Vocabulary::word_id(const Descriptor& d) const {
  if (nodes_.empty()) throw std::logic_error("vocabulary: empty");
  std::uint32_t node = 0;
  while (!nodes_[node].is_leaf) {
    const auto& children = nodes_[node].children;
    std::uint32_t best = children[0];
    int best_d = hamming(d, nodes_[children[0]].center);
    for (std::size_t c = 1; c < children.size(); ++c) {
      const int dist = hamming(d, nodes_[children[c]].center);
      if (dist < best_d) {
        best_d = dist;
        best = children[c];
      }
    }
    node = best;
  }
  return nodes_[node].word;
}

BowVector Vocabulary::transform(const std::vector<Descriptor>& descriptors) const {
  BowVector v;
  if (descriptors.empty()) return v;
  std::map<int, int> counts;
  std::map<int, double> weights;
  for (const auto& d : descriptors) {
    std::uint32_t node = 0;
    while (!nodes_[node].is_leaf) {
      const auto& children = nodes_[node].children;
      std::uint32_t best = children[0];
      int best_d = hamming(d, nodes_[children[0]].center);
      for (std::size_t c = 1; c < children.size(); ++c) {
        const int dist = hamming(d, nodes_[children[c]].center);
        if (dist < best_d) {
          best_d = dist;
          best = children[c];
        }
      }
      node = best;
    }
    ++counts[nodes_[node].word];
    weights[nodes_[node].word] = nodes_[node].weight;
  }
  double norm = 0.0;
  for (const auto& [w, c] : counts) {
    const double val = c * weights[w];
    v[w] = val;
    norm += std::abs(val);
  }
  if (norm > 0.0) {
    for (auto& [w, val] : v) val /= norm;
  }
  return v;
}

double Vocabulary::similarity(const BowVector& a, const BowVector& b) {
  // 1 - 0.5 * sum |a_i - b_i| over the union of words.
  double l1 = 0.0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() || ib != b.end()) {
    if (ib == b.end() || (ia != a.end() && ia->first < ib->first)) {
      l1 += std::abs(ia->second);
      ++ia;
    } else if (ia == a.end() || ib->first < ia->first) {
      l1 += std::abs(ib->second);
      ++ib;
    } else {
      l1 += std::abs(ia->second - ib->second);
      ++ia;
      ++ib;
    }
  }
  return 1.0 - 0.5 * l1;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("vocabulary: cannot open for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(branching_));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(depth_));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(nodes_.size()));
  for (const auto& n : nodes_) {
    put<std::uint32_t>(os, n.parent);
    put<std::uint8_t>(os, n.is_leaf);
    const auto bytes = n.center.to_bytes();
    os.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    put<double>(os, n.weight);
  }
  if (!os) throw std::runtime_error("vocabulary: write failed: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("vocabulary: cannot open: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("vocabulary: bad magic in " + path);
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kVersion) {
    throw std::runtime_error("vocabulary: unsupported version " + std::to_string(version));
  }
  Vocabulary voc;
  voc.branching_ = static_cast<int>(get<std::uint32_t>(is));
  voc.depth_ = static_cast<int>(get<std::uint32_t>(is));
  const auto count = get<std::uint32_t>(is);
  voc.nodes_.resize(count);
  for (auto& n : voc.nodes_) {
    n.parent = get<std::uint32_t>(is);
    n.is_leaf = get<std::uint8_t>(is);
    std::array<std::uint8_t, 32> bytes;
    is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    n.center = Descriptor::from_bytes(bytes);
    n.weight = get<double>(is);
  }
  if (!is) throw std::runtime_error("vocabulary: truncated file: " + path);
  for (std::uint32_t i = 1; i < count; ++i) {
    if (voc.nodes_[i].parent >= i) throw std::runtime_error("vocabulary: malformed tree");
  }
  voc.rebuild_links();
  return voc;
}

}  // namespace vslam
