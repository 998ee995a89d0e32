#ifndef CEA_INDEX_HPP
#define CEA_INDEX_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cea/binary_io.hpp"
#include "cea/corpus.hpp"
#include "cea/encoder.hpp"
#include "cea/error.hpp"

namespace cea {

inline constexpr double kUnitNormTolerance = 1e-6;

inline std::span<const double> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

/// v / ||v||. Throws degenerate_norm for zero or non-finite input.
inline Vector normalize(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0) || !std::isfinite(norm)) fail(errc::degenerate_norm, "cannot normalize a zero or non-finite vector");
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i] / norm;
  return out;
}

inline Vector normalize(const Vector& v) { return normalize(as_span(v)); }

struct Neighbor {
  DocId id = 0;
  double l2_distance = 0.0;
  LabelId label = 0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct Prediction {
  LabelId label = 0;
  std::map<LabelId, std::size_t> votes;
  std::vector<Neighbor> neighbors;  // ascending distance
  std::size_t k = 0;
};

/// Unit-norm embedding rows with their doc ids and labels. Exact search by
/// brute-force scan; equal distances are ordered by insertion.
class EmbeddingIndex {
 public:
  EmbeddingIndex() = default;
  explicit EmbeddingIndex(std::size_t dim, LabelVocab vocab = {}) : dim_(dim), vocab_(std::move(vocab)) {
    if (dim == 0) fail(errc::config, "index dimension must be positive");
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }

  const LabelVocab& vocab() const { return vocab_; }
  /// Appends a class name to the vocabulary if new.
  LabelId intern_label(const std::string& name) { return vocab_.intern(name); }

  std::span<const double> row(std::size_t pos) const { return {rows_.data() + pos * dim_, dim_}; }
  DocId id_at(std::size_t pos) const { return ids_[pos]; }
  LabelId label_at(std::size_t pos) const { return labels_[pos]; }
  std::uint64_t insertion_at(std::size_t pos) const { return seq_[pos]; }
  const std::vector<DocId>& ids() const { return ids_; }
  const std::vector<LabelId>& labels() const { return labels_; }

  std::optional<std::size_t> position(DocId id) const {
    auto it = pos_.find(id);
    if (it == pos_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(DocId id) const { return pos_.count(id) != 0; }

  /// Normalizes and appends one row. No retraining is involved.
  void add(DocId id, std::span<const double> embedding, LabelId label) {
    if (embedding.size() != dim_)
      fail(errc::dimension_mismatch, "embedding dim " + std::to_string(embedding.size()) + " != index dim " + std::to_string(dim_));
    if (pos_.count(id)) fail(errc::duplicate_id, "document " + std::to_string(id) + " already indexed");
    if (!vocab_.contains(label)) fail(errc::config, "label id " + std::to_string(label) + " not in index vocabulary");
    const auto unit = normalize(embedding);
    append_row(id, as_span(unit), label, next_seq_);
  }

  void add(DocId id, const Vector& embedding, LabelId label) { add(id, as_span(embedding), label); }

  void relabel(DocId id, LabelId label) {
    auto it = pos_.find(id);
    if (it == pos_.end()) fail(errc::not_found, "document " + std::to_string(id) + " not indexed");
    if (!vocab_.contains(label)) fail(errc::config, "label id " + std::to_string(label) + " not in index vocabulary");
    labels_[it->second] = label;
  }

  /// k nearest rows to a unit-norm query, ascending L2 distance. `exclude`
  /// removes one row position from consideration (leave-one-out queries).
  std::vector<Neighbor> knn(std::span<const double> query, std::size_t k, std::optional<std::size_t> exclude = std::nullopt) const {
    if (query.size() != dim_)
      fail(errc::dimension_mismatch, "query dim " + std::to_string(query.size()) + " != index dim " + std::to_string(dim_));
    const std::size_t available = size() - (exclude && *exclude < size() ? 1 : 0);
    if (k < 1 || k > available)
      fail(errc::config, "k=" + std::to_string(k) + " outside [1, " + std::to_string(available) + "]");

    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(size());
    for (std::size_t pos = 0; pos < size(); ++pos) {
      if (exclude && *exclude == pos) continue;
      const double* r = rows_.data() + pos * dim_;
      double sq = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) {
        const double diff = query[j] - r[j];
        sq += diff * diff;
      }
      scored.emplace_back(std::sqrt(sq), pos);
    }
    auto closer = [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return seq_[a.second] < seq_[b.second];
    };
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), closer);

    std::vector<Neighbor> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back({ids_[scored[i].second], scored[i].first, labels_[scored[i].second]});
    return out;
  }

  std::vector<Neighbor> knn(const Vector& query, std::size_t k) const { return knn(as_span(query), k); }

  // --- persistence ---------------------------------------------------------

  static constexpr char kMagic[9] = "CEAINDEX";
  static constexpr std::uint32_t kVersion = 1;

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(errc::io, "cannot write " + path);
    binary::write_magic(out, kMagic);
    binary::write(out, kVersion);
    binary::write<std::uint64_t>(out, dim_);
    binary::write<std::uint64_t>(out, size());
    binary::write<std::uint64_t>(out, next_seq_);
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(vocab_.size()));
    for (const auto& name : vocab_.names()) binary::write_string(out, name);
    for (std::size_t pos = 0; pos < size(); ++pos) {
      binary::write<std::int64_t>(out, ids_[pos]);
      binary::write<std::int32_t>(out, labels_[pos]);
      binary::write<std::uint64_t>(out, seq_[pos]);
      binary::write_doubles(out, rows_.data() + pos * dim_, dim_);
    }
    if (!out) fail(errc::io, "failed writing " + path);
  }

  /// Loads a saved index. With `expected_dim` set, a different stored
  /// dimension is rejected. Any inconsistency leaves no partial state.
  static EmbeddingIndex load(const std::string& path, std::optional<std::size_t> expected_dim = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::io, "cannot open " + path);
    binary::expect_magic(in, kMagic, path);
    if (binary::read<std::uint32_t>(in, "version") != kVersion) fail(errc::corrupt_file, path + ": unsupported version");
    const auto dim = binary::read<std::uint64_t>(in, "dim");
    const auto n = binary::read<std::uint64_t>(in, "row count");
    const auto next_seq = binary::read<std::uint64_t>(in, "insertion counter");
    if (dim == 0 || dim > (1u << 20) || n > (std::uint64_t{1} << 32)) fail(errc::corrupt_file, path + ": implausible header");
    if (expected_dim && *expected_dim != dim)
      fail(errc::dimension_mismatch,
           path + ": index dim " + std::to_string(dim) + " does not match encoder dim " + std::to_string(*expected_dim));

    LabelVocab vocab;
    const auto labels = binary::read<std::uint32_t>(in, "vocab size");
    for (std::uint32_t i = 0; i < labels; ++i) {
      const auto name = binary::read_string(in, "label name");
      if (vocab.intern(name) != static_cast<LabelId>(i)) fail(errc::corrupt_file, path + ": duplicate label name");
    }

    EmbeddingIndex idx(dim, std::move(vocab));
    std::vector<double> row(dim);
    std::uint64_t prev_seq = 0;
    for (std::uint64_t r = 0; r < n; ++r) {
      const auto id = binary::read<std::int64_t>(in, "row id");
      const auto label = binary::read<std::int32_t>(in, "row label");
      const auto seq = binary::read<std::uint64_t>(in, "row insertion");
      binary::read_doubles(in, row.data(), dim, "row vector");
      double sq = 0.0;
      for (double x : row) sq += x * x;
      if (!std::isfinite(sq) || std::abs(std::sqrt(sq) - 1.0) > kUnitNormTolerance) fail(errc::corrupt_file, path + ": row is not unit norm");
      if (!idx.vocab_.contains(label)) fail(errc::corrupt_file, path + ": row label out of range");
      if (idx.pos_.count(id)) fail(errc::corrupt_file, path + ": duplicate row id");
      if (r > 0 && seq <= prev_seq) fail(errc::corrupt_file, path + ": insertion order not increasing");
      if (seq >= next_seq) fail(errc::corrupt_file, path + ": insertion counter behind rows");
      prev_seq = seq;
      idx.append_row(id, row, label, seq);
    }
    idx.next_seq_ = next_seq;
    if (in.peek() != std::ifstream::traits_type::eof()) fail(errc::corrupt_file, path + ": trailing bytes");
    return idx;
  }

  /// Same rows, ids, labels, order, and vocabulary. Row values compare exactly.
  friend bool operator==(const EmbeddingIndex& a, const EmbeddingIndex& b) {
    return a.dim_ == b.dim_ && a.rows_ == b.rows_ && a.ids_ == b.ids_ && a.labels_ == b.labels_ && a.seq_ == b.seq_ &&
           a.next_seq_ == b.next_seq_ && a.vocab_ == b.vocab_;
  }

 private:
  void append_row(DocId id, std::span<const double> unit, LabelId label, std::uint64_t seq) {
    rows_.insert(rows_.end(), unit.begin(), unit.end());
    pos_.emplace(id, ids_.size());
    ids_.push_back(id);
    labels_.push_back(label);
    seq_.push_back(seq);
    next_seq_ = std::max(next_seq_, seq + 1);
  }

  std::size_t dim_ = 0;
  std::vector<double> rows_;
  std::vector<DocId> ids_;
  std::vector<LabelId> labels_;
  std::vector<std::uint64_t> seq_;
  std::uint64_t next_seq_ = 0;
  std::unordered_map<DocId, std::size_t> pos_;
  LabelVocab vocab_;
};

/// Encodes every document of `split` (corpus order) into a fresh index that
/// shares the corpus vocabulary.
inline EmbeddingIndex build(const Encoder& encoder, const LabeledCorpus& corpus, Split split = Split::train) {
  EmbeddingIndex idx(encoder.dim(), corpus.vocab);
  for (const auto& d : corpus.documents()) {
    if (d.split != split) continue;
    try {
      idx.add(d.id, encoder.encode(d), *d.label);
    } catch (const error& e) {
      fail(e.code(), "while indexing document " + std::to_string(d.id) + ": " + e.what());
    }
  }
  if (idx.empty()) fail(errc::empty_index, "no documents in the " + std::string(to_string(split)) + " split");
  return idx;
}

/// Majority vote over neighbors given in ascending distance. Among labels
/// sharing the top count, the one carried by the nearest neighbor wins.
inline Prediction vote(std::span<const Neighbor> neighbors) {
  if (neighbors.empty()) fail(errc::config, "vote needs at least one neighbor");
  Prediction p;
  p.k = neighbors.size();
  p.neighbors.assign(neighbors.begin(), neighbors.end());
  std::size_t top = 0;
  for (const auto& n : neighbors) top = std::max(top, ++p.votes[n.label]);
  for (const auto& n : neighbors) {
    if (p.votes[n.label] == top) {
      p.label = n.label;
      break;
    }
  }
  return p;
}

/// Normalizes the query and predicts by k-NN majority vote.
inline Prediction classify(const EmbeddingIndex& index, std::span<const double> query, std::size_t k) {
  const auto unit = normalize(query);
  const auto nn = index.knn(as_span(unit), k);
  return vote(nn);
}

inline Prediction classify(const EmbeddingIndex& index, const Vector& query, std::size_t k) {
  return classify(index, as_span(query), k);
}

struct KSelection {
  std::size_t k = 1;
  double accuracy = 0.0;
  std::vector<double> accuracy_by_k;  // entry i is k = i + 1
};

/// Dev accuracy for every k in [1, min(k_max, index size)]; the best
/// accuracy wins and ties go to the smallest k.
inline KSelection select_k(const EmbeddingIndex& index, const Encoder& encoder, std::span<const Document> dev,
                           std::size_t k_max = 100) {
  if (dev.empty()) fail(errc::config, "k selection needs a non-empty dev set");
  if (index.empty()) fail(errc::empty_index, "k selection on an empty index");
  if (k_max < 1) fail(errc::config, "k_max must be >= 1");
  const std::size_t top = std::min(k_max, index.size());
  std::vector<std::size_t> correct(top, 0);
  for (const auto& d : dev) {
    if (!d.label) fail(errc::config, "dev document " + std::to_string(d.id) + " has no label");
    const auto unit = normalize(encoder.encode(d));
    const auto nn = index.knn(as_span(unit), top);
    for (std::size_t k = 1; k <= top; ++k)
      if (vote(std::span<const Neighbor>(nn.data(), k)).label == *d.label) ++correct[k - 1];
  }
  KSelection sel;
  for (std::size_t k = 1; k <= top; ++k) {
    const double acc = static_cast<double>(correct[k - 1]) / static_cast<double>(dev.size());
    sel.accuracy_by_k.push_back(acc);
    if (k == 1 || acc > sel.accuracy) {
      sel.accuracy = acc;
      sel.k = k;
    }
  }
  return sel;
}

}  // namespace cea

#endif  // CEA_INDEX_HPP
