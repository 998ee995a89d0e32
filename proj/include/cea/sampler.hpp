#ifndef CEA_SAMPLER_HPP
#define CEA_SAMPLER_HPP

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cea/corpus.hpp"
#include "cea/error.hpp"

namespace cea {

using Rng = std::mt19937_64;

struct PairSample {
  DocId anchor_id = 0;
  DocId other_id = 0;
  int target = 0;

  friend bool operator==(const PairSample&, const PairSample&) = default;
};

/// Positional form of one epoch: indices into the labels span.
struct IndexPair {
  std::size_t anchor = 0;
  std::size_t other = 0;
  int target = 0;
};

/// One positive and one negative partner per anchor, 2n pairs in total, then
/// shuffled. The positive is uniform over other same-label items; an anchor
/// whose class has one member is paired with itself. The negative is uniform
/// over all items with a different label.
inline std::vector<IndexPair> sample_index_pairs(std::span<const LabelId> labels, Rng& rng, bool shuffle = true) {
  std::map<LabelId, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
  if (members.size() < 2) fail(errc::no_negatives, "sampling needs at least two distinct labels");

  // Rank of each item inside its class, for O(1) self-exclusion.
  std::vector<std::size_t> rank(labels.size());
  for (const auto& [label, idx] : members)
    for (std::size_t r = 0; r < idx.size(); ++r) rank[idx[r]] = r;

  const std::size_t n = labels.size();
  std::vector<IndexPair> pairs;
  pairs.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& same = members.at(labels[i]);
    std::size_t positive = i;
    if (same.size() > 1) {
      std::uniform_int_distribution<std::size_t> pick(0, same.size() - 2);
      auto r = pick(rng);
      if (r >= rank[i]) ++r;
      positive = same[r];
    }
    pairs.push_back({i, positive, 1});

    std::uniform_int_distribution<std::size_t> pick_neg(0, n - same.size() - 1);
    auto r = pick_neg(rng);
    std::size_t negative = 0;
    for (const auto& [label, idx] : members) {
      if (label == labels[i]) continue;
      if (r < idx.size()) {
        negative = idx[r];
        break;
      }
      r -= idx.size();
    }
    pairs.push_back({i, negative, 0});
  }
  if (shuffle) std::shuffle(pairs.begin(), pairs.end(), rng);
  return pairs;
}

/// One epoch of training pairs over the given labeled documents.
inline std::vector<PairSample> sample_epoch(std::span<const Document> docs, Rng& rng, bool shuffle = true) {
  std::vector<LabelId> labels;
  labels.reserve(docs.size());
  for (const auto& d : docs) {
    if (!d.label) fail(errc::config, "document " + std::to_string(d.id) + " has no label");
    labels.push_back(*d.label);
  }
  std::vector<PairSample> out;
  for (const auto& p : sample_index_pairs(labels, rng, shuffle))
    out.push_back({docs[p.anchor].id, docs[p.other].id, p.target});
  return out;
}

inline std::vector<PairSample> sample_epoch(const LabeledCorpus& corpus, Rng& rng, bool shuffle = true) {
  const auto train = corpus.split(Split::train);
  return sample_epoch(std::span<const Document>(train), rng, shuffle);
}

/// Debug dump, one `anchor_id other_id target` line per pair (tab-separated).
inline void write_pairs_tsv(const std::vector<PairSample>& pairs, const std::string& path, bool append = false) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) fail(errc::io, "cannot write " + path);
  for (const auto& p : pairs) out << p.anchor_id << '\t' << p.other_id << '\t' << p.target << '\n';
}

}  // namespace cea

#endif  // CEA_SAMPLER_HPP
