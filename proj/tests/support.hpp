// Shared fixtures and independent reference implementations for the tests.
// Oracles here deliberately avoid calling the library code they check.

#ifndef CEA_TEST_SUPPORT_HPP
#define CEA_TEST_SUPPORT_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "cea/corpus.hpp"
#include "cea/index.hpp"

namespace cea::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("cea_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Corpus of train docs with the given label names (vocab in first-seen order).
inline LabeledCorpus corpus_with_labels(const std::vector<std::string>& labels, Split split = Split::train) {
  LabeledCorpus c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Document d;
    d.id = static_cast<DocId>(i);
    d.text = "doc " + std::to_string(i);
    d.label = c.vocab.intern(labels[i]);
    d.split = split;
    c.add(std::move(d));
  }
  return c;
}

// --- k-NN oracle ------------------------------------------------------------

struct OracleRow {
  DocId id;
  std::vector<double> v;  // unit norm
  LabelId label;
};

struct OracleNeighbor {
  DocId id;
  double dist;
  LabelId label;
};

/// Exhaustive scan: sort all rows by (distance, insertion order), take k.
inline std::vector<OracleNeighbor> oracle_knn(const std::vector<OracleRow>& rows, const std::vector<double>& q, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) s += (q[j] - rows[i].v[j]) * (q[j] - rows[i].v[j]);
    all.emplace_back(std::sqrt(s), i);
  }
  std::sort(all.begin(), all.end());
  std::vector<OracleNeighbor> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back({rows[all[i].second].id, all[i].first, rows[all[i].second].label});
  return out;
}

/// Vote recount: highest count wins; among tied labels, the one appearing
/// first in the (ascending distance) neighbor list.
inline LabelId oracle_vote(const std::vector<OracleNeighbor>& nn) {
  std::map<LabelId, int> count;
  for (const auto& n : nn) ++count[n.label];
  int best = 0;
  for (const auto& [l, c] : count) best = std::max(best, c);
  for (const auto& n : nn)
    if (count[n.label] == best) return n.label;
  return -1;
}

inline std::vector<double> random_unit(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(d);
  double s = 0.0;
  do {
    s = 0.0;
    for (auto& x : v) {
      x = g(rng);
      s += x * x;
    }
  } while (s < 1e-12);
  const double n = std::sqrt(s);
  for (auto& x : v) x /= n;
  return v;
}

/// Three well-separated clusters of `per_cluster` rows each (labels A, B, C)
/// in `dim` dimensions. Row `mislabeled` (if set) sits in cluster A but is
/// labeled B. Ids are 0..3*per_cluster-1 in insertion order.
inline EmbeddingIndex planted_clusters(std::size_t per_cluster, std::size_t dim, std::uint64_t seed,
                                       std::optional<DocId> mislabeled = std::nullopt) {
  LabelVocab vocab;
  vocab.intern("A");
  vocab.intern("B");
  vocab.intern("C");
  EmbeddingIndex idx(dim, vocab);
  std::mt19937_64 g(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  DocId id = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < per_cluster; ++i, ++id) {
      std::vector<double> v(dim, 0.0);
      v[c] = 1.0;
      for (auto& x : v) x += noise(g);
      const LabelId label = mislabeled && *mislabeled == id ? 1 : static_cast<LabelId>(c);
      idx.add(id, v, label);
    }
  }
  return idx;
}

// --- Spearman oracle --------------------------------------------------------

/// Rank by counting: 1 + #smaller + (#equal - 1)/2. Quadratic, no sorting.
inline std::vector<long double> oracle_ranks(const std::vector<double>& xs) {
  std::vector<long double> r(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::size_t less = 0, equal = 0;
    for (double y : xs) {
      if (y < xs[i]) ++less;
      if (y == xs[i]) ++equal;
    }
    r[i] = 1.0L + static_cast<long double>(less) + (static_cast<long double>(equal) - 1.0L) / 2.0L;
  }
  return r;
}

inline double oracle_spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  const auto rx = oracle_ranks(xs), ry = oracle_ranks(ys);
  const auto n = static_cast<long double>(xs.size());
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

// --- symmetric eigenvalues (cyclic Jacobi) ----------------------------------

inline std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
  std::sort(ev.begin(), ev.end());
  return ev;
}

}  // namespace cea::testing

#endif  // CEA_TEST_SUPPORT_HPP
