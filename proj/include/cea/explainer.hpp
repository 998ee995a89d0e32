#ifndef CEA_EXPLAINER_HPP
#define CEA_EXPLAINER_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "cea/corpus.hpp"
#include "cea/encoder.hpp"
#include "cea/error.hpp"
#include "cea/index.hpp"

namespace cea {

struct ExplainedNeighbor {
  DocId id = 0;
  std::string text;
  LabelId label = 0;
  double distance = 0.0;
  bool agrees_with_prediction = false;
};

/// A prediction together with the neighbors that voted for it.
struct ExplanationRecord {
  std::string query;
  Prediction prediction;
  std::optional<LabelId> true_label;
  std::vector<ExplainedNeighbor> neighbors;

  bool mismatch() const { return true_label && *true_label != prediction.label; }
};

/// Classifies `embedding` and resolves neighbor texts through `texts`.
inline ExplanationRecord explain_embedding(const EmbeddingIndex& index, const LabeledCorpus& texts, const Vector& embedding,
                                           std::string query, std::size_t k, std::optional<LabelId> true_label = std::nullopt) {
  ExplanationRecord rec;
  rec.query = std::move(query);
  rec.true_label = true_label;
  rec.prediction = classify(index, embedding, k);
  for (const auto& n : rec.prediction.neighbors) {
    const auto* d = texts.find(n.id);
    rec.neighbors.push_back({n.id, d ? d->text : std::string(), n.label, n.l2_distance, n.label == rec.prediction.label});
  }
  return rec;
}

inline ExplanationRecord explain(const EmbeddingIndex& index, const Encoder& encoder, const LabeledCorpus& texts,
                                 std::string_view text, std::size_t k, std::optional<LabelId> true_label = std::nullopt) {
  return explain_embedding(index, texts, encoder.encode(text), std::string(text), k, true_label);
}

inline ExplanationRecord explain(const EmbeddingIndex& index, const Encoder& encoder, const LabeledCorpus& texts,
                                 const Document& doc, std::size_t k) {
  return explain_embedding(index, texts, encoder.encode(doc), doc.text, k, doc.label);
}

inline nlohmann::json to_json(const ExplanationRecord& r, const LabelVocab& vocab) {
  nlohmann::json neighbors = nlohmann::json::array();
  for (const auto& n : r.neighbors)
    neighbors.push_back({{"id", n.id}, {"text", n.text}, {"label", vocab.name(n.label)}, {"distance", n.distance},
                         {"agrees_with_prediction", n.agrees_with_prediction}});
  nlohmann::json votes = nlohmann::json::object();
  for (const auto& [label, count] : r.prediction.votes) votes[vocab.name(label)] = count;
  nlohmann::json j{{"query", r.query}, {"predicted", vocab.name(r.prediction.label)}, {"k", r.prediction.k},
                   {"votes", votes}, {"neighbors", neighbors}};
  if (r.true_label) {
    j["true_label"] = vocab.name(*r.true_label);
    j["mismatch"] = r.mismatch();
  }
  return j;
}

enum class AnomalyKind { label_inconsistency, duplicate };

inline std::string_view to_string(AnomalyKind k) {
  return k == AnomalyKind::duplicate ? "duplicate" : "label_inconsistency";
}

struct AnomalyFlag {
  AnomalyKind kind = AnomalyKind::label_inconsistency;
  std::vector<DocId> ids;
  // label_inconsistency evidence
  LabelId own_label = 0;
  LabelId neighbor_majority = 0;
  std::vector<LabelId> neighbor_labels;
  double disagreement = 0.0;
  // duplicate evidence: largest distance over the linked pairs
  double max_distance = 0.0;
};

/// Leave-one-out audit: each row votes with its k nearest *other* rows. A row
/// is flagged when at least `min_disagreement` of those neighbors carry a
/// different label and their majority vote differs from the row's own label.
/// Most-disagreeing first, then by id.
inline std::vector<AnomalyFlag> flag_inconsistencies(const EmbeddingIndex& index, std::size_t k, double min_disagreement) {
  if (k < 1) fail(errc::config, "k must be >= 1");
  if (index.size() < k + 1) fail(errc::config, "index needs at least k+1 rows for leave-one-out voting");
  if (!(min_disagreement >= 0.0 && min_disagreement <= 1.0)) fail(errc::config, "min_disagreement must lie in [0,1]");

  std::vector<AnomalyFlag> flags;
  for (std::size_t pos = 0; pos < index.size(); ++pos) {
    const auto nn = index.knn(index.row(pos), k, pos);
    const LabelId own = index.label_at(pos);
    const auto differing = std::count_if(nn.begin(), nn.end(), [own](const Neighbor& n) { return n.label != own; });
    const double disagreement = static_cast<double>(differing) / static_cast<double>(k);
    const auto majority = vote(nn).label;
    if (disagreement >= min_disagreement && majority != own) {
      AnomalyFlag f;
      f.kind = AnomalyKind::label_inconsistency;
      f.ids = {index.id_at(pos)};
      f.own_label = own;
      f.neighbor_majority = majority;
      f.disagreement = disagreement;
      for (const auto& n : nn) {
        f.neighbor_labels.push_back(n.label);
        f.ids.push_back(n.id);
      }
      flags.push_back(std::move(f));
    }
  }
  std::stable_sort(flags.begin(), flags.end(), [](const AnomalyFlag& a, const AnomalyFlag& b) {
    if (a.disagreement != b.disagreement) return a.disagreement > b.disagreement;
    return a.ids.front() < b.ids.front();
  });
  return flags;
}

/// Groups rows whose pairwise L2 distance is below `epsilon`, transitively.
/// Identical embeddings (distance 0) are always grouped, so epsilon = 0
/// reports exact duplicates only.
inline std::vector<AnomalyFlag> find_near_duplicates(const EmbeddingIndex& index, double epsilon = 1e-6) {
  if (!(epsilon >= 0.0)) fail(errc::config, "epsilon must be >= 0");
  const std::size_t n = index.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto root = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<double> spread(n, 0.0);
  const std::size_t d = index.dim();
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = index.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto b = index.row(j);
      double sq = 0.0;
      for (std::size_t t = 0; t < d; ++t) sq += (a[t] - b[t]) * (a[t] - b[t]);
      const double dist = std::sqrt(sq);
      if (dist < epsilon || dist == 0.0) {
        auto ri = root(i), rj = root(j);
        const double s = std::max({spread[ri], spread[rj], dist});
        if (ri != rj) parent[std::max(ri, rj)] = std::min(ri, rj);
        spread[root(i)] = s;
      }
    }
  }
  std::vector<std::vector<std::size_t>> groups(n);
  for (std::size_t i = 0; i < n; ++i) groups[root(i)].push_back(i);

  std::vector<AnomalyFlag> flags;
  for (std::size_t r = 0; r < n; ++r) {
    if (groups[r].size() < 2) continue;
    AnomalyFlag f;
    f.kind = AnomalyKind::duplicate;
    for (auto pos : groups[r]) f.ids.push_back(index.id_at(pos));
    std::sort(f.ids.begin(), f.ids.end());
    f.max_distance = spread[r];
    flags.push_back(std::move(f));
  }
  std::sort(flags.begin(), flags.end(), [](const AnomalyFlag& a, const AnomalyFlag& b) { return a.ids.front() < b.ids.front(); });
  return flags;
}

inline nlohmann::json to_json(const AnomalyFlag& f, const LabelVocab& vocab) {
  nlohmann::json j{{"kind", to_string(f.kind)}, {"ids", f.ids}};
  if (f.kind == AnomalyKind::duplicate) {
    j["max_distance"] = f.max_distance;
  } else {
    std::vector<std::string> labels;
    for (auto l : f.neighbor_labels) labels.push_back(vocab.name(l));
    j["own_label"] = vocab.name(f.own_label);
    j["neighbor_majority"] = vocab.name(f.neighbor_majority);
    j["neighbor_labels"] = labels;
    j["disagreement"] = f.disagreement;
  }
  return j;
}

/// One flag per line.
inline void write_anomalies_jsonl(const std::vector<AnomalyFlag>& flags, const LabelVocab& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(errc::io, "cannot write " + path);
  for (const auto& f : flags) out << to_json(f, vocab).dump() << '\n';
}

// --- 2-D projection ---------------------------------------------------------

struct ProjectedPoint {
  DocId id = 0;
  double x = 0.0;
  double y = 0.0;
  LabelId label = 0;
};

struct Projection2D {
  std::vector<ProjectedPoint> points;  // index row order
  Vector mean;
  Matrix components;        // d x 2, columns are unit principal directions
  Eigen::Vector2d variance; // scatter eigenvalues of the two components
};

/// PCA onto the top two principal components of the centered rows. Each
/// component's sign is fixed so that its largest-magnitude loading is positive.
inline Projection2D project_2d(const EmbeddingIndex& index) {
  if (index.size() < 2) fail(errc::config, "projection needs at least two rows");
  const auto n = static_cast<Eigen::Index>(index.size());
  const auto d = static_cast<Eigen::Index>(index.dim());
  Matrix X(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = index.row(static_cast<std::size_t>(i))[static_cast<std::size_t>(j)];

  Projection2D out;
  out.mean = X.colwise().mean().transpose();
  X.rowwise() -= out.mean.transpose();
  const Matrix scatter = X.transpose() * X;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(scatter);
  if (eig.info() != Eigen::Success) fail(errc::degenerate_projection, "eigen decomposition failed");
  const auto& values = eig.eigenvalues();  // ascending
  if (!(values[d - 1] > 1e-12)) fail(errc::degenerate_projection, "all rows are identical");

  out.components = Matrix::Zero(d, 2);
  for (Eigen::Index c = 0; c < std::min<Eigen::Index>(2, d); ++c) {
    Vector v = eig.eigenvectors().col(d - 1 - c);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    out.components.col(c) = v;
    out.variance[c] = std::max(0.0, values[d - 1 - c]);
  }
  if (d < 2) out.variance[1] = 0.0;

  const Matrix coords = X * out.components;
  for (Eigen::Index i = 0; i < n; ++i)
    out.points.push_back(
        {index.id_at(static_cast<std::size_t>(i)), coords(i, 0), coords(i, 1), index.label_at(static_cast<std::size_t>(i))});
  return out;
}

/// CSV `id,x,y,label` with the label name.
inline void write_projection_csv(const std::vector<ProjectedPoint>& pts, const LabelVocab& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(errc::io, "cannot write " + path);
  out << "id,x,y,label\n";
  out.precision(17);
  for (const auto& p : pts) out << p.id << ',' << p.x << ',' << p.y << ',' << vocab.name(p.label) << '\n';
}

/// Externally computed coordinates (e.g. TSNE), CSV `id,x,y[,label]`.
/// Labels are taken from the index, so only ids present there are accepted.
inline std::vector<ProjectedPoint> load_projection_csv(const std::string& path, const EmbeddingIndex& index) {
  std::ifstream in(path);
  if (!in) fail(errc::io, "cannot open " + path);
  std::vector<ProjectedPoint> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty() || (lineno == 1 && line.rfind("id", 0) == 0)) continue;
    std::stringstream ss(line);
    std::string id, x, y;
    if (!std::getline(ss, id, ',') || !std::getline(ss, x, ',') || !std::getline(ss, y, ','))
      fail(errc::parse, path + ":" + std::to_string(lineno) + ": expected id,x,y");
    try {
      ProjectedPoint p;
      p.id = std::stoll(id);
      p.x = std::stod(x);
      p.y = std::stod(y);
      const auto pos = index.position(p.id);
      if (!pos) fail(errc::not_found, path + ":" + std::to_string(lineno) + ": id not indexed");
      p.label = index.label_at(*pos);
      pts.push_back(p);
    } catch (const std::logic_error& e) {
      fail(errc::parse, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return pts;
}

}  // namespace cea

#endif  // CEA_EXPLAINER_HPP
