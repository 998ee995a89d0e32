#include <gtest/gtest.h>

#include <random>
#include <set>

#include "cea/explainer.hpp"
#include "support.hpp"

using namespace cea;
using cea::testing::planted_clusters;

namespace {

errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected a cea::error";
  return errc::io;
}

std::set<DocId> flagged(const std::vector<AnomalyFlag>& flags) {
  std::set<DocId> out;
  for (const auto& f : flags) out.insert(f.ids.front());
  return out;
}

double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

TEST(Explain, IdenticalQueryRetrievesItself) {
  LabeledCorpus texts;
  texts.vocab.intern("sports");
  texts.vocab.intern("tech");
  texts.add({0, "football match tonight", 0, Split::train, std::nullopt});
  texts.add({1, "new phone released", 1, Split::train, std::nullopt});
  texts.add({2, "tennis final score", 0, Split::train, std::nullopt});
  const Encoder enc(EncoderParams::random({1024, 8, 8, 8}, 2));
  const auto idx = build(enc, texts);
  const auto rec = explain(idx, enc, texts, "new phone released", 2);
  ASSERT_EQ(rec.neighbors.size(), 2u);
  EXPECT_EQ(rec.neighbors[0].id, 1);
  EXPECT_EQ(rec.neighbors[0].distance, 0.0);
  EXPECT_EQ(rec.neighbors[0].text, "new phone released");
  EXPECT_LE(rec.neighbors[0].distance, rec.neighbors[1].distance);
  EXPECT_EQ(rec.prediction.label, classify(idx, enc.encode("new phone released"), 2).label);
  EXPECT_TRUE(rec.neighbors[0].agrees_with_prediction || rec.prediction.label != 1);
  EXPECT_EQ(code_of([&] { explain(idx, enc, texts, "x", 4); }), errc::config);
}

TEST(Explain, MismatchAgainstUnanimousNeighbors) {
  LabelVocab v;
  v.intern("ENTY");
  v.intern("NUM");
  EmbeddingIndex idx(2, v);
  LabeledCorpus texts;
  texts.vocab = v;
  for (int i = 0; i < 4; ++i) {
    idx.add(i, std::vector<double>{1.0, 0.01 * i}, 1);
    texts.add({i, "how many " + std::to_string(i), 1, Split::train, std::nullopt});
  }
  idx.add(9, std::vector<double>{0.0, 1.0}, 0);
  const auto rec = explain_embedding(idx, texts, (Vector(2) << 1.0, 0.02).finished(), "what is it", 4, 0);
  EXPECT_EQ(rec.prediction.label, 1);
  EXPECT_TRUE(rec.mismatch());
  for (const auto& n : rec.neighbors) EXPECT_TRUE(n.agrees_with_prediction);
  const auto j = to_json(rec, v);
  EXPECT_EQ(j["predicted"], "NUM");
  EXPECT_EQ(j["true_label"], "ENTY");
  EXPECT_EQ(j["mismatch"], true);
}

TEST(Inconsistency, UniformLabelsGiveNoFlags) {
  LabelVocab v;
  v.intern("A");
  EmbeddingIndex idx(3, v);
  std::mt19937_64 g(1);
  for (int i = 0; i < 10; ++i) idx.add(i, cea::testing::random_unit(g, 3), 0);
  EXPECT_TRUE(flag_inconsistencies(idx, 3, 0.5).empty());
}

TEST(Inconsistency, PlantedMislabelIsTopFlag) {
  const auto idx = planted_clusters(20, 8, 3, DocId{7});
  const auto flags = flag_inconsistencies(idx, 5, 0.5);
  ASSERT_FALSE(flags.empty());
  EXPECT_EQ(flags.front().ids.front(), 7);
  EXPECT_EQ(flags.front().disagreement, 1.0);
  EXPECT_EQ(flags.front().own_label, 1);
  EXPECT_EQ(flags.front().neighbor_majority, 0);
  for (const auto& f : flags) EXPECT_NE(f.neighbor_majority, f.own_label);
  const auto j = to_json(flags.front(), idx.vocab());
  EXPECT_EQ(j["kind"], "label_inconsistency");
  EXPECT_EQ(j["own_label"], "B");
}

TEST(Inconsistency, ThresholdMonotone) {
  std::mt19937_64 g(5);
  for (int trial = 0; trial < 20; ++trial) {
    LabelVocab v;
    v.intern("A");
    v.intern("B");
    v.intern("C");
    EmbeddingIndex idx(4, v);
    for (int i = 0; i < 40; ++i) idx.add(i, cea::testing::random_unit(g, 4), static_cast<LabelId>(g() % 3));
    const auto strict = flagged(flag_inconsistencies(idx, 5, 1.0));
    const auto loose = flagged(flag_inconsistencies(idx, 5, 0.5));
    for (auto id : strict) EXPECT_TRUE(loose.count(id));
  }
}

TEST(Inconsistency, KOneIsNearestNeighborDisagreement) {
  std::mt19937_64 g(8);
  LabelVocab v;
  v.intern("A");
  v.intern("B");
  EmbeddingIndex idx(3, v);
  for (int i = 0; i < 50; ++i) idx.add(i, cea::testing::random_unit(g, 3), static_cast<LabelId>(g() % 2));
  std::set<DocId> expect;
  for (std::size_t p = 0; p < idx.size(); ++p)
    if (idx.knn(idx.row(p), 1, p)[0].label != idx.label_at(p)) expect.insert(idx.id_at(p));
  EXPECT_EQ(flagged(flag_inconsistencies(idx, 1, 0.5)), expect);
}

TEST(Inconsistency, Preconditions) {
  const auto idx = planted_clusters(2, 4, 1);
  EXPECT_EQ(code_of([&] { flag_inconsistencies(idx, 6, 0.5); }), errc::config);
  EXPECT_EQ(code_of([&] { flag_inconsistencies(idx, 2, 1.5); }), errc::config);
}

TEST(Duplicates, PlantedCopiesFound) {
  auto idx = planted_clusters(10, 6, 4);
  idx.add(100, idx.row(3), idx.label_at(3));
  idx.add(101, idx.row(3), idx.label_at(3));
  idx.add(102, idx.row(25), idx.label_at(25));
  const auto flags = find_near_duplicates(idx, 1e-6);
  ASSERT_EQ(flags.size(), 2u);
  EXPECT_EQ(flags[0].ids, (std::vector<DocId>{3, 100, 101}));
  EXPECT_EQ(flags[1].ids, (std::vector<DocId>{25, 102}));
  for (const auto& f : flags) EXPECT_LT(f.max_distance, 1e-6);
  // Re-normalizing a stored row can move it by an ulp; only bit-equal rows count at eps = 0.
  for (const auto& f : find_near_duplicates(idx, 0.0)) EXPECT_EQ(f.max_distance, 0.0);

  LabelVocab v;
  v.intern("A");
  EmbeddingIndex exact(2, v);
  exact.add(1, std::vector<double>{3, 4}, 0);
  exact.add(2, std::vector<double>{3, 4}, 0);
  exact.add(3, std::vector<double>{3, 4.0000001}, 0);
  const auto zero = find_near_duplicates(exact, 0.0);
  ASSERT_EQ(zero.size(), 1u);
  EXPECT_EQ(zero[0].ids, (std::vector<DocId>{1, 2}));
  EXPECT_EQ(to_json(flags[0], idx.vocab())["kind"], "duplicate");
}

TEST(Duplicates, EpsilonBelowMinimumDistanceFindsNothing) {
  const auto idx = planted_clusters(10, 6, 9);
  double min_d = 1e9;
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = i + 1; j < idx.size(); ++j)
      min_d = std::min(min_d, std::sqrt(sqdist({idx.row(i).begin(), idx.row(i).end()}, {idx.row(j).begin(), idx.row(j).end()})));
  EXPECT_TRUE(find_near_duplicates(idx, min_d * 0.999).empty());
  EXPECT_FALSE(find_near_duplicates(idx, min_d * 1.001).empty());
  EXPECT_EQ(code_of([&] { find_near_duplicates(idx, -1.0); }), errc::config);
}

TEST(Projection, PlanarDataPreservesDistances) {
  // Unit vectors on a great circle spanned by two random orthonormal axes.
  std::mt19937_64 g(12);
  const std::size_t d = 7;
  auto u = cea::testing::random_unit(g, d), w = cea::testing::random_unit(g, d);
  double dot = 0;
  for (std::size_t i = 0; i < d; ++i) dot += u[i] * w[i];
  double n = 0;
  for (std::size_t i = 0; i < d; ++i) {
    w[i] -= dot * u[i];
    n += w[i] * w[i];
  }
  for (auto& x : w) x /= std::sqrt(n);
  LabelVocab v;
  v.intern("A");
  EmbeddingIndex idx(d, v);
  std::uniform_real_distribution<double> ang(0, 6.283185307179586);
  for (int i = 0; i < 30; ++i) {
    const double a = ang(g);
    std::vector<double> x(d);
    for (std::size_t j = 0; j < d; ++j) x[j] = std::cos(a) * u[j] + std::sin(a) * w[j];
    idx.add(i, x, 0);
  }
  const auto proj = project_2d(idx);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = i + 1; j < idx.size(); ++j) {
      const double orig = std::sqrt(sqdist({idx.row(i).begin(), idx.row(i).end()}, {idx.row(j).begin(), idx.row(j).end()}));
      const double px = proj.points[i].x - proj.points[j].x, py = proj.points[i].y - proj.points[j].y;
      EXPECT_NEAR(std::sqrt(px * px + py * py), orig, 1e-6);
    }
}

TEST(Projection, ReconstructionErrorEqualsTrailingEigenvalues) {
  std::mt19937_64 g(13);
  const std::size_t d = 6, n = 50;
  LabelVocab v;
  v.intern("A");
  EmbeddingIndex idx(d, v);
  for (std::size_t i = 0; i < n; ++i) idx.add(static_cast<DocId>(i), cea::testing::random_unit(g, d), 0);
  const auto proj = project_2d(idx);

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += idx.row(i)[j] / static_cast<double>(n);
  std::vector<std::vector<double>> scatter(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) scatter[a][b] += (idx.row(i)[a] - mean[a]) * (idx.row(i)[b] - mean[b]);
  const auto ev = cea::testing::jacobi_eigenvalues(scatter);  // ascending
  double trailing = 0.0;
  for (std::size_t k = 0; k + 2 < d; ++k) trailing += ev[k];

  double recon = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = proj.points[i];
    for (std::size_t j = 0; j < d; ++j) {
      const double x = mean[j] + p.x * proj.components(static_cast<Eigen::Index>(j), 0) + p.y * proj.components(static_cast<Eigen::Index>(j), 1);
      recon += (idx.row(i)[j] - x) * (idx.row(i)[j] - x);
    }
  }
  EXPECT_NEAR(recon, trailing, 1e-9);
  EXPECT_NEAR(proj.variance[0], ev[d - 1], 1e-9);
  EXPECT_NEAR(proj.variance[1], ev[d - 2], 1e-9);

  // Sign rule: each component's largest-magnitude loading is positive.
  for (Eigen::Index c = 0; c < 2; ++c) {
    Eigen::Index arg = 0;
    proj.components.col(c).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(proj.components(arg, c), 0.0);
  }
}

TEST(Projection, SpectrumInvariantUnderRotation) {
  std::mt19937_64 g(14);
  const std::size_t d = 5;
  Eigen::MatrixXd q = Eigen::MatrixXd::Random(d, d);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(q);
  const Eigen::MatrixXd rot = qr.householderQ();
  LabelVocab v;
  v.intern("A");
  EmbeddingIndex a(d, v), b(d, v);
  for (int i = 0; i < 40; ++i) {
    const auto x = cea::testing::random_unit(g, d);
    Eigen::VectorXd ex = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(d));
    a.add(i, ex, 0);
    b.add(i, Eigen::VectorXd(rot * ex), 0);
  }
  const auto pa = project_2d(a), pb = project_2d(b);
  EXPECT_NEAR(pa.variance[0], pb.variance[0], 1e-10);
  EXPECT_NEAR(pa.variance[1], pb.variance[1], 1e-10);
}

TEST(Projection, DuplicatedRowsGetDuplicatedCoordinates) {
  std::mt19937_64 g(15);
  LabelVocab v;
  v.intern("A");
  EmbeddingIndex idx(4, v);
  for (int i = 0; i < 10; ++i) {
    const auto x = cea::testing::random_unit(g, 4);
    idx.add(2 * i, x, 0);
    idx.add(2 * i + 1, x, 0);
  }
  const auto p = project_2d(idx);
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(p.points[2 * i].x, p.points[2 * i + 1].x);
    EXPECT_EQ(p.points[2 * i].y, p.points[2 * i + 1].y);
  }
}

TEST(Projection, DegenerateAndTooSmall) {
  LabelVocab v;
  v.intern("A");
  EmbeddingIndex idx(3, v);
  idx.add(1, std::vector<double>{0, 1, 0}, 0);
  EXPECT_EQ(code_of([&] { project_2d(idx); }), errc::config);
  idx.add(2, std::vector<double>{0, 1, 0}, 0);
  idx.add(3, std::vector<double>{0, 1, 0}, 0);
  EXPECT_EQ(code_of([&] { project_2d(idx); }), errc::degenerate_projection);
}

TEST(Projection, CsvRoundTrip) {
  cea::testing::TempDir dir;
  const auto idx = planted_clusters(5, 4, 2);
  const auto p = project_2d(idx);
  write_projection_csv(p.points, idx.vocab(), dir.file("p.csv"));
  const auto text = cea::testing::read_text(dir.file("p.csv"));
  EXPECT_EQ(text.rfind("id,x,y,label\n", 0), 0u);
  const auto back = load_projection_csv(dir.file("p.csv"), idx);
  ASSERT_EQ(back.size(), p.points.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].id, p.points[i].id);
    EXPECT_EQ(back[i].x, p.points[i].x);
    EXPECT_EQ(back[i].label, p.points[i].label);
  }
  cea::testing::write_text(dir.file("bad.csv"), "id,x,y\n999,1,2\n");
  EXPECT_EQ(code_of([&] { load_projection_csv(dir.file("bad.csv"), idx); }), errc::not_found);
  cea::testing::write_text(dir.file("junk.csv"), "id,x,y\n1,abc,2\n");
  EXPECT_EQ(code_of([&] { load_projection_csv(dir.file("junk.csv"), idx); }), errc::parse);
}
