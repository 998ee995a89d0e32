#include <gtest/gtest.h>

#include "cea/evaluator.hpp"
#include "cea/service.hpp"
#include "cea/synthetic.hpp"
#include "support.hpp"

// After Eigen: <resolv.h> defines a _res macro.
#include <httplib.h>

using namespace cea;
using nlohmann::json;

namespace {

struct Model {
  LabeledCorpus corpus;
  Encoder encoder;
  EmbeddingIndex index;
};

const Model& model() {
  static const Model m = [] {
    SyntheticSpec s;
    s.docs_per_class = 30;
    auto c = make_synthetic_corpus(s);
    ExperimentConfig cfg;
    cfg.train.epochs = 2;
    auto fit = fit_model(c, cfg);
    return Model{c, fit.encoder, fit.index};
  }();
  return m;
}

errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected a cea::error";
  return errc::io;
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override { start(); }
  void TearDown() override { stop(); }

  void start() {
    session = std::make_unique<Session>(model().encoder, model().index, model().corpus, 3, dir.file("audit.jsonl"));
    http = std::make_unique<HttpService>(*session);
    const int port = http->bind("127.0.0.1", 0);
    http->start_background();
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
  }

  void stop() {
    client.reset();
    if (http) http->stop();
    http.reset();
    session.reset();
  }

  httplib::Result post(const std::string& path, const json& body) {
    return client->Post(path, body.dump(), "application/json");
  }

  static json body(const httplib::Result& r) { return json::parse(r->body); }

  cea::testing::TempDir dir;
  std::unique_ptr<Session> session;
  std::unique_ptr<HttpService> http;
  std::unique_ptr<httplib::Client> client;
};

}  // namespace

TEST_F(ServiceTest, HealthAndMeta) {
  auto r = client->Get("/health");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  const auto h = body(r);
  EXPECT_EQ(h["status"], "ok");
  EXPECT_EQ(h["index_size"], model().index.size());
  EXPECT_EQ(h["dim"], 64);
  EXPECT_EQ(h["k"], 3);
  EXPECT_EQ(h["vocab"], (json{"alpha", "beta", "gamma"}));
  r = client->Get("/meta");
  EXPECT_EQ(body(r)["audit_entries"], 0);
}

TEST_F(ServiceTest, ClassifyMatchesLibrary) {
  const auto doc = model().corpus.split(Split::test).front();
  auto r = post("/classify", {{"text", doc.text}, {"k", 3}});
  ASSERT_EQ(r->status, 200);
  const auto j = body(r);
  const auto expect = classify(model().index, model().encoder.encode(doc.text), 3);
  EXPECT_EQ(j["label"], model().index.vocab().name(expect.label));
  EXPECT_EQ(j["neighbors"].size(), 3u);
  EXPECT_EQ(j["k"], 3);
  for (const auto& n : j["neighbors"]) EXPECT_FALSE(n["text"].get<std::string>().empty());
}

TEST_F(ServiceTest, BadRequests) {
  EXPECT_EQ(post("/classify", {{"text", "   "}})->status, 400);
  EXPECT_EQ(post("/classify", {{"text", "x"}, {"k", 0}})->status, 400);
  EXPECT_EQ(client->Post("/classify", "{not json", "application/json")->status, 400);
  EXPECT_EQ(client->Post("/classify", R"({"text":"a"})", "text/plain")->status, 415);
  EXPECT_EQ(client->Get("/neighbors?id=0&k=0")->status, 400);
  EXPECT_EQ(client->Get("/neighbors")->status, 400);
  EXPECT_EQ(client->Get("/neighbors?id=99999")->status, 404);
  EXPECT_EQ(post("/relabel", {{"id", 99999}, {"label", "alpha"}})->status, 404);
  EXPECT_EQ(client->Get("/report?split=bogus")->status, 400);
  EXPECT_EQ(client->Get("/anomalies?kind=bogus")->status, 400);
  const auto e = body(client->Get("/neighbors?id=99999"));
  EXPECT_EQ(e["error"], "not_found");
  EXPECT_EQ(session->audit_log().size(), 0u);
}

TEST_F(ServiceTest, NeighborsExcludeSelf) {
  const auto id = model().index.id_at(0);
  const auto j = body(client->Get("/neighbors?id=" + std::to_string(id) + "&k=4"));
  ASSERT_EQ(j["neighbors"].size(), 4u);
  double prev = 0.0;
  for (const auto& n : j["neighbors"]) {
    EXPECT_NE(n["id"], id);
    EXPECT_GE(n["distance"].get<double>(), prev);
    prev = n["distance"].get<double>();
  }
}

TEST_F(ServiceTest, ReadEndpointsAreIdempotent) {
  for (const char* path : {"/projection", "/anomalies", "/report?split=test", "/meta", "/neighbors?id=3"}) {
    const auto a = client->Get(path), b = client->Get(path);
    ASSERT_EQ(a->status, 200) << path;
    EXPECT_EQ(a->body, b->body) << path;
  }
  const auto p = body(client->Get("/projection"));
  EXPECT_EQ(p["points"].size(), model().index.size());
  const auto rep = body(client->Get("/report?split=test&k=3"));
  EXPECT_GE(rep["accuracy"].get<double>(), 0.8);
  EXPECT_EQ(session->audit_log().size(), 0u);
}

TEST_F(ServiceTest, DuplicateIdConflicts) {
  const auto id = model().index.id_at(0);
  const auto r = post("/documents", {{"text", "c0s0w1 c0s0w2"}, {"label", "alpha"}, {"id", id}});
  EXPECT_EQ(r->status, 409);
  EXPECT_EQ(session->index_snapshot().size(), model().index.size());
}

TEST_F(ServiceTest, NewClassWithoutRetraining) {
  const std::vector<std::string> world{"world news summit global leaders", "global world summit talks",
                                       "leaders meet at world summit", "world leaders global news today"};
  for (const auto& t : world) {
    const auto r = post("/documents", {{"text", t}, {"label", "World"}});
    ASSERT_EQ(r->status, 200);
  }
  EXPECT_EQ(body(client->Get("/health"))["vocab"], (json{"alpha", "beta", "gamma", "World"}));
  const auto c = body(post("/classify", {{"text", "global world summit news"}, {"k", 3}}));
  EXPECT_EQ(c["label"], "World");
  // One class_add plus one add per document.
  const auto log = session->audit_log();
  ASSERT_EQ(log.size(), 5u);
  EXPECT_EQ(log[0]["op"], "class_add");
  EXPECT_EQ(log[1]["op"], "add");
  EXPECT_EQ(log[1]["embedding"].size(), 64u);
}

TEST_F(ServiceTest, RelabelChangesVotes) {
  const auto id = model().index.id_at(0);
  auto r = post("/relabel", {{"id", id}, {"label", "gamma"}});
  ASSERT_EQ(r->status, 200);
  const auto snap = session->index_snapshot();
  EXPECT_EQ(snap.vocab().name(snap.label_at(*snap.position(id))), "gamma");
  EXPECT_EQ(session->audit_log().back()["op"], "relabel");
}

TEST_F(ServiceTest, RestartReplaysAuditLog) {
  ASSERT_EQ(post("/documents", {{"text", "world summit"}, {"label", "World"}})->status, 200);
  ASSERT_EQ(post("/documents", {{"text", "c1s0w3 c1s0w4 c1s0w5"}, {"label", "beta"}})->status, 200);
  ASSERT_EQ(post("/relabel", {{"id", model().index.id_at(2)}, {"label", "World"}})->status, 200);
  const auto before = session->index_snapshot();
  const auto log_before = session->audit_log();
  stop();
  start();
  EXPECT_TRUE(session->index_snapshot() == before);
  EXPECT_EQ(session->audit_log(), log_before);
  EXPECT_EQ(body(client->Get("/health"))["index_size"], before.size());
}

TEST(OpenSession, LoadsAndValidatesInputs) {
  cea::testing::TempDir dir;
  const auto& m = model();
  save_params(*m.encoder.params(), dir.file("params.bin"));
  m.index.save(dir.file("index.bin"));
  save_corpus(m.corpus, dir.file("corpus.jsonl"), CorpusFormat::jsonl);
  ServeConfig cfg;
  cfg.checkpoint_path = dir.file("params.bin");
  cfg.index_path = dir.file("index.bin");
  cfg.corpus_path = dir.file("corpus.jsonl");
  cfg.k = 3;
  auto s = open_session(cfg);
  EXPECT_TRUE(s->index_snapshot() == m.index);

  auto bad_k = cfg;
  bad_k.k = 0;
  EXPECT_EQ(code_of([&] { open_session(bad_k); }), errc::config);

  auto both = cfg;
  both.precomputed_path = dir.file("vectors.jsonl");
  EXPECT_EQ(code_of([&] { open_session(both); }), errc::config);

  // Truncated index file.
  auto bytes = cea::testing::read_text(dir.file("index.bin"));
  cea::testing::write_text(dir.file("cut.bin"), bytes.substr(0, bytes.size() / 2));
  auto cut = cfg;
  cut.index_path = dir.file("cut.bin");
  EXPECT_EQ(code_of([&] { open_session(cut); }), errc::corrupt_file);

  // Index built for another width.
  LabelVocab v;
  v.intern("alpha");
  EmbeddingIndex other(8, v);
  other.add(0, std::vector<double>{1, 0, 0, 0, 0, 0, 0, 0}, 0);
  other.save(dir.file("other.bin"));
  auto mismatch = cfg;
  mismatch.index_path = dir.file("other.bin");
  EXPECT_EQ(code_of([&] { open_session(mismatch); }), errc::dimension_mismatch);

  cea::testing::write_text(dir.file("audit.jsonl"), "{\"op\":\"frobnicate\"}\n");
  auto corrupt_log = cfg;
  corrupt_log.audit_log_path = dir.file("audit.jsonl");
  EXPECT_EQ(code_of([&] { open_session(corrupt_log); }), errc::corrupt_file);
}

TEST(OpenSession, SessionRejectsMismatchedEncoder) {
  const Encoder enc(EncoderParams::random({1024, 8, 8, 8}, 1));
  EXPECT_EQ(code_of([&] { Session(enc, model().index, model().corpus, 3); }), errc::dimension_mismatch);
}
