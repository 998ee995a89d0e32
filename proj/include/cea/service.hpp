#ifndef CEA_SERVICE_HPP
#define CEA_SERVICE_HPP

#include <chrono>
#include <ctime>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cea/corpus.hpp"
#include "cea/encoder.hpp"
#include "cea/error.hpp"
#include "cea/evaluator.hpp"
#include "cea/explainer.hpp"
#include "cea/index.hpp"

namespace cea {

using json = nlohmann::json;

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[96];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

/// Re-expresses corpus labels in the index vocabulary so that label ids agree
/// between the two; labels only the corpus knows are appended to both.
inline LabeledCorpus align_corpus(const LabeledCorpus& corpus, EmbeddingIndex& index) {
  LabeledCorpus out;
  for (const auto& name : corpus.vocab.names()) index.intern_label(name);
  out.vocab = index.vocab();
  out.fine_vocab = corpus.fine_vocab;
  for (auto d : corpus.documents()) {
    if (d.label) d.label = *out.vocab.find(corpus.vocab.name(*d.label));
    out.add(std::move(d));
  }
  return out;
}

/// Live, mutable classification state behind the HTTP facade. Reads take a
/// shared lock, mutations an exclusive one, so readers always see either
/// the state before or after a whole mutation. Mutations are appended to
/// the audit log (and flushed) before they are applied.
class Session {
 public:
  Session(Encoder encoder, EmbeddingIndex index, LabeledCorpus corpus, std::size_t k, std::string audit_log_path = {})
      : encoder_(std::move(encoder)), index_(std::move(index)), log_path_(std::move(audit_log_path)), k_(k) {
    if (encoder_.dim() != index_.dim())
      fail(errc::dimension_mismatch, "encoder dim " + std::to_string(encoder_.dim()) + " does not match index dim " +
                                         std::to_string(index_.dim()));
    corpus_ = align_corpus(corpus, index_);
    if (!log_path_.empty()) replay(log_path_);
    if (k_ < 1 || k_ > index_.size())
      fail(errc::config, "k=" + std::to_string(k_) + " outside [1, " + std::to_string(index_.size()) + "]");
  }

  std::size_t default_k() const { return k_; }

  /// Copy of the current index (for tests and snapshots).
  EmbeddingIndex index_snapshot() const {
    std::shared_lock lock(mu_);
    return index_;
  }

  std::vector<json> audit_log() const {
    std::shared_lock lock(mu_);
    return audit_;
  }

  void set_projection_override(std::vector<ProjectedPoint> pts) {
    std::unique_lock lock(mu_);
    projection_override_ = std::move(pts);
  }

  // --- reads -----------------------------------------------------------------

  json classify(const std::string& text, std::optional<std::size_t> k) const {
    if (trim(text).empty()) fail(errc::config, "text must be non-empty");
    std::shared_lock lock(mu_);
    const auto kk = resolve_k(k, index_.size());
    const auto rec = explain(index_, encoder_, corpus_, text, kk);
    json j = to_json(rec, index_.vocab());
    j["label"] = index_.vocab().name(rec.prediction.label);
    return j;
  }

  /// k nearest other rows of an indexed document.
  json neighbors(DocId id, std::optional<std::size_t> k) const {
    std::shared_lock lock(mu_);
    const auto pos = index_.position(id);
    if (!pos) fail(errc::not_found, "document " + std::to_string(id) + " not indexed");
    const auto kk = resolve_k(k, index_.size() - 1);
    json out = json::array();
    for (const auto& n : index_.knn(index_.row(*pos), kk, *pos)) {
      const auto* d = corpus_.find(n.id);
      out.push_back({{"id", n.id}, {"distance", n.l2_distance}, {"label", index_.vocab().name(n.label)},
                     {"text", d ? d->text : std::string()}});
    }
    return {{"id", id}, {"k", kk}, {"neighbors", out}};
  }

  json projection() const {
    std::shared_lock lock(mu_);
    const auto pts = projection_override_ ? *projection_override_ : project_2d(index_).points;
    json out = json::array();
    for (const auto& p : pts) out.push_back({{"id", p.id}, {"x", p.x}, {"y", p.y}, {"label", index_.vocab().name(p.label)}});
    return {{"points", out}};
  }

  json anomalies(const std::string& kind, std::optional<std::size_t> k, double min_disagreement, double epsilon) const {
    if (!kind.empty() && kind != "label_inconsistency" && kind != "duplicate")
      fail(errc::config, "unknown anomaly kind \"" + kind + "\"");
    std::shared_lock lock(mu_);
    json out = json::array();
    if (kind.empty() || kind == "label_inconsistency") {
      const auto kk = resolve_k(k, index_.size() - 1);
      for (const auto& f : flag_inconsistencies(index_, kk, min_disagreement)) out.push_back(to_json(f, index_.vocab()));
    }
    if (kind.empty() || kind == "duplicate")
      for (const auto& f : find_near_duplicates(index_, epsilon)) out.push_back(to_json(f, index_.vocab()));
    return {{"anomalies", out}};
  }

  json report(Split split, std::optional<std::size_t> k) const {
    std::shared_lock lock(mu_);
    std::vector<Document> docs;
    for (const auto& d : corpus_.documents())
      if (d.split == split && d.label) docs.push_back(d);
    if (docs.empty()) fail(errc::config, "no labeled documents in the " + std::string(to_string(split)) + " split");
    return to_json(evaluate(index_, encoder_, docs, resolve_k(k, index_.size())));
  }

  json meta() const {
    std::shared_lock lock(mu_);
    return {{"vocab", index_.vocab().names()}, {"k", k_}, {"index_size", index_.size()}, {"dim", index_.dim()},
            {"corpus_size", corpus_.size()}, {"audit_entries", audit_.size()}, {"k_max", index_.size()}};
  }

  json health() const {
    std::shared_lock lock(mu_);
    return {{"status", "ok"}, {"index_size", index_.size()}, {"dim", index_.dim()}, {"k", k_}, {"vocab", index_.vocab().names()}};
  }

  // --- mutations -------------------------------------------------------------

  /// Encodes, normalizes, and appends a labeled document. An unseen label
  /// extends the vocabulary first.
  json add_document(const std::string& text, const std::string& label, std::optional<DocId> requested_id = std::nullopt) {
    if (trim(text).empty()) fail(errc::config, "text must be non-empty");
    if (trim(label).empty()) fail(errc::config, "label must be non-empty");
    const Vector embedding = encoder_.encode(text);
    normalize(embedding);  // rejects degenerate vectors before anything is logged

    std::unique_lock lock(mu_);
    const DocId id = requested_id.value_or(next_id());
    if (index_.contains(id) || corpus_.find(id)) fail(errc::duplicate_id, "document " + std::to_string(id) + " exists");
    const bool new_class = !index_.vocab().find(label);
    if (new_class) commit({{"op", "class_add"}, {"label", label}});
    json emb = json::array();
    for (Eigen::Index i = 0; i < embedding.size(); ++i) emb.push_back(embedding[i]);
    commit({{"op", "add"}, {"id", id}, {"text", text}, {"label", label}, {"embedding", emb}});
    return {{"id", id}, {"label", label}, {"new_class", new_class}, {"index_size", index_.size()}};
  }

  json relabel(DocId id, const std::string& label) {
    if (trim(label).empty()) fail(errc::config, "label must be non-empty");
    std::unique_lock lock(mu_);
    if (!index_.contains(id)) fail(errc::not_found, "document " + std::to_string(id) + " not indexed");
    const bool new_class = !index_.vocab().find(label);
    if (new_class) commit({{"op", "class_add"}, {"label", label}});
    commit({{"op", "relabel"}, {"id", id}, {"label", label}});
    return {{"id", id}, {"label", label}, {"new_class", new_class}, {"index_size", index_.size()}};
  }

 private:
  static std::size_t resolve_k_impl(std::size_t k, std::size_t available) {
    if (k < 1 || k > available)
      fail(errc::config, "k=" + std::to_string(k) + " outside [1, " + std::to_string(available) + "]");
    return k;
  }

  std::size_t resolve_k(std::optional<std::size_t> k, std::size_t available) const {
    return resolve_k_impl(k.value_or(std::min(k_, available)), available);
  }

  DocId next_id() const {
    DocId next = corpus_.next_id();
    for (auto id : index_.ids()) next = std::max(next, id + 1);
    return next;
  }

  /// Write-ahead: persist, then apply. Caller holds the exclusive lock.
  void commit(json entry) {
    entry["seq"] = audit_.size();
    entry["ts"] = utc_timestamp();
    if (!log_path_.empty()) {
      std::ofstream out(log_path_, std::ios::app);
      if (!out) fail(errc::io, "cannot append to audit log " + log_path_);
      out << entry.dump() << '\n';
      out.flush();
      if (!out) fail(errc::io, "failed writing audit log " + log_path_);
    }
    apply(entry);
    audit_.push_back(std::move(entry));
  }

  void apply(const json& e) {
    const auto op = e.at("op").get<std::string>();
    if (op == "class_add") {
      const auto name = e.at("label").get<std::string>();
      index_.intern_label(name);
      corpus_.vocab.intern(name);
    } else if (op == "add") {
      const auto& arr = e.at("embedding");
      Vector v(static_cast<Eigen::Index>(arr.size()));
      for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
      const auto label = index_.vocab().find(e.at("label").get<std::string>());
      if (!label) fail(errc::corrupt_file, "audit entry adds a document with an undeclared label");
      const DocId id = e.at("id").get<DocId>();
      index_.add(id, v, *label);
      Document d;
      d.id = id;
      d.text = e.at("text").get<std::string>();
      d.label = corpus_.vocab.intern(e.at("label").get<std::string>());
      corpus_.add(std::move(d));
    } else if (op == "relabel") {
      const DocId id = e.at("id").get<DocId>();
      const auto name = e.at("label").get<std::string>();
      const auto label = index_.vocab().find(name);
      if (!label) fail(errc::corrupt_file, "audit entry relabels to an undeclared label");
      index_.relabel(id, *label);
      if (corpus_.find(id)) corpus_.set_label(id, corpus_.vocab.intern(name));
    } else {
      fail(errc::corrupt_file, "unknown audit op \"" + op + "\"");
    }
  }

  void replay(const std::string& path) {
    std::ifstream in(path);
    if (!in) return;  // no log yet
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      try {
        auto e = json::parse(line);
        apply(e);
        audit_.push_back(std::move(e));
      } catch (const std::exception& ex) {
        fail(errc::corrupt_file, path + ":" + std::to_string(lineno) + ": " + ex.what());
      }
    }
  }

  mutable std::shared_mutex mu_;
  Encoder encoder_;
  EmbeddingIndex index_;
  LabeledCorpus corpus_;
  std::vector<json> audit_;
  std::optional<std::vector<ProjectedPoint>> projection_override_;
  std::string log_path_;
  std::size_t k_;
};

/// HTTP status for a library error raised while serving a request.
inline int http_status(errc code) {
  switch (code) {
    case errc::not_found: return 404;
    case errc::duplicate_id: return 409;
    case errc::io:
    case errc::training_diverged: return 500;
    default: return 400;
  }
}

/// JSON-over-HTTP facade for a Session.
class HttpService {
 public:
  explicit HttpService(Session& session, std::string static_dir = {}) : session_(session) {
    if (!static_dir.empty() && !server_.set_mount_point("/", static_dir))
      fail(errc::config, "static directory " + static_dir + " does not exist");
    routes();
  }

  ~HttpService() { stop(); }

  /// Binds to `host:port` (port 0 picks a free one) and returns the port.
  int bind(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) fail(errc::io, "cannot bind " + host + ":" + std::to_string(port));
    return bound;
  }

  /// Serves until stop(); blocks.
  void listen() { server_.listen_after_bind(); }

  void start_background() {
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  using Req = httplib::Request;
  using Res = httplib::Response;

  struct UnsupportedMediaType : std::runtime_error {
    using std::runtime_error::runtime_error;
  };

  static void reply(Res& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  template <typename F>
  static void guarded(Res& res, F&& f) {
    try {
      reply(res, 200, f());
    } catch (const error& e) {
      reply(res, http_status(e.code()), {{"error", std::string(to_string(e.code()))}, {"message", e.what()}});
    } catch (const UnsupportedMediaType& e) {
      reply(res, 415, {{"error", "unsupported_media_type"}, {"message", e.what()}});
    } catch (const json::exception& e) {
      reply(res, 400, {{"error", "bad_request"}, {"message", e.what()}});
    } catch (const std::invalid_argument& e) {
      reply(res, 400, {{"error", "bad_request"}, {"message", e.what()}});
    } catch (const std::out_of_range& e) {
      reply(res, 400, {{"error", "bad_request"}, {"message", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", "internal"}, {"message", e.what()}});
    }
  }

  static json body_of(const Req& req) {
    const auto ct = req.get_header_value("Content-Type");
    if (ct.rfind("application/json", 0) != 0) throw UnsupportedMediaType("Content-Type must be application/json");
    auto j = json::parse(req.body);
    if (!j.is_object()) throw std::invalid_argument("request body must be a JSON object");
    return j;
  }

  static std::optional<std::size_t> opt_size(const Req& req, const char* name) {
    if (!req.has_param(name)) return std::nullopt;
    const auto v = std::stoll(req.get_param_value(name));
    if (v < 0) fail(errc::config, std::string(name) + " must be non-negative");
    return static_cast<std::size_t>(v);
  }

  static std::optional<std::size_t> opt_size(const json& body, const char* name) {
    if (!body.contains(name) || body[name].is_null()) return std::nullopt;
    const auto v = body[name].get<long long>();
    if (v < 0) fail(errc::config, std::string(name) + " must be non-negative");
    return static_cast<std::size_t>(v);
  }

  static std::string text_field(const json& body, const char* name) {
    if (!body.contains(name) || !body[name].is_string()) fail(errc::config, std::string("\"") + name + "\" must be a string");
    return body[name].get<std::string>();
  }

  void routes() {
    server_.Post("/classify", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        const auto body = body_of(req);
        return session_.classify(text_field(body, "text"), opt_size(body, "k"));
      });
    });
    server_.Get("/neighbors", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        if (!req.has_param("id")) fail(errc::config, "missing id parameter");
        return session_.neighbors(std::stoll(req.get_param_value("id")), opt_size(req, "k"));
      });
    });
    server_.Post("/documents", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        const auto body = body_of(req);
        std::optional<DocId> id;
        if (body.contains("id") && !body["id"].is_null()) id = body["id"].get<DocId>();
        return session_.add_document(text_field(body, "text"), text_field(body, "label"), id);
      });
    });
    server_.Post("/relabel", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        const auto body = body_of(req);
        if (!body.contains("id") || !body["id"].is_number_integer()) fail(errc::config, "\"id\" must be an integer");
        return session_.relabel(body["id"].get<DocId>(), text_field(body, "label"));
      });
    });
    server_.Get("/projection", [this](const Req&, Res& res) { guarded(res, [&] { return session_.projection(); }); });
    server_.Get("/anomalies", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        const auto kind = req.has_param("kind") ? req.get_param_value("kind") : std::string();
        const double min_dis = req.has_param("min_disagreement") ? std::stod(req.get_param_value("min_disagreement")) : 0.5;
        const double eps = req.has_param("epsilon") ? std::stod(req.get_param_value("epsilon")) : 1e-6;
        return session_.anomalies(kind, opt_size(req, "k"), min_dis, eps);
      });
    });
    server_.Get("/report", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        const auto name = req.has_param("split") ? req.get_param_value("split") : std::string("test");
        const auto split = parse_split(name);
        if (!split) fail(errc::config, "unknown split \"" + name + "\"");
        return session_.report(*split, opt_size(req, "k"));
      });
    });
    server_.Get("/meta", [this](const Req&, Res& res) { guarded(res, [&] { return session_.meta(); }); });
    server_.Get("/health", [this](const Req&, Res& res) { guarded(res, [&] { return session_.health(); }); });
  }

  Session& session_;
  httplib::Server server_;
  std::thread thread_;
};

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string checkpoint_path;   // trainable encoder parameters
  std::string precomputed_path;  // alternative: precomputed vectors JSONL
  std::string index_path;
  std::string corpus_path;       // texts for explanations (and the report split)
  CorpusFormat corpus_format = CorpusFormat::jsonl;
  std::string audit_log_path;
  std::string projection_csv;    // optional external coordinates
  std::string static_dir;
  std::size_t k = 5;
};

/// Loads every input, replays the audit log, and fails before serving if
/// anything is inconsistent.
inline std::unique_ptr<Session> open_session(const ServeConfig& cfg) {
  if (cfg.checkpoint_path.empty() == cfg.precomputed_path.empty())
    fail(errc::config, "exactly one of checkpoint or precomputed vectors is required");
  Encoder enc = cfg.checkpoint_path.empty() ? Encoder(load_precomputed(cfg.precomputed_path)) : Encoder(load_params(cfg.checkpoint_path));
  auto index = EmbeddingIndex::load(cfg.index_path, enc.dim());
  LabeledCorpus corpus;
  if (!cfg.corpus_path.empty()) corpus = load_corpus(cfg.corpus_path, cfg.corpus_format);
  auto session = std::make_unique<Session>(std::move(enc), std::move(index), std::move(corpus), cfg.k, cfg.audit_log_path);
  if (!cfg.projection_csv.empty()) session->set_projection_override(load_projection_csv(cfg.projection_csv, session->index_snapshot()));
  return session;
}

}  // namespace cea

#endif  // CEA_SERVICE_HPP
