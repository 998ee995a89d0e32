#ifndef CEA_CORPUS_HPP
#define CEA_CORPUS_HPP

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cea/error.hpp"

namespace cea {

using DocId = std::int64_t;
using LabelId = std::int32_t;

enum class Split { train, dev, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "train";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  return std::nullopt;
}

enum class CorpusFormat { tsv, jsonl };

struct Document {
  DocId id = 0;
  std::string text;
  std::optional<LabelId> label;
  Split split = Split::train;
  /// Second, finer annotation layer (sub-class transfer). Ids live in the
  /// corpus' fine vocabulary.
  std::optional<LabelId> fine_label;

  friend bool operator==(const Document&, const Document&) = default;
};

/// Dense, append-only label name <-> id mapping.
class LabelVocab {
 public:
  LabelId intern(const std::string& name) {
    if (auto it = ids_.find(name); it != ids_.end()) return it->second;
    const auto id = static_cast<LabelId>(names_.size());
    names_.push_back(name);
    ids_.emplace(name, id);
    return id;
  }

  std::optional<LabelId> find(const std::string& name) const {
    if (auto it = ids_.find(name); it != ids_.end()) return it->second;
    return std::nullopt;
  }

  const std::string& name(LabelId id) const {
    if (!contains(id)) fail(errc::not_found, "label id " + std::to_string(id));
    return names_[static_cast<std::size_t>(id)];
  }

  bool contains(LabelId id) const { return id >= 0 && static_cast<std::size_t>(id) < names_.size(); }
  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }
  const std::vector<std::string>& names() const { return names_; }

  friend bool operator==(const LabelVocab& a, const LabelVocab& b) { return a.names_ == b.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, LabelId> ids_;
};

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

/// Trim plus collapse of internal whitespace runs to one space.
inline std::string normalize_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

class LabeledCorpus {
 public:
  LabelVocab vocab;
  LabelVocab fine_vocab;

  /// Appends a document, enforcing the corpus invariants.
  void add(Document doc) {
    if (trim(doc.text).empty()) fail(errc::parse, "document " + std::to_string(doc.id) + " has empty text");
    if (positions_.count(doc.id)) fail(errc::duplicate_id, "document id " + std::to_string(doc.id));
    if (doc.label && !vocab.contains(*doc.label))
      fail(errc::config, "label id " + std::to_string(*doc.label) + " not in vocabulary");
    if (doc.fine_label && !fine_vocab.contains(*doc.fine_label))
      fail(errc::config, "fine label id " + std::to_string(*doc.fine_label) + " not in vocabulary");
    if (!doc.label && doc.split != Split::test)
      fail(errc::parse, "document " + std::to_string(doc.id) + " in " + std::string(to_string(doc.split)) +
                          " split has no label");
    positions_.emplace(doc.id, docs_.size());
    next_id_ = std::max(next_id_, doc.id + 1);
    docs_.push_back(std::move(doc));
  }

  const std::vector<Document>& documents() const { return docs_; }
  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  DocId next_id() const { return next_id_; }

  const Document* find(DocId id) const {
    auto it = positions_.find(id);
    return it == positions_.end() ? nullptr : &docs_[it->second];
  }

  const Document& at(DocId id) const {
    if (const auto* d = find(id)) return *d;
    fail(errc::not_found, "document id " + std::to_string(id));
  }

  void set_split(DocId id, Split s) { mutable_at(id).split = s; }

  void set_label(DocId id, LabelId label) {
    if (!vocab.contains(label)) fail(errc::config, "label id " + std::to_string(label) + " not in vocabulary");
    mutable_at(id).label = label;
  }

  /// Documents of one split, in corpus order.
  std::vector<Document> split(Split s) const {
    std::vector<Document> out;
    for (const auto& d : docs_)
      if (d.split == s) out.push_back(d);
    return out;
  }

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(std::count_if(docs_.begin(), docs_.end(), [s](const Document& d) { return d.split == s; }));
  }

  /// Number of training documents.
  std::size_t n() const { return count(Split::train); }

  friend bool operator==(const LabeledCorpus& a, const LabeledCorpus& b) {
    return a.vocab == b.vocab && a.fine_vocab == b.fine_vocab && a.docs_ == b.docs_;
  }

 private:
  Document& mutable_at(DocId id) {
    auto it = positions_.find(id);
    if (it == positions_.end()) fail(errc::not_found, "document id " + std::to_string(id));
    return docs_[it->second];
  }

  std::vector<Document> docs_;
  std::unordered_map<DocId, std::size_t> positions_;
  DocId next_id_ = 0;
};

namespace detail {

inline std::string line_error(const std::string& path, std::size_t line, const std::string& what) {
  return path + ":" + std::to_string(line) + ": " + what;
}

inline std::string json_label_string(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw std::invalid_argument("label must be a string or integer");
}

}  // namespace detail

/// Reads records from `path` into an existing corpus, sharing (and extending)
/// its vocabularies. Records without an explicit split get `default_split`.
///
/// TSV: `text<TAB>label[<TAB>fine_label]`, label optional only for test docs.
/// JSONL: `{"text": ..., "label": ..., "id"?, "split"?, "fine_label"?}`.
inline void append_corpus(LabeledCorpus& corpus, const std::string& path, CorpusFormat format,
                          Split default_split = Split::train) {
  std::ifstream in(path);
  if (!in) fail(errc::io, "cannot open " + path);

  std::string line;
  std::size_t lineno = 0;
  std::size_t records = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (format == CorpusFormat::jsonl && trim(line).empty()) continue;

    Document doc;
    doc.split = default_split;
    std::optional<std::string> label, fine;
    std::optional<DocId> explicit_id;

    if (format == CorpusFormat::tsv) {
      std::vector<std::string> fields;
      std::size_t start = 0;
      for (;;) {
        auto tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
      }
      if (fields.size() > 3) fail(errc::parse, detail::line_error(path, lineno, "too many tab-separated fields"));
      doc.text = fields[0];
      if (fields.size() >= 2 && !trim(fields[1]).empty()) label = trim(fields[1]);
      if (fields.size() == 3 && !trim(fields[2]).empty()) fine = trim(fields[2]);
    } else {
      nlohmann::json rec;
      try {
        rec = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        fail(errc::parse, detail::line_error(path, lineno, e.what()));
      }
      try {
        if (!rec.is_object() || !rec.contains("text") || !rec["text"].is_string())
          throw std::invalid_argument("record needs a string \"text\" field");
        doc.text = rec["text"].get<std::string>();
        if (rec.contains("label") && !rec["label"].is_null()) label = detail::json_label_string(rec["label"]);
        if (rec.contains("fine_label") && !rec["fine_label"].is_null())
          fine = detail::json_label_string(rec["fine_label"]);
        if (rec.contains("id")) explicit_id = rec["id"].get<DocId>();
        if (rec.contains("split")) {
          auto s = parse_split(rec["split"].get<std::string>());
          if (!s) throw std::invalid_argument("unknown split");
          doc.split = *s;
        }
      } catch (const std::exception& e) {
        fail(errc::parse, detail::line_error(path, lineno, e.what()));
      }
    }

    if (trim(doc.text).empty()) fail(errc::parse, detail::line_error(path, lineno, "empty text field"));
    if (!label && doc.split != Split::test)
      fail(errc::parse, detail::line_error(path, lineno, "missing label"));
    doc.id = explicit_id.value_or(corpus.next_id());
    if (corpus.find(doc.id)) fail(errc::parse, detail::line_error(path, lineno, "duplicate id " + std::to_string(doc.id)));
    if (label) doc.label = corpus.vocab.intern(*label);
    if (fine) doc.fine_label = corpus.fine_vocab.intern(*fine);
    corpus.add(std::move(doc));
    ++records;
  }
  if (records == 0) fail(errc::empty_corpus, path + " contains no records");
}

inline LabeledCorpus load_corpus(const std::string& path, CorpusFormat format, Split default_split = Split::train) {
  LabeledCorpus corpus;
  append_corpus(corpus, path, format, default_split);
  return corpus;
}

/// Writes the corpus so that `load_corpus` reproduces it. TSV keeps only
/// text and labels; JSONL additionally keeps ids and splits.
inline void save_corpus(const LabeledCorpus& corpus, const std::string& path, CorpusFormat format) {
  std::ofstream out(path);
  if (!out) fail(errc::io, "cannot write " + path);
  for (const auto& d : corpus.documents()) {
    if (format == CorpusFormat::tsv) {
      if (d.text.find_first_of("\t\n") != std::string::npos)
        fail(errc::config, "document " + std::to_string(d.id) + " text cannot be stored as TSV");
      out << d.text;
      if (d.label || d.fine_label) out << '\t' << (d.label ? corpus.vocab.name(*d.label) : "");
      if (d.fine_label) out << '\t' << corpus.fine_vocab.name(*d.fine_label);
      out << '\n';
    } else {
      nlohmann::json rec{{"id", d.id}, {"text", d.text}, {"split", to_string(d.split)}};
      if (d.label) rec["label"] = corpus.vocab.name(*d.label);
      if (d.fine_label) rec["fine_label"] = corpus.fine_vocab.name(*d.fine_label);
      out << rec.dump() << '\n';
    }
  }
}

/// Moves floor(fraction * n) training documents into the dev split using a
/// seeded shuffle. With `stratify` the same total is allocated across labels
/// proportionally (largest remainder).
inline LabeledCorpus split_dev(const LabeledCorpus& corpus, double fraction, std::uint64_t seed, bool stratify = false) {
  if (!(fraction > 0.0 && fraction < 1.0)) fail(errc::config, "dev fraction must lie in (0,1)");
  if (corpus.count(Split::dev) != 0) fail(errc::config, "corpus already has a dev split");
  const auto n = corpus.n();
  const auto wanted = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  if (wanted < 1) fail(errc::config, "dev fraction selects no documents (floor(fraction*n) = 0)");

  std::vector<DocId> train_ids;
  for (const auto& d : corpus.documents())
    if (d.split == Split::train) train_ids.push_back(d.id);

  std::mt19937_64 rng(seed);
  std::vector<DocId> chosen;
  if (!stratify) {
    std::shuffle(train_ids.begin(), train_ids.end(), rng);
    chosen.assign(train_ids.begin(), train_ids.begin() + static_cast<std::ptrdiff_t>(wanted));
  } else {
    std::map<LabelId, std::vector<DocId>> by_label;
    for (auto id : train_ids) by_label[*corpus.at(id).label].push_back(id);
    struct Share { LabelId label; std::size_t base; double remainder; };
    std::vector<Share> shares;
    std::size_t assigned = 0;
    for (auto& [label, ids] : by_label) {
      const double exact = fraction * static_cast<double>(ids.size());
      const auto base = static_cast<std::size_t>(std::floor(exact));
      shares.push_back({label, base, exact - static_cast<double>(base)});
      assigned += base;
    }
    std::stable_sort(shares.begin(), shares.end(), [](const Share& a, const Share& b) { return a.remainder > b.remainder; });
    for (std::size_t i = 0; assigned < wanted && i < shares.size(); ++i, ++assigned) ++shares[i].base;
    for (const auto& s : shares) {
      auto& ids = by_label[s.label];
      std::shuffle(ids.begin(), ids.end(), rng);
      chosen.insert(chosen.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(s.base, ids.size())));
    }
  }

  LabeledCorpus out = corpus;
  for (auto id : chosen) out.set_split(id, Split::dev);
  return out;
}

/// Groups (size >= 2) of document ids whose whitespace-normalized texts are
/// identical. Groups appear in order of their first member.
inline std::vector<std::vector<DocId>> find_exact_duplicates(const LabeledCorpus& corpus) {
  std::unordered_map<std::string, std::size_t> group_of;
  std::vector<std::vector<DocId>> groups;
  for (const auto& d : corpus.documents()) {
    auto key = normalize_whitespace(d.text);
    auto [it, inserted] = group_of.emplace(std::move(key), groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(d.id);
  }
  std::erase_if(groups, [](const auto& g) { return g.size() < 2; });
  return groups;
}

}  // namespace cea

#endif  // CEA_CORPUS_HPP
