#ifndef CEA_EVALUATOR_HPP
#define CEA_EVALUATOR_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cea/corpus.hpp"
#include "cea/encoder.hpp"
#include "cea/error.hpp"
#include "cea/index.hpp"
#include "cea/trainer.hpp"

namespace cea {

struct ClassMetrics {
  LabelId label = 0;
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  /// False when no indexed row carries the label, i.e. it cannot be predicted.
  bool predictable = true;
};

struct EvalReport {
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;  // one entry per vocabulary label
  std::size_t total_support = 0;

  const ClassMetrics& of(LabelId label) const {
    for (const auto& c : per_class)
      if (c.label == label) return c;
    fail(errc::not_found, "label " + std::to_string(label) + " not in report");
  }
};

/// Accuracy and per-class P/R/F1 from aligned truth/prediction sequences.
inline EvalReport evaluate_predictions(const LabelVocab& vocab, std::span<const LabelId> truth, std::span<const LabelId> predicted,
                                       const std::set<LabelId>* predictable = nullptr) {
  if (truth.size() != predicted.size()) fail(errc::config, "truth and prediction counts differ");
  if (truth.empty()) fail(errc::zero_docs, "evaluation needs at least one document");
  const auto L = vocab.size();
  std::vector<std::size_t> tp(L, 0), pred_count(L, 0), support(L, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!vocab.contains(truth[i]) || !vocab.contains(predicted[i])) fail(errc::config, "label outside vocabulary");
    ++support[static_cast<std::size_t>(truth[i])];
    ++pred_count[static_cast<std::size_t>(predicted[i])];
    if (truth[i] == predicted[i]) {
      ++tp[static_cast<std::size_t>(truth[i])];
      ++correct;
    }
  }
  EvalReport r;
  r.total_support = truth.size();
  r.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  for (std::size_t l = 0; l < L; ++l) {
    ClassMetrics c;
    c.label = static_cast<LabelId>(l);
    c.name = vocab.name(c.label);
    c.support = support[l];
    c.precision = pred_count[l] ? static_cast<double>(tp[l]) / static_cast<double>(pred_count[l]) : 0.0;
    c.recall = support[l] ? static_cast<double>(tp[l]) / static_cast<double>(support[l]) : 0.0;
    c.f1 = (c.precision + c.recall) > 0.0 ? 2.0 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
    c.predictable = predictable ? predictable->count(c.label) != 0 : true;
    r.per_class.push_back(std::move(c));
  }
  return r;
}

inline std::set<LabelId> labels_present(const EmbeddingIndex& index) {
  return {index.labels().begin(), index.labels().end()};
}

/// Classifies every test document and aggregates the metrics.
inline EvalReport evaluate(const EmbeddingIndex& index, const Encoder& encoder, std::span<const Document> test, std::size_t k) {
  if (test.empty()) fail(errc::zero_docs, "evaluation needs at least one test document");
  std::vector<LabelId> truth, pred;
  for (const auto& d : test) {
    if (!d.label) fail(errc::config, "test document " + std::to_string(d.id) + " has no label");
    truth.push_back(*d.label);
    pred.push_back(classify(index, encoder.encode(d), k).label);
  }
  const auto present = labels_present(index);
  return evaluate_predictions(index.vocab(), truth, pred, &present);
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : r.per_class) {
    nlohmann::json j{{"label", c.name}, {"precision", c.precision}, {"recall", c.recall}, {"support", c.support}, {"predictable", c.predictable}};
    j["f1"] = c.predictable ? nlohmann::json(c.f1) : nlohmann::json(nullptr);
    classes.push_back(std::move(j));
  }
  return {{"accuracy", r.accuracy}, {"total_support", r.total_support}, {"per_class", classes}};
}

inline std::string format_table(const EvalReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(20) << "class" << std::right << std::setw(10) << "precision" << std::setw(10) << "recall"
     << std::setw(10) << "f1" << std::setw(10) << "support" << '\n';
  os << std::fixed << std::setprecision(4);
  for (const auto& c : r.per_class) {
    os << std::left << std::setw(20) << c.name << std::right << std::setw(10) << c.precision << std::setw(10) << c.recall;
    if (c.predictable)
      os << std::setw(10) << c.f1;
    else
      os << std::setw(10) << "-";
    os << std::setw(10) << c.support << '\n';
  }
  os << std::left << std::setw(20) << "accuracy" << std::right << std::setw(30) << r.accuracy << std::setw(10) << r.total_support
     << '\n';
  return os.str();
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Sample standard deviation (n - 1); zero for a single value.
inline MeanStd mean_std(std::span<const double> xs) {
  MeanStd m;
  if (xs.empty()) return m;
  m.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return m;
}

// --- experiments -------------------------------------------------------------

struct ExperimentConfig {
  TrainConfig train;
  std::size_t k_max = 100;
  /// Bound on reseeding when drawing class-covering subsets.
  std::size_t max_subset_attempts = 100;
};

/// Trained encoder, its index over the train split, and the dev-selected k.
struct FittedModel {
  Encoder encoder;
  EmbeddingIndex index;
  KSelection k;
  TrainReport report;
};

inline FittedModel fit_model(const LabeledCorpus& corpus, const ExperimentConfig& cfg) {
  auto trained = train(corpus, cfg.train);
  Encoder enc(std::move(trained.params));
  auto idx = build(enc, corpus, Split::train);
  const auto dev = corpus.split(Split::dev);
  auto sel = select_k(idx, enc, dev, cfg.k_max);
  return {std::move(enc), std::move(idx), std::move(sel), std::move(trained.report)};
}

/// Copy of the corpus keeping only documents accepted by `keep`.
template <typename Pred>
LabeledCorpus filter_corpus(const LabeledCorpus& corpus, Pred&& keep) {
  LabeledCorpus out;
  out.vocab = corpus.vocab;
  out.fine_vocab = corpus.fine_vocab;
  for (const auto& d : corpus.documents())
    if (keep(d)) out.add(d);
  return out;
}

struct IncrementalPoint {
  double fraction_percent = 0.0;
  std::size_t train_docs = 0;
  double cea_knn = 0.0;
  double index_plus_plus = 0.0;
  std::size_t k_cea = 0;
  std::size_t k_index_plus_plus = 0;
};

struct IncrementalReport {
  std::vector<IncrementalPoint> points;
  double full_reference = 0.0;
  std::size_t k_full = 0;
};

/// Train on x% of the train split, evaluate; then add the remaining
/// documents (encoded by the x%-trained encoder) to the index and evaluate
/// again. Also trains once on all training data as the reference.
inline IncrementalReport run_incremental_data(const LabeledCorpus& corpus, std::span<const double> fractions_percent,
                                              const ExperimentConfig& cfg) {
  if (fractions_percent.empty()) fail(errc::config, "no fractions given");
  for (double x : fractions_percent)
    if (!(x > 0.0 && x < 100.0)) fail(errc::config, "fraction " + std::to_string(x) + "% outside (0,100)");
  const auto test = corpus.split(Split::test);
  if (test.empty()) fail(errc::config, "incremental experiment needs a labeled test split");

  std::vector<DocId> train_ids;
  std::set<LabelId> classes;
  for (const auto& d : corpus.documents())
    if (d.split == Split::train) {
      train_ids.push_back(d.id);
      classes.insert(*d.label);
    }

  IncrementalReport rep;
  {
    auto full = fit_model(corpus, cfg);
    rep.full_reference = evaluate(full.index, full.encoder, test, full.k.k).accuracy;
    rep.k_full = full.k.k;
  }

  for (double x : fractions_percent) {
    const auto want = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(x / 100.0 * static_cast<double>(train_ids.size()))));
    std::set<DocId> subset;
    bool covered = false;
    for (std::size_t attempt = 0; attempt < cfg.max_subset_attempts && !covered; ++attempt) {
      auto ids = train_ids;
      Rng rng(cfg.train.seed * 1000003ull + static_cast<std::uint64_t>(x * 1000.0) + attempt);
      std::shuffle(ids.begin(), ids.end(), rng);
      subset = std::set<DocId>(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(want));
      std::set<LabelId> seen;
      for (auto id : subset) seen.insert(*corpus.at(id).label);
      covered = seen == classes;
    }
    if (!covered)
      fail(errc::config, "could not draw a " + std::to_string(x) + "% subset covering every class in " +
                             std::to_string(cfg.max_subset_attempts) + " attempts");

    auto part = filter_corpus(corpus, [&](const Document& d) { return d.split != Split::train || subset.count(d.id); });
    auto model = fit_model(part, cfg);
    IncrementalPoint pt;
    pt.fraction_percent = x;
    pt.train_docs = subset.size();
    pt.k_cea = model.k.k;
    pt.cea_knn = evaluate(model.index, model.encoder, test, model.k.k).accuracy;

    for (auto id : train_ids) {
      if (subset.count(id)) continue;
      const auto& d = corpus.at(id);
      model.index.add(d.id, model.encoder.encode(d), *d.label);
    }
    const auto dev = corpus.split(Split::dev);
    const auto sel = select_k(model.index, model.encoder, dev, cfg.k_max);
    pt.k_index_plus_plus = sel.k;
    pt.index_plus_plus = evaluate(model.index, model.encoder, test, sel.k).accuracy;
    rep.points.push_back(pt);
  }
  return rep;
}

inline nlohmann::json to_json(const IncrementalReport& r) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : r.points)
    pts.push_back({{"fraction_percent", p.fraction_percent}, {"train_docs", p.train_docs}, {"cea_knn", p.cea_knn},
                   {"index_plus_plus", p.index_plus_plus}, {"k_cea", p.k_cea}, {"k_index_plus_plus", p.k_index_plus_plus}});
  return {{"points", pts}, {"full_reference", r.full_reference}, {"k_full", r.k_full}};
}

inline std::string format_table(const IncrementalReport& r) {
  std::ostringstream os;
  os << std::setw(8) << "x%" << std::setw(8) << "docs" << std::setw(12) << "cea+knn" << std::setw(12) << "index++"
     << std::setw(12) << "full" << '\n';
  os << std::fixed << std::setprecision(4);
  for (const auto& p : r.points)
    os << std::setw(8) << std::setprecision(1) << p.fraction_percent << std::setprecision(4) << std::setw(8) << p.train_docs
       << std::setw(12) << p.cea_knn << std::setw(12) << p.index_plus_plus << std::setw(12) << r.full_reference << '\n';
  return os.str();
}

struct HeldoutReport {
  std::string hidden_class;
  LabelId hidden_label = 0;
  EvalReport held_out;
  EvalReport index_plus_plus;
  EvalReport full;
  std::size_t k_held_out = 0;
  std::size_t k_index_plus_plus = 0;
  std::size_t k_full = 0;
};

/// Hide one class during training, then evaluate (i) without it in the
/// index, (ii) with its documents added to the index using the encoder that
/// never saw it, and (iii) a model trained on everything.
inline HeldoutReport run_heldout_class(const LabeledCorpus& corpus, const std::string& hidden, const ExperimentConfig& cfg) {
  const auto hidden_id = corpus.vocab.find(hidden);
  if (!hidden_id) fail(errc::config, "hidden class \"" + hidden + "\" not in corpus");
  std::set<LabelId> train_classes;
  for (const auto& d : corpus.documents())
    if (d.split == Split::train) train_classes.insert(*d.label);
  if (train_classes.size() < 3) fail(errc::config, "held-out experiment needs at least 3 classes");
  if (!train_classes.count(*hidden_id)) fail(errc::config, "hidden class has no training documents");
  const auto test = corpus.split(Split::test);
  if (test.empty()) fail(errc::config, "held-out experiment needs a labeled test split");

  HeldoutReport rep;
  rep.hidden_class = hidden;
  rep.hidden_label = *hidden_id;

  auto without = filter_corpus(corpus, [&](const Document& d) { return d.split == Split::test || d.label != hidden_id; });
  auto model = fit_model(without, cfg);
  rep.k_held_out = model.k.k;
  rep.held_out = evaluate(model.index, model.encoder, test, model.k.k);

  for (const auto& d : corpus.documents())
    if (d.split == Split::train && d.label == hidden_id) model.index.add(d.id, model.encoder.encode(d), *d.label);
  const auto dev = corpus.split(Split::dev);
  const auto sel = select_k(model.index, model.encoder, dev, cfg.k_max);
  rep.k_index_plus_plus = sel.k;
  rep.index_plus_plus = evaluate(model.index, model.encoder, test, sel.k);

  auto full = fit_model(corpus, cfg);
  rep.k_full = full.k.k;
  rep.full = evaluate(full.index, full.encoder, test, full.k.k);
  return rep;
}

inline nlohmann::json to_json(const HeldoutReport& r) {
  return {{"hidden_class", r.hidden_class},
          {"held_out", to_json(r.held_out)},
          {"index_plus_plus", to_json(r.index_plus_plus)},
          {"full", to_json(r.full)},
          {"k", {{"held_out", r.k_held_out}, {"index_plus_plus", r.k_index_plus_plus}, {"full", r.k_full}}}};
}

/// Per-class F1 under the three conditions, "-" where a class cannot be predicted.
inline std::string format_table(const HeldoutReport& r) {
  std::ostringstream os;
  os << "held-out class: " << r.hidden_class << '\n';
  os << std::left << std::setw(20) << "" << std::right << std::setw(10) << "held-out" << std::setw(10) << "index++"
     << std::setw(10) << "full" << std::setw(10) << "support" << '\n';
  os << std::fixed << std::setprecision(4);
  auto cell = [&](const ClassMetrics& c) {
    if (c.predictable)
      os << std::setw(10) << c.f1;
    else
      os << std::setw(10) << "-";
  };
  for (std::size_t i = 0; i < r.full.per_class.size(); ++i) {
    os << std::left << std::setw(20) << r.full.per_class[i].name << std::right;
    cell(r.held_out.per_class[i]);
    cell(r.index_plus_plus.per_class[i]);
    cell(r.full.per_class[i]);
    os << std::setw(10) << r.full.per_class[i].support << '\n';
  }
  os << std::left << std::setw(20) << "accuracy" << std::right << std::setw(10) << r.held_out.accuracy << std::setw(10)
     << r.index_plus_plus.accuracy << std::setw(10) << r.full.accuracy << std::setw(10) << r.full.total_support << '\n';
  return os.str();
}

/// A view of the corpus whose labels are the fine annotation layer.
inline LabeledCorpus fine_label_view(const LabeledCorpus& corpus) {
  LabeledCorpus out;
  out.vocab = corpus.fine_vocab;
  for (auto d : corpus.documents()) {
    d.label = d.fine_label;
    d.fine_label.reset();
    out.add(std::move(d));
  }
  return out;
}

struct SubclassReport {
  double fine_accuracy = 0.0;
  double coarse_accuracy = 0.0;
  std::size_t k_fine = 0;
  std::size_t k_coarse = 0;
  EvalReport fine;
  /// Fine labels that co-occur with more than one coarse label.
  std::vector<std::string> nesting_violations;
};

/// Train on coarse labels only, then vote with the fine labels attached to
/// the same index rows.
inline SubclassReport run_subclass_transfer(const LabeledCorpus& corpus, const ExperimentConfig& cfg) {
  std::map<LabelId, std::set<LabelId>> parents;
  for (const auto& d : corpus.documents()) {
    if (d.label && !d.fine_label)
      fail(errc::config, "document " + std::to_string(d.id) + " has a coarse label but no fine label");
    if (d.label && d.fine_label) parents[*d.fine_label].insert(*d.label);
  }
  if (parents.empty()) fail(errc::config, "corpus carries no fine labels");

  SubclassReport rep;
  for (const auto& [fine, coarse] : parents)
    if (coarse.size() > 1) rep.nesting_violations.push_back(corpus.fine_vocab.name(fine));

  auto model = fit_model(corpus, cfg);
  rep.k_coarse = model.k.k;
  rep.coarse_accuracy = evaluate(model.index, model.encoder, corpus.split(Split::test), model.k.k).accuracy;

  const auto fine = fine_label_view(corpus);
  const auto fine_index = build(model.encoder, fine, Split::train);
  const auto sel = select_k(fine_index, model.encoder, fine.split(Split::dev), cfg.k_max);
  rep.k_fine = sel.k;
  rep.fine = evaluate(fine_index, model.encoder, fine.split(Split::test), sel.k);
  rep.fine_accuracy = rep.fine.accuracy;
  return rep;
}

inline nlohmann::json to_json(const SubclassReport& r) {
  return {{"fine_accuracy", r.fine_accuracy}, {"coarse_accuracy", r.coarse_accuracy}, {"k_fine", r.k_fine},
          {"k_coarse", r.k_coarse}, {"nesting_violations", r.nesting_violations}, {"fine", to_json(r.fine)}};
}

struct TimingReport {
  std::size_t docs = 0;
  std::size_t repetitions = 0;
  std::size_t index_size = 0;
  MeanStd encode_ms;  // per document
  MeanStd lookup_ms;  // per document
  MeanStd total_ms;   // per document
};

/// Batch inference timing: per-document encode and lookup cost, averaged
/// over `repetitions` timed passes after one warm-up pass.
inline TimingReport timing_harness(const EmbeddingIndex& index, const Encoder& encoder, std::span<const Document> docs,
                                   std::size_t k, std::size_t batch_size, std::size_t repetitions = 3) {
  if (docs.empty()) fail(errc::zero_docs, "timing needs at least one document");
  if (batch_size < 1) fail(errc::config, "batch size must be >= 1");
  if (repetitions < 1) fail(errc::config, "at least one repetition required");
  using clock = std::chrono::steady_clock;

  std::size_t sink = 0;
  auto pass = [&](double& encode_ms, double& lookup_ms) {
    encode_ms = lookup_ms = 0.0;
    std::vector<Vector> batch;
    for (std::size_t start = 0; start < docs.size(); start += batch_size) {
      const auto end = std::min(docs.size(), start + batch_size);
      batch.clear();
      const auto t0 = clock::now();
      for (std::size_t i = start; i < end; ++i) batch.push_back(encoder.encode(docs[i]));
      const auto t1 = clock::now();
      for (const auto& v : batch) sink += static_cast<std::size_t>(classify(index, v, k).label);
      const auto t2 = clock::now();
      encode_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
      lookup_ms += std::chrono::duration<double, std::milli>(t2 - t1).count();
    }
    encode_ms /= static_cast<double>(docs.size());
    lookup_ms /= static_cast<double>(docs.size());
  };

  double e = 0.0, l = 0.0;
  pass(e, l);  // warm-up
  std::vector<double> enc, look, tot;
  for (std::size_t r = 0; r < repetitions; ++r) {
    pass(e, l);
    enc.push_back(e);
    look.push_back(l);
    tot.push_back(e + l);
  }
  volatile std::size_t keep = sink;
  (void)keep;

  TimingReport rep;
  rep.docs = docs.size();
  rep.repetitions = repetitions;
  rep.index_size = index.size();
  rep.encode_ms = mean_std(enc);
  rep.lookup_ms = mean_std(look);
  rep.total_ms = mean_std(tot);
  return rep;
}

inline nlohmann::json to_json(const TimingReport& r) {
  auto ms = [](const MeanStd& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.stddev}}; };
  return {{"docs", r.docs}, {"repetitions", r.repetitions}, {"index_size", r.index_size},
          {"encode_ms_per_doc", ms(r.encode_ms)}, {"lookup_ms_per_doc", ms(r.lookup_ms)}, {"total_ms_per_doc", ms(r.total_ms)}};
}

}  // namespace cea

#endif  // CEA_EVALUATOR_HPP
