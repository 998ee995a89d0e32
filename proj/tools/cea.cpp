// Command-line front end: train, index, classify, evaluate, run the
// incremental-learning experiments, audit, and serve.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cea/config.hpp"
#include "cea/corpus.hpp"
#include "cea/encoder.hpp"
#include "cea/error.hpp"
#include "cea/evaluator.hpp"
#include "cea/explainer.hpp"
#include "cea/index.hpp"
#include "cea/service.hpp"
#include "cea/synthetic.hpp"
#include "cea/trainer.hpp"

namespace {

using cea::CorpusFormat;
using nlohmann::json;

/// Default location for a data file: $CEA_DATA_DIR/<name>, else ./<name>.
std::string data_path(const std::string& name) {
  const char* dir = std::getenv("CEA_DATA_DIR");
  if (dir == nullptr || *dir == '\0') return name;
  std::string d(dir);
  if (d.back() != '/') d.push_back('/');
  return d + name;
}

CorpusFormat format_of(const std::string& path, const std::string& requested) {
  if (requested == "tsv") return CorpusFormat::tsv;
  if (requested == "jsonl") return CorpusFormat::jsonl;
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".tsv") return CorpusFormat::tsv;
  return CorpusFormat::jsonl;
}

void write_json(const json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) cea::fail(cea::errc::io, "cannot write " + path);
  out << j.dump(2) << '\n';
}

struct CorpusArgs {
  std::string path;
  std::string format = "auto";
  std::string test_path;
  double dev_fraction = 0.1;
  bool stratify = false;
  std::uint64_t split_seed = 13;

  void add_to(CLI::App* app, bool with_test = true) {
    app->add_option("--corpus", path, "Corpus file (TSV or JSONL)")->required();
    app->add_option("--format", format, "tsv | jsonl | auto (by extension)");
    if (with_test) app->add_option("--test", test_path, "Separate test file, loaded into the test split");
    app->add_option("--dev-fraction", dev_fraction, "Dev share of train docs when the corpus has no dev split");
    app->add_flag("--stratify", stratify, "Stratify the dev split by label");
    app->add_option("--split-seed", split_seed, "Seed for the dev split");
  }

  cea::LabeledCorpus load() const {
    auto corpus = cea::load_corpus(path, format_of(path, format));
    if (!test_path.empty()) cea::append_corpus(corpus, test_path, format_of(test_path, format), cea::Split::test);
    if (corpus.count(cea::Split::dev) == 0 && corpus.n() > 0)
      corpus = cea::split_dev(corpus, dev_fraction, split_seed, stratify);
    return corpus;
  }
};

struct EncoderArgs {
  std::string checkpoint;
  std::string precomputed;

  void add_to(CLI::App* app) {
    app->add_option("--checkpoint", checkpoint, "Trained encoder parameters (default $CEA_DATA_DIR/params.bin)");
    app->add_option("--precomputed", precomputed, "Precomputed vectors JSONL instead of a checkpoint");
  }

  cea::Encoder load() const {
    if (!precomputed.empty()) return cea::Encoder(cea::load_precomputed(precomputed));
    return cea::Encoder(cea::load_params(checkpoint.empty() ? data_path("params.bin") : checkpoint));
  }
};

void add_train_options(CLI::App* app, cea::TrainConfig& cfg) {
  app->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
  app->add_option("--batch-size", cfg.batch_size, "Pairs per optimizer step")->capture_default_str();
  app->add_option("--lr", cfg.learning_rate, "AdamW learning rate")->capture_default_str();
  app->add_option("--weight-decay", cfg.weight_decay, "AdamW decoupled weight decay")->capture_default_str();
  app->add_option("--beta1", cfg.beta1)->capture_default_str();
  app->add_option("--beta2", cfg.beta2)->capture_default_str();
  app->add_option("--adam-eps", cfg.epsilon)->capture_default_str();
  app->add_option("--seed", cfg.seed)->capture_default_str();
  app->add_option("--buckets", cfg.dims.buckets, "Hash buckets")->capture_default_str();
  app->add_option("--token-dim", cfg.dims.token_dim)->capture_default_str();
  app->add_option("--hidden", cfg.dims.hidden)->capture_default_str();
  app->add_option("--dim", cfg.dims.output, "Embedding dimension")->capture_default_str();
  app->add_option("--dump-pairs", cfg.pair_dump_path, "Append every epoch's pairs to this TSV");
}

int run(int argc, char** argv) {
  CLI::App app{"Class-aligned text embeddings with k-NN classification"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a token-disjoint synthetic corpus (JSONL with splits)");
  cea::SyntheticSpec synth_spec;
  std::string synth_out = "synthetic.jsonl";
  synth->add_option("--out", synth_out)->capture_default_str();
  synth->add_option("--classes", synth_spec.classes)->capture_default_str();
  synth->add_option("--docs-per-class", synth_spec.docs_per_class)->capture_default_str();
  synth->add_option("--fine-per-class", synth_spec.fine_per_class)->capture_default_str();
  synth->add_option("--vocab-per-class", synth_spec.vocab_per_class)->capture_default_str();
  synth->add_option("--seed", synth_spec.seed)->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train the encoder; select the best epoch by dev Spearman");
  CorpusArgs train_corpus;
  train_corpus.add_to(train, false);
  cea::TrainConfig train_cfg;
  add_train_options(train, train_cfg);
  std::string train_out, train_report;
  train->add_option("--out", train_out, "Checkpoint path (default $CEA_DATA_DIR/params.bin)");
  train->add_option("--report", train_report, "TrainReport JSON (default stdout)");

  // build-index
  auto* build = app.add_subcommand("build-index", "Encode the train split into a k-NN index and select k on dev");
  CorpusArgs build_corpus;
  build_corpus.add_to(build, false);
  EncoderArgs build_enc;
  build_enc.add_to(build);
  std::string build_out;
  std::size_t build_kmax = 100;
  build->add_option("--out", build_out, "Index path (default $CEA_DATA_DIR/index.bin)");
  build->add_option("--k-max", build_kmax, "Upper end of the k search")->capture_default_str();

  // classify
  auto* classify = app.add_subcommand("classify", "Classify text and print the justifying neighbors");
  EncoderArgs cls_enc;
  cls_enc.add_to(classify);
  std::string cls_index, cls_corpus, cls_format = "auto";
  std::vector<std::string> cls_texts;
  std::size_t cls_k = 5;
  classify->add_option("--index", cls_index, "Index path (default $CEA_DATA_DIR/index.bin)");
  classify->add_option("--corpus", cls_corpus, "Corpus used to resolve neighbor texts");
  classify->add_option("--format", cls_format);
  classify->add_option("--k", cls_k)->capture_default_str();
  classify->add_option("text", cls_texts, "Texts to classify (reads stdin lines when omitted)");

  // eval
  auto* eval = app.add_subcommand("eval", "Accuracy and per-class P/R/F1 on a split");
  CorpusArgs eval_corpus;
  eval_corpus.add_to(eval);
  EncoderArgs eval_enc;
  eval_enc.add_to(eval);
  std::string eval_index, eval_split = "test", eval_out;
  std::size_t eval_k = 5;
  eval->add_option("--index", eval_index, "Index path (default $CEA_DATA_DIR/index.bin)");
  eval->add_option("--split", eval_split)->capture_default_str();
  eval->add_option("--k", eval_k)->capture_default_str();
  eval->add_option("--out", eval_out, "Report JSON (table goes to stdout)");

  // experiment
  auto* experiment = app.add_subcommand("experiment", "Incremental-learning experiments and timing");
  experiment->require_subcommand(1);
  CorpusArgs exp_corpus;
  std::string exp_config, exp_out, exp_hidden;
  std::size_t exp_seeds = 1;
  auto add_exp_common = [&](CLI::App* sub) {
    exp_corpus.add_to(sub);
    sub->add_option("--config", exp_config, "Experiment JSON config");
    sub->add_option("--seeds", exp_seeds, "Repeat with this many consecutive training seeds")->capture_default_str();
    sub->add_option("--out", exp_out, "Report JSON (table goes to stdout)");
  };
  auto* exp_heldout = experiment->add_subcommand("heldout", "Hide one class during training");
  add_exp_common(exp_heldout);
  exp_heldout->add_option("--hidden", exp_hidden, "Class to hide");
  auto* exp_incremental = experiment->add_subcommand("incremental", "Train on x%, then add the rest to the index");
  add_exp_common(exp_incremental);
  auto* exp_subclass = experiment->add_subcommand("subclass", "Train on coarse labels, vote with fine labels");
  add_exp_common(exp_subclass);
  auto* exp_timing = experiment->add_subcommand("timing", "Per-document encode/lookup latency");
  add_exp_common(exp_timing);

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP service over a trained encoder and index");
  cea::ServeConfig serve_cfg;
  std::string serve_format = "auto";
  serve->add_option("--host", serve_cfg.host)->capture_default_str();
  serve->add_option("--port", serve_cfg.port)->capture_default_str();
  serve->add_option("--checkpoint", serve_cfg.checkpoint_path, "Encoder parameters (default $CEA_DATA_DIR/params.bin)");
  serve->add_option("--precomputed", serve_cfg.precomputed_path);
  serve->add_option("--index", serve_cfg.index_path, "Index path (default $CEA_DATA_DIR/index.bin)");
  serve->add_option("--corpus", serve_cfg.corpus_path, "Corpus for neighbor texts and /report");
  serve->add_option("--format", serve_format);
  serve->add_option("--audit-log", serve_cfg.audit_log_path, "Write-ahead mutation log (default $CEA_DATA_DIR/audit.jsonl)");
  serve->add_option("--projection-csv", serve_cfg.projection_csv, "External 2-D coordinates to serve instead of PCA");
  serve->add_option("--static-dir", serve_cfg.static_dir, "Static UI bundle to mount at /");
  serve->add_option("--k", serve_cfg.k)->capture_default_str();

  // export-projection
  auto* proj = app.add_subcommand("export-projection", "PCA 2-D coordinates as CSV id,x,y,label");
  std::string proj_index, proj_out = "projection.csv";
  proj->add_option("--index", proj_index, "Index path (default $CEA_DATA_DIR/index.bin)");
  proj->add_option("--out", proj_out)->capture_default_str();

  // anomalies
  auto* anomalies = app.add_subcommand("anomalies", "Label-inconsistency and duplicate flags as JSONL");
  std::string an_index, an_out = "-";
  std::size_t an_k = 5;
  double an_min = 0.5, an_eps = 1e-6;
  anomalies->add_option("--index", an_index, "Index path (default $CEA_DATA_DIR/index.bin)");
  anomalies->add_option("--k", an_k)->capture_default_str();
  anomalies->add_option("--min-disagreement", an_min)->capture_default_str();
  anomalies->add_option("--epsilon", an_eps, "Duplicate distance threshold")->capture_default_str();
  anomalies->add_option("--out", an_out, "Output JSONL (- for stdout)")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  auto index_or_default = [](const std::string& p) { return p.empty() ? data_path("index.bin") : p; };

  if (*synth) {
    const auto corpus = cea::make_synthetic_corpus(synth_spec);
    cea::save_corpus(corpus, synth_out, CorpusFormat::jsonl);
    std::cerr << "wrote " << corpus.size() << " documents to " << synth_out << '\n';
  } else if (*train) {
    const auto corpus = train_corpus.load();
    train_cfg.checkpoint_path = train_out.empty() ? data_path("params.bin") : train_out;
    const auto result = cea::train(corpus, train_cfg, [](std::size_t e, double loss, double rho) {
      std::cerr << "epoch " << e << "  loss " << loss << "  dev spearman " << rho << '\n';
    });
    write_json(cea::to_json(result.report), train_report);
    std::cerr << "best epoch " << result.report.best_epoch << ", checkpoint " << train_cfg.checkpoint_path << '\n';
  } else if (*build) {
    const auto corpus = build_corpus.load();
    const auto enc = build_enc.load();
    const auto index = cea::build(enc, corpus);
    const auto out = index_or_default(build_out);
    index.save(out);
    json meta{{"index", out}, {"size", index.size()}, {"dim", index.dim()}};
    if (corpus.count(cea::Split::dev) > 0) {
      const auto sel = cea::select_k(index, enc, corpus.split(cea::Split::dev), build_kmax);
      meta["k"] = sel.k;
      meta["dev_accuracy"] = sel.accuracy;
    }
    write_json(meta, "-");
  } else if (*classify) {
    const auto enc = cls_enc.load();
    const auto index = cea::EmbeddingIndex::load(index_or_default(cls_index), enc.dim());
    cea::LabeledCorpus texts;
    if (!cls_corpus.empty()) texts = cea::load_corpus(cls_corpus, format_of(cls_corpus, cls_format));
    auto one = [&](const std::string& t) {
      std::cout << cea::to_json(cea::explain(index, enc, texts, t, cls_k), index.vocab()).dump() << '\n';
    };
    if (cls_texts.empty()) {
      for (std::string line; std::getline(std::cin, line);)
        if (!cea::trim(line).empty()) one(line);
    } else {
      for (const auto& t : cls_texts) one(t);
    }
  } else if (*eval) {
    const auto corpus = eval_corpus.load();
    const auto enc = eval_enc.load();
    const auto index = cea::EmbeddingIndex::load(index_or_default(eval_index), enc.dim());
    const auto split = cea::parse_split(eval_split);
    if (!split) cea::fail(cea::errc::config, "unknown split " + eval_split);
    const auto report = cea::evaluate(index, enc, corpus.split(*split), eval_k);
    std::cout << cea::format_table(report);
    if (!eval_out.empty()) write_json(cea::to_json(report), eval_out);
  } else if (*experiment) {
    const auto corpus = exp_corpus.load();
    auto file = exp_config.empty() ? cea::ExperimentFile{} : cea::experiment_file_from_json(cea::read_json_file(exp_config));
    if (!exp_hidden.empty()) file.hidden_class = exp_hidden;
    if (exp_seeds < 1) cea::fail(cea::errc::config, "--seeds must be >= 1");
    json runs = json::array();
    std::vector<double> headline;
    const auto base_seed = file.experiment.train.seed;
    for (std::size_t s = 0; s < exp_seeds; ++s) {
      auto cfg = file.experiment;
      cfg.train.seed = base_seed + s;
      if (*exp_heldout) {
        if (file.hidden_class.empty()) cea::fail(cea::errc::config, "--hidden (or hidden_class in the config) is required");
        const auto rep = cea::run_heldout_class(corpus, file.hidden_class, cfg);
        std::cout << cea::format_table(rep);
        runs.push_back(cea::to_json(rep));
        headline.push_back(rep.index_plus_plus.accuracy);
      } else if (*exp_incremental) {
        const auto rep = cea::run_incremental_data(corpus, file.fractions, cfg);
        std::cout << cea::format_table(rep);
        runs.push_back(cea::to_json(rep));
        headline.push_back(rep.full_reference);
      } else if (*exp_subclass) {
        const auto rep = cea::run_subclass_transfer(corpus, cfg);
        std::cout << "fine-label accuracy " << rep.fine_accuracy << " (k=" << rep.k_fine << "), coarse accuracy "
                  << rep.coarse_accuracy << '\n';
        runs.push_back(cea::to_json(rep));
        headline.push_back(rep.fine_accuracy);
      } else {
        const auto model = cea::fit_model(corpus, cfg);
        const auto k = file.timing_k ? file.timing_k : model.k.k;
        const auto test = corpus.split(cea::Split::test).empty() ? corpus.split(cea::Split::dev) : corpus.split(cea::Split::test);
        const auto rep = cea::timing_harness(model.index, model.encoder, test, k, file.timing_batch, file.timing_reps);
        std::cout << "encode " << rep.encode_ms.mean << " ms/doc (sd " << rep.encode_ms.stddev << "), lookup "
                  << rep.lookup_ms.mean << " ms/doc (sd " << rep.lookup_ms.stddev << "), index size " << rep.index_size << '\n';
        runs.push_back(cea::to_json(rep));
        headline.push_back(rep.total_ms.mean);
      }
    }
    const auto agg = cea::mean_std(headline);
    json out{{"runs", runs}, {"seeds", exp_seeds}, {"headline", {{"mean", agg.mean}, {"std", agg.stddev}}}};
    if (exp_seeds > 1) std::cout << "over " << exp_seeds << " seeds: " << agg.mean << " +- " << agg.stddev << '\n';
    if (!exp_out.empty()) write_json(out, exp_out);
  } else if (*serve) {
    if (serve_cfg.checkpoint_path.empty() && serve_cfg.precomputed_path.empty()) serve_cfg.checkpoint_path = data_path("params.bin");
    serve_cfg.index_path = index_or_default(serve_cfg.index_path);
    if (serve_cfg.audit_log_path.empty()) serve_cfg.audit_log_path = data_path("audit.jsonl");
    serve_cfg.corpus_format = format_of(serve_cfg.corpus_path, serve_format);
    auto session = cea::open_session(serve_cfg);
    cea::HttpService http(*session, serve_cfg.static_dir);
    const int port = http.bind(serve_cfg.host, serve_cfg.port);
    std::cerr << "listening on http://" << serve_cfg.host << ':' << port << '\n';
    http.listen();
  } else if (*proj) {
    const auto index = cea::EmbeddingIndex::load(index_or_default(proj_index));
    cea::write_projection_csv(cea::project_2d(index).points, index.vocab(), proj_out);
  } else if (*anomalies) {
    const auto index = cea::EmbeddingIndex::load(index_or_default(an_index));
    auto flags = cea::flag_inconsistencies(index, an_k, an_min);
    const auto dups = cea::find_near_duplicates(index, an_eps);
    flags.insert(flags.end(), dups.begin(), dups.end());
    if (an_out == "-") {
      for (const auto& f : flags) std::cout << cea::to_json(f, index.vocab()).dump() << '\n';
    } else {
      cea::write_anomalies_jsonl(flags, index.vocab(), an_out);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const cea::error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
