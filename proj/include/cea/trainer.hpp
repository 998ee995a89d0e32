#ifndef CEA_TRAINER_HPP
#define CEA_TRAINER_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cea/corpus.hpp"
#include "cea/encoder.hpp"
#include "cea/error.hpp"
#include "cea/sampler.hpp"

namespace cea {

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(errc::dimension_mismatch, "cosine of vectors with different dimensions");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (!(na > 0.0) || !(nb > 0.0)) fail(errc::degenerate_cosine, "cosine with a zero-norm vector");
  if (std::equal(a.begin(), a.end(), b.begin())) return 1.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

inline double cosine_similarity(const Vector& a, const Vector& b) {
  return cosine_similarity(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
                           std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

/// Squared error between the pair target and the predicted similarity.
inline double pair_loss(double y_hat, int y) {
  if (y != 0 && y != 1) fail(errc::config, "pair target must be 0 or 1");
  const double r = static_cast<double>(y) - y_hat;
  return r * r;
}

/// 1-based ranks; tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  const auto n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) fail(errc::undefined_correlation, "correlation of a constant sequence");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Spearman rank correlation (Pearson on average ranks).
inline double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) fail(errc::config, "spearman needs sequences of equal length");
  if (xs.size() < 2) fail(errc::config, "spearman needs at least two observations");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson(rx, ry);
}

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 42;
  EncoderDims dims;
  /// When set, the best-epoch parameters are written here as they improve.
  std::string checkpoint_path;
  /// When set, every epoch's pairs are appended here as TSV.
  std::string pair_dump_path;

  void validate() const {
    if (epochs < 1) fail(errc::config, "epochs must be >= 1");
    if (batch_size < 1) fail(errc::config, "batch_size must be >= 1");
    if (!(learning_rate > 0.0)) fail(errc::config, "learning_rate must be > 0");
    if (weight_decay < 0.0) fail(errc::config, "weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail(errc::config, "adam betas must lie in [0,1)");
    if (!(epsilon > 0.0)) fail(errc::config, "adam epsilon must be > 0");
    if (dims.buckets == 0 || dims.token_dim == 0 || dims.hidden == 0 || dims.output == 0)
      fail(errc::config, "encoder dimensions must be positive");
  }
};

struct TrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> dev_spearman;  // NaN when undefined for that epoch
  std::size_t best_epoch = 0;

  friend bool operator==(const TrainReport& a, const TrainReport& b) {
    auto same = [](const std::vector<double>& x, const std::vector<double>& y) {
      if (x.size() != y.size()) return false;
      for (std::size_t i = 0; i < x.size(); ++i)
        if (!(x[i] == y[i] || (std::isnan(x[i]) && std::isnan(y[i])))) return false;
      return true;
    };
    return a.best_epoch == b.best_epoch && same(a.epoch_loss, b.epoch_loss) && same(a.dev_spearman, b.dev_spearman);
  }

  double best_spearman() const { return dev_spearman.empty() ? std::numeric_limits<double>::quiet_NaN() : dev_spearman[best_epoch]; }
};

inline nlohmann::json to_json(const TrainReport& r) {
  auto arr = [](const std::vector<double>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (double x : v) a.push_back(std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr));
    return a;
  };
  return {{"epoch_loss", arr(r.epoch_loss)}, {"dev_spearman", arr(r.dev_spearman)}, {"best_epoch", r.best_epoch}};
}

/// Decoupled weight decay Adam:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
///
/// A token-table row that has never received a gradient has zero moments, so
/// its update reduces to p <- (1 - lr * weight_decay) p. Those rows are
/// scaled lazily: until flush(), they lag by pending_decay().
class AdamW {
 public:
  AdamW(const EncoderDims& dims, const TrainConfig& cfg)
      : cfg_(cfg),
        m_(EncoderParams::zeros(dims)),
        v_(EncoderParams::zeros(dims)),
        active_(dims.buckets, 0) {}

  std::size_t steps() const { return t_; }
  double pending_decay() const { return pending_; }

  void step(EncoderParams& p, const EncoderGradients& g) {
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));

    for (const auto& [bucket, row] : g.table_rows) {
      if (!active_[bucket]) {
        active_[bucket] = 1;
        active_rows_.push_back(bucket);
        p.table.row(bucket) *= pending_;
      }
    }
    for (auto bucket : active_rows_) {
      m_.table.row(bucket) *= b1;
      v_.table.row(bucket) *= b2;
    }
    for (const auto& [bucket, row] : g.table_rows) {
      m_.table.row(bucket) += (1.0 - b1) * row.transpose();
      v_.table.row(bucket) += (1.0 - b2) * row.transpose().array().square().matrix();
    }
    for (auto bucket : active_rows_)
      update(p.table.row(bucket).array(), m_.table.row(bucket).array(), v_.table.row(bucket).array(), c1, c2);
    pending_ *= 1.0 - cfg_.learning_rate * cfg_.weight_decay;

    dense(p.w1, m_.w1, v_.w1, g.w1, c1, c2);
    dense(p.b1, m_.b1, v_.b1, g.b1, c1, c2);
    dense(p.w2, m_.w2, v_.w2, g.w2, c1, c2);
    dense(p.b2, m_.b2, v_.b2, g.b2, c1, c2);
  }

  /// Applies the pending decay to all never-updated table rows.
  void flush(EncoderParams& p) {
    if (pending_ == 1.0) return;
    for (Eigen::Index b = 0; b < p.table.rows(); ++b)
      if (!active_[static_cast<std::size_t>(b)]) p.table.row(b) *= pending_;
    pending_ = 1.0;
  }

 private:
  template <typename P, typename M>
  void update(P&& p, const M& m, const M& v, double c1, double c2) const {
    p -= cfg_.learning_rate * ((m / c1) / ((v / c2).sqrt() + cfg_.epsilon) + cfg_.weight_decay * p);
  }

  template <typename T>
  void dense(T& p, T& m, T& v, const T& g, double c1, double c2) const {
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = (cfg_.beta2 * v.array() + (1.0 - cfg_.beta2) * g.array().square()).matrix();
    update(p.array(), m.array(), v.array(), c1, c2);
  }

  TrainConfig cfg_;
  EncoderParams m_;
  EncoderParams v_;
  std::vector<char> active_;
  std::vector<BucketId> active_rows_;
  double pending_ = 1.0;
  std::size_t t_ = 0;
};

/// Fixed pair set over the dev split: one sampling pass with its own seed.
inline std::vector<PairSample> make_dev_pairs(const LabeledCorpus& corpus, std::uint64_t seed) {
  const auto dev = corpus.split(Split::dev);
  if (dev.empty()) fail(errc::config, "training requires a non-empty dev split for model selection");
  Rng rng(seed ^ 0x9E3779B97F4A7C15ull);
  try {
    return sample_epoch(std::span<const Document>(dev), rng, false);
  } catch (const error& e) {
    if (e.code() == errc::no_negatives) fail(errc::config, "dev split needs at least two labels");
    throw;
  }
}

/// Spearman correlation between predicted cosine and pair targets.
inline double dev_spearman(const EncoderParams& params, const LabeledCorpus& corpus, const std::vector<PairSample>& pairs) {
  std::unordered_map<DocId, Vector> cache;
  auto emb = [&](DocId id) -> const Vector& {
    auto it = cache.find(id);
    if (it == cache.end()) it = cache.emplace(id, encode_text(params, corpus.at(id).text)).first;
    return it->second;
  };
  std::vector<double> predicted, targets;
  predicted.reserve(pairs.size());
  targets.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto& a = emb(p.anchor_id);
    const auto& b = emb(p.other_id);
    const double na = a.norm(), nb = b.norm();
    predicted.push_back(na > 0.0 && nb > 0.0 ? a.dot(b) / (na * nb) : 0.0);
    targets.push_back(static_cast<double>(p.target));
  }
  return spearman(predicted, targets);
}

struct TrainResult {
  EncoderParams params;
  TrainReport report;
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss, double dev_rho)>;

/// Siamese training on the train split; model selection on dev Spearman.
/// Returns the parameters of the best epoch.
inline TrainResult train(const LabeledCorpus& corpus, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const auto train_docs = corpus.split(Split::train);
  if (train_docs.empty()) fail(errc::config, "training split is empty");
  const auto dev_pairs = make_dev_pairs(corpus, cfg.seed);

  auto params = EncoderParams::random(cfg.dims, cfg.seed);
  AdamW opt(cfg.dims, cfg);
  Rng rng(cfg.seed + 1);

  TrainResult best{params, {}};
  double best_rho = -std::numeric_limits<double>::infinity();
  bool have_best = false;
  if (!cfg.pair_dump_path.empty()) write_pairs_tsv({}, cfg.pair_dump_path);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto pairs = sample_epoch(std::span<const Document>(train_docs), rng);
    if (!cfg.pair_dump_path.empty()) write_pairs_tsv(pairs, cfg.pair_dump_path, true);

    double loss_sum = 0.0;
    for (std::size_t start = 0, batch = 0; start < pairs.size(); start += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(pairs.size(), start + cfg.batch_size);
      auto grads = EncoderGradients::zeros(cfg.dims);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const auto& pr = pairs[i];
        auto pg = encode_gradients(params, corpus.at(pr.anchor_id).text, corpus.at(pr.other_id).text, pr.target);
        batch_loss += pg.loss;
        grads += pg.grads;
      }
      const double count = static_cast<double>(end - start);
      batch_loss /= count;
      if (!std::isfinite(batch_loss))
        fail(errc::training_diverged, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch));
      grads *= 1.0 / count;
      opt.step(params, grads);
      loss_sum += batch_loss * count;
    }
    const double mean_loss = loss_sum / static_cast<double>(pairs.size());
    opt.flush(params);

    double rho = std::numeric_limits<double>::quiet_NaN();
    try {
      rho = dev_spearman(params, corpus, dev_pairs);
    } catch (const error& e) {
      if (e.code() != errc::undefined_correlation) throw;
    }
    best.report.epoch_loss.push_back(mean_loss);
    best.report.dev_spearman.push_back(rho);
    // The first epoch is the fallback when every correlation is undefined.
    const bool improves = std::isfinite(rho) && rho > best_rho;
    if (!have_best || improves) {
      if (std::isfinite(rho)) best_rho = rho;
      best.params = params;
      best.report.best_epoch = epoch;
      have_best = true;
      if (!cfg.checkpoint_path.empty()) save_params(best.params, cfg.checkpoint_path);
    }
    if (on_epoch) on_epoch(epoch, mean_loss, rho);
  }
  return best;
}

}  // namespace cea

#endif  // CEA_TRAINER_HPP
