#ifndef CEA_ENCODER_HPP
#define CEA_ENCODER_HPP

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cea/binary_io.hpp"
#include "cea/corpus.hpp"
#include "cea/error.hpp"

namespace cea {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BucketId = std::uint32_t;

struct EncoderDims {
  std::size_t buckets = std::size_t{1} << 16;
  std::size_t token_dim = 64;
  std::size_t hidden = 64;
  std::size_t output = 64;

  friend bool operator==(const EncoderDims&, const EncoderDims&) = default;
};

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Lowercased words split on whitespace and ASCII punctuation. Non-ASCII
/// bytes are kept as word characters.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : text) {
    if (c >= 0x80 || std::isalnum(c)) {
      cur.push_back(static_cast<char>(c >= 0x80 ? c : std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

/// Unigram buckets followed by bigram buckets, each hash taken modulo `buckets`.
inline std::vector<BucketId> tokenize(std::string_view text, std::size_t buckets) {
  if (buckets == 0) fail(errc::config, "bucket count must be positive");
  const auto words = split_words(text);
  if (words.empty()) fail(errc::empty_tokens, "text yields no tokens: \"" + std::string(text) + "\"");
  std::vector<BucketId> ids;
  ids.reserve(2 * words.size() - 1);
  for (const auto& w : words) ids.push_back(static_cast<BucketId>(fnv1a(w) % buckets));
  for (std::size_t i = 1; i < words.size(); ++i)
    ids.push_back(static_cast<BucketId>(fnv1a(words[i - 1] + '\x1f' + words[i]) % buckets));
  return ids;
}

/// Trainable encoder state: hashed token table, then a tanh hidden layer and
/// a linear output layer. `w1` is hidden x token_dim and `w2` output x hidden.
struct EncoderParams {
  EncoderDims dims;
  RowMatrix table;
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;

  static EncoderParams zeros(const EncoderDims& dims) {
    EncoderParams p;
    p.dims = dims;
    const auto B = static_cast<Eigen::Index>(dims.buckets), E = static_cast<Eigen::Index>(dims.token_dim),
               H = static_cast<Eigen::Index>(dims.hidden), D = static_cast<Eigen::Index>(dims.output);
    p.table = RowMatrix::Zero(B, E);
    p.w1 = Matrix::Zero(H, E);
    p.b1 = Vector::Zero(H);
    p.w2 = Matrix::Zero(D, H);
    p.b2 = Vector::Zero(D);
    return p;
  }

  /// Every entry drawn from uniform(-0.05, 0.05).
  static EncoderParams random(const EncoderDims& dims, std::uint64_t seed) {
    auto p = zeros(dims);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    p.for_each_block([&](double* data, std::size_t count) {
      for (std::size_t i = 0; i < count; ++i) data[i] = u(rng);
    });
    return p;
  }

  std::size_t parameter_count() const {
    return static_cast<std::size_t>(table.size() + w1.size() + b1.size() + w2.size() + b2.size());
  }

  /// Visits the contiguous storage of each parameter block in a fixed order.
  template <typename F>
  void for_each_block(F&& f) {
    f(table.data(), static_cast<std::size_t>(table.size()));
    f(w1.data(), static_cast<std::size_t>(w1.size()));
    f(b1.data(), static_cast<std::size_t>(b1.size()));
    f(w2.data(), static_cast<std::size_t>(w2.size()));
    f(b2.data(), static_cast<std::size_t>(b2.size()));
  }

  template <typename F>
  void for_each_block(F&& f) const {
    f(table.data(), static_cast<std::size_t>(table.size()));
    f(w1.data(), static_cast<std::size_t>(w1.size()));
    f(b1.data(), static_cast<std::size_t>(b1.size()));
    f(w2.data(), static_cast<std::size_t>(w2.size()));
    f(b2.data(), static_cast<std::size_t>(b2.size()));
  }

  bool all_finite() const {
    bool ok = true;
    for_each_block([&](const double* d, std::size_t n) {
      for (std::size_t i = 0; i < n && ok; ++i) ok = std::isfinite(d[i]);
    });
    return ok;
  }

  friend bool operator==(const EncoderParams& a, const EncoderParams& b) {
    return a.dims == b.dims && a.table == b.table && a.w1 == b.w1 && a.b1 == b.b1 && a.w2 == b.w2 && a.b2 == b.b2;
  }
};

/// Intermediate values of one forward pass, kept for backpropagation.
struct ForwardPass {
  std::vector<BucketId> tokens;
  Vector pooled;
  Vector hidden;
  Vector output;
};

inline ForwardPass forward(const EncoderParams& p, std::string_view text) {
  ForwardPass fp;
  fp.tokens = tokenize(text, p.dims.buckets);
  fp.pooled = Vector::Zero(static_cast<Eigen::Index>(p.dims.token_dim));
  for (auto t : fp.tokens) fp.pooled += p.table.row(t).transpose();
  fp.pooled /= static_cast<double>(fp.tokens.size());
  fp.hidden = (p.w1 * fp.pooled + p.b1).array().tanh().matrix();
  fp.output = p.w2 * fp.hidden + p.b2;
  return fp;
}

inline Vector encode_text(const EncoderParams& p, std::string_view text) { return forward(p, text).output; }

/// Gradient of a scalar loss w.r.t. EncoderParams. Token-table rows are
/// sparse: only buckets that occurred in the inputs are present.
struct EncoderGradients {
  std::map<BucketId, Vector> table_rows;
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;

  static EncoderGradients zeros(const EncoderDims& dims) {
    EncoderGradients g;
    g.w1 = Matrix::Zero(static_cast<Eigen::Index>(dims.hidden), static_cast<Eigen::Index>(dims.token_dim));
    g.b1 = Vector::Zero(static_cast<Eigen::Index>(dims.hidden));
    g.w2 = Matrix::Zero(static_cast<Eigen::Index>(dims.output), static_cast<Eigen::Index>(dims.hidden));
    g.b2 = Vector::Zero(static_cast<Eigen::Index>(dims.output));
    return g;
  }

  EncoderGradients& operator+=(const EncoderGradients& o) {
    for (const auto& [b, row] : o.table_rows) {
      auto [it, inserted] = table_rows.try_emplace(b, row);
      if (!inserted) it->second += row;
    }
    w1 += o.w1;
    b1 += o.b1;
    w2 += o.w2;
    b2 += o.b2;
    return *this;
  }

  EncoderGradients& operator*=(double s) {
    for (auto& [b, row] : table_rows) row *= s;
    w1 *= s;
    b1 *= s;
    w2 *= s;
    b2 *= s;
    return *this;
  }
};

/// Backpropagates dL/d(output) through one tower, accumulating into `grads`.
inline void backward(const EncoderParams& p, const ForwardPass& fp, const Vector& d_output, EncoderGradients& grads) {
  grads.w2.noalias() += d_output * fp.hidden.transpose();
  grads.b2 += d_output;
  const Vector d_pre = ((p.w2.transpose() * d_output).array() * (1.0 - fp.hidden.array().square())).matrix();
  grads.w1.noalias() += d_pre * fp.pooled.transpose();
  grads.b1 += d_pre;
  const Vector d_pooled = (p.w1.transpose() * d_pre) / static_cast<double>(fp.tokens.size());
  for (auto t : fp.tokens) {
    auto [it, inserted] = grads.table_rows.try_emplace(t, d_pooled);
    if (!inserted) it->second += d_pooled;
  }
}

struct PairGradient {
  double loss = 0.0;
  double cosine = 0.0;
  EncoderGradients grads;
};

/// Loss (target - cos(e_a, e_b))^2 and its exact gradient. Both towers share
/// the parameters, so their contributions are summed.
inline PairGradient encode_gradients(const EncoderParams& p, std::string_view text_a, std::string_view text_b, int target) {
  if (target != 0 && target != 1) fail(errc::config, "pair target must be 0 or 1");
  const auto fa = forward(p, text_a);
  const auto fb = forward(p, text_b);
  const double na = fa.output.norm();
  const double nb = fb.output.norm();
  PairGradient out;
  // Overflowed parameters surface as a NaN loss; the trainer reports it.
  if (!std::isfinite(na) || !std::isfinite(nb)) {
    out.loss = out.cosine = std::numeric_limits<double>::quiet_NaN();
    out.grads = EncoderGradients::zeros(p.dims);
    return out;
  }
  if (!(na > 0.0) || !(nb > 0.0)) fail(errc::degenerate_cosine, "zero-norm embedding in training pair");

  // Identical embeddings get cos = 1 exactly, so an identical positive pair is stationary.
  out.cosine = fa.output == fb.output ? 1.0 : fa.output.dot(fb.output) / (na * nb);
  const double residual = static_cast<double>(target) - out.cosine;
  out.loss = residual * residual;
  const double d_cos = -2.0 * residual;

  // d cos / d a = b/(|a||b|) - cos * a/|a|^2, symmetric for b.
  const Vector d_a = d_cos * (fb.output / (na * nb) - out.cosine * fa.output / (na * na));
  const Vector d_b = d_cos * (fa.output / (na * nb) - out.cosine * fb.output / (nb * nb));

  out.grads = EncoderGradients::zeros(p.dims);
  backward(p, fa, d_a, out.grads);
  backward(p, fb, d_b, out.grads);
  return out;
}

// --- persistence -----------------------------------------------------------

inline constexpr char kParamsMagic[9] = "CEAPARAM";
inline constexpr std::uint32_t kParamsVersion = 1;

inline void save_params(const EncoderParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(errc::io, "cannot write " + path);
  binary::write_magic(out, kParamsMagic);
  binary::write(out, kParamsVersion);
  for (auto v : {p.dims.buckets, p.dims.token_dim, p.dims.hidden, p.dims.output})
    binary::write<std::uint64_t>(out, v);
  p.for_each_block([&](const double* d, std::size_t n) { binary::write_doubles(out, d, n); });
  if (!out) fail(errc::io, "failed writing " + path);
}

inline EncoderParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(errc::io, "cannot open " + path);
  binary::expect_magic(in, kParamsMagic, path);
  if (binary::read<std::uint32_t>(in, "version") != kParamsVersion) fail(errc::corrupt_file, path + ": unsupported version");
  EncoderDims dims;
  dims.buckets = binary::read<std::uint64_t>(in, "buckets");
  dims.token_dim = binary::read<std::uint64_t>(in, "token_dim");
  dims.hidden = binary::read<std::uint64_t>(in, "hidden");
  dims.output = binary::read<std::uint64_t>(in, "output");
  constexpr std::uint64_t limit = std::uint64_t{1} << 28;
  if (dims.buckets == 0 || dims.token_dim == 0 || dims.hidden == 0 || dims.output == 0 ||
      dims.buckets * dims.token_dim > limit || dims.hidden * dims.token_dim > limit || dims.output * dims.hidden > limit)
    fail(errc::corrupt_file, path + ": implausible dimensions");
  auto p = EncoderParams::zeros(dims);
  p.for_each_block([&](double* d, std::size_t n) { binary::read_doubles(in, d, n, "parameters"); });
  if (in.peek() != std::ifstream::traits_type::eof()) fail(errc::corrupt_file, path + ": trailing bytes");
  if (!p.all_finite()) fail(errc::corrupt_file, path + ": non-finite parameter");
  return p;
}

// --- precomputed vectors -----------------------------------------------------

/// Externally produced document vectors keyed by document id.
struct PrecomputedVectors {
  std::size_t dim = 0;
  std::unordered_map<DocId, Vector> vectors;

  void insert(DocId id, Vector v) {
    if (dim == 0) dim = static_cast<std::size_t>(v.size());
    if (static_cast<std::size_t>(v.size()) != dim)
      fail(errc::dimension_mismatch, "vector for id " + std::to_string(id) + " has dim " + std::to_string(v.size()) +
                                         ", expected " + std::to_string(dim));
    if (!v.allFinite()) fail(errc::config, "vector for id " + std::to_string(id) + " is not finite");
    vectors[id] = std::move(v);
  }
};

/// JSONL, one `{"id": int, "vector": [reals]}` per line.
inline PrecomputedVectors load_precomputed(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(errc::io, "cannot open " + path);
  PrecomputedVectors pv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      auto rec = nlohmann::json::parse(line);
      const auto& arr = rec.at("vector");
      Vector v(static_cast<Eigen::Index>(arr.size()));
      for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
      if (pv.vectors.count(rec.at("id").get<DocId>())) throw std::invalid_argument("duplicate id");
      pv.insert(rec.at("id").get<DocId>(), std::move(v));
    } catch (const cea::error& e) {
      fail(e.code(), path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const std::exception& e) {
      fail(errc::parse, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (pv.vectors.empty()) fail(errc::empty_corpus, path + " contains no vectors");
  return pv;
}

/// One encoding contract over both encoder kinds.
class Encoder {
 public:
  explicit Encoder(EncoderParams params) : impl_(std::move(params)) {}
  explicit Encoder(PrecomputedVectors vectors) : impl_(std::move(vectors)) {}

  bool trainable() const { return std::holds_alternative<EncoderParams>(impl_); }

  std::size_t dim() const {
    if (const auto* p = std::get_if<EncoderParams>(&impl_)) return p->dims.output;
    return std::get<PrecomputedVectors>(impl_).dim;
  }

  Vector encode(const Document& doc) const {
    if (const auto* p = std::get_if<EncoderParams>(&impl_)) return encode_text(*p, doc.text);
    const auto& pv = std::get<PrecomputedVectors>(impl_);
    auto it = pv.vectors.find(doc.id);
    if (it == pv.vectors.end()) fail(errc::unknown_id, "no precomputed vector for document " + std::to_string(doc.id));
    return it->second;
  }

  /// Free text has no id, so only the trainable encoder can embed it.
  Vector encode(std::string_view text) const {
    if (const auto* p = std::get_if<EncoderParams>(&impl_)) return encode_text(*p, text);
    fail(errc::unknown_id, "precomputed encoder cannot embed free text");
  }

  const EncoderParams* params() const { return std::get_if<EncoderParams>(&impl_); }
  const PrecomputedVectors* precomputed() const { return std::get_if<PrecomputedVectors>(&impl_); }

 private:
  std::variant<EncoderParams, PrecomputedVectors> impl_;
};

}  // namespace cea

#endif  // CEA_ENCODER_HPP
