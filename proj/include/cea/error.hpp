#ifndef CEA_ERROR_HPP
#define CEA_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace cea {

enum class errc {
  parse,                 // malformed input record
  empty_corpus,
  config,                // invalid option / precondition on arguments
  empty_tokens,
  unknown_id,            // precomputed encoder has no vector for the doc
  degenerate_cosine,     // cosine with a zero-norm vector
  degenerate_norm,       // normalizing a zero vector
  no_negatives,          // single-label training split
  training_diverged,
  undefined_correlation, // Spearman on a constant sequence
  empty_index,
  duplicate_id,
  not_found,
  degenerate_projection,
  zero_docs,
  dimension_mismatch,
  io,
  corrupt_file,
};

inline std::string_view to_string(errc code) {
  switch (code) {
    case errc::parse: return "parse";
    case errc::empty_corpus: return "empty_corpus";
    case errc::config: return "config";
    case errc::empty_tokens: return "empty_tokens";
    case errc::unknown_id: return "unknown_id";
    case errc::degenerate_cosine: return "degenerate_cosine";
    case errc::degenerate_norm: return "degenerate_norm";
    case errc::no_negatives: return "no_negatives";
    case errc::training_diverged: return "training_diverged";
    case errc::undefined_correlation: return "undefined_correlation";
    case errc::empty_index: return "empty_index";
    case errc::duplicate_id: return "duplicate_id";
    case errc::not_found: return "not_found";
    case errc::degenerate_projection: return "degenerate_projection";
    case errc::zero_docs: return "zero_docs";
    case errc::dimension_mismatch: return "dimension_mismatch";
    case errc::io: return "io";
    case errc::corrupt_file: return "corrupt_file";
  }
  return "unknown";
}

/// Every failure raised by the library carries one of the codes above so that
/// callers (CLI exit codes, HTTP status mapping) can dispatch on it.
class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw error(code, what); }

}  // namespace cea

#endif  // CEA_ERROR_HPP
