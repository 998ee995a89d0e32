#ifndef CEA_SYNTHETIC_HPP
#define CEA_SYNTHETIC_HPP

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "cea/corpus.hpp"
#include "cea/error.hpp"

namespace cea {

/// Generator for token-disjoint classification corpora: each (sub)class owns
/// a private vocabulary and documents are bags of words drawn from it.
struct SyntheticSpec {
  std::size_t classes = 3;
  std::size_t docs_per_class = 100;
  /// Sub-classes per class; each gets its own vocabulary and a fine label.
  std::size_t fine_per_class = 1;
  std::size_t vocab_per_class = 30;
  std::size_t min_words = 5;
  std::size_t max_words = 10;
  /// Words common to every class, mixed in with probability `shared_rate`.
  std::size_t shared_vocab = 0;
  double shared_rate = 0.0;
  double test_fraction = 0.2;
  double dev_fraction = 0.1;
  std::uint64_t seed = 7;
};

inline std::string synthetic_class_name(std::size_t c) {
  static const char* names[] = {"alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa"};
  return c < 10 ? names[c] : "class" + std::to_string(c);
}

inline std::string synthetic_word(std::size_t cls, std::size_t sub, std::size_t w) {
  return "c" + std::to_string(cls) + "s" + std::to_string(sub) + "w" + std::to_string(w);
}

/// Builds train/dev/test splits. Test docs are taken per class (the last
/// test_fraction of each class), dev by split_dev over the rest.
inline LabeledCorpus make_synthetic_corpus(const SyntheticSpec& spec) {
  if (spec.classes < 2 || spec.docs_per_class < 2 || spec.fine_per_class < 1 || spec.vocab_per_class < 1 ||
      spec.min_words < 1 || spec.max_words < spec.min_words)
    fail(errc::config, "invalid synthetic corpus spec");
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> len(spec.min_words, spec.max_words);
  std::uniform_int_distribution<std::size_t> word(0, spec.vocab_per_class - 1);
  std::uniform_int_distribution<std::size_t> shared(0, spec.shared_vocab ? spec.shared_vocab - 1 : 0);
  std::bernoulli_distribution use_shared(spec.shared_vocab ? spec.shared_rate : 0.0);

  LabeledCorpus corpus;
  for (std::size_t c = 0; c < spec.classes; ++c) corpus.vocab.intern(synthetic_class_name(c));
  for (std::size_t c = 0; c < spec.classes; ++c)
    for (std::size_t s = 0; s < spec.fine_per_class; ++s)
      corpus.fine_vocab.intern(synthetic_class_name(c) + "." + std::to_string(s));

  const auto test_per_class = static_cast<std::size_t>(std::floor(spec.test_fraction * static_cast<double>(spec.docs_per_class)));
  DocId next = 0;
  // Interleave classes so corpus order carries no label structure.
  for (std::size_t i = 0; i < spec.docs_per_class; ++i) {
    for (std::size_t c = 0; c < spec.classes; ++c) {
      const std::size_t sub = i % spec.fine_per_class;
      std::string text;
      const auto words = len(rng);
      for (std::size_t w = 0; w < words; ++w) {
        if (!text.empty()) text.push_back(' ');
        if (use_shared(rng))
          text += "common" + std::to_string(shared(rng));
        else
          text += synthetic_word(c, sub, word(rng));
      }
      Document d;
      d.id = next++;
      d.text = std::move(text);
      d.label = static_cast<LabelId>(c);
      d.fine_label = static_cast<LabelId>(c * spec.fine_per_class + sub);
      d.split = i >= spec.docs_per_class - test_per_class ? Split::test : Split::train;
      corpus.add(std::move(d));
    }
  }
  if (spec.dev_fraction > 0.0) corpus = split_dev(corpus, spec.dev_fraction, spec.seed + 17, true);
  return corpus;
}

}  // namespace cea

#endif  // CEA_SYNTHETIC_HPP
