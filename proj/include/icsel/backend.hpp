#pragma once

#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "icsel/corpus.hpp"

namespace icsel {

// Per-class scores for one prompt. Scores are log-probabilities (or any
// per-class values on a shared scale); only differences matter downstream, so
// any per-query constant shift leaves predictions and margins unchanged.
struct LabelScores {
  std::vector<double> scores;
};

inline int argmax_label(const LabelScores& s) {
  if (s.scores.empty()) throw Error("argmax over empty scores");
  int best = 0;
  for (int y = 1; y < static_cast<int>(s.scores.size()); ++y)
    if (s.scores[static_cast<size_t>(y)] > s.scores[static_cast<size_t>(best)])
      best = y;  // ties keep the lowest class
  return best;
}

// Margin of the gold class over the best incorrect class. Positive iff the
// prediction is correct; a tie (margin 0) counts as incorrect.
inline double outcome(const LabelScores& s, int gold) {
  int c = static_cast<int>(s.scores.size());
  if (c < 2) throw Error("outcome needs at least two classes");
  if (gold < 0 || gold >= c) throw Error("gold label out of range");
  double best_other = -std::numeric_limits<double>::infinity();
  for (int y = 0; y < c; ++y)
    if (y != gold) best_other = std::max(best_other, s.scores[static_cast<size_t>(y)]);
  return s.scores[static_cast<size_t>(gold)] - best_other;
}

inline bool is_correct(const LabelScores& s, int gold) {
  return outcome(s, gold) > 0.0;
}

// A model that scores prompts. Implementations: synthetic oracle, replay
// store, remote completion API (plus a recording wrapper).
class Backend {
 public:
  virtual ~Backend() = default;

  virtual std::string id() const = 0;

  // Scores every label candidate at the position following the prompt text.
  virtual LabelScores score_labels(const RenderedPrompt& prompt) = 0;

  virtual double perplexity(const std::string& text) {
    (void)text;
    throw UnsupportedError(id() + ": perplexity not supported");
  }

  virtual int count_tokens(const std::string& text) {
    (void)text;
    throw UnsupportedError(id() + ": tokenization not supported");
  }

  virtual int context_window() const { return std::numeric_limits<int>::max(); }
};

// Label words must map to single tokens so one next-token distribution covers
// every class. Hard error, checked once per dataset/backend pairing.
inline void verify_single_token_verbalizers(const Dataset& ds, Backend& backend) {
  for (const auto& v : ds.verbalizers) {
    int n = backend.count_tokens(v);
    if (n != 1)
      throw ConfigError("verbalizer '" + v + "' is " + std::to_string(n) +
                        " tokens under backend " + backend.id() +
                        "; each verbalizer must be a single token");
  }
}

}  // namespace icsel
