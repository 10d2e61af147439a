#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "rtq/error.hpp"
#include "rtq/vocabulary.hpp"

namespace rtq {

struct BeamOptions {
  std::size_t beam = 3;
  /// Sequence limit including the leading [Decode].
  std::size_t max_len = 32;
  /// Rank completed hypotheses by log-prob / length instead of raw log-prob.
  bool length_normalize = false;
};

struct Hypothesis {
  std::vector<int> tokens;  // generated tokens; ends with [EOS] when complete
  double log_prob = 0.0;
  bool complete = false;
};

struct DecodeResult {
  Hypothesis best;
  /// True when no hypothesis produced [EOS] within max_len.
  bool truncated = false;
  std::vector<Hypothesis> completed;
};

/// Log-probabilities over the vocabulary with every special token except
/// [EOS] removed (set to -inf).
std::vector<double> allowed_log_probs(std::span<const double> logits);

/// Adapter for scorers that see the whole prefix (tests, rigged decoders).
/// `Fn(std::span<const int> prefix) -> std::vector<double>` logits.
class PrefixScorer {
 public:
  using Fn = std::function<std::vector<double>(std::span<const int>)>;
  explicit PrefixScorer(Fn fn) : fn_(std::move(fn)) {}
  std::vector<double> push(int token) {
    prefix_.push_back(token);
    return fn_(prefix_);
  }
  std::size_t length() const { return prefix_.size(); }

 private:
  Fn fn_;
  std::vector<int> prefix_;
};

namespace detail {

inline double rank_score(const Hypothesis& h, bool normalize) {
  return normalize ? h.log_prob / static_cast<double>(std::max<std::size_t>(1, h.tokens.size())) : h.log_prob;
}

}  // namespace detail

/// Length-unnormalized beam search. `State` must be copyable and provide
/// `std::vector<double> push(int token)` returning next-token logits. The
/// state is fed [Decode] first. Each step ranks all expansions by cumulative
/// log-prob (ties: lower beam slot, then lower token id); [EOS] expansions in
/// the top `beam` are completed, and the next beam holds the best `beam`
/// non-[EOS] expansions. Decoding stops once the best completed hypothesis is
/// at least as good as every live one.
template <typename State>
DecodeResult beam_search(State initial, const BeamOptions& options) {
  if (options.beam == 0) throw ParameterError("beam width must be positive");
  if (options.max_len < 2) throw ParameterError("max_len must be at least 2");
  struct Live {
    Hypothesis hyp;
    State state;
    std::vector<double> log_probs;
  };
  std::vector<Live> live;
  {
    std::vector<double> logits = initial.push(Vocabulary::kDecode);
    live.push_back({Hypothesis{}, std::move(initial), allowed_log_probs(logits)});
  }
  DecodeResult result;
  Hypothesis best_partial;
  bool have_partial = false;
  struct Candidate {
    double score;
    std::size_t slot;
    int token;
  };
  auto better_completed = [&](const Hypothesis& h) {
    return result.completed.empty() || detail::rank_score(h, options.length_normalize) >
                                           detail::rank_score(result.best, options.length_normalize);
  };
  while (!live.empty()) {
    std::vector<Candidate> cands;
    for (std::size_t s = 0; s < live.size(); ++s) {
      const auto& lp = live[s].log_probs;
      for (std::size_t v = 0; v < lp.size(); ++v) {
        if (lp[v] == -std::numeric_limits<double>::infinity()) continue;
        cands.push_back({live[s].hyp.log_prob + lp[v], s, static_cast<int>(v)});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.slot != b.slot) return a.slot < b.slot;
      return a.token < b.token;
    });
    const std::size_t top = std::min(options.beam, cands.size());
    for (std::size_t c = 0; c < top; ++c) {
      if (cands[c].token != Vocabulary::kEos) continue;
      Hypothesis h = live[cands[c].slot].hyp;
      h.tokens.push_back(Vocabulary::kEos);
      h.log_prob = cands[c].score;
      h.complete = true;
      if (better_completed(h)) result.best = h;
      result.completed.push_back(std::move(h));
    }
    std::vector<Live> next;
    for (const auto& c : cands) {
      if (next.size() == options.beam) break;
      if (c.token == Vocabulary::kEos) continue;
      const Live& parent = live[c.slot];
      Hypothesis h = parent.hyp;
      h.tokens.push_back(c.token);
      h.log_prob = c.score;
      // [Decode] + generated tokens must fit in max_len.
      if (h.tokens.size() + 1 > options.max_len) {
        if (!have_partial || h.log_prob > best_partial.log_prob) {
          best_partial = h;
          have_partial = true;
        }
        continue;
      }
      State state = parent.state;
      std::vector<double> logits = state.push(c.token);
      next.push_back({std::move(h), std::move(state), allowed_log_probs(logits)});
    }
    live = std::move(next);
    if (!result.completed.empty()) {
      double best_live = -std::numeric_limits<double>::infinity();
      for (const auto& l : live) best_live = std::max(best_live, detail::rank_score(l.hyp, options.length_normalize));
      if (!options.length_normalize && detail::rank_score(result.best, false) >= best_live) break;
      if (options.length_normalize && live.empty()) break;
    }
  }
  if (result.completed.empty()) {
    result.truncated = true;
    result.best = best_partial;
  }
  return result;
}

/// Greedy decoding: one argmax (lowest id on ties) per step.
template <typename State>
DecodeResult greedy_decode(State state, std::size_t max_len) {
  if (max_len < 2) throw ParameterError("max_len must be at least 2");
  DecodeResult result;
  std::vector<double> lp = allowed_log_probs(state.push(Vocabulary::kDecode));
  Hypothesis h;
  while (true) {
    std::size_t arg = 0;
    for (std::size_t v = 1; v < lp.size(); ++v) {
      if (lp[v] > lp[arg]) arg = v;
    }
    h.tokens.push_back(static_cast<int>(arg));
    h.log_prob += lp[arg];
    if (static_cast<int>(arg) == Vocabulary::kEos) {
      h.complete = true;
      result.completed.push_back(h);
      break;
    }
    if (h.tokens.size() + 1 > max_len) {
      result.truncated = true;
      break;
    }
    lp = allowed_log_probs(state.push(static_cast<int>(arg)));
  }
  result.best = std::move(h);
  return result;
}

}  // namespace rtq
