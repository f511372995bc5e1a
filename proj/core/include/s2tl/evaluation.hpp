#pragma once

#include <cstddef>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "s2tl/model.hpp"
#include "s2tl/text.hpp"

namespace s2tl {

struct Hypothesis {
  TokenSequence tokens;  // BOS ... [EOS]
  double score = 0.0;    // sum of token log-probabilities
  double normalized_score = 0.0;

  /// Generated tokens, counting EOS but not BOS.
  std::size_t length() const { return tokens.size() > 0 ? tokens.size() - 1 : 0; }
  bool finished() const { return !tokens.ids.empty() && tokens.ids.back() == kEos; }
};

/// Log-probabilities over the vocabulary for the token following `prefix`.
using StepFunction = std::function<std::vector<double>(std::span<const int> prefix)>;

/// Step function over a fixed encoder output of `model` (eval mode, no grad).
StepFunction model_step(Model& model, const Tensor& frames);

Hypothesis greedy_decode(const StepFunction& step, std::size_t max_len);
Hypothesis greedy_decode(Model& model, const Tensor& frames, std::size_t max_len);

/// Beam search over raw cumulative scores. Each step keeps the best
/// beam - |finished| extensions of the live hypotheses; extensions ending in
/// EOS are set aside, so the live beam shrinks as hypotheses finish. Hypotheses still open at max_len
/// join the finished pool, as does the greedy path. Results are ranked by
/// score / length, best first, at most `beam` of them.
std::vector<Hypothesis> beam_decode(const StepFunction& step, std::size_t beam,
                                    std::size_t max_len);
std::vector<Hypothesis> beam_decode(Model& model, const Tensor& frames, std::size_t beam,
                                    std::size_t max_len);

std::vector<std::string> split_words(std::string_view text);

/// Word-level Levenshtein distance with unit costs.
std::size_t edit_distance(std::span<const std::string> hyp, std::span<const std::string> ref);
/// Edit distance over reference word count; throws ContractError on an empty
/// reference.
double wer(std::string_view hyp, std::string_view ref);

/// Whitespace split, then every ASCII punctuation character becomes its own
/// token, except '.' and ',' between two digits.
std::vector<std::string> bleu_tokenize(std::string_view text);

struct BleuStats {
  std::size_t matches[4] = {0, 0, 0, 0};
  std::size_t totals[4] = {0, 0, 0, 0};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;

  void add(std::string_view hyp, std::string_view ref);
  /// 0..100. With smoothing, orders 2..4 use (m+1)/(t+1).
  double score(bool smooth = false) const;
};

/// Corpus BLEU; throws ContractError on size mismatch or an empty corpus.
double bleu(std::span<const std::string> hyps, std::span<const std::string> refs,
            bool smooth = false);

/// Position-wise word matches over max(|hyp|, |ref|).
struct AccuracyStats {
  std::size_t matches = 0;
  std::size_t positions = 0;

  void add(std::string_view hyp, std::string_view ref);
  double value() const;
};
double token_accuracy(std::span<const std::string> hyps, std::span<const std::string> refs);

enum class Metric { wer, bleu, accuracy };
std::string to_string(Metric metric);
Metric parse_metric(const std::string& text);

struct EvalRow {
  std::string id;
  std::string hyp;
  std::string ref;
  double metric = 0.0;
};

struct EvalReport {
  Metric metric = Metric::wer;
  std::vector<EvalRow> rows;
  double corpus = 0.0;  // corpus WER (fraction), BLEU (0..100) or accuracy (fraction)

  /// utt_id, hyp, ref and the per-utterance metric, then a summary line.
  void write_tsv(std::ostream& out) const;
};

/// Scores already-decoded hypotheses.
EvalReport score_corpus(Metric metric, std::vector<EvalRow> rows);

struct EvalInput {
  std::string id;
  Tensor frames;  // normalized [n, mel]
  std::string ref;
};

/// beam == 1 decodes greedily.
EvalReport evaluate(Model& model, const Vocabulary& vocab, std::span<const EvalInput> inputs,
                    Metric metric, std::size_t beam, std::size_t max_len);

}  // namespace s2tl
