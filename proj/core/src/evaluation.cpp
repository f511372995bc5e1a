#include "s2tl/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "s2tl/errors.hpp"

namespace s2tl {

namespace {

std::vector<double> log_softmax(std::span<const float> logits) {
  double hi = -std::numeric_limits<double>::infinity();
  for (float x : logits) hi = std::max(hi, static_cast<double>(x));
  double z = 0.0;
  for (float x : logits) z += std::exp(x - hi);
  const double log_z = hi + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_z;
  return out;
}

Hypothesis make_hypothesis(std::vector<int> ids, double score) {
  Hypothesis h;
  h.tokens.ids = std::move(ids);
  h.score = score;
  const std::size_t len = std::max<std::size_t>(h.length(), 1);
  h.normalized_score = score / static_cast<double>(len);
  return h;
}

}  // namespace

StepFunction model_step(Model& model, const Tensor& frames) {
  model.set_training(false);
  CrossCache cross;
  {
    NoGradGuard no_grad;
    cross = model.prepare_cross(model.encode(frames));
  }
  return [&model, cross = std::move(cross)](std::span<const int> prefix) {
    NoGradGuard no_grad;
    const Tensor logits = model.decode_step(prefix, cross);
    return log_softmax(logits.data());
  };
}

Hypothesis greedy_decode(const StepFunction& step, std::size_t max_len) {
  if (max_len < 1) throw ContractError("greedy_decode: max_len must be >= 1");
  std::vector<int> ids{kBos};
  double score = 0.0;
  for (std::size_t t = 0; t < max_len; ++t) {
    const auto lp = step(ids);
    const auto best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    score += lp[best];
    ids.push_back(best);
    if (best == kEos) break;
  }
  return make_hypothesis(std::move(ids), score);
}

Hypothesis greedy_decode(Model& model, const Tensor& frames, std::size_t max_len) {
  return greedy_decode(model_step(model, frames), max_len);
}

std::vector<Hypothesis> beam_decode(const StepFunction& step, std::size_t beam,
                                    std::size_t max_len) {
  if (beam < 1) throw ContractError("beam_decode: beam must be >= 1");
  if (max_len < 1) throw ContractError("beam_decode: max_len must be >= 1");

  struct Live {
    std::vector<int> ids;
    double score;
  };
  struct Candidate {
    std::size_t parent;
    int token;
    double score;
  };
  std::vector<Live> live{{{kBos}, 0.0}};
  std::vector<Hypothesis> finished;

  for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < live.size(); ++b) {
      const auto lp = step(live[b].ids);
      for (std::size_t v = 0; v < lp.size(); ++v)
        cands.push_back({b, static_cast<int>(v), live[b].score + lp[v]});
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    const std::size_t keep = std::min(beam - finished.size(), cands.size());
    std::vector<Live> next;
    for (std::size_t c = 0; c < keep; ++c) {
      auto ids = live[cands[c].parent].ids;
      ids.push_back(cands[c].token);
      if (cands[c].token == kEos) finished.push_back(make_hypothesis(std::move(ids), cands[c].score));
      else next.push_back({std::move(ids), cands[c].score});
    }
    live = std::move(next);
  }
  for (auto& l : live) finished.push_back(make_hypothesis(std::move(l.ids), l.score));

  const Hypothesis greedy = greedy_decode(step, max_len);
  const bool seen = std::any_of(finished.begin(), finished.end(), [&](const Hypothesis& h) {
    return h.tokens.ids == greedy.tokens.ids;
  });
  if (!seen) finished.push_back(greedy);

  std::stable_sort(finished.begin(), finished.end(), [](const Hypothesis& a, const Hypothesis& b) {
    return a.normalized_score > b.normalized_score;
  });
  if (finished.size() > beam) finished.resize(beam);
  return finished;
}

std::vector<Hypothesis> beam_decode(Model& model, const Tensor& frames, std::size_t beam,
                                    std::size_t max_len) {
  return beam_decode(model_step(model, frames), beam, max_len);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

std::size_t edit_distance(std::span<const std::string> hyp, std::span<const std::string> ref) {
  std::vector<std::size_t> prev(ref.size() + 1), cur(ref.size() + 1);
  for (std::size_t j = 0; j <= ref.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= hyp.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[ref.size()];
}

double wer(std::string_view hyp, std::string_view ref) {
  const auto r = split_words(ref);
  if (r.empty()) throw ContractError("wer: empty reference");
  const auto h = split_words(hyp);
  return static_cast<double>(edit_distance(h, r)) / static_cast<double>(r.size());
}

std::vector<std::string> bleu_tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& word : split_words(text)) {
    std::string cur;
    for (std::size_t i = 0; i < word.size(); ++i) {
      const unsigned char c = static_cast<unsigned char>(word[i]);
      const bool numeric_sep = (c == '.' || c == ',') && i > 0 && i + 1 < word.size() &&
                               std::isdigit(static_cast<unsigned char>(word[i - 1])) &&
                               std::isdigit(static_cast<unsigned char>(word[i + 1]));
      if (c < 128 && std::ispunct(c) && !numeric_sep) {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
        out.emplace_back(1, static_cast<char>(c));
      } else {
        cur.push_back(static_cast<char>(c));
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
  }
  return out;
}

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(const std::vector<std::string>& toks,
                                                            std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i)
    ++counts[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
  return counts;
}

}  // namespace

void BleuStats::add(std::string_view hyp, std::string_view ref) {
  const auto h = bleu_tokenize(hyp);
  const auto r = bleu_tokenize(ref);
  hyp_len += h.size();
  ref_len += r.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto hc = ngram_counts(h, n);
    const auto rc = ngram_counts(r, n);
    for (const auto& [gram, count] : hc) {
      const auto it = rc.find(gram);
      if (it != rc.end()) matches[n - 1] += std::min(count, it->second);
    }
    totals[n - 1] += h.size() >= n ? h.size() - n + 1 : 0;
  }
}

double BleuStats::score(bool smooth) const {
  if (hyp_len == 0) return 0.0;
  double log_p = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double m = static_cast<double>(matches[n]);
    double t = static_cast<double>(totals[n]);
    if (smooth && n > 0) {
      m += 1.0;
      t += 1.0;
    }
    if (m == 0.0 || t == 0.0) return 0.0;
    log_p += std::log(m / t) / 4.0;
  }
  const double c = static_cast<double>(hyp_len), r = static_cast<double>(ref_len);
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return 100.0 * bp * std::exp(log_p);
}

double bleu(std::span<const std::string> hyps, std::span<const std::string> refs, bool smooth) {
  if (hyps.size() != refs.size())
    throw ContractError("bleu: " + std::to_string(hyps.size()) + " hypotheses vs " +
                        std::to_string(refs.size()) + " references");
  if (hyps.empty()) throw ContractError("bleu: empty corpus");
  BleuStats stats;
  for (std::size_t i = 0; i < hyps.size(); ++i) stats.add(hyps[i], refs[i]);
  return stats.score(smooth);
}

void AccuracyStats::add(std::string_view hyp, std::string_view ref) {
  const auto h = split_words(hyp);
  const auto r = split_words(ref);
  for (std::size_t i = 0; i < std::min(h.size(), r.size()); ++i) matches += h[i] == r[i];
  positions += std::max(h.size(), r.size());
}

double AccuracyStats::value() const {
  return positions == 0 ? 1.0 : static_cast<double>(matches) / static_cast<double>(positions);
}

double token_accuracy(std::span<const std::string> hyps, std::span<const std::string> refs) {
  if (hyps.size() != refs.size())
    throw ContractError("token_accuracy: hypothesis and reference counts differ");
  if (hyps.empty()) throw ContractError("token_accuracy: empty corpus");
  AccuracyStats stats;
  for (std::size_t i = 0; i < hyps.size(); ++i) stats.add(hyps[i], refs[i]);
  return stats.value();
}

std::string to_string(Metric metric) {
  switch (metric) {
    case Metric::wer: return "wer";
    case Metric::bleu: return "bleu";
    case Metric::accuracy: return "accuracy";
  }
  return "?";
}

Metric parse_metric(const std::string& text) {
  if (text == "wer") return Metric::wer;
  if (text == "bleu") return Metric::bleu;
  if (text == "accuracy" || text == "acc") return Metric::accuracy;
  throw ConfigError("unknown metric '" + text + "' (expected wer, bleu or accuracy)");
}

EvalReport score_corpus(Metric metric, std::vector<EvalRow> rows) {
  if (rows.empty()) throw ContractError("evaluation over an empty set");
  EvalReport report;
  report.metric = metric;
  switch (metric) {
    case Metric::wer: {
      std::size_t errors = 0, words = 0;
      for (auto& r : rows) {
        const auto ref = split_words(r.ref);
        if (ref.empty()) throw DataError("utterance " + r.id + " has an empty reference");
        const std::size_t d = edit_distance(split_words(r.hyp), ref);
        r.metric = static_cast<double>(d) / static_cast<double>(ref.size());
        errors += d;
        words += ref.size();
      }
      report.corpus = static_cast<double>(errors) / static_cast<double>(words);
      break;
    }
    case Metric::bleu: {
      BleuStats corpus;
      for (auto& r : rows) {
        BleuStats one;
        one.add(r.hyp, r.ref);
        corpus.add(r.hyp, r.ref);
        r.metric = one.score(true);
      }
      report.corpus = corpus.score(false);
      break;
    }
    case Metric::accuracy: {
      AccuracyStats corpus;
      for (auto& r : rows) {
        AccuracyStats one;
        one.add(r.hyp, r.ref);
        corpus.add(r.hyp, r.ref);
        r.metric = one.value();
      }
      report.corpus = corpus.value();
      break;
    }
  }
  report.rows = std::move(rows);
  return report;
}

void EvalReport::write_tsv(std::ostream& out) const {
  out << "utt_id\thyp\tref\t" << to_string(metric) << '\n';
  std::ostringstream num;
  num << std::setprecision(6) << std::fixed;
  for (const auto& r : rows) {
    num.str("");
    num << r.metric;
    out << r.id << '\t' << r.hyp << '\t' << r.ref << '\t' << num.str() << '\n';
  }
  num.str("");
  num << corpus;
  out << "# corpus " << to_string(metric) << '=' << num.str() << " utterances=" << rows.size()
      << '\n';
}

EvalReport evaluate(Model& model, const Vocabulary& vocab, std::span<const EvalInput> inputs,
                    Metric metric, std::size_t beam, std::size_t max_len) {
  std::vector<EvalRow> rows;
  rows.reserve(inputs.size());
  for (const auto& in : inputs) {
    const StepFunction step = model_step(model, in.frames);
    const Hypothesis best =
        beam <= 1 ? greedy_decode(step, max_len) : beam_decode(step, beam, max_len).front();
    rows.push_back({in.id, vocab.decode(best.tokens), in.ref, 0.0});
  }
  return score_corpus(metric, std::move(rows));
}

}  // namespace s2tl
