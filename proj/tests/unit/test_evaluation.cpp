#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "doctest.h"
#include "gradcheck.hpp"
#include "s2tl/errors.hpp"
#include "s2tl/evaluation.hpp"

using namespace s2tl;

namespace {

// Deterministic toy distribution: log-softmax of pseudo-random logits keyed
// by the prefix.
StepFunction toy_step(std::size_t vocab, std::uint64_t seed) {
  return [=](std::span<const int> prefix) {
    std::uint64_t h = seed * 0x9E3779B97F4A7C15ull + 1;
    for (int id : prefix) h = (h ^ static_cast<std::uint64_t>(id + 1)) * 0x100000001B3ull;
    Rng rng(h);
    std::vector<double> lp(vocab);
    double z = 0;
    for (auto& v : lp) {
      v = rng.normal() * 2.0;
      z += std::exp(v);
    }
    for (auto& v : lp) v -= std::log(z);
    return lp;
  };
}

struct Scored {
  std::vector<int> ids;
  double normalized;
};

// Every BOS-prefixed sequence that ends at its first EOS within max_len
// tokens, plus every EOS-free sequence of exactly max_len tokens.
std::vector<Scored> exhaustive(const StepFunction& step, std::size_t vocab, std::size_t max_len) {
  std::vector<Scored> out;
  std::function<void(std::vector<int>&, double)> walk = [&](std::vector<int>& ids, double score) {
    const std::size_t len = ids.size() - 1;
    if (len > 0 && (ids.back() == kEos || len == max_len)) {
      out.push_back({ids, score / static_cast<double>(len)});
      return;
    }
    const auto lp = step(ids);
    for (std::size_t v = 0; v < vocab; ++v) {
      ids.push_back(static_cast<int>(v));
      walk(ids, score + lp[v]);
      ids.pop_back();
    }
  };
  std::vector<int> start{kBos};
  walk(start, 0.0);
  std::sort(out.begin(), out.end(), [](const Scored& a, const Scored& b) { return a.normalized > b.normalized; });
  return out;
}

std::size_t oracle_distance(const std::vector<std::string>& h, const std::vector<std::string>& r) {
  // recursive definition, no table
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> d = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == 0) return j;
    if (j == 0) return i;
    const auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const std::size_t best = std::min({d(i - 1, j) + 1, d(i, j - 1) + 1,
                                       d(i - 1, j - 1) + (h[i - 1] == r[j - 1] ? 0u : 1u)});
    return memo[key] = best;
  };
  return d(h.size(), r.size());
}

std::vector<std::vector<std::string>> all_sentences(std::size_t max_words) {
  const std::vector<std::string> words{"a", "b", "c"};
  std::vector<std::vector<std::string>> out{{}};
  for (std::size_t start = 0; start < out.size(); ++start)
    if (out[start].size() < max_words)
      for (const auto& w : words) {
        auto next = out[start];
        next.push_back(w);
        out.push_back(next);
      }
  return out;
}

std::string join(const std::vector<std::string>& words) {
  std::string s;
  for (const auto& w : words) s += (s.empty() ? "" : " ") + w;
  return s;
}

}  // namespace

TEST_CASE("WER examples") {
  CHECK(wer("a b c", "a b c") == 0.0);
  CHECK(wer("a b c", "a x c") == doctest::Approx(1.0 / 3.0));
  CHECK(wer("", "a b") == 1.0);
  CHECK(wer("  a\tb ", "a b") == 0.0);
  CHECK(wer("a b c d", "a") == 3.0);
  CHECK_THROWS_AS(wer("a", ""), ContractError);
  CHECK_THROWS_AS(wer("a", "   "), ContractError);
}

TEST_CASE("edit distance matches a recursive oracle on every short pair") {
  const auto sentences = all_sentences(4);
  for (std::size_t i = 0; i < sentences.size(); i += 3)
    for (std::size_t j = 1; j < sentences.size(); j += 2) {
      const auto& h = sentences[i];
      const auto& r = sentences[j];
      const std::size_t expected = oracle_distance(h, r);
      CHECK(edit_distance(h, r) == expected);
      CHECK(wer(join(h), join(r)) * r.size() == doctest::Approx(static_cast<double>(expected)));
    }
  const auto five = all_sentences(5);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < five.size(); i += 17) {
    const auto& r = five[five.size() - 1 - i];
    if (r.empty()) continue;
    CHECK(edit_distance(five[i], r) == oracle_distance(five[i], r));
    ++checked;
  }
  CHECK(checked > 10);
}

TEST_CASE("BLEU examples") {
  const std::vector<std::string> refs{"the cat sat on the mat", "a b c d e f"};
  CHECK(bleu(refs, refs) == doctest::Approx(100.0));
  const std::vector<std::string> rep{"a a a a"}, abcd{"a b c d"};
  CHECK(bleu(rep, abcd) == 0.0);
  BleuStats clipped;
  clipped.add("a a a a", "a b c d");
  CHECK(clipped.matches[0] == 1);
  CHECK(clipped.totals[0] == 4);
  const std::vector<std::string> short_hyp{"a b c d"}, long_ref{"a b c d e"};
  CHECK(bleu(short_hyp, long_ref) == doctest::Approx(100.0 * std::exp(1.0 - 5.0 / 4.0)));
  CHECK(bleu(short_hyp, long_ref) == doctest::Approx(77.88).epsilon(1e-4));
  CHECK_THROWS_AS(bleu(std::vector<std::string>{}, std::vector<std::string>{}), ContractError);
  CHECK_THROWS_AS(bleu(short_hyp, refs), ContractError);
}

TEST_CASE("BLEU smoothing and monotone ablation") {
  const std::vector<std::string> hyp{"a b x d"}, ref{"a b c d"};
  CHECK(bleu(hyp, ref) == 0.0);
  CHECK(bleu(hyp, ref, true) > 0.0);
  const std::string reference = "one two three four five six seven eight";
  std::vector<std::string> words = split_words(reference);
  double previous = 101.0;
  for (std::size_t k = 0; k <= words.size(); ++k) {
    const std::vector<std::string> h{join(words)}, r{reference};
    const double b = bleu(h, r, true);
    CHECK(b <= previous + 1e-9);
    previous = b;
    if (k < words.size()) words[k] = "zz" + std::to_string(k);
  }
}

TEST_CASE("BLEU tokenization") {
  CHECK(bleu_tokenize("Hello, world!") == std::vector<std::string>{"Hello", ",", "world", "!"});
  CHECK(bleu_tokenize("pay 3,000.50 now.") == std::vector<std::string>{"pay", "3,000.50", "now", "."});
  CHECK(bleu_tokenize("(it's)") == std::vector<std::string>{"(", "it", "'", "s", ")"});
}

TEST_CASE("token accuracy") {
  const std::vector<std::string> h{"a b c", "x"}, r{"a b d", "x y"};
  CHECK(token_accuracy(h, r) == doctest::Approx(3.0 / 5.0));
  AccuracyStats s;
  s.add("", "a b");
  CHECK(s.value() == 0.0);
  CHECK(parse_metric("acc") == Metric::accuracy);
  CHECK(parse_metric("bleu") == Metric::bleu);
  CHECK(to_string(Metric::wer) == "wer");
  CHECK_THROWS_AS(parse_metric("cer"), ConfigError);
}

TEST_CASE("greedy decoding") {
  StepFunction eos_first = [](std::span<const int>) {
    std::vector<double> lp(6, std::log(0.01));
    lp[kEos] = std::log(0.95);
    return lp;
  };
  const Hypothesis h = greedy_decode(eos_first, 10);
  CHECK(h.tokens.ids == std::vector<int>{kBos, kEos});
  CHECK(h.finished());
  CHECK(Vocabulary(std::vector<char32_t>{U'a', U'b'}).decode(h.tokens) == "");

  const auto step = toy_step(6, 3);
  const Hypothesis a = greedy_decode(step, 7), b = greedy_decode(step, 7);
  CHECK(a.tokens.ids == b.tokens.ids);
  CHECK(a.length() <= 7);
  CHECK(a.normalized_score == doctest::Approx(a.score / a.length()));
}

TEST_CASE("beam of one is greedy") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto step = toy_step(7, seed);
    const Hypothesis g = greedy_decode(step, 6);
    const auto beam = beam_decode(step, 1, 6);
    REQUIRE(beam.size() == 1);
    CHECK(beam[0].tokens.ids == g.tokens.ids);
    CHECK(beam[0].score == g.score);
  }
}

TEST_CASE("wide beam on a three-step model equals exhaustive search") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto step = toy_step(5, seed);
    const auto oracle = exhaustive(step, 5, 3);
    const auto beam = beam_decode(step, 1000, 3);
    REQUIRE(beam.size() == oracle.size());
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(beam[i].tokens.ids == oracle[i].ids);
      CHECK(beam[i].normalized_score == doctest::Approx(oracle[i].normalized));
    }
  }
}

TEST_CASE("beam results are sorted and never worse than greedy") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const auto step = toy_step(8, seed);
    const Hypothesis g = greedy_decode(step, 8);
    for (std::size_t b : {2u, 3u, 5u}) {
      const auto hyps = beam_decode(step, b, 8);
      CHECK(hyps.size() <= b);
      CHECK(hyps[0].normalized_score >= g.normalized_score);
      for (std::size_t i = 1; i < hyps.size(); ++i)
        CHECK(hyps[i - 1].normalized_score >= hyps[i].normalized_score);
      for (const auto& h : hyps) CHECK(std::isfinite(h.score));
    }
  }
  CHECK_THROWS_AS(beam_decode(toy_step(4, 1), 0, 3), ContractError);
}

TEST_CASE("report rows and summary") {
  std::vector<EvalRow> rows{{"u1", "a b", "a b", 0}, {"u2", "a", "a c", 0}};
  const EvalReport r = score_corpus(Metric::wer, rows);
  CHECK(r.rows.size() == 2);
  CHECK(r.rows[1].metric == doctest::Approx(0.5));
  CHECK(r.corpus == doctest::Approx(1.0 / 4.0));
  std::ostringstream os;
  r.write_tsv(os);
  std::istringstream is(os.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "utt_id\thyp\tref\twer");
  CHECK(lines[1].rfind("u1\ta b\ta b\t", 0) == 0);
  CHECK(lines[3].rfind("# corpus wer=", 0) == 0);
  CHECK(lines[3].find("utterances=2") != std::string::npos);

  const EvalReport same = score_corpus(Metric::bleu, {{"x", "p q r s", "p q r s", 0}});
  CHECK(same.corpus == doctest::Approx(100.0));
}

TEST_CASE("model evaluation over a batch of inputs") {
  ModelConfig c;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.heads = 2;
  c.embed_dim = 8;
  c.ffn_dim = 16;
  c.window = {4, 1};
  c.vocab_size = 6;
  c.mel_bins = 5;
  Model m(c, 3);
  Rng rng(2);
  std::vector<EvalInput> inputs;
  for (int i = 0; i < 3; ++i) inputs.push_back({"u" + std::to_string(i), testing::random_tensor({7, 5}, rng), "a b"});
  const Vocabulary vocab(std::vector<char32_t>{U'a', U'b'});
  const EvalReport greedy = evaluate(m, vocab, inputs, Metric::wer, 1, 5);
  const EvalReport beam = evaluate(m, vocab, inputs, Metric::accuracy, 3, 5);
  CHECK(greedy.rows.size() == 3);
  CHECK(beam.rows.size() == 3);
  CHECK(std::isfinite(greedy.corpus));
  const Hypothesis g = greedy_decode(m, inputs[0].frames, 5);
  CHECK(greedy.rows[0].hyp == vocab.decode(g.tokens));
}
