#include "s2tl/benchmark.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <new>
#include <optional>
#include <sstream>

#include "s2tl/errors.hpp"
#include "s2tl/ops.hpp"
#include "s2tl/rng.hpp"

namespace s2tl {

double loglog_slope(const std::vector<double>& n, const std::vector<double>& ms) {
  if (n.size() != ms.size() || n.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double k = static_cast<double>(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) {
    const double x = std::log2(n[i]), y = std::log2(ms[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double denom = k * sxx - sx * sx;
  if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (k * sxy - sx * sy) / denom;
}

void ScalingReport::fit_slopes() {
  slopes.clear();
  std::map<PatternKind, std::pair<std::vector<double>, std::vector<double>>> pts;
  for (const auto& r : rows) {
    if (!r.measured || r.wall_ms <= 0.0) continue;
    pts[r.pattern].first.push_back(static_cast<double>(r.n));
    pts[r.pattern].second.push_back(r.wall_ms);
  }
  for (const auto& [p, xy] : pts) slopes[p] = loglog_slope(xy.first, xy.second);
}

double ScalingReport::max_memory_ratio(PatternKind pattern) const {
  double worst = 0.0;
  const ScalingRow* prev = nullptr;
  for (const auto& r : rows) {
    if (r.pattern != pattern || !r.measured) continue;
    if (prev && prev->peak_bytes > 0)
      worst = std::max(worst, static_cast<double>(r.peak_bytes) / prev->peak_bytes);
    prev = &r;
  }
  return worst;
}

void ScalingReport::write_csv(std::ostream& out) const {
  out << "pattern,n,w,score_evals,wall_ms,peak_bytes\n";
  for (const auto& r : rows) {
    out << to_string(r.pattern) << ',' << r.n << ',' << r.w << ',' << r.score_evals << ',';
    if (r.measured) {
      std::ostringstream ms;
      ms << std::setprecision(17) << r.wall_ms;
      out << ms.str() << ',' << r.peak_bytes;
    } else {
      out << "unmeasured,unmeasured";
    }
    out << '\n';
  }
}

ScalingReport ScalingReport::read_csv(std::istream& in) {
  ScalingReport report;
  std::string line;
  if (!std::getline(in, line) || line != "pattern,n,w,score_evals,wall_ms,peak_bytes")
    throw DataError("scaling CSV: unexpected header");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw DataError("scaling CSV line " + std::to_string(lineno) + ": expected 6 fields");
    try {
      ScalingRow r;
      r.pattern = parse_pattern_kind(f[0]);
      r.n = std::stoull(f[1]);
      r.w = std::stoi(f[2]);
      r.score_evals = std::stoull(f[3]);
      if (f[4] == "unmeasured") {
        r.measured = false;
      } else {
        r.wall_ms = std::stod(f[4]);
        r.peak_bytes = std::stoull(f[5]);
      }
      report.rows.push_back(r);
    } catch (const std::logic_error&) {
      throw DataError("scaling CSV line " + std::to_string(lineno) + ": malformed number");
    }
  }
  report.fit_slopes();
  return report;
}

void ScalingReport::write_summary(std::ostream& out) const {
  std::map<PatternKind, std::size_t> points;
  for (const auto& r : rows)
    if (r.measured) ++points[r.pattern];
  for (const auto& [p, slope] : slopes) {
    out << to_string(p) << ".slope=" << std::setprecision(4) << slope << '\n';
    out << to_string(p) << ".max_memory_ratio=" << std::setprecision(4) << max_memory_ratio(p)
        << '\n';
    out << to_string(p) << ".points=" << points[p] << '\n';
  }
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Buffer data(numel(shape));
  for (auto& x : data) x = static_cast<float>(rng.normal());
  return make_result(std::move(shape), std::move(data));
}

AttentionPattern pattern_for(PatternKind kind, const ScalingOptions& o) {
  switch (kind) {
    case PatternKind::dense: return AttentionPattern::dense();
    case PatternKind::sliding: return AttentionPattern::sliding(o.window);
    case PatternKind::dilated: return AttentionPattern::dilated(o.window, o.dilation);
  }
  return AttentionPattern::dense();
}

}  // namespace

ScalingReport run_scaling(const ScalingOptions& opts) {
  if (opts.repeats < 1) throw ConfigError("benchmark: repeats must be >= 1");
  ScalingReport report;
  Rng rng(opts.seed);
  for (auto kind : opts.patterns) {
    const AttentionPattern pattern = pattern_for(kind, opts);
    pattern.validate();
    for (auto n : opts.ladder) {
      ScalingRow row;
      row.pattern = kind;
      row.n = n;
      row.w = kind == PatternKind::dense ? 0 : opts.window;
      row.score_evals = count_score_evaluations(n, pattern);
      try {
        const Shape shape{opts.heads, n, opts.head_dim};
        Tensor q = random_tensor(shape, rng), k = random_tensor(shape, rng),
               v = random_tensor(shape, rng);
        for (auto* t : {&q, &k, &v}) t->set_requires_grad(opts.backward);
        std::vector<double> times;
        std::uint64_t peak = 0;
        for (std::size_t r = 0; r <= opts.repeats; ++r) {
          Tape::active().clear();
          for (auto* t : {&q, &k, &v}) t->zero_grad();
          memory::reset_peak();
          const std::size_t base = memory::live_bytes();
          const auto t0 = std::chrono::steady_clock::now();
          {
            std::optional<NoGradGuard> guard;
            if (!opts.backward) guard.emplace();
            Tensor out = self_attention(q, k, v, pattern);
            if (opts.backward) backward(sum(out));
          }
          const auto t1 = std::chrono::steady_clock::now();
          peak = std::max<std::uint64_t>(peak, memory::peak_bytes() - base);
          if (r > 0) times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        std::sort(times.begin(), times.end());
        row.wall_ms = times[times.size() / 2];
        row.peak_bytes = peak;
      } catch (const std::bad_alloc&) {
        Tape::active().clear();
        row.measured = false;
      }
      report.rows.push_back(row);
    }
  }
  report.fit_slopes();
  return report;
}

std::vector<SweepRow> window_sweep(const SweepOptions& opts, const std::vector<Example>& train,
                                   const std::vector<Example>& valid,
                                   const std::vector<EvalInput>& dev, const Vocabulary& vocab) {
  std::vector<SweepRow> rows;
  for (int w : opts.sizes) {
    SweepRow row;
    row.w = w;
    ModelConfig mc = opts.model;
    mc.encoder_pattern = PatternKind::sliding;
    mc.window = {w, 1};
    mc.validate();
    const AttentionPattern pattern = mc.encoder_attention();
    row.score_evals = count_score_evaluations(opts.cost_length, pattern);
    for (const auto& ex : train) row.corpus_score_evals += count_score_evaluations(ex.frames.dim(0), pattern);

    Model model(mc, opts.model_seed);
    Trainer trainer(model, opts.train, train, valid);
    try {
      const auto records = trainer.run({});
      double total_ms = 0.0;
      for (const auto& r : records) total_ms += r.wall_ms;
      const std::size_t per_epoch =
          epoch_batches(train, opts.train.max_tokens_per_batch, opts.train.seed, 0).size();
      row.wall_ms_per_update = records.empty() ? 0.0 : total_ms / records.size();
      row.wall_ms_per_epoch =
          row.wall_ms_per_update * static_cast<double>(per_epoch) / opts.train.update_freq;
      row.valid_nll = trainer.validate();
      const EvalReport rep = evaluate(model, vocab, dev, Metric::wer, 1, opts.max_len);
      row.wer = 100.0 * rep.corpus;
      row.stable = std::isfinite(row.valid_nll) && std::isfinite(row.wer);
    } catch (const NumericError& e) {
      row.stable = false;
      row.valid_nll = row.wer = std::numeric_limits<double>::quiet_NaN();
      row.note = e.what();
    }
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "w,score_evals,corpus_score_evals,wer,valid_nll,wall_ms_per_update,wall_ms_per_epoch,"
         "stable\n";
  for (const auto& r : rows) {
    out << r.w << ',' << r.score_evals << ',' << r.corpus_score_evals << ',' << r.wer << ','
        << r.valid_nll << ',' << r.wall_ms_per_update << ',' << r.wall_ms_per_epoch << ','
        << (r.stable ? "yes" : "no") << '\n';
  }
}

}  // namespace s2tl
