#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "s2tl/attention.hpp"
#include "s2tl/evaluation.hpp"
#include "s2tl/model.hpp"
#include "s2tl/training.hpp"

namespace s2tl {

struct ScalingRow {
  PatternKind pattern = PatternKind::dense;
  std::size_t n = 0;
  int w = 0;
  std::uint64_t score_evals = 0;  // per head
  double wall_ms = 0.0;           // median over repeats
  std::uint64_t peak_bytes = 0;   // tracked tensor memory above the starting level
  bool measured = true;           // false when the run ran out of memory
};

struct ScalingReport {
  std::vector<ScalingRow> rows;
  std::map<PatternKind, double> slopes;  // least squares of log2 wall_ms on log2 n

  void write_csv(std::ostream& out) const;
  static ScalingReport read_csv(std::istream& in);
  /// key=value lines: per-pattern slopes and memory growth ratios.
  void write_summary(std::ostream& out) const;
  /// Largest peak_bytes ratio between consecutive ladder points.
  double max_memory_ratio(PatternKind pattern) const;
  void fit_slopes();
};

double loglog_slope(const std::vector<double>& n, const std::vector<double>& ms);

struct ScalingOptions {
  std::vector<PatternKind> patterns{PatternKind::dense, PatternKind::sliding};
  std::vector<std::size_t> ladder{256, 512, 1024, 2048, 4096};
  int window = 48;
  int dilation = 2;  // used by the dilated pattern
  std::size_t repeats = 5;
  std::size_t heads = 4;
  std::size_t head_dim = 64;
  bool backward = true;  // time forward and backward together
  std::uint64_t seed = 1;
};

/// One warm-up pass per point is discarded; the median of `repeats` timed
/// passes is reported.
ScalingReport run_scaling(const ScalingOptions& opts);

struct SweepOptions {
  std::vector<int> sizes{512, 76, 60, 48};
  ModelConfig model;
  TrainConfig train;
  std::uint64_t model_seed = 1;
  std::size_t cost_length = 1024;  // sequence length for the analytic cost column
  std::size_t max_len = 64;        // decoding limit for the dev metric
};

struct SweepRow {
  int w = 0;
  std::uint64_t score_evals = 0;         // per head and layer at cost_length
  std::uint64_t corpus_score_evals = 0;  // per head and layer over one training epoch
  double wer = 0.0;                      // dev WER in percent, greedy
  double valid_nll = 0.0;
  double wall_ms_per_update = 0.0;
  double wall_ms_per_epoch = 0.0;
  bool stable = true;  // false when training hit a non-finite loss or gradient
  std::string note;
};

/// Trains one ASR model per window size on the same data and seed.
std::vector<SweepRow> window_sweep(const SweepOptions& opts, const std::vector<Example>& train,
                                   const std::vector<Example>& valid,
                                   const std::vector<EvalInput>& dev, const Vocabulary& vocab);

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace s2tl
