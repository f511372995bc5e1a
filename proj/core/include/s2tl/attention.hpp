#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "s2tl/rng.hpp"
#include "s2tl/tensor.hpp"

namespace s2tl {

/// Sliding-window parameters. `window_size` is the total width: a query
/// attends to window_size/2 neighbours on each side plus itself. With
/// `dilation` d, the attended offsets are the multiples of d up to
/// (window_size/2)·d.
struct WindowConfig {
  int window_size = 48;
  int dilation = 1;

  int half() const { return window_size / 2; }
  /// Throws ConfigError for an odd/non-positive window or dilation < 1.
  void validate() const;
  bool operator==(const WindowConfig&) const = default;
};

enum class PatternKind { dense, sliding, dilated };

std::string to_string(PatternKind kind);
PatternKind parse_pattern_kind(const std::string& text);

/// Which key positions each query sees. Windowed kinds are described by
/// (w, d) only; no n×n mask is ever built from them.
struct AttentionPattern {
  PatternKind kind = PatternKind::dense;
  WindowConfig window{};

  static AttentionPattern dense() { return {}; }
  static AttentionPattern sliding(int w) { return {PatternKind::sliding, {w, 1}}; }
  static AttentionPattern dilated(int w, int d) { return {PatternKind::dilated, {w, d}}; }

  /// Sorted key indices attended by query `i` in a sequence of length `n`.
  std::vector<std::size_t> attended(std::size_t i, std::size_t n) const;
  bool attends(std::size_t i, std::size_t j, std::size_t n) const;
  void validate() const;
};

/// Attention-weight dropout; inactive unless `training` and p > 0.
struct AttentionDropout {
  float p = 0.0f;
  Rng* rng = nullptr;
  bool training = false;

  bool active() const { return training && p > 0.0f && rng != nullptr; }
};

/// Windowed scaled dot-product attention over q, k [h,n,dk] and v [h,n,dv].
/// Scores live in per-query strips of at most w+1 entries, so memory and
/// work grow as O(n·w). Handles both d = 1 and dilated windows.
Tensor windowed_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                          const WindowConfig& cfg, const AttentionDropout& drop = {});

/// Contiguous window; requires cfg.dilation == 1.
Tensor sliding_window_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                const WindowConfig& cfg, const AttentionDropout& drop = {});

/// Dilated window; requires cfg.dilation >= 2.
Tensor dilated_window_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                const WindowConfig& cfg, const AttentionDropout& drop = {});

/// Full scaled dot-product attention; q [h,m,dk], k [h,n,dk], v [h,n,dv].
/// `causal` masks keys j > i (requires m == n).
Tensor dense_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                       const AttentionDropout& drop = {});

/// Decoder-to-encoder attention. The encoder length may differ from the
/// decoder length; every decoder position sees every encoder position.
Tensor cross_attention(const Tensor& q_text, const Tensor& k_enc, const Tensor& v_enc,
                       const AttentionDropout& drop = {});

/// Dispatches on the pattern kind (the non-causal self-attention path).
Tensor self_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                      const AttentionPattern& pattern, const AttentionDropout& drop = {});

/// Number of query-key scores evaluated for one head: n² for dense,
/// the sum of clipped window sizes for windowed patterns.
std::uint64_t count_score_evaluations(std::size_t n, const AttentionPattern& pattern);

/// Softmax weights of windowed attention in banded form, for inspection.
struct BandedWeights {
  std::size_t heads = 0;
  std::size_t length = 0;
  std::size_t width = 0;  // strip width per query, <= w+1
  int dilation = 1;
  int half = 0;  // offset index `s` corresponds to key i + (s - half)·dilation
  std::vector<float> weights;  // [heads, length, width], zero outside the sequence

  /// Key position for strip slot s of query i, or -1 when out of range.
  std::ptrdiff_t key_index(std::size_t i, std::size_t s) const;
};

BandedWeights windowed_attention_weights(const Tensor& q, const Tensor& k,
                                         const WindowConfig& cfg);

/// Dense softmax weights [h,m,n] (no dropout).
Tensor dense_attention_weights(const Tensor& q, const Tensor& k, bool causal);

}  // namespace s2tl
