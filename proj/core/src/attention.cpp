#include "s2tl/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "s2tl/errors.hpp"
#include "s2tl/ops.hpp"

namespace s2tl {

void WindowConfig::validate() const {
  if (window_size <= 0 || window_size % 2 != 0) {
    throw ConfigError("window size must be a positive even integer, got " +
                      std::to_string(window_size));
  }
  if (dilation < 1) {
    throw ConfigError("dilation must be >= 1, got " + std::to_string(dilation));
  }
}

std::string to_string(PatternKind kind) {
  switch (kind) {
    case PatternKind::dense: return "dense";
    case PatternKind::sliding: return "sliding";
    case PatternKind::dilated: return "dilated";
  }
  return "?";
}

PatternKind parse_pattern_kind(const std::string& text) {
  if (text == "dense") return PatternKind::dense;
  if (text == "sliding") return PatternKind::sliding;
  if (text == "dilated") return PatternKind::dilated;
  throw ConfigError("unknown attention pattern '" + text + "'");
}

void AttentionPattern::validate() const {
  if (kind == PatternKind::dense) return;
  window.validate();
  if (kind == PatternKind::sliding && window.dilation != 1) {
    throw ConfigError("sliding pattern requires dilation 1");
  }
  if (kind == PatternKind::dilated && window.dilation < 2) {
    throw ConfigError("dilated pattern requires dilation >= 2");
  }
}

namespace {

// Range of window slots k in [-half, half] whose key i + k·d lies in [0, n).
struct SlotRange {
  std::ptrdiff_t lo, hi;
};

SlotRange slot_range(std::size_t i, std::size_t n, int half, int d) {
  const auto ii = static_cast<std::ptrdiff_t>(i);
  const auto nn = static_cast<std::ptrdiff_t>(n);
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(-half, -(ii / d));
  const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(half, (nn - 1 - ii) / d);
  return {lo, hi};
}

int effective_half(std::size_t n, const WindowConfig& cfg) {
  const auto reach = static_cast<std::ptrdiff_t>(n - 1) / cfg.dilation;
  return static_cast<int>(std::min<std::ptrdiff_t>(cfg.half(), reach));
}

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v, bool same_length) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
    throw DimensionError("attention expects rank-3 [h,n,d] tensors, got q " +
                         shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                         shape_str(v.shape()));
  }
  if (q.dim(0) != k.dim(0) || k.dim(0) != v.dim(0) || q.dim(2) != k.dim(2) ||
      k.dim(1) != v.dim(1) || (same_length && q.dim(1) != k.dim(1))) {
    throw DimensionError("attention shape mismatch: q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  if (q.dim(1) == 0 || k.dim(1) == 0) throw ContractError("attention over an empty sequence");
}

inline double dot(const float* a, const float* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

}  // namespace

std::vector<std::size_t> AttentionPattern::attended(std::size_t i, std::size_t n) const {
  std::vector<std::size_t> out;
  if (i >= n) return out;
  if (kind == PatternKind::dense) {
    out.resize(n);
    for (std::size_t j = 0; j < n; ++j) out[j] = j;
    return out;
  }
  const int d = window.dilation;
  const auto r = slot_range(i, n, window.half(), d);
  for (auto s = r.lo; s <= r.hi; ++s) out.push_back(static_cast<std::size_t>(i + s * d));
  return out;
}

bool AttentionPattern::attends(std::size_t i, std::size_t j, std::size_t n) const {
  if (i >= n || j >= n) return false;
  if (kind == PatternKind::dense) return true;
  const auto diff = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(i);
  const int d = window.dilation;
  return diff % d == 0 && std::abs(diff / d) <= window.half();
}

std::uint64_t count_score_evaluations(std::size_t n, const AttentionPattern& pattern) {
  if (n == 0) throw ContractError("count_score_evaluations requires n >= 1");
  if (pattern.kind == PatternKind::dense) return static_cast<std::uint64_t>(n) * n;
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = slot_range(i, n, pattern.window.half(), pattern.window.dilation);
    total += static_cast<std::uint64_t>(r.hi - r.lo + 1);
  }
  return total;
}

std::ptrdiff_t BandedWeights::key_index(std::size_t i, std::size_t s) const {
  const auto j = static_cast<std::ptrdiff_t>(i) +
                 (static_cast<std::ptrdiff_t>(s) - half) * static_cast<std::ptrdiff_t>(dilation);
  return (j < 0 || j >= static_cast<std::ptrdiff_t>(length)) ? -1 : j;
}

namespace {

// Forward pass shared by the autograd op and the inspection helper. Writes
// post-softmax weights into `probs` ([h,n,width], zero for clipped slots).
void banded_softmax(const Tensor& q, const Tensor& k, const WindowConfig& cfg, int half,
                    Buffer& probs) {
  const std::size_t heads = q.dim(0), n = q.dim(1), dk = q.dim(2);
  const std::size_t width = 2 * static_cast<std::size_t>(half) + 1;
  const int d = cfg.dilation;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const float* pq = q.data().data();
  const float* pk = k.data().data();
  std::vector<double> scores(width);
  probs.assign(heads * n * width, 0.0f);
  for (std::size_t h = 0; h < heads; ++h) {
    const float* qh = pq + h * n * dk;
    const float* kh = pk + h * n * dk;
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = slot_range(i, n, half, d);
      double mx = -std::numeric_limits<double>::infinity();
      for (auto s = r.lo; s <= r.hi; ++s) {
        const std::size_t j = i + s * d;
        const double sc = dot(qh + i * dk, kh + j * dk, dk) * scale;
        scores[s + half] = sc;
        mx = std::max(mx, sc);
      }
      double total = 0.0;
      for (auto s = r.lo; s <= r.hi; ++s) {
        scores[s + half] = std::exp(scores[s + half] - mx);
        total += scores[s + half];
      }
      float* row = probs.data() + (h * n + i) * width;
      for (auto s = r.lo; s <= r.hi; ++s)
        row[s + half] = static_cast<float>(scores[s + half] / total);
    }
  }
}

}  // namespace

Tensor windowed_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                          const WindowConfig& cfg, const AttentionDropout& drop) {
  cfg.validate();
  check_qkv(q, k, v, true);
  const std::size_t heads = q.dim(0), n = q.dim(1), dk = q.dim(2), dv = v.dim(2);
  const int d = cfg.dilation;
  const int half = effective_half(n, cfg);
  const std::size_t width = 2 * static_cast<std::size_t>(half) + 1;

  Buffer probs;
  banded_softmax(q, k, cfg, half, probs);

  // Dropout acts on the weights after normalization; `kept` holds the
  // per-slot multipliers (0 or 1/(1-p)).
  Buffer kept;
  const bool dropping = drop.active();
  if (dropping) {
    kept.resize(probs.size());
    const float keep_scale = 1.0f / (1.0f - drop.p);
    for (auto& m : kept) m = drop.rng->uniform() < drop.p ? 0.0f : keep_scale;
  }

  Buffer out(heads * n * dv, 0.0f);
  const float* pv = v.data().data();
  std::vector<double> acc(dv);
  for (std::size_t h = 0; h < heads; ++h) {
    const float* vh = pv + h * n * dv;
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = slot_range(i, n, half, d);
      const std::size_t row = (h * n + i) * width;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (auto s = r.lo; s <= r.hi; ++s) {
        double wgt = probs[row + s + half];
        if (dropping) wgt *= kept[row + s + half];
        const float* vj = vh + (i + s * d) * dv;
        for (std::size_t c = 0; c < dv; ++c) acc[c] += wgt * vj[c];
      }
      float* o = out.data() + (h * n + i) * dv;
      for (std::size_t c = 0; c < dv; ++c) o[c] = static_cast<float>(acc[c]);
    }
  }

  return Tape::active().record(
      make_result({heads, n, dv}, std::move(out)), {q, k, v},
      [q, k, v, probs = std::move(probs), kept = std::move(kept), heads, n, dk, dv, d, half,
       width, dropping](std::span<const float> g) {
        float* gq = grad_sink(q);
        float* gk = grad_sink(k);
        float* gv = grad_sink(v);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
        const float* pq = q.data().data();
        const float* pk = k.data().data();
        const float* pv = v.data().data();
        std::vector<double> dp(width);
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t i = 0; i < n; ++i) {
            const auto r = slot_range(i, n, half, d);
            const std::size_t row = (h * n + i) * width;
            const float* gi = g.data() + (h * n + i) * dv;
            double weighted = 0.0;
            for (auto s = r.lo; s <= r.hi; ++s) {
              const std::size_t slot = row + s + half;
              const std::size_t j = i + s * d;
              const double mult = dropping ? kept[slot] : 1.0;
              if (gv) {
                const double wgt = probs[slot] * mult;
                float* gvj = gv + (h * n + j) * dv;
                for (std::size_t c = 0; c < dv; ++c) gvj[c] += static_cast<float>(wgt * gi[c]);
              }
              dp[s + half] = dot(gi, pv + (h * n + j) * dv, dv) * mult;
              weighted += dp[s + half] * probs[slot];
            }
            if (!gq && !gk) continue;
            for (auto s = r.lo; s <= r.hi; ++s) {
              const std::size_t slot = row + s + half;
              const std::size_t j = i + s * d;
              const double ds = probs[slot] * (dp[s + half] - weighted) * scale;
              if (ds == 0.0) continue;
              if (gq) {
                float* gqi = gq + (h * n + i) * dk;
                const float* kj = pk + (h * n + j) * dk;
                for (std::size_t c = 0; c < dk; ++c) gqi[c] += static_cast<float>(ds * kj[c]);
              }
              if (gk) {
                float* gkj = gk + (h * n + j) * dk;
                const float* qi = pq + (h * n + i) * dk;
                for (std::size_t c = 0; c < dk; ++c) gkj[c] += static_cast<float>(ds * qi[c]);
              }
            }
          }
        }
      });
}

Tensor sliding_window_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                const WindowConfig& cfg, const AttentionDropout& drop) {
  if (cfg.dilation != 1) throw ConfigError("sliding window attention requires dilation 1");
  return windowed_attention(q, k, v, cfg, drop);
}

Tensor dilated_window_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                const WindowConfig& cfg, const AttentionDropout& drop) {
  if (cfg.dilation < 2) throw ConfigError("dilated window attention requires dilation >= 2");
  return windowed_attention(q, k, v, cfg, drop);
}

namespace {

Tensor causal_mask(std::size_t n) {
  Tensor mask = Tensor::zeros({n, n});
  auto m = mask.mutable_data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = -std::numeric_limits<float>::infinity();
  return mask;
}

Tensor dense_scores(const Tensor& q, const Tensor& k, bool causal) {
  const float factor = 1.0f / std::sqrt(static_cast<float>(q.dim(2)));
  Tensor scores = scale(matmul(q, transpose(k, 1, 2)), factor);
  if (causal) {
    if (q.dim(1) != k.dim(1)) throw DimensionError("causal attention requires equal lengths");
    scores = add(scores, causal_mask(q.dim(1)));
  }
  return scores;
}

}  // namespace

Tensor dense_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                       const AttentionDropout& drop) {
  check_qkv(q, k, v, causal);
  Tensor weights = softmax(dense_scores(q, k, causal));
  if (drop.active()) weights = dropout(weights, drop.p, *drop.rng, true);
  return matmul(weights, v);
}

Tensor cross_attention(const Tensor& q_text, const Tensor& k_enc, const Tensor& v_enc,
                       const AttentionDropout& drop) {
  return dense_attention(q_text, k_enc, v_enc, false, drop);
}

Tensor self_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                      const AttentionPattern& pattern, const AttentionDropout& drop) {
  pattern.validate();
  if (pattern.kind == PatternKind::dense) return dense_attention(q, k, v, false, drop);
  return windowed_attention(q, k, v, pattern.window, drop);
}

BandedWeights windowed_attention_weights(const Tensor& q, const Tensor& k,
                                         const WindowConfig& cfg) {
  cfg.validate();
  check_qkv(q, k, k, true);
  const std::size_t n = q.dim(1);
  const int half = effective_half(n, cfg);
  Buffer probs;
  banded_softmax(q, k, cfg, half, probs);
  BandedWeights out;
  out.heads = q.dim(0);
  out.length = n;
  out.width = 2 * static_cast<std::size_t>(half) + 1;
  out.dilation = cfg.dilation;
  out.half = half;
  out.weights.assign(probs.begin(), probs.end());
  return out;
}

Tensor dense_attention_weights(const Tensor& q, const Tensor& k, bool causal) {
  NoGradGuard no_grad;
  return softmax(dense_scores(q, k, causal));
}

}  // namespace s2tl
