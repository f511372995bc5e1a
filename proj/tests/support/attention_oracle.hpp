#pragma once

#include <cmath>
#include <cstdlib>
#include <vector>

namespace s2tl::testing {

/// Row-major [h, n, d] blocks in double.
struct Qkv {
  std::size_t heads, n, dk, dv;
  std::vector<double> q, k, v;
};

struct OracleResult {
  std::vector<double> out, dq, dk, dv;
};

/// Band mask written out directly: key j is visible to query i when it lies
/// within half·dilation positions and on the dilation grid.
inline bool band_visible(long i, long j, long half, long dilation) {
  const long off = std::labs(i - j);
  return off <= half * dilation && off % dilation == 0;
}

/// Dense attention restricted by a mask, with gradients for upstream `g`.
template <class Visible>
OracleResult masked_attention(const Qkv& x, const std::vector<double>& g, Visible visible) {
  const std::size_t h = x.heads, n = x.n, dk = x.dk, dv = x.dv;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  OracleResult r;
  r.out.assign(h * n * dv, 0.0);
  r.dq.assign(h * n * dk, 0.0);
  r.dk.assign(h * n * dk, 0.0);
  r.dv.assign(h * n * dv, 0.0);
  std::vector<double> p(n), dp(n);
  for (std::size_t a = 0; a < h; ++a) {
    const double* q = x.q.data() + a * n * dk;
    const double* k = x.k.data() + a * n * dk;
    const double* v = x.v.data() + a * n * dv;
    for (std::size_t i = 0; i < n; ++i) {
      double hi = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        if (!visible(i, j)) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < dk; ++c) s += q[i * dk + c] * k[j * dk + c];
        p[j] = s * inv;
        hi = std::max(hi, p[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        if (visible(i, j)) z += std::exp(p[j] - hi);
      for (std::size_t j = 0; j < n; ++j) p[j] = visible(i, j) ? std::exp(p[j] - hi) / z : 0.0;

      const double* gi = g.data() + (a * n + i) * dv;
      double* oi = r.out.data() + (a * n + i) * dv;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (p[j] == 0.0) {
          dp[j] = 0.0;
          continue;
        }
        double d = 0.0;
        for (std::size_t c = 0; c < dv; ++c) {
          oi[c] += p[j] * v[j * dv + c];
          r.dv[(a * n + j) * dv + c] += p[j] * gi[c];
          d += gi[c] * v[j * dv + c];
        }
        dp[j] = d;
        dot += p[j] * d;
      }
      for (std::size_t j = 0; j < n; ++j) {
        if (p[j] == 0.0) continue;
        const double ds = p[j] * (dp[j] - dot) * inv;
        for (std::size_t c = 0; c < dk; ++c) {
          r.dq[(a * n + i) * dk + c] += ds * k[j * dk + c];
          r.dk[(a * n + j) * dk + c] += ds * q[i * dk + c];
        }
      }
    }
  }
  return r;
}

}  // namespace s2tl::testing
