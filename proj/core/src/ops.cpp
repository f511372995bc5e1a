#include "s2tl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kernels.hpp"
#include "s2tl/errors.hpp"

namespace s2tl {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

Tensor record(Tensor out, std::initializer_list<Tensor> inputs, BackwardFn fn) {
  return Tape::active().record(std::move(out), inputs, std::move(fn));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  std::size_t batch = 1, m, k, n;
  Shape out_shape;
  if (sa.size() == 2 && sb.size() == 2) {
    m = sa[0], k = sa[1], n = sb[1];
    if (sb[0] != k) {
      throw DimensionError("matmul: inner dimensions differ, " + shape_str(sa) + " · " +
                           shape_str(sb));
    }
    out_shape = {m, n};
  } else if (sa.size() == 3 && sb.size() == 3) {
    batch = sa[0], m = sa[1], k = sa[2], n = sb[2];
    if (sb[0] != batch || sb[1] != k) {
      throw DimensionError("matmul: incompatible batched shapes " + shape_str(sa) + " · " +
                           shape_str(sb));
    }
    out_shape = {batch, m, n};
  } else {
    throw DimensionError("matmul: expected two rank-2 or two rank-3 tensors, got " +
                         shape_str(sa) + " · " + shape_str(sb));
  }

  Buffer out(batch * m * n);
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  for (std::size_t bi = 0; bi < batch; ++bi) {
    kernels::mm_nn(pa + bi * m * k, pb + bi * k * n, out.data() + bi * m * n, m, k, n, false);
  }
  return record(make_result(out_shape, std::move(out)), {a, b},
                [a, b, batch, m, k, n](std::span<const float> g) {
                  if (float* ga = grad_sink(a)) {
                    for (std::size_t bi = 0; bi < batch; ++bi)
                      kernels::mm_nt(g.data() + bi * m * n, b.data().data() + bi * k * n,
                                     ga + bi * m * k, m, n, k, true);
                  }
                  if (float* gb = grad_sink(b)) {
                    for (std::size_t bi = 0; bi < batch; ++bi)
                      kernels::mm_tn(a.data().data() + bi * m * k, g.data() + bi * m * n,
                                     gb + bi * k * n, m, k, n, true);
                  }
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sb.size() > sa.size() || !std::equal(sb.begin(), sb.end(), sa.end() - sb.size())) {
    throw DimensionError("add: right operand " + shape_str(sb) +
                         " must equal or be a trailing suffix of " + shape_str(sa));
  }
  const std::size_t inner = b.numel();
  const std::size_t outer = inner ? a.numel() / inner : 0;
  Buffer out(a.data().begin(), a.data().end());
  const float* pb = b.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += pb[i];
  return record(make_result(sa, std::move(out)), {a, b},
                [a, b, outer, inner](std::span<const float> g) {
                  if (float* ga = grad_sink(a))
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  if (float* gb = grad_sink(b)) {
                    std::vector<double> acc(inner, 0.0);
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t i = 0; i < inner; ++i) acc[i] += g[o * inner + i];
                    for (std::size_t i = 0; i < inner; ++i) gb[i] += static_cast<float>(acc[i]);
                  }
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Buffer out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return record(make_result(a.shape(), std::move(out)), {a, b}, [a, b](std::span<const float> g) {
    if (float* ga = grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (float* gb = grad_sink(b))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Buffer out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return record(make_result(a.shape(), std::move(out)), {a, b}, [a, b](std::span<const float> g) {
    if (float* ga = grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
    if (float* gb = grad_sink(b))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
  });
}

Tensor scale(const Tensor& x, float factor) {
  Buffer out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return record(make_result(x.shape(), std::move(out)), {x}, [x, factor](std::span<const float> g) {
    if (float* gx = grad_sink(x))
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

Tensor relu(const Tensor& x) {
  Buffer out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
  return record(make_result(x.shape(), std::move(out)), {x}, [x](std::span<const float> g) {
    if (float* gx = grad_sink(x)) {
      const auto in = x.data();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (in[i] > 0.0f) gx[i] += g[i];
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(d) + "], got " +
                         shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  }
  const std::size_t rows = x.numel() / d;
  Buffer out(x.numel());
  Buffer normed(x.numel());
  std::vector<float> inv_std(rows);
  const float* px = x.data().data();
  const float* pg = gain.data().data();
  const float* pb = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = px + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<float>(is);
    for (std::size_t i = 0; i < d; ++i) {
      const float nh = static_cast<float>((row[i] - mu) * is);
      normed[r * d + i] = nh;
      out[r * d + i] = nh * pg[i] + pb[i];
    }
  }
  return record(
      make_result(x.shape(), std::move(out)), {x, gain, bias},
      [x, gain, bias, rows, d, normed = std::move(normed),
       inv_std = std::move(inv_std)](std::span<const float> g) {
        float* gx = grad_sink(x);
        if (float* gg = grad_sink(gain)) {
          for (std::size_t i = 0; i < d; ++i) {
            double acc = 0.0;
            for (std::size_t r = 0; r < rows; ++r) acc += g[r * d + i] * normed[r * d + i];
            gg[i] += static_cast<float>(acc);
          }
        }
        if (float* gb = grad_sink(bias)) {
          for (std::size_t i = 0; i < d; ++i) {
            double acc = 0.0;
            for (std::size_t r = 0; r < rows; ++r) acc += g[r * d + i];
            gb[i] += static_cast<float>(acc);
          }
        }
        if (gx) {
          const float* pg = gain.data().data();
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dn = 0.0, mean_dn_n = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
              const double dn = static_cast<double>(g[r * d + i]) * pg[i];
              mean_dn += dn;
              mean_dn_n += dn * normed[r * d + i];
            }
            mean_dn /= static_cast<double>(d);
            mean_dn_n /= static_cast<double>(d);
            for (std::size_t i = 0; i < d; ++i) {
              const double dn = static_cast<double>(g[r * d + i]) * pg[i];
              gx[r * d + i] += static_cast<float>(
                  inv_std[r] * (dn - mean_dn - normed[r * d + i] * mean_dn_n));
            }
          }
        }
      });
}

Tensor dropout(const Tensor& x, float p, Rng& rng, bool training) {
  if (p < 0.0f || p >= 1.0f) throw ConfigError("dropout probability must be in [0, 1)");
  if (!training || p == 0.0f) return x;
  const float keep_scale = 1.0f / (1.0f - p);
  std::vector<float> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < p ? 0.0f : keep_scale;
  Buffer out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  return record(make_result(x.shape(), std::move(out)), {x},
                [x, mask = std::move(mask)](std::span<const float> g) {
                  if (float* gx = grad_sink(x))
                    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be rank 2");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<int> idx(ids.begin(), ids.end());
  Buffer out(idx.size() * d);
  for (std::size_t t = 0; t < idx.size(); ++t) {
    if (idx[t] < 0 || static_cast<std::size_t>(idx[t]) >= vocab) {
      throw DimensionError("embedding: id " + std::to_string(idx[t]) + " outside vocabulary of " +
                           std::to_string(vocab));
    }
    std::copy_n(table.data().data() + idx[t] * d, d, out.data() + t * d);
  }
  const std::size_t n = idx.size();
  return record(make_result({n, d}, std::move(out)), {table},
                [table, idx = std::move(idx), d](std::span<const float> g) {
                  if (float* gt = grad_sink(table))
                    for (std::size_t t = 0; t < idx.size(); ++t)
                      for (std::size_t i = 0; i < d; ++i) gt[idx[t] * d + i] += g[t * d + i];
                });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.rank() != 2 || weight.rank() != 3) {
    throw DimensionError("conv1d: expected x [n,c_in] and weight [c_out,c_in,k], got " +
                         shape_str(x.shape()) + " and " + shape_str(weight.shape()));
  }
  const std::size_t n = x.dim(0), cin = x.dim(1);
  const std::size_t cout = weight.dim(0), ksize = weight.dim(2);
  if (weight.dim(1) != cin || bias.shape() != Shape{cout}) {
    throw DimensionError("conv1d: channel mismatch between " + shape_str(x.shape()) + ", " +
                         shape_str(weight.shape()) + " and bias " + shape_str(bias.shape()));
  }
  if (stride == 0) throw ContractError("conv1d: stride must be positive");
  if (n + 2 * padding < ksize) {
    throw DimensionError("conv1d: input of length " + std::to_string(n) +
                         " is shorter than the kernel support " + std::to_string(ksize));
  }
  const std::size_t nout = (n + 2 * padding - ksize) / stride + 1;
  const std::size_t patch = cin * ksize;

  // im2col: cols[t, c*k + j] = x[t*stride - pad + j, c]
  std::vector<float> cols(nout * patch, 0.0f);
  const float* px = x.data().data();
  for (std::size_t t = 0; t < nout; ++t) {
    for (std::size_t j = 0; j < ksize; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) -
                                 static_cast<std::ptrdiff_t>(padding);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
      for (std::size_t c = 0; c < cin; ++c) cols[t * patch + c * ksize + j] = px[src * cin + c];
    }
  }
  Buffer out(nout * cout);
  kernels::mm_nt(cols.data(), weight.data().data(), out.data(), nout, patch, cout, false);
  for (std::size_t t = 0; t < nout; ++t)
    for (std::size_t o = 0; o < cout; ++o) out[t * cout + o] += bias.data()[o];

  return record(
      make_result({nout, cout}, std::move(out)), {x, weight, bias},
      [x, weight, bias, cols = std::move(cols), n, cin, cout, ksize, nout, patch, stride,
       padding](std::span<const float> g) {
        if (float* gw = grad_sink(weight)) {
          kernels::mm_tn(g.data(), cols.data(), gw, nout, cout, patch, true);
        }
        if (float* gb = grad_sink(bias)) {
          for (std::size_t o = 0; o < cout; ++o) {
            double acc = 0.0;
            for (std::size_t t = 0; t < nout; ++t) acc += g[t * cout + o];
            gb[o] += static_cast<float>(acc);
          }
        }
        if (float* gx = grad_sink(x)) {
          std::vector<float> gcols(nout * patch, 0.0f);
          kernels::mm_nn(g.data(), weight.data().data(), gcols.data(), nout, cout, patch, false);
          for (std::size_t t = 0; t < nout; ++t) {
            for (std::size_t j = 0; j < ksize; ++j) {
              const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) -
                                         static_cast<std::ptrdiff_t>(padding);
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
              for (std::size_t c = 0; c < cin; ++c)
                gx[src * cin + c] += gcols[t * patch + c * ksize + j];
            }
          }
        }
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  Buffer out(x.data().begin(), x.data().end());
  return record(make_result(std::move(shape), std::move(out)), {x}, [x](std::span<const float> g) {
    if (float* gx = grad_sink(x))
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

namespace {

// Strided copy implementing an axis swap; `inverse` maps output back to input.
void permute_copy(const float* src, float* dst, const Shape& in_shape, std::size_t a0,
                  std::size_t a1, bool accumulate) {
  const std::size_t r = in_shape.size();
  Shape out_shape = in_shape;
  std::swap(out_shape[a0], out_shape[a1]);
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * in_shape[i + 1];
  std::vector<std::size_t> src_stride = in_stride;
  std::swap(src_stride[a0], src_stride[a1]);

  const std::size_t total = numel(in_shape);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < total; ++o) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < r; ++i) s += idx[i] * src_stride[i];
    if (accumulate)
      dst[o] += src[s];
    else
      dst[o] = src[s];
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
}

}  // namespace

Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1) {
  const auto& s = x.shape();
  if (axis0 >= s.size() || axis1 >= s.size()) {
    throw DimensionError("transpose: axes out of range for " + shape_str(s));
  }
  if (s.size() > 4) throw DimensionError("transpose: rank > 4 unsupported");
  Shape out_shape = s;
  std::swap(out_shape[axis0], out_shape[axis1]);
  Buffer out(x.numel());
  if (s.size() == 2 && axis0 != axis1) {
    kernels::transpose2d(x.data().data(), out.data(), s[0], s[1]);
  } else {
    permute_copy(x.data().data(), out.data(), s, axis0, axis1, false);
  }
  return record(make_result(out_shape, std::move(out)), {x},
                [x, out_shape, axis0, axis1](std::span<const float> g) {
                  if (float* gx = grad_sink(x)) {
                    // Swapping the same axes of the output gradient restores input layout.
                    permute_copy(g.data(), gx, out_shape, axis0, axis1, true);
                  }
                });
}

Tensor slice(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin > end || end > x.dim(0)) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t row = x.numel() / x.dim(0);
  Shape out_shape = x.shape();
  out_shape[0] = end - begin;
  Buffer out(x.data().begin() + begin * row, x.data().begin() + end * row);
  return record(make_result(out_shape, std::move(out)), {x},
                [x, begin, row](std::span<const float> g) {
                  if (float* gx = grad_sink(x))
                    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * row + i] += g[i];
                });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size()) throw DimensionError("softmax: axis out of range for " + shape_str(s));
  const std::size_t len = s[axis];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t outer = len ? x.numel() / (len * inner) : 0;
  const float* px = x.data().data();
  Buffer out(x.numel());
  constexpr float kNegInf = -std::numeric_limits<float>::infinity();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      float mx = kNegInf;
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, px[base + j * inner]);
      if (mx == kNegInf) {
        for (std::size_t j = 0; j < len; ++j) out[base + j * inner] = 0.0f;
        continue;
      }
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(static_cast<double>(px[base + j * inner]) - mx);
        out[base + j * inner] = static_cast<float>(e);
        total += e;
      }
      const double inv = 1.0 / total;
      for (std::size_t j = 0; j < len; ++j)
        out[base + j * inner] = static_cast<float>(out[base + j * inner] * inv);
    }
  }
  Tensor result = make_result(s, std::move(out));
  // The backward rule needs the probabilities; hold them by value to avoid a
  // reference cycle between the output and its tape entry.
  Buffer probs(result.data().begin(), result.data().end());
  return record(result, {x},
                [x, probs = std::move(probs), outer, inner, len](std::span<const float> g) {
                  float* gx = grad_sink(x);
                  if (!gx) return;
                  for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t in = 0; in < inner; ++in) {
                      const std::size_t base = o * len * inner + in;
                      double dot = 0.0;
                      for (std::size_t j = 0; j < len; ++j)
                        dot += static_cast<double>(g[base + j * inner]) * probs[base + j * inner];
                      for (std::size_t j = 0; j < len; ++j) {
                        const std::size_t at = base + j * inner;
                        gx[at] += static_cast<float>(probs[at] * (g[at] - dot));
                      }
                    }
                  }
                });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  return record(Tensor::scalar(static_cast<float>(acc)), {x}, [x](std::span<const float> g) {
    if (float* gx = grad_sink(x))
      for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0f / static_cast<float>(x.numel()));
}

Tensor cross_entropy_logits(const Tensor& logits, std::span<const int> targets, float smoothing,
                            int ignore_index, Reduction reduction) {
  if (logits.rank() != 2) {
    throw DimensionError("cross_entropy_logits: logits must be [T,V], got " +
                         shape_str(logits.shape()));
  }
  const std::size_t steps = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != steps) {
    throw DimensionError("cross_entropy_logits: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(steps) + " positions");
  }
  if (smoothing < 0.0f || smoothing > 1.0f) throw ConfigError("label smoothing must be in [0,1]");

  std::vector<int> tgt(targets.begin(), targets.end());
  std::size_t counted = 0;
  for (int t : tgt) {
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw DimensionError("cross_entropy_logits: target id " + std::to_string(t) +
                           " outside vocabulary of " + std::to_string(vocab));
    }
    ++counted;
  }
  if (counted == 0) throw ContractError("cross_entropy_logits: every target position is padding");

  const float* pl = logits.data().data();
  std::vector<float> probs(steps * vocab);
  double total = 0.0;
  const double eps = smoothing;
  for (std::size_t t = 0; t < steps; ++t) {
    const float* row = pl + t * vocab;
    const float mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) z += std::exp(static_cast<double>(row[v]) - mx);
    const double log_z = std::log(z) + mx;
    for (std::size_t v = 0; v < vocab; ++v)
      probs[t * vocab + v] = static_cast<float>(std::exp(row[v] - log_z));
    if (tgt[t] == ignore_index) continue;
    double mean_nll = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) mean_nll += log_z - row[v];
    mean_nll /= static_cast<double>(vocab);
    total += (1.0 - eps) * (log_z - row[tgt[t]]) + eps * mean_nll;
  }
  const double norm = reduction == Reduction::mean ? 1.0 / static_cast<double>(counted) : 1.0;
  return record(Tensor::scalar(static_cast<float>(total * norm)), {logits},
                [logits, tgt = std::move(tgt), probs = std::move(probs), steps, vocab, eps, norm,
                 ignore_index](std::span<const float> g) {
                  float* gl = grad_sink(logits);
                  if (!gl) return;
                  const double scale = g[0] * norm;
                  const double uniform = eps / static_cast<double>(vocab);
                  for (std::size_t t = 0; t < steps; ++t) {
                    if (tgt[t] == ignore_index) continue;
                    for (std::size_t v = 0; v < vocab; ++v) {
                      double d = probs[t * vocab + v] - uniform;
                      if (static_cast<int>(v) == tgt[t]) d -= 1.0 - eps;
                      gl[t * vocab + v] += static_cast<float>(scale * d);
                    }
                  }
                });
}

}  // namespace s2tl
