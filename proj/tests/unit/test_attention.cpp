#include <cmath>

#include "attention_oracle.hpp"
#include "doctest.h"
#include "gradcheck.hpp"
#include "s2tl/attention.hpp"
#include "s2tl/errors.hpp"
#include "s2tl/ops.hpp"

using namespace s2tl;

namespace {

std::vector<double> to_double(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

double max_abs_diff(std::span<const float> a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST_CASE("window config validation") {
  CHECK_NOTHROW((WindowConfig{48, 1}.validate()));
  CHECK_THROWS_AS((WindowConfig{47, 1}.validate()), ConfigError);
  CHECK_THROWS_AS((WindowConfig{0, 1}.validate()), ConfigError);
  CHECK_THROWS_AS((WindowConfig{4, 0}.validate()), ConfigError);
}

TEST_CASE("attended sets follow the mask definition") {
  const auto s = AttentionPattern::sliding(2);
  CHECK(s.attended(0, 4) == std::vector<std::size_t>{0, 1});
  CHECK(s.attended(2, 4) == std::vector<std::size_t>{1, 2, 3});
  const auto d = AttentionPattern::dilated(2, 2);
  CHECK(d.attended(4, 9) == std::vector<std::size_t>{2, 4, 6});
  CHECK(AttentionPattern::dense().attended(1, 3) == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("score evaluation counts") {
  CHECK(count_score_evaluations(100, AttentionPattern::dense()) == 10000);
  // edge rows see 3 and 4 keys, the 96 interior rows see 5
  CHECK(count_score_evaluations(100, AttentionPattern::sliding(4)) == 494);
  for (std::size_t n = 1; n <= 200; n += 7) {
    for (int w : {2, 4, 8, 48}) {
      const auto p = AttentionPattern::sliding(w);
      std::uint64_t brute = 0;
      for (std::size_t i = 0; i < n; ++i) brute += p.attended(i, n).size();
      CHECK(count_score_evaluations(n, p) == brute);
      CHECK(count_score_evaluations(n, p) <= n * (w + 1));
      // doubling n adds at most the clipped-edge deficit, a constant in n
      const std::uint64_t half = w / 2;
      CHECK(count_score_evaluations(2 * n, p) <= 2 * count_score_evaluations(n, p) + half * (half + 1));
      if (n > static_cast<std::size_t>(w))
        CHECK(count_score_evaluations(2 * n, p) == 2 * count_score_evaluations(n, p) + half * (half + 1));
    }
  }
}

TEST_CASE("windowed attention matches the masked dense oracle") {
  Rng rng(8);
  for (auto [n, w, d] : {std::tuple{16, 4, 1}, std::tuple{9, 2, 2}, std::tuple{20, 6, 3}}) {
    const std::size_t N = n;
    Tensor q = testing::random_tensor({2, N, 5}, rng).set_requires_grad();
    Tensor k = testing::random_tensor({2, N, 5}, rng).set_requires_grad();
    Tensor v = testing::random_tensor({2, N, 3}, rng).set_requires_grad();
    Tensor g = testing::random_tensor({2, N, 3}, rng);
    const Tensor out = windowed_attention(q, k, v, {w, d});
    backward(sum(mul(out, g)));
    const testing::Qkv x{2, N, 5, 3, to_double(q), to_double(k), to_double(v)};
    const long half = w / 2, dil = d;
    const auto ref = testing::masked_attention(x, to_double(g), [&](std::size_t i, std::size_t j) {
      return testing::band_visible(static_cast<long>(i), static_cast<long>(j), half, dil);
    });
    CHECK(max_abs_diff(out.data(), ref.out) < 1e-5);
    CHECK(max_abs_diff(q.grad(), ref.dq) < 1e-5);
    CHECK(max_abs_diff(k.grad(), ref.dk) < 1e-5);
    CHECK(max_abs_diff(v.grad(), ref.dv) < 1e-5);
  }
}

TEST_CASE("wide windows reduce to dense attention") {
  Rng rng(3);
  const std::size_t n = 7;
  Tensor q = testing::random_tensor({1, n, 4}, rng), k = testing::random_tensor({1, n, 4}, rng),
         v = testing::random_tensor({1, n, 4}, rng);
  const Tensor a = sliding_window_attention(q, k, v, {12, 1});
  const Tensor b = dense_attention(q, k, v, false);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-5);
}

TEST_CASE("dilation one equals the sliding window bit for bit") {
  Rng rng(6);
  Tensor q = testing::random_tensor({2, 11, 4}, rng), k = testing::random_tensor({2, 11, 4}, rng),
         v = testing::random_tensor({2, 11, 4}, rng);
  const Tensor a = sliding_window_attention(q, k, v, {4, 1});
  const Tensor b = windowed_attention(q, k, v, {4, 1});
  CHECK(std::vector<float>(a.data().begin(), a.data().end()) ==
        std::vector<float>(b.data().begin(), b.data().end()));
  CHECK_THROWS_AS(dilated_window_attention(q, k, v, {4, 1}), ConfigError);
  CHECK_THROWS_AS(sliding_window_attention(q, k, v, {4, 2}), ConfigError);
}

TEST_CASE("attention error cases") {
  Tensor e = Tensor::zeros({1, 0, 4});
  CHECK_THROWS_AS(windowed_attention(e, e, e, {4, 1}), ContractError);
  CHECK_THROWS_AS(windowed_attention(Tensor::zeros({1, 3, 4}), Tensor::zeros({1, 3, 4}),
                                     Tensor::zeros({1, 3, 4}), {3, 1}),
                  ConfigError);
  CHECK_THROWS_AS(dense_attention(Tensor::zeros({1, 3, 4}), Tensor::zeros({1, 3, 5}),
                                  Tensor::zeros({1, 3, 4}), false),
                  DimensionError);
}

TEST_CASE("dense attention examples") {
  Rng rng(1);
  Tensor v = testing::random_tensor({1, 1, 3}, rng);
  Tensor out = dense_attention(testing::random_tensor({1, 1, 2}, rng),
                               testing::random_tensor({1, 1, 2}, rng), v, false);
  for (int c = 0; c < 3; ++c) CHECK(out.data()[c] == doctest::Approx(v.data()[c]));

  // uniform queries and keys give the mean of the value rows
  Tensor qk = Tensor::full({1, 4, 2}, 0.3f);
  Tensor vals = testing::random_tensor({1, 4, 2}, rng);
  out = dense_attention(qk, qk, vals, false);
  for (int c = 0; c < 2; ++c) {
    double mean = 0;
    for (int j = 0; j < 4; ++j) mean += vals.data()[j * 2 + c] / 4.0;
    CHECK(out.data()[c] == doctest::Approx(mean));
  }

  const Tensor w = dense_attention_weights(testing::random_tensor({1, 3, 2}, rng),
                                           testing::random_tensor({1, 3, 2}, rng), true);
  CHECK(w.data()[0] == doctest::Approx(1.0));
  CHECK(w.data()[1] == 0.0f);
  CHECK(w.data()[2] == 0.0f);
  CHECK(w.data()[5] == 0.0f);
}

TEST_CASE("cross attention has no length constraint") {
  Rng rng(2);
  Tensor v = testing::random_tensor({1, 1, 3}, rng);
  Tensor out = cross_attention(testing::random_tensor({1, 1, 4}, rng),
                               testing::random_tensor({1, 1, 4}, rng), v);
  for (int c = 0; c < 3; ++c) CHECK(out.data()[c] == doctest::Approx(v.data()[c]));

  Tensor q = testing::random_tensor({2, 2, 4}, rng);
  Tensor k = testing::random_tensor({2, 50, 4}, rng), vv = testing::random_tensor({2, 50, 3}, rng);
  const Tensor a = cross_attention(q, k, vv);
  const Tensor b = dense_attention(q, k, vv, false);
  CHECK(a.shape() == Shape{2, 2, 3});
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("gradients do not reach unattended values") {
  Rng rng(12);
  const std::size_t n = 12;
  for (auto [w, d] : {std::pair{4, 1}, std::pair{2, 3}}) {
    Tensor q = testing::random_tensor({1, n, 3}, rng), k = testing::random_tensor({1, n, 3}, rng);
    for (std::size_t i = 0; i < n; ++i) {
      Tensor v = testing::random_tensor({1, n, 2}, rng).set_requires_grad();
      const Tensor out = windowed_attention(q, k, v, {w, d});
      backward(sum(slice(reshape(out, {n, 2}), i, i + 1)));
      const auto p = AttentionPattern{d == 1 ? PatternKind::sliding : PatternKind::dilated, {w, d}};
      for (std::size_t j = 0; j < n; ++j) {
        const bool seen = p.attends(i, j, n);
        const bool zero = v.grad()[j * 2] == 0.0f && v.grad()[j * 2 + 1] == 0.0f;
        CHECK(seen != zero);
      }
    }
  }
}

TEST_CASE("banded weights rows sum to one") {
  Rng rng(5);
  const auto bw = windowed_attention_weights(testing::random_tensor({2, 10, 4}, rng),
                                             testing::random_tensor({2, 10, 4}, rng), {4, 2});
  CHECK(bw.width == 5);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < 10; ++i) {
      double row = 0;
      for (std::size_t s = 0; s < bw.width; ++s) {
        const float wgt = bw.weights[(h * 10 + i) * bw.width + s];
        if (bw.key_index(i, s) < 0) CHECK(wgt == 0.0f);
        row += wgt;
      }
      CHECK(std::abs(row - 1.0) < 1e-5);
    }
}

TEST_CASE("windowed attention runs with windows wider than the sequence") {
  Rng rng(9);
  Tensor x = testing::random_tensor({1, 600, 4}, rng);
  CHECK_NOTHROW(sliding_window_attention(x, x, x, {512, 1}));
}
