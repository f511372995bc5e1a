#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "s2tl/attention.hpp"
#include "s2tl/ops.hpp"

namespace s2tl::testing {

struct GradCase {
  std::string op;
  std::string shape;
  std::function<Tensor(const std::vector<Tensor>&)> f;
  std::vector<Tensor> inputs;
};

/// Every differentiable op on three shapes each.
inline std::vector<GradCase> gradient_cases(std::uint64_t seed = 5) {
  Rng rng(seed);
  std::vector<GradCase> cases;
  auto rt = [&](Shape s, double scale = 1.0) { return random_tensor(std::move(s), rng, scale); };

  for (auto [m, k, n] : {std::tuple{3, 4, 2}, std::tuple{1, 5, 3}, std::tuple{4, 2, 6}}) {
    const std::size_t M = m, K = k, N = n;
    cases.push_back({"matmul", std::to_string(m) + "x" + std::to_string(k) + "x" + std::to_string(n),
                     [](const auto& x) { return matmul(x[0], x[1]); }, {rt({M, K}), rt({K, N})}});
  }
  cases.push_back({"matmul", "batched 2x3x4x2", [](const auto& x) { return matmul(x[0], x[1]); },
                   {rt({2, 3, 4}), rt({2, 4, 2})}});

  for (Shape s : {Shape{5}, Shape{3, 4}, Shape{2, 3, 4}}) {
    cases.push_back({"add", shape_str(s), [](const auto& x) { return add(x[0], x[1]); }, {rt(s), rt(s)}});
    cases.push_back({"add_bias", shape_str(s), [](const auto& x) { return add(x[0], x[1]); },
                     {rt(s), rt({s.back()})}});
    cases.push_back({"sub", shape_str(s), [](const auto& x) { return sub(x[0], x[1]); }, {rt(s), rt(s)}});
    cases.push_back({"mul", shape_str(s), [](const auto& x) { return mul(x[0], x[1]); }, {rt(s), rt(s)}});
    cases.push_back({"scale", shape_str(s), [](const auto& x) { return scale(x[0], -1.7f); }, {rt(s)}});
    cases.push_back({"sum", shape_str(s), [](const auto& x) { return sum(x[0]); }, {rt(s)}});
    cases.push_back({"mean", shape_str(s), [](const auto& x) { return mean(x[0]); }, {rt(s)}});
  }
  for (Shape s : {Shape{7}, Shape{3, 5}, Shape{2, 2, 3}}) {
    // keep inputs away from the kink at zero
    Tensor x = rt(s);
    for (auto& v : x.mutable_data()) v = v >= 0 ? v + 0.05f : v - 0.05f;
    cases.push_back({"relu", shape_str(s), [](const auto& x) { return relu(x[0]); }, {x}});
  }
  for (Shape s : {Shape{4, 6}, Shape{1, 3}, Shape{2, 3, 5}}) {
    const std::size_t d = s.back();
    cases.push_back({"layer_norm", shape_str(s),
                     [](const auto& x) { return layer_norm(x[0], x[1], x[2]); },
                     {rt(s), rt({d}), rt({d})}});
  }
  for (Shape s : {Shape{6}, Shape{4, 5}, Shape{2, 3, 4}}) {
    cases.push_back({"dropout", shape_str(s),
                     [](const auto& x) {
                       Rng r(3);  // same mask on every evaluation
                       return dropout(x[0], 0.3f, r, true);
                     },
                     {rt(s)}});
  }
  for (auto [v, d, ids] : {std::tuple{5, 3, std::vector<int>{0, 4, 2, 4}},
                           std::tuple{3, 2, std::vector<int>{1}},
                           std::tuple{8, 4, std::vector<int>{7, 7, 0, 1, 2}}}) {
    const std::size_t V = v, D = d;
    cases.push_back({"embedding", std::to_string(v) + "x" + std::to_string(d),
                     [ids](const auto& x) { return embedding(x[0], ids); }, {rt({V, D})}});
  }
  for (auto [n, cin, cout, k, stride, pad] :
       {std::tuple{9, 3, 2, 5, 2, 2}, std::tuple{4, 2, 3, 3, 1, 1}, std::tuple{7, 1, 2, 2, 3, 0}}) {
    const std::size_t N = n, CI = cin, CO = cout, K = k, S = stride, P = pad;
    cases.push_back({"conv1d", "n" + std::to_string(n) + " k" + std::to_string(k) + " s" + std::to_string(stride),
                     [S, P](const auto& x) { return conv1d(x[0], x[1], x[2], S, P); },
                     {rt({N, CI}), rt({CO, CI, K}), rt({CO})}});
  }
  for (auto [from, to] : {std::pair{Shape{2, 6}, Shape{3, 4}}, std::pair{Shape{12}, Shape{2, 2, 3}},
                          std::pair{Shape{2, 3, 2}, Shape{6, 2}}}) {
    cases.push_back({"reshape", shape_str(from) + "->" + shape_str(to),
                     [to](const auto& x) { return reshape(x[0], to); }, {rt(from)}});
  }
  for (auto [s, a0, a1] : {std::tuple{Shape{3, 4}, 0, 1}, std::tuple{Shape{2, 3, 4}, 0, 1},
                           std::tuple{Shape{2, 3, 4, 2}, 1, 3}}) {
    const std::size_t A0 = a0, A1 = a1;
    cases.push_back({"transpose", shape_str(s), [A0, A1](const auto& x) { return transpose(x[0], A0, A1); },
                     {rt(s)}});
  }
  for (auto [s, b, e] : {std::tuple{Shape{5, 2}, 1, 4}, std::tuple{Shape{3}, 0, 1},
                         std::tuple{Shape{4, 2, 3}, 2, 4}}) {
    const std::size_t B = b, E = e;
    cases.push_back({"slice", shape_str(s), [B, E](const auto& x) { return slice(x[0], B, E); }, {rt(s)}});
  }
  for (auto [s, axis] : {std::pair{Shape{6}, 0}, std::pair{Shape{3, 4}, 1}, std::pair{Shape{2, 4, 3}, 1}}) {
    const std::size_t A = axis;
    cases.push_back({"softmax", shape_str(s) + " axis " + std::to_string(axis),
                     [A](const auto& x) { return softmax(x[0], A); }, {rt(s)}});
  }
  for (auto [t, v, eps] : {std::tuple{3, 5, 0.1f}, std::tuple{1, 2, 0.0f}, std::tuple{4, 7, 0.3f}}) {
    std::vector<int> tg;
    for (int i = 0; i < t; ++i) tg.push_back(static_cast<int>(rng.below(v)));
    if (t > 2) tg[1] = 0;  // one ignored position
    const std::size_t T = t, V = v;
    const float E = eps;
    cases.push_back({"cross_entropy", std::to_string(t) + "x" + std::to_string(v),
                     [tg, E](const auto& x) { return cross_entropy_logits(x[0], tg, E, 0); },
                     {rt({T, V})}});
    cases.push_back({"cross_entropy_sum", std::to_string(t) + "x" + std::to_string(v),
                     [tg, E](const auto& x) {
                       return cross_entropy_logits(x[0], tg, E, 0, Reduction::sum);
                     },
                     {rt({T, V})}});
  }
  for (auto [h, n, d, w, dil] : {std::tuple{1, 5, 3, 2, 1}, std::tuple{2, 9, 4, 4, 1}, std::tuple{3, 4, 2, 8, 1},
                                 std::tuple{2, 11, 2, 4, 2}, std::tuple{1, 7, 3, 2, 3}, std::tuple{2, 13, 3, 6, 2}}) {
    const std::size_t H = h, N = n, D = d;
    const WindowConfig cfg{w, dil};
    cases.push_back({dil == 1 ? "sliding_window_attention" : "dilated_window_attention",
                     "h" + std::to_string(h) + " n" + std::to_string(n) + " w" + std::to_string(w),
                     [cfg](const auto& x) { return windowed_attention(x[0], x[1], x[2], cfg); },
                     {rt({H, N, D}), rt({H, N, D}), rt({H, N, D})}});
  }
  for (auto [h, m, n, d, causal] : {std::tuple{1, 4, 4, 3, true}, std::tuple{2, 3, 5, 2, false},
                                    std::tuple{2, 6, 6, 4, true}}) {
    const std::size_t H = h, M = m, N = n, D = d;
    const bool C = causal;
    cases.push_back({"dense_attention", "h" + std::to_string(h) + " m" + std::to_string(m) + " n" + std::to_string(n),
                     [C](const auto& x) { return dense_attention(x[0], x[1], x[2], C); },
                     {rt({H, M, D}), rt({H, N, D}), rt({H, N, D})}});
  }
  // windowed attention with weight dropout, same mask each call
  for (auto [h, n, d, w, dil] : {std::tuple{2, 8, 3, 4, 1}, std::tuple{1, 6, 2, 2, 1}, std::tuple{2, 10, 3, 4, 2}}) {
    const std::size_t H = h, N = n, D = d;
    const WindowConfig cfg{w, dil};
    cases.push_back({"windowed_attention_dropout",
                     "h" + std::to_string(h) + " n" + std::to_string(n) + " w" + std::to_string(w) + " d" + std::to_string(dil),
                     [cfg](const auto& x) {
                       Rng r(11);
                       return windowed_attention(x[0], x[1], x[2], cfg, {0.25f, &r, true});
                     },
                     {rt({H, N, D}), rt({H, N, D}), rt({H, N, D})}});
  }
  return cases;
}

}  // namespace s2tl::testing
