#include <cmath>
#include <limits>

#include "doctest.h"
#include "op_cases.hpp"
#include "s2tl/errors.hpp"
#include "s2tl/ops.hpp"

using namespace s2tl;

namespace {

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("tensor factories and invariants") {
  Tensor t = Tensor::from({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(Tensor::from({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  CHECK(Tensor::scalar(2.5f).item() == 2.5f);
  CHECK_THROWS_AS(t.item(), Error);
}

TEST_CASE("matmul examples") {
  Tensor eye = Tensor::from({2, 2}, std::vector<float>{1, 0, 0, 1});
  Tensor x = Tensor::from({2, 3}, std::vector<float>{1, -2, 3, 0.5f, 7, 9});
  CHECK(values(matmul(eye, x)) == values(x));

  Tensor a = Tensor::from({2, 2}, std::vector<float>{1, 2, 3, 4});
  Tensor b = Tensor::from({2, 1}, std::vector<float>{0, 1});
  const Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(values(c) == std::vector<float>{2, 4});

  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
}

TEST_CASE("matmul kernel handles ragged tiles") {
  Rng rng(4);
  for (auto [m, k, n] : {std::tuple{13, 7, 19}, std::tuple{1, 1, 1}, std::tuple{9, 33, 17}, std::tuple{16, 3, 32}}) {
    Tensor a = testing::random_tensor({std::size_t(m), std::size_t(k)}, rng);
    Tensor b = testing::random_tensor({std::size_t(k), std::size_t(n)}, rng);
    const Tensor c = matmul(a, b);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double ref = 0.0;
        for (int p = 0; p < k; ++p) ref += double(a.data()[i * k + p]) * b.data()[p * n + j];
        CHECK(c.data()[i * n + j] == doctest::Approx(ref).epsilon(1e-6));
      }
  }
}

TEST_CASE("softmax examples") {
  auto s = softmax(Tensor::from({3}, std::vector<float>{0, 0, 0}));
  for (float v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0));
  s = softmax(Tensor::from({2}, std::vector<float>{1000, 1000}));
  CHECK(s.data()[0] == doctest::Approx(0.5));
  CHECK(s.data()[1] == doctest::Approx(0.5));
  s = softmax(Tensor::from({2}, std::vector<float>{0, static_cast<float>(std::log(3.0))}));
  CHECK(s.data()[0] == doctest::Approx(0.25));
  CHECK(s.data()[1] == doctest::Approx(0.75));

  const float ninf = -std::numeric_limits<float>::infinity();
  s = softmax(Tensor::from({2, 3}, std::vector<float>{ninf, ninf, ninf, ninf, 0, 1}));
  CHECK(values(s)[0] == 0.0f);
  CHECK(values(s)[2] == 0.0f);
  CHECK(values(s)[3] == 0.0f);
  CHECK(s.data()[4] + s.data()[5] == doctest::Approx(1.0));

  Rng rng(2);
  const auto r = softmax(testing::random_tensor({5, 9}, rng, 10.0));
  for (int i = 0; i < 5; ++i) {
    double row = 0;
    for (int j = 0; j < 9; ++j) {
      CHECK(r.data()[i * 9 + j] >= 0.0f);
      row += r.data()[i * 9 + j];
    }
    CHECK(std::abs(row - 1.0) < 1e-5);
  }
}

TEST_CASE("backward examples") {
  Tensor x = Tensor::from({3}, std::vector<float>{1, -2, 5});
  x.set_requires_grad();
  backward(sum(x));
  CHECK(values(Tensor::from({3}, x.grad())) == std::vector<float>{1, 1, 1});

  Tensor y = Tensor::from({2}, std::vector<float>{1, 2});
  y.set_requires_grad();
  backward(sum(mul(y, y)));
  CHECK(y.grad()[0] == 2.0f);
  CHECK(y.grad()[1] == 4.0f);

  // gradients accumulate across backward calls
  backward(sum(y));
  CHECK(y.grad()[0] == 3.0f);

  CHECK_THROWS_AS(backward(y), ContractError);
  Tensor z = Tensor::scalar(1.0f);
  CHECK_THROWS_AS(backward(z), ContractError);
  CHECK(Tape::active().size() == 0);
}

TEST_CASE("backward is deterministic") {
  auto run = [] {
    Rng rng(17);
    Tensor a = testing::random_tensor({4, 6}, rng).set_requires_grad();
    Tensor b = testing::random_tensor({6, 3}, rng).set_requires_grad();
    Tensor g = testing::random_tensor({6}, rng).set_requires_grad();
    Tensor out = matmul(layer_norm(a, g, Tensor::zeros({6})), b);
    backward(sum(mul(softmax(out), out)));
    return std::vector<float>(a.grad().begin(), a.grad().end());
  };
  CHECK(run() == run());
}

TEST_CASE("recorded tensors are immutable") {
  Tensor a = Tensor::from({2}, std::vector<float>{1, 2}).set_requires_grad();
  Tensor b = scale(a, 2.0f);
  CHECK_THROWS_AS(b.mutable_data(), ContractError);
  Tape::active().clear();
}

TEST_CASE("no-grad guard disables recording") {
  Tensor a = Tensor::from({2}, std::vector<float>{1, 2}).set_requires_grad();
  {
    NoGradGuard g;
    Tensor b = scale(a, 2.0f);
    CHECK_FALSE(b.requires_grad());
  }
  CHECK(Tape::active().size() == 0);
}

TEST_CASE("dropout semantics") {
  Rng rng(1);
  Tensor x = Tensor::full({10000}, 1.0f);
  const Tensor eval = dropout(x, 0.5f, rng, false);
  CHECK(values(eval) == values(x));
  const Tensor train = dropout(x, 0.25f, rng, true);
  double total = 0;
  for (float v : train.data()) {
    CHECK((v == 0.0f || v == doctest::Approx(1.0 / 0.75)));
    total += v;
  }
  CHECK(total / 10000.0 == doctest::Approx(1.0).epsilon(0.03));
  CHECK_THROWS_AS(dropout(x, 1.0f, rng, true), ConfigError);
}

TEST_CASE("broadcast is limited to trailing suffixes") {
  CHECK_NOTHROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3})));
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), DimensionError);
  CHECK_THROWS_AS(mul(Tensor::zeros({2, 3}), Tensor::zeros({3})), DimensionError);
}

TEST_CASE("conv1d shape and short-input error") {
  const Tensor y = conv1d(Tensor::zeros({10, 2}), Tensor::zeros({3, 2, 5}), Tensor::zeros({3}), 2, 2);
  CHECK(y.shape() == Shape{5, 3});
  CHECK_THROWS_AS(conv1d(Tensor::zeros({3, 2}), Tensor::zeros({3, 2, 5}), Tensor::zeros({3}), 1, 0),
                  DimensionError);
}

TEST_CASE("cross entropy rejects all-padding targets") {
  std::vector<int> pad{0, 0};
  CHECK_THROWS_AS(cross_entropy_logits(Tensor::zeros({2, 3}), pad, 0.1f, 0), ContractError);
}

TEST_CASE("finite-difference gradient checks") {
  for (auto& c : testing::gradient_cases()) {
    CAPTURE(c.op);
    CAPTURE(c.shape);
    const auto res = testing::grad_check(c.f, c.inputs);
    CHECK(res.worst_rel_error < 1e-3);
  }
}

TEST_CASE("memory accounting tracks live and peak bytes") {
  const auto before = memory::live_bytes();
  memory::reset_peak();
  {
    Tensor big = Tensor::zeros({1000, 100});
    CHECK(memory::live_bytes() >= before + 400000);
  }
  CHECK(memory::live_bytes() == before);
  CHECK(memory::peak_bytes() >= before + 400000);
}
