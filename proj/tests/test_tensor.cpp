#include "tpt/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using tpt::backward;
using tpt::Rng;
using tpt::Tensor;
using tpt::Tensor64;

namespace {

// Naive triple-loop reference used to freeze matmul expectations.
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  int m, int k, int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int kk = 0; kk < k; ++kk) c[i * n + j] += a[i * k + kk] * b[kk * n + j];
  return c;
}

Tensor64 random_tensor(std::vector<int> shape, Rng& rng, double spread = 1.0) {
  auto t = Tensor64::zeros(shape);
  for (auto& v : t.data()) v = (rng.uniform() * 2.0 - 1.0) * spread;
  return t;
}

}  // namespace

TEST(Matmul, IdentityCase) {
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto b = Tensor::from({2, 2}, {5, 6, 7, 8});
  auto c = tpt::matmul(eye, b);
  EXPECT_EQ(c.data(), b.data());
}

TEST(Matmul, MatchesTripleLoopOracle) {
  std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8};
  auto expect = matmul_oracle(a, b, 2, 2, 2);
  EXPECT_EQ(expect, (std::vector<double>{19, 22, 43, 50}));
  auto c = tpt::matmul(Tensor64::from({2, 2}, a), Tensor64::from({2, 2}, b));
  EXPECT_EQ(c.data(), expect);

  Rng rng(11);
  auto ra = random_tensor({3, 5}, rng);
  auto rb = random_tensor({5, 4}, rng);
  auto rc = tpt::matmul(ra, rb);
  auto ref = matmul_oracle(ra.data(), rb.data(), 3, 5, 4);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(rc.data()[i], ref[i], 1e-12);
}

TEST(Matmul, ZeroAnnihilates) {
  auto a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto z = Tensor::zeros({3, 2});
  auto c = tpt::matmul(a, z);
  for (float v : c.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Matmul, ShapeMismatchThrows) {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({2, 3});
  EXPECT_THROW(tpt::matmul(a, b), std::invalid_argument);
}

TEST(MatmulNT, AgreesWithExplicitTranspose) {
  Rng rng(7);
  auto a = random_tensor({4, 3}, rng);
  auto b = random_tensor({5, 3}, rng);
  auto c = tpt::matmul_nt(a, b);
  std::vector<double> bt(15);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) bt[j * 5 + i] = b.data()[i * 3 + j];
  auto ref = matmul_oracle(a.data(), bt, 4, 3, 5);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(c.data()[i], ref[i], 1e-12);
}

TEST(Softmax, UniformOnConstantRow) {
  auto x = Tensor::zeros({1, 4});
  auto p = tpt::softmax_lastdim(x);
  for (float v : p.data()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Softmax, ClosedFormHandCase) {
  // softmax([0, ln 3]) = [1, 3] / 4
  auto x = Tensor64::from({1, 2}, {0.0, std::log(3.0)});
  auto p = tpt::softmax_lastdim(x);
  EXPECT_NEAR(p.data()[0], 0.25, 1e-12);
  EXPECT_NEAR(p.data()[1], 0.75, 1e-12);
}

TEST(Softmax, ShiftInvarianceAndRowSums) {
  Rng rng(3);
  auto x = random_tensor({6, 9}, rng, 4.0);
  auto shifted = Tensor64::zeros({6, 9});
  for (std::size_t i = 0; i < x.numel(); ++i) shifted.data()[i] = x.data()[i] + 123.5;
  auto p = tpt::softmax_lastdim(x);
  auto q = tpt::softmax_lastdim(shifted);
  for (std::size_t i = 0; i < p.numel(); ++i) EXPECT_NEAR(p.data()[i], q.data()[i], 1e-12);
  for (int r = 0; r < 6; ++r) {
    double s = 0;
    for (int j = 0; j < 9; ++j) s += p.data()[r * 9 + j];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Softmax, MaskedRowsRenormalize) {
  auto x = Tensor64::from({1, 3}, {5.0, 100.0, 5.0});
  auto mask = Tensor64::from({1, 3}, {1.0, 0.0, 1.0});
  auto p = tpt::masked_softmax_lastdim(x, &mask);
  EXPECT_EQ(p.data()[1], 0.0);
  EXPECT_NEAR(p.data()[0], 0.5, 1e-12);
  EXPECT_NEAR(p.data()[2], 0.5, 1e-12);
  auto all_masked = Tensor64::zeros({1, 3});
  EXPECT_THROW(tpt::masked_softmax_lastdim(x, &all_masked), std::runtime_error);
}

TEST(LayerNorm, ConstantRowGoesToZero) {
  auto x = Tensor::filled({2, 5}, 3.25f);
  auto gain = Tensor::filled({5}, 1.0f);
  auto bias = Tensor::zeros({5});
  auto y = tpt::layer_norm(x, gain, bias, 1e-6f);
  for (float v : y.data()) EXPECT_NEAR(v, 0.0f, 1e-3f);
}

TEST(LayerNorm, AlreadyNormalizedRowFixedPoint) {
  auto x = Tensor64::from({1, 2}, {1.0, -1.0});
  auto gain = Tensor64::filled({2}, 1.0);
  auto bias = Tensor64::zeros({2});
  auto y = tpt::layer_norm(x, gain, bias, 1e-12);
  EXPECT_NEAR(y.data()[0], 1.0, 1e-6);
  EXPECT_NEAR(y.data()[1], -1.0, 1e-6);
}

TEST(LayerNorm, ZeroGainBroadcastsBias) {
  Rng rng(19);
  auto x = random_tensor({3, 4}, rng, 5.0);
  auto gain = Tensor64::zeros({4});
  auto bias = Tensor64::from({4}, {1.0, 2.0, 3.0, 4.0});
  auto y = tpt::layer_norm(x, gain, bias, 1e-6);
  for (int r = 0; r < 3; ++r)
    for (int j = 0; j < 4; ++j) EXPECT_EQ(y.data()[r * 4 + j], bias.data()[j]);
}

TEST(LayerNorm, PreAffineMeanNearZero) {
  Rng rng(23);
  auto x = random_tensor({4, 16}, rng, 10.0);
  auto gain = Tensor64::filled({16}, 1.0);
  auto bias = Tensor64::zeros({16});
  auto y = tpt::layer_norm(x, gain, bias, 1e-9);
  for (int r = 0; r < 4; ++r) {
    double mu = 0;
    for (int j = 0; j < 16; ++j) mu += y.data()[r * 16 + j];
    EXPECT_LT(std::fabs(mu / 16), 1e-6);
  }
}

TEST(Elementwise, ReluHadamardDropout) {
  auto x = Tensor::from({3}, {-1, 0, 2});
  auto r = tpt::relu(x);
  EXPECT_EQ(r.data(), (std::vector<float>{0, 0, 2}));

  auto h = tpt::hadamard(Tensor::from({2}, {2, 3}), Tensor::from({2}, {4, 5}));
  EXPECT_EQ(h.data(), (std::vector<float>{8, 15}));

  Rng rng(5);
  auto d0 = tpt::dropout(x, 0.0, rng, true);
  EXPECT_TRUE(same_storage(d0, x));  // p = 0 is the identity
  auto de = tpt::dropout(x, 0.5, rng, false);
  EXPECT_TRUE(same_storage(de, x));  // eval mode is the identity
}

TEST(Elementwise, DropoutInvertedScaling) {
  Rng rng(41);
  auto x = Tensor::filled({10000}, 1.0f);
  auto d = tpt::dropout(x, 0.25, rng, true);
  double sum = 0;
  int zeros = 0;
  for (float v : d.data()) {
    sum += v;
    if (v == 0.0f) ++zeros;
    else EXPECT_FLOAT_EQ(v, 1.0f / 0.75f);
  }
  EXPECT_NEAR(zeros / 10000.0, 0.25, 0.02);
  EXPECT_NEAR(sum / 10000.0, 1.0, 0.03);  // survivor scaling keeps the mean
}

TEST(Elementwise, EmbeddingLookupAndRangeCheck) {
  auto table = Tensor::from({3, 2}, {0, 1, 10, 11, 20, 21});
  auto e = tpt::embedding_lookup(table, {2, 0});
  EXPECT_EQ(e.data(), (std::vector<float>{20, 21, 0, 1}));
  EXPECT_THROW(tpt::embedding_lookup(table, {3}), std::out_of_range);
}

TEST(Elementwise, ConcatSliceRoundTrip) {
  Rng rng(9);
  auto a = random_tensor({2, 3}, rng);
  auto b = random_tensor({2, 2}, rng);
  auto c = tpt::concat_lastdim<double>({a, b});
  ASSERT_EQ(c.shape(), (std::vector<int>{2, 5}));
  auto sa = tpt::slice_lastdim(c, 0, 3);
  auto sb = tpt::slice_lastdim(c, 3, 2);
  EXPECT_EQ(sa.data(), a.data());
  EXPECT_EQ(sb.data(), b.data());
}

TEST(Backward, SumOfSquaresGrad) {
  auto x = Tensor64::from({4}, {1, -2, 3, 0.5}, true);
  auto loss = tpt::sum_all(tpt::hadamard(x, x));
  backward(loss);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(x.grad()[i], 2 * x.data()[i], 1e-12);
}

TEST(Backward, CrossEntropySoftmaxGradIsPMinusY) {
  Rng rng(13);
  auto z = random_tensor({1, 5}, rng, 2.0);
  z.set_requires_grad(true);
  auto loss = tpt::cross_entropy_mean(z, {3});
  backward(loss);
  auto p = tpt::softmax_lastdim(z.detach());
  for (int j = 0; j < 5; ++j) {
    const double y = j == 3 ? 1.0 : 0.0;
    EXPECT_NEAR(z.grad()[j], p.data()[j] - y, 1e-12);
  }
}

TEST(Backward, DetachedSubgraphGetsNoGrad) {
  auto x = Tensor64::from({2}, {1, 2}, true);
  auto d = x.detach();
  auto loss = tpt::sum_all(tpt::hadamard(d, d));
  EXPECT_FALSE(loss.requires_grad());
  EXPECT_THROW(backward(loss), std::runtime_error);
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, TwiceWithoutReforwardThrows) {
  auto x = Tensor64::from({2}, {1, 2}, true);
  auto loss = tpt::sum_all(tpt::hadamard(x, x));
  backward(loss);
  EXPECT_THROW(backward(loss), std::runtime_error);
}

TEST(Backward, NonScalarLossThrows) {
  auto x = Tensor64::from({2}, {1, 2}, true);
  auto y = tpt::hadamard(x, x);
  EXPECT_THROW(backward(y), std::invalid_argument);
}

TEST(Backward, SharedLeafAccumulatesBothPaths) {
  // f(x) = sum(x*x) + sum(x)  =>  grad = 2x + 1
  auto x = Tensor64::from({3}, {1, 2, 3}, true);
  auto loss = tpt::add(tpt::sum_all(tpt::hadamard(x, x)), tpt::sum_all(x));
  backward(loss);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(x.grad()[i], 2 * x.data()[i] + 1, 1e-12);
}

TEST(NoSilentNaN, OverflowRaises) {
  auto big = Tensor::filled({2}, 3e38f);
  EXPECT_THROW(tpt::add(big, big), std::runtime_error);
  auto nan_in = Tensor::from({1, 2}, {std::numeric_limits<float>::quiet_NaN(), 0.0f});
  EXPECT_THROW(tpt::softmax_lastdim(nan_in), std::runtime_error);
}

TEST(GradCheck, EveryPrimitiveUnderTolerance) {
  Rng rng(2024);
  const double h = 1e-5;

  auto x = random_tensor({3, 4}, rng);
  auto w = random_tensor({4, 3}, rng);
  EXPECT_LT(tpt::grad_check([&](Tensor64& t) { return tpt::sum_all(tpt::matmul(t, w)); }, x, h),
            1e-6);
  EXPECT_LT(tpt::grad_check([&](Tensor64& t) { return tpt::sum_all(tpt::matmul(x, t)); }, w, h),
            1e-6);
  auto y = random_tensor({5, 4}, rng);
  EXPECT_LT(tpt::grad_check([&](Tensor64& t) { return tpt::sum_all(tpt::matmul_nt(t, y)); }, x, h),
            1e-6);

  auto b = random_tensor({3, 4}, rng);
  EXPECT_LT(tpt::grad_check([&](Tensor64& t) { return tpt::sum_all(tpt::add(t, b)); }, x, h), 1e-6);
  EXPECT_LT(tpt::grad_check([&](Tensor64& t) { return tpt::sum_all(tpt::sub(t, b)); }, x, h), 1e-6);
  EXPECT_LT(tpt::grad_check([&](Tensor64& t) { return tpt::sum_all(tpt::hadamard(t, b)); }, x, h),
            1e-6);
  EXPECT_LT(tpt::grad_check([&](Tensor64& t) { return tpt::sum_all(tpt::scale(t, 2.5)); }, x, h),
            1e-6);

  auto bias = random_tensor({4}, rng);
  EXPECT_LT(tpt::grad_check([&](Tensor64& t) { return tpt::sum_all(tpt::add_bias(t, bias)); }, x, h),
            1e-6);
  EXPECT_LT(tpt::grad_check([&](Tensor64& t) { return tpt::sum_all(tpt::add_bias(x, t)); }, bias, h),
            1e-6);

  // keep relu inputs away from the kink
  auto xr = random_tensor({3, 4}, rng);
  for (auto& v : xr.data()) v += v >= 0 ? 0.2 : -0.2;
  EXPECT_LT(tpt::grad_check([&](Tensor64& t) { return tpt::sum_all(tpt::relu(t)); }, xr, h), 1e-6);

  // project softmax/log-softmax through a fixed random weighting to get a scalar
  auto proj = random_tensor({3, 4}, rng);
  EXPECT_LT(tpt::grad_check(
                [&](Tensor64& t) { return tpt::sum_all(tpt::hadamard(tpt::softmax_lastdim(t), proj)); },
                x, h),
            1e-6);
  EXPECT_LT(
      tpt::grad_check(
          [&](Tensor64& t) { return tpt::sum_all(tpt::hadamard(tpt::log_softmax_lastdim(t), proj)); },
          x, h),
      1e-6);
  auto mask = Tensor64::from({3, 4}, {1, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1, 0});
  EXPECT_LT(tpt::grad_check(
                [&](Tensor64& t) {
                  return tpt::sum_all(tpt::hadamard(tpt::masked_softmax_lastdim(t, &mask), proj));
                },
                x, h),
            1e-6);

  auto gain = random_tensor({4}, rng);
  auto lbias = random_tensor({4}, rng);
  auto ln = [&](Tensor64& t) {
    return tpt::sum_all(tpt::hadamard(tpt::layer_norm(t, gain, lbias, 1e-6), proj));
  };
  EXPECT_LT(tpt::grad_check(ln, x, h), 1e-6);
  EXPECT_LT(tpt::grad_check(
                [&](Tensor64& t) {
                  return tpt::sum_all(tpt::hadamard(tpt::layer_norm(x, t, lbias, 1e-6), proj));
                },
                gain, h),
            1e-6);

  auto table = random_tensor({6, 4}, rng);
  EXPECT_LT(tpt::grad_check(
                [&](Tensor64& t) {
                  return tpt::sum_all(tpt::hadamard(tpt::embedding_lookup(t, {1, 5, 1}), x));
                },
                table, h),
            1e-6);

  EXPECT_LT(tpt::grad_check(
                [&](Tensor64& t) { return tpt::cross_entropy_mean(t, {0, 3, 2}, 0.1); }, x, h),
            1e-6);

  auto part = random_tensor({3, 2}, rng);
  auto proj6 = random_tensor({3, 6}, rng);
  EXPECT_LT(tpt::grad_check(
                [&](Tensor64& t) {
                  return tpt::sum_all(tpt::hadamard(tpt::concat_lastdim<double>({t, part}), proj6));
                },
                x, h),
            1e-6);
  EXPECT_LT(tpt::grad_check(
                [&](Tensor64& t) { return tpt::sum_all(tpt::slice_lastdim(t, 1, 2)); }, x, h),
            1e-6);

  // dropout with a frozen mask: reset the stream before each evaluation
  EXPECT_LT(tpt::grad_check(
                [&](Tensor64& t) {
                  Rng local(77);
                  return tpt::sum_all(tpt::hadamard(tpt::dropout(t, 0.3, local, true), proj));
                },
                x, h),
            1e-6);
}

TEST(GradCheck, LinearFunctionNearMachinePrecision) {
  Rng rng(31);
  auto x = random_tensor({3, 4}, rng);
  auto w = random_tensor({4}, rng);
  auto err = tpt::grad_check(
      [&](Tensor64& t) { return tpt::sum_all(tpt::add_bias(tpt::scale(t, 3.0), w)); }, x, 1e-6);
  EXPECT_LT(err, 1e-8);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(43);
  EXPECT_NE(a.next_u64(), c.next_u64());
}

TEST(Rng, CounterRestoreResumesStream) {
  Rng a(42);
  for (int i = 0; i < 10; ++i) a.uniform();
  const auto counter = a.counter();
  std::vector<double> tail;
  for (int i = 0; i < 5; ++i) tail.push_back(a.uniform());
  Rng b(0);
  b.restore(42, counter);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(b.uniform(), tail[i]);
}

TEST(Determinism, ForwardBackwardBitwiseRepeatable) {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({4, 6}, rng);
    x.set_requires_grad(true);
    auto w = random_tensor({6, 3}, rng);
    w.set_requires_grad(true);
    auto h = tpt::relu(tpt::matmul(x, w));
    auto loss = tpt::cross_entropy_mean(h, {0, 2, 1, 2});
    backward(loss);
    std::vector<double> out{loss.value()};
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  EXPECT_EQ(run(7), run(7));
}
