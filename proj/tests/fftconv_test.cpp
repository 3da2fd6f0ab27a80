#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sgconv/fftconv.hpp"

using namespace sgconv;

namespace
{

double rel_max_error(const std::vector<double>& got, const std::vector<double>& ref)
{
  const double scale = oracle::max_abs(ref);
  return scale == 0.0 ? oracle::max_abs(got) : oracle::max_abs_diff(got, ref) / scale;
}

} // namespace

TEST(RealFft, MatchesNaiveDft)
{
  std::mt19937_64 rng(1);
  for (std::size_t n : {2u, 4u, 8u, 32u, 256u})
  {
    RealFft<double> fft(n);
    const auto x = oracle::random_vector(n, rng);
    std::vector<std::complex<double>> spec(fft.spectrum_size());
    fft.forward(x, spec);
    for (std::size_t k = 0; k <= n / 2; ++k)
    {
      std::complex<double> ref(0.0, 0.0);
      for (std::size_t j = 0; j < n; ++j)
        ref += x[j] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(j * k) / static_cast<double>(n));
      EXPECT_LT(std::abs(ref - spec[k]), 1e-12 * static_cast<double>(n)) << "n=" << n << " k=" << k;
    }
    std::vector<double> back(n);
    fft.inverse(spec, back);
    EXPECT_LT(oracle::max_abs_diff(back, x), 1e-13);
  }
}

TEST(RealFft, RejectsNonPowerOfTwo)
{
  EXPECT_THROW(RealFft<double>(12), std::invalid_argument);
  EXPECT_THROW(RealFft<double>(1), std::invalid_argument);
}

TEST(ConvPlan, SizeCoversLinearConvolution)
{
  for (std::size_t L : {1u, 2u, 3u, 16u, 100u, 1024u})
  {
    ConvPlan<double> plan(L);
    EXPECT_GE(plan.fft_size(), 2 * L - 1);
    EXPECT_GE(plan.fft_size(), 2 * L);
    EXPECT_EQ(plan.fft_size() & (plan.fft_size() - 1), 0u);
  }
}

TEST(CausalConvDirect, Examples)
{
  EXPECT_EQ(causal_conv_direct(std::vector<double>{1, 2, 3}, std::vector<double>{1, 0, 0}),
            (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(causal_conv_direct(std::vector<double>{0, 0, 1}, std::vector<double>{2, 3, 5}),
            (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(causal_conv_direct(std::vector<double>{1, 1}, std::vector<double>{1, 1}), (std::vector<double>{1, 2}));
  EXPECT_THROW(causal_conv_direct(std::vector<double>{1, 1}, std::vector<double>{1}), std::invalid_argument);
}

TEST(CausalConvFft, ImpulseReproducesKernel)
{
  ConvPlan<double> plan(4);
  const std::vector<double> k{0.3, -1.0, 2.5, 7.0};
  const auto y = causal_conv_fft(std::vector<double>{1, 0, 0, 0}, k, plan);
  EXPECT_LT(oracle::max_abs_diff(y, k), 1e-15);
}

TEST(CausalConvFft, ZeroInputGivesZero)
{
  ConvPlan<double> plan(64);
  std::mt19937_64 rng(2);
  const auto y = causal_conv_fft(std::vector<double>(64, 0.0), oracle::random_vector(64, rng), plan);
  for (double v : y)
    EXPECT_EQ(v, 0.0);
}

TEST(CausalConvFft, RejectsPlanMismatch)
{
  ConvPlan<double> plan(8);
  EXPECT_THROW(causal_conv_fft(std::vector<double>(4, 1.0), std::vector<double>(4, 1.0), plan), std::invalid_argument);
}

TEST(CausalConvFft, MatchesOracleDouble)
{
  std::mt19937_64 rng(3);
  for (std::size_t L : {1u, 3u, 16u, 100u, 1024u})
  {
    ConvPlan<double> plan(L);
    for (int trial = 0; trial < 20; ++trial)
    {
      const auto x = oracle::random_vector(L, rng);
      const auto k = oracle::random_vector(L, rng);
      EXPECT_LE(rel_max_error(causal_conv_fft(x, k, plan), oracle::causal_conv(x, k)), 1e-10) << "L=" << L;
      EXPECT_LE(rel_max_error(causal_conv_direct(x, k), oracle::causal_conv(x, k)), 1e-12);
    }
  }
}

TEST(CausalConvFft, MatchesOracleSingle)
{
  std::mt19937_64 rng(4);
  for (std::size_t L : {16u, 256u, 4096u})
  {
    ConvPlan<float> plan(L);
    for (int trial = 0; trial < 5; ++trial)
    {
      const auto x = oracle::random_vector(L, rng);
      const auto k = oracle::random_vector(L, rng);
      const std::vector<float> xf(x.begin(), x.end()), kf(k.begin(), k.end());
      const auto yf = causal_conv_fft(xf, kf, plan);
      const std::vector<double> xd(xf.begin(), xf.end()), kd(kf.begin(), kf.end());
      EXPECT_LE(rel_max_error(std::vector<double>(yf.begin(), yf.end()), oracle::causal_conv(xd, kd)), 1e-4);
    }
  }
}

TEST(CausalConvFft, Linearity)
{
  std::mt19937_64 rng(5);
  const std::size_t L = 333;
  ConvPlan<double> plan(L);
  const auto x1 = oracle::random_vector(L, rng);
  const auto x2 = oracle::random_vector(L, rng);
  const auto k = oracle::random_vector(L, rng);
  const double a = 1.7, b = -0.4;
  std::vector<double> mix(L);
  for (std::size_t i = 0; i < L; ++i)
    mix[i] = a * x1[i] + b * x2[i];
  const auto y1 = causal_conv_fft(x1, k, plan);
  const auto y2 = causal_conv_fft(x2, k, plan);
  const auto ym = causal_conv_fft(mix, k, plan);
  std::vector<double> combo(L);
  for (std::size_t i = 0; i < L; ++i)
    combo[i] = a * y1[i] + b * y2[i];
  EXPECT_LE(rel_max_error(ym, combo), 1e-12);
}

TEST(CausalConvFft, Causality)
{
  std::mt19937_64 rng(6);
  const std::size_t L = 128;
  ConvPlan<double> plan(L);
  const auto x = oracle::random_vector(L, rng);
  const auto k = oracle::random_vector(L, rng);
  const auto full = causal_conv_fft(x, k, plan);
  for (std::size_t n : {0u, 1u, 50u, 126u})
  {
    auto cut = x;
    std::fill(cut.begin() + static_cast<std::ptrdiff_t>(n) + 1, cut.end(), 0.0);
    const auto y = causal_conv_fft(cut, k, plan);
    for (std::size_t i = 0; i <= n; ++i)
      EXPECT_NEAR(y[i], full[i], 1e-12 * oracle::max_abs(full));
  }
}

TEST(CausalConvFft, PlanReuseIsBitIdentical)
{
  std::mt19937_64 rng(7);
  const std::size_t L = 200;
  ConvPlan<double> shared(L);
  ConvWorkspace<double> ws(shared);
  for (int i = 0; i < 100; ++i)
  {
    const auto x = oracle::random_vector(L, rng);
    const auto k = oracle::random_vector(L, rng);
    std::vector<double> reused(L);
    causal_conv_fft<double>(x, k, shared, ws, reused);
    ConvPlan<double> fresh(L);
    EXPECT_EQ(reused, causal_conv_fft(x, k, fresh));
  }
}

TEST(DepthwiseConvBatch, PerChannelIndependence)
{
  const std::size_t L = 8;
  MaterializedKernel<double> k{2, L, std::vector<double>(2 * L, 0.0), {1.0, 1.0}};
  k.values[0] = 1.0; // channel 0 impulse, channel 1 zero
  Tensor3<double> x(1, 2, L);
  for (std::size_t l = 0; l < L; ++l)
  {
    x(0, 0, l) = static_cast<double>(l) + 1.0;
    x(0, 1, l) = 3.0;
  }
  ConvPlan<double> plan(L);
  const auto y = depthwise_conv_batch(x, k, plan);
  for (std::size_t l = 0; l < L; ++l)
  {
    EXPECT_NEAR(y(0, 0, l), x(0, 0, l), 1e-14);
    EXPECT_NEAR(y(0, 1, l), 0.0, 1e-14);
  }
}

TEST(DepthwiseConvBatch, IdenticalRowsGiveIdenticalOutputs)
{
  std::mt19937_64 rng(8);
  const std::size_t L = 64, H = 3;
  MaterializedKernel<double> k{H, L, oracle::random_vector(H * L, rng), std::vector<double>(H, 1.0)};
  Tensor3<double> x(4, H, L);
  const auto row = oracle::random_vector(H * L, rng);
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t l = 0; l < L; ++l)
        x(b, h, l) = row[h * L + l];
  ConvPlan<double> plan(L);
  const auto y = depthwise_conv_batch(x, k, plan);
  for (std::size_t b = 1; b < 4; ++b)
    for (std::size_t h = 0; h < H; ++h)
      EXPECT_TRUE(std::equal(y.row(0, h).begin(), y.row(0, h).end(), y.row(b, h).begin()));
}

TEST(DepthwiseConvBatch, MatchesOracleAndThreadCount)
{
  std::mt19937_64 rng(9);
  const std::size_t B = 2, H = 8, L = 512;
  MaterializedKernel<double> k{H, L, oracle::random_vector(H * L, rng), std::vector<double>(H, 1.0)};
  Tensor3<double> x(B, H, L);
  x.data() = oracle::random_vector(B * H * L, rng);
  ConvPlan<double> plan(L);
  const auto y = depthwise_conv_batch(x, k, plan);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
    {
      const std::vector<double> xr(x.row(b, h).begin(), x.row(b, h).end());
      const std::vector<double> kr(k.channel(h).begin(), k.channel(h).end());
      const std::vector<double> yr(y.row(b, h).begin(), y.row(b, h).end());
      EXPECT_LE(rel_max_error(yr, oracle::causal_conv(xr, kr)), 1e-10);
    }
  EXPECT_EQ(depthwise_conv_batch(x, k, plan, 3), y);
}

TEST(DepthwiseConvBatch, RejectsShapeMismatch)
{
  MaterializedKernel<double> k{2, 8, std::vector<double>(16, 0.0), {1.0, 1.0}};
  Tensor3<double> x(1, 3, 8);
  ConvPlan<double> plan(8);
  EXPECT_THROW(depthwise_conv_batch(x, k, plan), std::invalid_argument);
}
