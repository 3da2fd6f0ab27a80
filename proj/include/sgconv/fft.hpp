#pragma once

// Radix-2 real FFT. A length-n real transform runs as a length-n/2 complex
// transform on the even/odd-packed signal followed by a split step.

#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "sgconv/common.hpp"

namespace sgconv
{

constexpr std::size_t next_pow2(std::size_t n) { return n <= 1 ? 1 : std::bit_ceil(n); }

template <typename T>
class RealFft
{
public:
  using Complex = std::complex<T>;

  explicit RealFft(std::size_t n) : n_(n), half_(n / 2)
  {
    require(n >= 2 && std::has_single_bit(n), "RealFft size must be a power of two >= 2");
    build_tables();
  }

  std::size_t size() const { return n_; }
  std::size_t spectrum_size() const { return half_ + 1; }

  /// Spectrum of x zero-padded to size(). out must hold spectrum_size() bins.
  void forward(std::span<const T> x, std::span<Complex> out) const
  {
    require(x.size() <= n_, "RealFft input longer than transform size");
    require(out.size() >= half_ + 1, "RealFft output buffer too small");
    const std::size_t m = x.size();
    for (std::size_t j = 0; j < half_; ++j)
    {
      const std::size_t e = 2 * j;
      const T re = e < m ? x[e] : T(0);
      const T im = e + 1 < m ? x[e + 1] : T(0);
      out[j] = Complex(re, im);
    }
    complex_transform<false>(out.first(half_));
    split_forward(out);
  }

  /// Inverse of forward() including the 1/n scale. spec is used as scratch and
  /// is overwritten; the first out.size() samples are written.
  void inverse(std::span<Complex> spec, std::span<T> out) const
  {
    require(spec.size() >= half_ + 1, "RealFft spectrum buffer too small");
    require(out.size() <= n_, "RealFft output longer than transform size");
    merge_inverse(spec);
    complex_transform<true>(spec.first(half_));
    const T scale = T(1) / static_cast<T>(half_);
    const std::size_t m = out.size();
    for (std::size_t j = 0; j < half_ && 2 * j < m; ++j)
    {
      out[2 * j] = spec[j].real() * scale;
      if (2 * j + 1 < m)
        out[2 * j + 1] = spec[j].imag() * scale;
    }
  }

private:
  void build_tables()
  {
    bitrev_.resize(half_);
    const int bits = std::countr_zero(half_);
    for (std::size_t i = 0; i < half_; ++i)
    {
      std::size_t r = 0;
      for (int b = 0; b < bits; ++b)
        if (i & (std::size_t(1) << b))
          r |= std::size_t(1) << (bits - 1 - b);
      bitrev_[i] = r;
    }
    // twiddles_[m + j] = exp(-2 pi i j / (2m)) for each half-span m
    twiddles_.assign(std::max<std::size_t>(half_, 1), Complex(1, 0));
    for (std::size_t m = 1; m < half_; m *= 2)
      for (std::size_t j = 0; j < m; ++j)
      {
        const double angle = -std::numbers::pi * static_cast<double>(j) / static_cast<double>(m);
        twiddles_[m + j] = Complex(static_cast<T>(std::cos(angle)), static_cast<T>(std::sin(angle)));
      }
    split_.resize(half_ + 1);
    for (std::size_t k = 0; k <= half_; ++k)
    {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_);
      split_[k] = Complex(static_cast<T>(std::cos(angle)), static_cast<T>(std::sin(angle)));
    }
  }

  template <bool Inverse>
  void complex_transform(std::span<Complex> a) const
  {
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i)
      if (i < bitrev_[i])
        std::swap(a[i], a[bitrev_[i]]);
    T* data = reinterpret_cast<T*>(a.data());
    for (std::size_t m = 1; m < n; m *= 2)
    {
      const Complex* tw = twiddles_.data() + m;
      for (std::size_t start = 0; start < n; start += 2 * m)
      {
        T* lo = data + 2 * start;
        T* hi = data + 2 * (start + m);
        for (std::size_t j = 0; j < m; ++j)
        {
          const T wr = tw[j].real();
          const T wi = Inverse ? -tw[j].imag() : tw[j].imag();
          const T hr = hi[2 * j];
          const T hiim = hi[2 * j + 1];
          const T tr = hr * wr - hiim * wi;
          const T ti = hr * wi + hiim * wr;
          const T lr = lo[2 * j];
          const T li = lo[2 * j + 1];
          lo[2 * j] = lr + tr;
          lo[2 * j + 1] = li + ti;
          hi[2 * j] = lr - tr;
          hi[2 * j + 1] = li - ti;
        }
      }
    }
  }

  // Z[k] holds the packed transform; produce X[0..half] in place.
  void split_forward(std::span<Complex> z) const
  {
    const Complex z0 = z[0];
    z[0] = Complex(z0.real() + z0.imag(), T(0));
    z[half_] = Complex(z0.real() - z0.imag(), T(0));
    for (std::size_t k = 1; k <= half_ / 2; ++k)
    {
      const std::size_t q = half_ - k;
      const Complex a = z[k];
      const Complex b = std::conj(z[q]);
      // E = (a + b) / 2, O = -i/2 (a - b); X[k] = E + W^k O, X[q] = conj(E - W^k O)
      const T er = T(0.5) * (a.real() + b.real());
      const T ei = T(0.5) * (a.imag() + b.imag());
      const T or_ = T(0.5) * (a.imag() - b.imag());
      const T oi = T(-0.5) * (a.real() - b.real());
      const T wr = split_[k].real();
      const T wi = split_[k].imag();
      const T tr = wr * or_ - wi * oi;
      const T ti = wr * oi + wi * or_;
      z[k] = Complex(er + tr, ei + ti);
      z[q] = Complex(er - tr, -(ei - ti));
    }
  }

  // Inverse of split_forward: rebuild the packed spectrum Z[0..half).
  void merge_inverse(std::span<Complex> x) const
  {
    const T x0 = x[0].real();
    const T xh = x[half_].real();
    x[0] = Complex(T(0.5) * (x0 + xh), T(0.5) * (x0 - xh));
    for (std::size_t k = 1; k <= half_ / 2; ++k)
    {
      const std::size_t q = half_ - k;
      const Complex a = x[k];
      const Complex b = std::conj(x[q]);
      // E = (a + b) / 2, O = (a - b) / 2 * W^-k; Z[k] = E + i O, Z[q] = conj(E - i O)
      const T er = T(0.5) * (a.real() + b.real());
      const T ei = T(0.5) * (a.imag() + b.imag());
      const T dr = T(0.5) * (a.real() - b.real());
      const T di = T(0.5) * (a.imag() - b.imag());
      const T wr = split_[k].real();
      const T wi = -split_[k].imag();
      const T or_ = dr * wr - di * wi;
      const T oi = dr * wi + di * wr;
      x[k] = Complex(er - oi, ei + or_);
      x[q] = Complex(er + oi, -(ei - or_));
    }
  }

  std::size_t n_;
  std::size_t half_;
  std::vector<std::size_t> bitrev_;
  std::vector<Complex> twiddles_;
  std::vector<Complex> split_;
};

} // namespace sgconv
