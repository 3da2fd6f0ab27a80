#pragma once

// Causal depthwise convolution y[n] = sum_{m<=n} k[m] x[n-m] for length-L
// sequences and length-L kernels. The FFT path pads to M = next_pow2(2L) so the
// circular product contains the full linear convolution; the direct path is
// the O(L^2) reference.

#include <complex>
#include <span>
#include <vector>

#include "sgconv/common.hpp"
#include "sgconv/fft.hpp"
#include "sgconv/kernelgen.hpp"

namespace sgconv
{

/// Transform tables for one sequence length. Immutable after construction and
/// safe to share between threads; per-call scratch lives in ConvWorkspace.
template <typename T>
class ConvPlan
{
public:
  using Complex = std::complex<T>;

  explicit ConvPlan(std::size_t seq_len) : seq_len_(checked(seq_len)), fft_(next_pow2(2 * seq_len)) {}

  std::size_t seq_len() const { return seq_len_; }
  std::size_t fft_size() const { return fft_.size(); }
  std::size_t spectrum_size() const { return fft_.spectrum_size(); }
  const RealFft<T>& fft() const { return fft_; }

  void spectrum(std::span<const T> x, std::span<Complex> out) const
  {
    require(x.size() == seq_len_, "ConvPlan: input length does not match plan");
    fft_.forward(x, out);
  }

  /// First L samples of the inverse transform. spec is overwritten.
  void inverse(std::span<Complex> spec, std::span<T> out) const
  {
    require(out.size() == seq_len_, "ConvPlan: output length does not match plan");
    fft_.inverse(spec, out);
  }

private:
  static std::size_t checked(std::size_t seq_len)
  {
    require(seq_len >= 1, "ConvPlan: seq_len must be >= 1");
    return seq_len;
  }

  std::size_t seq_len_;
  RealFft<T> fft_;
};

template <typename T>
struct ConvWorkspace
{
  std::vector<std::complex<T>> a;
  std::vector<std::complex<T>> b;

  explicit ConvWorkspace(const ConvPlan<T>& plan) : a(plan.spectrum_size()), b(plan.spectrum_size()) {}
};

/// out[k] = a[k] * b[k]
template <typename T>
void multiply_spectra(std::span<const std::complex<T>> a, std::span<const std::complex<T>> b,
                      std::span<std::complex<T>> out)
{
  for (std::size_t i = 0; i < out.size(); ++i)
  {
    const T re = a[i].real() * b[i].real() - a[i].imag() * b[i].imag();
    const T im = a[i].real() * b[i].imag() + a[i].imag() * b[i].real();
    out[i] = {re, im};
  }
}

/// out[k] = conj(a[k]) * b[k], the spectrum of a cross-correlation.
template <typename T>
void multiply_conj_spectra(std::span<const std::complex<T>> a, std::span<const std::complex<T>> b,
                           std::span<std::complex<T>> out)
{
  for (std::size_t i = 0; i < out.size(); ++i)
  {
    const T re = a[i].real() * b[i].real() + a[i].imag() * b[i].imag();
    const T im = a[i].real() * b[i].imag() - a[i].imag() * b[i].real();
    out[i] = {re, im};
  }
}

template <typename T>
void causal_conv_direct(std::span<const T> x, std::span<const T> k, std::span<T> y)
{
  require(x.size() == k.size(), "causal_conv_direct: x and k lengths differ");
  require(y.size() == x.size(), "causal_conv_direct: output length differs");
  const std::size_t L = x.size();
  std::fill(y.begin(), y.end(), T(0));
  for (std::size_t m = 0; m < L; ++m)
  {
    const T km = k[m];
    const T* src = x.data();
    T* dst = y.data() + m;
    const std::size_t count = L - m;
    for (std::size_t n = 0; n < count; ++n)
      dst[n] += km * src[n];
  }
}

template <typename T>
std::vector<T> causal_conv_direct(std::span<const T> x, std::span<const T> k)
{
  require(x.size() == k.size(), "causal_conv_direct: x and k lengths differ");
  std::vector<T> y(x.size());
  causal_conv_direct(x, k, std::span<T>(y));
  return y;
}

template <typename T>
std::vector<T> causal_conv_direct(const std::vector<T>& x, const std::vector<T>& k)
{
  return causal_conv_direct(std::span<const T>(x), std::span<const T>(k));
}

template <typename T>
void causal_conv_fft(std::span<const T> x, std::span<const T> k, const ConvPlan<T>& plan, ConvWorkspace<T>& ws,
                     std::span<T> y)
{
  require(x.size() == plan.seq_len() && k.size() == plan.seq_len(), "causal_conv_fft: length does not match plan");
  plan.spectrum(x, ws.a);
  plan.spectrum(k, ws.b);
  multiply_spectra<T>(ws.a, ws.b, ws.a);
  plan.inverse(ws.a, y);
}

template <typename T>
std::vector<T> causal_conv_fft(std::span<const T> x, std::span<const T> k, const ConvPlan<T>& plan)
{
  ConvWorkspace<T> ws(plan);
  std::vector<T> y(plan.seq_len());
  causal_conv_fft(x, k, plan, ws, std::span<T>(y));
  return y;
}

template <typename T>
std::vector<T> causal_conv_fft(const std::vector<T>& x, const std::vector<T>& k, const ConvPlan<T>& plan)
{
  return causal_conv_fft(std::span<const T>(x), std::span<const T>(k), plan);
}

/// Spectra of every kernel channel, H x spectrum_size().
template <typename T>
std::vector<std::complex<T>> kernel_spectra(const MaterializedKernel<T>& kernel, const ConvPlan<T>& plan)
{
  require(kernel.seq_len == plan.seq_len(), "kernel length does not match plan");
  const std::size_t bins = plan.spectrum_size();
  std::vector<std::complex<T>> spectra(kernel.channels * bins);
  for (std::size_t h = 0; h < kernel.channels; ++h)
    plan.spectrum(kernel.channel(h), std::span(spectra.data() + h * bins, bins));
  return spectra;
}

/// Depthwise convolution against precomputed kernel spectra (H x bins).
template <typename T>
void depthwise_conv_spectra(const Tensor3<T>& x, std::span<const std::complex<T>> spectra, const ConvPlan<T>& plan,
                            Tensor3<T>& out, std::size_t threads = 1)
{
  const std::size_t channels = x.dim(1);
  const std::size_t bins = plan.spectrum_size();
  require(spectra.size() == channels * bins, "depthwise_conv_spectra: spectra shape mismatch");
  require(x.dim(2) == plan.seq_len(), "depthwise_conv_spectra: length mismatch");
  if (!out.same_shape(x))
    out = Tensor3<T>(x.dim(0), x.dim(1), x.dim(2));
  const std::size_t batch = x.dim(0);
  parallel_for(channels, threads, [&](std::size_t h) {
    ConvWorkspace<T> ws(plan);
    const auto kspec = spectra.subspan(h * bins, bins);
    for (std::size_t b = 0; b < batch; ++b)
    {
      plan.spectrum(x.row(b, h), ws.a);
      multiply_spectra<T>(ws.a, kspec, ws.a);
      plan.inverse(ws.a, out.row(b, h));
    }
  });
}

/// out[b][h] = causal_conv(x[b][h], kernel[h]). Kernel spectra are computed
/// once and shared across the batch. threads > 1 splits work over channels.
template <typename T>
void depthwise_conv_batch(const Tensor3<T>& x, const MaterializedKernel<T>& kernel, const ConvPlan<T>& plan,
                          Tensor3<T>& out, std::size_t threads = 1)
{
  require(x.dim(1) == kernel.channels, "depthwise_conv_batch: channel count mismatch");
  require(x.dim(2) == plan.seq_len() && kernel.seq_len == plan.seq_len(), "depthwise_conv_batch: length mismatch");
  const auto spectra = kernel_spectra(kernel, plan);
  depthwise_conv_spectra<T>(x, spectra, plan, out, threads);
}

template <typename T>
Tensor3<T> depthwise_conv_batch(const Tensor3<T>& x, const MaterializedKernel<T>& kernel, const ConvPlan<T>& plan,
                                std::size_t threads = 1)
{
  Tensor3<T> out(x.dim(0), x.dim(1), x.dim(2));
  depthwise_conv_batch(x, kernel, plan, out, threads);
  return out;
}

} // namespace sgconv
