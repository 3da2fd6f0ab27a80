#pragma once

// Reverse-mode adjoints of the kernel construction and the causal convolution,
// and a central finite-difference checker for them.

#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "sgconv/common.hpp"
#include "sgconv/fftconv.hpp"
#include "sgconv/kernelgen.hpp"

namespace sgconv
{

template <typename T>
struct ConvAdjoint
{
  std::vector<T> dx;
  std::vector<T> dk;
};

/// dx[n] = sum_{n+m<L} k[m] dy[n+m],  dk[m] = sum_{n>=m} dy[n] x[n-m].
/// Both are cross-correlations, evaluated with the plan's transform.
template <typename T>
ConvAdjoint<T> conv_adjoint(std::span<const T> x, std::span<const T> k, std::span<const T> dy, const ConvPlan<T>& plan)
{
  require(x.size() == k.size() && x.size() == dy.size(), "conv_adjoint: length mismatch");
  require(x.size() == plan.seq_len(), "conv_adjoint: length does not match plan");
  const std::size_t bins = plan.spectrum_size();
  std::vector<std::complex<T>> dys(bins), other(bins);
  plan.spectrum(dy, dys);
  ConvAdjoint<T> out{std::vector<T>(x.size()), std::vector<T>(x.size())};

  plan.spectrum(k, other);
  multiply_conj_spectra<T>(other, dys, other);
  plan.inverse(other, out.dx);

  plan.spectrum(x, other);
  multiply_conj_spectra<T>(other, dys, other);
  plan.inverse(other, out.dk);
  return out;
}

template <typename T>
ConvAdjoint<T> conv_adjoint(std::span<const T> x, std::span<const T> k, std::span<const T> dy)
{
  require(!x.empty(), "conv_adjoint: empty input");
  return conv_adjoint(x, k, dy, ConvPlan<T>(x.size()));
}

template <typename T>
ConvAdjoint<T> conv_adjoint(const std::vector<T>& x, const std::vector<T>& k, const std::vector<T>& dy)
{
  return conv_adjoint(std::span<const T>(x), std::span<const T>(k), std::span<const T>(dy));
}

template <typename T>
struct DepthwiseGrad
{
  Tensor3<T> d_input;       // B x H x L
  std::vector<T> d_kernel;  // H x L, summed over the batch
};

/// Batched adjoint of depthwise_conv_batch. Work is split over channels; the
/// batch sum for each channel runs in index order, so results do not depend on
/// the thread count.
template <typename T>
DepthwiseGrad<T> depthwise_conv_backward(const Tensor3<T>& x, const MaterializedKernel<T>& kernel,
                                         const Tensor3<T>& dy, const ConvPlan<T>& plan, std::size_t threads = 1)
{
  require(x.same_shape(dy), "depthwise_conv_backward: x and dy shapes differ");
  require(x.dim(1) == kernel.channels, "depthwise_conv_backward: channel count mismatch");
  require(x.dim(2) == plan.seq_len() && kernel.seq_len == plan.seq_len(), "depthwise_conv_backward: length mismatch");
  const std::size_t batch = x.dim(0);
  const std::size_t L = plan.seq_len();
  const std::size_t bins = plan.spectrum_size();
  DepthwiseGrad<T> grad{Tensor3<T>(x.dim(0), x.dim(1), x.dim(2)), std::vector<T>(kernel.channels * L, T(0))};
  parallel_for(kernel.channels, threads, [&](std::size_t h) {
    std::vector<std::complex<T>> kspec(bins), dys(bins), xs(bins), acc(bins, std::complex<T>(0, 0));
    plan.spectrum(kernel.channel(h), kspec);
    for (std::size_t b = 0; b < batch; ++b)
    {
      plan.spectrum(dy.row(b, h), dys);
      plan.spectrum(x.row(b, h), xs);
      for (std::size_t i = 0; i < bins; ++i)
      {
        acc[i] += std::complex<T>(xs[i].real() * dys[i].real() + xs[i].imag() * dys[i].imag(),
                                  xs[i].real() * dys[i].imag() - xs[i].imag() * dys[i].real());
      }
      multiply_conj_spectra<T>(kspec, dys, dys);
      plan.inverse(dys, grad.d_input.row(b, h));
    }
    plan.inverse(acc, std::span<T>(grad.d_kernel.data() + h * L, L));
  });
  return grad;
}

/// Transpose of upsample_linear: scatters each entry of g onto its two source
/// knots with the forward interpolation weights.
template <typename T>
std::vector<T> upsample_adjoint(std::span<const T> g, std::size_t d)
{
  require(d >= 1, "upsample_adjoint: d must be >= 1");
  require(g.size() >= d, "upsample_adjoint: gradient shorter than source");
  const std::size_t l = g.size();
  std::vector<T> out(d, T(0));
  if (d == 1)
  {
    T sum = T(0);
    for (T v : g)
      sum += v;
    out[0] = sum;
    return out;
  }
  if (l == d)
  {
    std::copy(g.begin(), g.end(), out.begin());
    return out;
  }
  const std::size_t den = l - 1;
  for (std::size_t j = 0; j < l; ++j)
  {
    const std::size_t num = j * (d - 1);
    const std::size_t i0 = num / den;
    const std::size_t rem = num % den;
    if (rem == 0)
    {
      out[i0] += g[j];
      continue;
    }
    const T frac = static_cast<T>(rem) / static_cast<T>(den);
    out[i0] += g[j] * (T(1) - frac);
    out[i0 + 1] += g[j] * frac;
  }
  return out;
}

template <typename T>
std::vector<T> upsample_adjoint(const std::vector<T>& g, std::size_t d)
{
  return upsample_adjoint(std::span<const T>(g), d);
}

template <typename T>
struct GradBundle
{
  std::size_t channels = 0;
  std::size_t num_scales = 0;
  std::size_t scale_dim = 0;
  std::vector<T> d_weights;            // H x N x d, same layout as ScaleParams::weights
  std::optional<Tensor3<T>> d_input;   // B x H x L when requested

  std::span<const T> weight(std::size_t h, std::size_t i) const
  {
    return {d_weights.data() + (h * num_scales + i) * scale_dim, scale_dim};
  }
};

/// Pulls a kernel gradient (H x L) back to ScaleParams. Z and alpha are the
/// constants frozen at initialization and are not differentiated.
template <typename T>
GradBundle<T> kernel_param_grad(std::span<const T> dk, const ScaleParams<T>& params, const KernelConfig& config,
                                std::span<const T> normalizer, std::span<const T> alpha = {})
{
  config.validate();
  require(params.matches(config), "kernel_param_grad: ScaleParams shape does not match KernelConfig");
  require(dk.size() == config.channels * config.seq_len, "kernel_param_grad: dk must be H x L");
  require(normalizer.size() == config.channels, "kernel_param_grad: one normalizer per channel is required");
  require(alpha.empty() || alpha.size() == config.channels, "kernel_param_grad: alpha must have one entry per channel");

  const std::size_t L = config.seq_len;
  const std::size_t d = config.scale_dim;
  GradBundle<T> grad;
  grad.channels = params.channels;
  grad.num_scales = params.num_scales;
  grad.scale_dim = d;
  grad.d_weights.assign(params.weights.size(), T(0));

  const std::vector<T> decay =
      config.mode == KernelMode::disentangled ? position_decay<T>(L, config.decay_t) : std::vector<T>{};
  std::vector<T> g(L);
  std::vector<T> segment;
  for (std::size_t h = 0; h < config.channels; ++h)
  {
    const T inv_z = T(1) / normalizer[h];
    for (std::size_t p = 0; p < L; ++p)
      g[p] = dk[h * L + p] * inv_z;
    if (config.mode == KernelMode::disentangled)
      for (std::size_t p = 0; p < L; ++p)
        g[p] *= decay[p];
    const T a = alpha.empty() ? static_cast<T>(config.decay_alpha) : alpha[h];
    for (std::size_t i = 0; i < params.num_scales; ++i)
    {
      const std::size_t offset = sub_kernel_offset(i, d);
      const std::size_t len = sub_kernel_len(i, d);
      // positions past L were truncated in the forward pass: zero gradient
      segment.assign(len, T(0));
      if (offset < L)
      {
        const std::size_t kept = std::min(len, L - offset);
        std::copy_n(g.begin() + static_cast<std::ptrdiff_t>(offset), kept, segment.begin());
      }
      if (config.mode == KernelMode::concat)
      {
        const T scale = static_cast<T>(std::pow(a, static_cast<T>(i)));
        for (T& v : segment)
          v *= scale;
      }
      const auto dw = upsample_adjoint(std::span<const T>(segment), d);
      std::copy(dw.begin(), dw.end(), grad.d_weights.begin() + static_cast<std::ptrdiff_t>((h * params.num_scales + i) * d));
    }
  }
  return grad;
}

struct FiniteDiffReport
{
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Compares an analytic gradient against central differences with step
/// eps * max(1, |p_i|). Deviation is relative to max(|analytic|, |numeric|),
/// falling back to absolute error when both are below 1e-8. With max_coords > 0
/// and more parameters than that, a seeded random subset of at least 200
/// coordinates is checked.
template <typename T>
FiniteDiffReport finite_diff_check(const std::function<double(std::span<const T>)>& loss_fn, std::span<const T> params,
                                   std::span<const T> analytic, double eps = 1e-5, std::size_t max_coords = 0,
                                   std::uint64_t seed = 0)
{
  require(eps > 0.0, "finite_diff_check: eps must be > 0");
  require(params.size() == analytic.size(), "finite_diff_check: analytic gradient size mismatch");
  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), std::size_t(0));
  if (max_coords > 0 && coords.size() > std::max<std::size_t>(max_coords, 200))
  {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(std::max<std::size_t>(max_coords, 200));
    std::sort(coords.begin(), coords.end());
  }
  std::vector<T> p(params.begin(), params.end());
  FiniteDiffReport report;
  for (std::size_t idx : coords)
  {
    const T original = p[idx];
    const T step = static_cast<T>(eps * std::max(1.0, std::abs(static_cast<double>(original))));
    const T up = original + step;
    const T down = original - step;
    p[idx] = up;
    const double plus = loss_fn(p);
    p[idx] = down;
    const double minus = loss_fn(p);
    p[idx] = original;
    const double numeric = (plus - minus) / (static_cast<double>(up) - static_cast<double>(down));
    const double exact = static_cast<double>(analytic[idx]);
    const double scale = std::max(std::abs(numeric), std::abs(exact));
    const double err = scale < 1e-8 ? std::abs(numeric - exact) : std::abs(numeric - exact) / scale;
    if (!(err <= report.max_rel_error))
    {
      report.max_rel_error = err;
      report.worst_index = idx;
    }
    ++report.checked;
  }
  return report;
}

} // namespace sgconv
