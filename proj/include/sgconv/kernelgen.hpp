#pragma once

// Multiscale global convolution kernels.
//
// A channel's kernel of length L is the concatenation of N sub-kernels. Sub-kernel
// i is a d-vector of parameters upsampled (linear, align-corners) to length
// d * 2^max(i-1, 0), so the lengths run d, d, 2d, 4d, ... and the parameter count
// per channel is N * d = O(log L). Decay is applied either per scale (alpha^i,
// "concat" mode) or per position (p^-t, "disentangled" mode). The assembled kernel
// is divided by a per-channel constant Z fixed at initialization so that each
// channel starts with unit L2 norm.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sgconv/common.hpp"

namespace sgconv
{

enum class KernelMode
{
  concat,
  disentangled
};

enum class InitScheme
{
  gaussian,
  cosine
};

inline std::string to_string(KernelMode mode) { return mode == KernelMode::concat ? "concat" : "disentangled"; }
inline std::string to_string(InitScheme init) { return init == InitScheme::gaussian ? "gaussian" : "cosine"; }

inline KernelMode parse_kernel_mode(const std::string& s)
{
  if (s == "concat")
    return KernelMode::concat;
  if (s == "disentangled")
    return KernelMode::disentangled;
  throw std::invalid_argument("unknown kernel mode: " + s);
}

inline InitScheme parse_init_scheme(const std::string& s)
{
  if (s == "gaussian")
    return InitScheme::gaussian;
  if (s == "cosine")
    return InitScheme::cosine;
  throw std::invalid_argument("unknown init scheme: " + s);
}

/// Number of scales N = ceil(log2(L / d)) + 1. Exact integer arithmetic.
inline std::size_t num_scales(std::size_t seq_len, std::size_t scale_dim)
{
  require(scale_dim >= 1, "scale_dim must be >= 1");
  require(scale_dim <= seq_len, "scale_dim must not exceed seq_len");
  std::size_t doublings = 0;
  std::size_t covered = scale_dim;
  while (covered < seq_len)
  {
    covered *= 2;
    ++doublings;
  }
  return doublings + 1;
}

/// Length of sub-kernel i: 2^max(i-1, 0) * d.
constexpr std::size_t sub_kernel_len(std::size_t scale, std::size_t scale_dim)
{
  return scale == 0 ? scale_dim : scale_dim << (scale - 1);
}

/// Offset of sub-kernel i inside the concatenation.
constexpr std::size_t sub_kernel_offset(std::size_t scale, std::size_t scale_dim)
{
  return scale == 0 ? 0 : scale_dim << (scale - 1);
}

struct KernelConfig
{
  std::size_t seq_len = 1024;
  std::size_t scale_dim = 8;
  double decay_alpha = 0.5; // concat mode
  double decay_t = 1.0;     // disentangled mode
  std::size_t channels = 1;
  KernelMode mode = KernelMode::concat;
  InitScheme init = InitScheme::gaussian;
  double init_sigma = 1.0;
  std::uint64_t seed = 0;

  void validate() const
  {
    require(seq_len >= 1, "seq_len must be >= 1");
    require(scale_dim >= 1 && scale_dim <= seq_len, "scale_dim must satisfy 1 <= d <= L");
    require(decay_alpha > 0.0 && decay_alpha <= 1.0, "decay_alpha must be in (0, 1]");
    require(decay_t >= 0.0 && std::isfinite(decay_t), "decay_t must be finite and >= 0");
    require(channels >= 1, "channels must be >= 1");
    require(init_sigma > 0.0, "init_sigma must be > 0");
  }

  std::size_t scales() const { return num_scales(seq_len, scale_dim); }
  std::size_t params_per_channel() const { return scales() * scale_dim; }
};

/// Learnable parameters: weights[h][i][:] is the d-vector of scale i in channel h.
template <typename T>
struct ScaleParams
{
  std::size_t channels = 0;
  std::size_t num_scales = 0;
  std::size_t scale_dim = 0;
  std::vector<T> weights;

  ScaleParams() = default;
  ScaleParams(std::size_t h, std::size_t n, std::size_t d)
      : channels(h), num_scales(n), scale_dim(d), weights(h * n * d, T(0))
  {
  }

  std::span<T> weight(std::size_t h, std::size_t i)
  {
    return {weights.data() + (h * num_scales + i) * scale_dim, scale_dim};
  }
  std::span<const T> weight(std::size_t h, std::size_t i) const
  {
    return {weights.data() + (h * num_scales + i) * scale_dim, scale_dim};
  }

  bool matches(const KernelConfig& config) const
  {
    return channels == config.channels && scale_dim == config.scale_dim && num_scales == config.scales()
           && weights.size() == channels * num_scales * scale_dim;
  }

  bool operator==(const ScaleParams&) const = default;
};

template <typename T>
struct MaterializedKernel
{
  std::size_t channels = 0;
  std::size_t seq_len = 0;
  std::vector<T> values;     // H x L
  std::vector<T> normalizer; // Z per channel

  std::span<T> channel(std::size_t h) { return {values.data() + h * seq_len, seq_len}; }
  std::span<const T> channel(std::size_t h) const { return {values.data() + h * seq_len, seq_len}; }

  bool operator==(const MaterializedKernel&) const = default;
};

namespace detail
{
// Align-corners interpolation of w at output position j of target_len. The
// result is clamped to the two bracketing knots so |out| <= max|w| holds in
// floating point, not just in exact arithmetic.
template <typename T>
T interpolate_at(std::span<const T> w, std::size_t j, std::size_t target_len)
{
  const std::size_t d = w.size();
  if (d == 1)
    return w[0];
  if (target_len == d)
    return w[j];
  const std::size_t num = j * (d - 1);
  const std::size_t den = target_len - 1;
  const std::size_t i0 = num / den;
  const std::size_t rem = num % den;
  if (rem == 0)
    return w[i0];
  const T frac = static_cast<T>(rem) / static_cast<T>(den);
  const T a = w[i0];
  const T b = w[i0 + 1];
  const T v = a * (T(1) - frac) + b * frac;
  return std::clamp(v, std::min(a, b), std::max(a, b));
}
} // namespace detail

template <typename T>
void upsample_linear(std::span<const T> w, std::span<T> out)
{
  require(!w.empty(), "upsample source must be non-empty");
  require(out.size() >= w.size(), "upsample target length must be >= source length");
  for (std::size_t j = 0; j < out.size(); ++j)
    out[j] = detail::interpolate_at(w, j, out.size());
}

template <typename T>
std::vector<T> upsample_linear(std::span<const T> w, std::size_t target_len)
{
  require(target_len >= w.size(), "upsample target length must be >= source length");
  std::vector<T> out(target_len);
  upsample_linear(w, std::span<T>(out));
  return out;
}

template <typename T>
std::vector<T> upsample_linear(const std::vector<T>& w, std::size_t target_len)
{
  return upsample_linear(std::span<const T>(w), target_len);
}

/// Element-wise position decay [1^-t, 2^-t, ..., L^-t].
template <typename T>
std::vector<T> position_decay(std::size_t seq_len, double t)
{
  std::vector<T> decay(seq_len);
  for (std::size_t p = 0; p < seq_len; ++p)
    decay[p] = t == 0.0 ? T(1) : static_cast<T>(std::pow(static_cast<double>(p + 1), -t));
  return decay;
}

/// L2 norm of a raw kernel. Rejects the all-zero kernel.
template <typename T>
T compute_normalizer(std::span<const T> raw)
{
  double sum = 0.0;
  for (T v : raw)
  {
    require(std::isfinite(static_cast<double>(v)), "kernel contains non-finite values");
    sum += static_cast<double>(v) * static_cast<double>(v);
  }
  require(sum > 0.0, "cannot normalize an all-zero kernel");
  return static_cast<T>(std::sqrt(sum));
}

template <typename T>
T compute_normalizer(const std::vector<T>& raw)
{
  return compute_normalizer(std::span<const T>(raw));
}

/// Writes the pre-normalization kernel of one channel. alpha is the channel's
/// scale decay (ignored in disentangled mode).
template <typename T>
void build_raw_channel(const ScaleParams<T>& params, const KernelConfig& config, std::size_t h, T alpha,
                       std::span<const T> decay, std::span<T> out)
{
  const std::size_t L = config.seq_len;
  const std::size_t d = config.scale_dim;
  for (std::size_t i = 0; i < params.num_scales; ++i)
  {
    const std::size_t offset = sub_kernel_offset(i, d);
    if (offset >= L)
      break;
    const std::size_t len = sub_kernel_len(i, d);
    const std::size_t kept = std::min(len, L - offset);
    const auto w = params.weight(h, i);
    const T scale = config.mode == KernelMode::concat ? static_cast<T>(std::pow(alpha, static_cast<T>(i))) : T(1);
    for (std::size_t j = 0; j < kept; ++j)
      out[offset + j] = scale * detail::interpolate_at(w, j, len);
  }
  if (config.mode == KernelMode::disentangled)
    for (std::size_t p = 0; p < L; ++p)
      out[p] *= decay[p];
}

/// Pre-normalization kernels (H x L). alpha may be empty, in which case every
/// channel uses config.decay_alpha.
template <typename T>
std::vector<T> build_raw_kernel(const ScaleParams<T>& params, const KernelConfig& config,
                                std::span<const T> alpha = {})
{
  config.validate();
  require(params.matches(config), "ScaleParams shape does not match KernelConfig");
  require(alpha.empty() || alpha.size() == config.channels, "alpha must have one entry per channel");
  const std::vector<T> decay = config.mode == KernelMode::disentangled ? position_decay<T>(config.seq_len, config.decay_t)
                                                                        : std::vector<T>{};
  std::vector<T> raw(config.channels * config.seq_len, T(0));
  for (std::size_t h = 0; h < config.channels; ++h)
  {
    const T a = alpha.empty() ? static_cast<T>(config.decay_alpha) : alpha[h];
    build_raw_channel<T>(params, config, h, a, decay, std::span<T>(raw.data() + h * config.seq_len, config.seq_len));
  }
  return raw;
}

namespace detail
{
template <typename T>
MaterializedKernel<T> normalize(std::vector<T> raw, const KernelConfig& config, std::span<const T> normalizer)
{
  require(normalizer.size() == config.channels, "one normalizer per channel is required");
  MaterializedKernel<T> kernel;
  kernel.channels = config.channels;
  kernel.seq_len = config.seq_len;
  kernel.normalizer.assign(normalizer.begin(), normalizer.end());
  kernel.values = std::move(raw);
  for (std::size_t h = 0; h < config.channels; ++h)
  {
    const T z = normalizer[h];
    require(z > T(0) && std::isfinite(static_cast<double>(z)), "normalizer must be positive and finite");
    for (T& v : kernel.channel(h))
      v /= z;
  }
  return kernel;
}
} // namespace detail

/// k_i = alpha^i * Upsample(w_i), concatenated, truncated to L, divided by Z.
template <typename T>
MaterializedKernel<T> build_kernel_concat(const ScaleParams<T>& params, const KernelConfig& config,
                                          std::span<const T> normalizer, std::span<const T> alpha = {})
{
  require(config.mode == KernelMode::concat, "build_kernel_concat requires concat mode");
  return detail::normalize(build_raw_kernel(params, config, alpha), config, normalizer);
}

/// Unweighted upsampled sub-kernels, concatenated, truncated to L, multiplied
/// by p^-t (p 1-indexed), divided by Z.
template <typename T>
MaterializedKernel<T> build_kernel_disentangled(const ScaleParams<T>& params, const KernelConfig& config,
                                                std::span<const T> normalizer)
{
  require(config.mode == KernelMode::disentangled, "build_kernel_disentangled requires disentangled mode");
  return detail::normalize(build_raw_kernel(params, config), config, normalizer);
}

template <typename T>
MaterializedKernel<T> build_kernel(const ScaleParams<T>& params, const KernelConfig& config,
                                   std::span<const T> normalizer, std::span<const T> alpha = {})
{
  if (config.mode == KernelMode::concat)
    return build_kernel_concat(params, config, normalizer, alpha);
  return build_kernel_disentangled(params, config, normalizer);
}

/// cos(2 pi f x) sampled on d evenly spaced points of [0, 1].
template <typename T>
std::vector<T> cosine_weights(std::size_t d, double frequency)
{
  std::vector<T> w(d);
  for (std::size_t j = 0; j < d; ++j)
  {
    const double x = d == 1 ? 0.0 : static_cast<double>(j) / static_cast<double>(d - 1);
    w[j] = static_cast<T>(std::cos(2.0 * std::numbers::pi * frequency * x));
  }
  return w;
}

template <typename T>
ScaleParams<T> init_params(const KernelConfig& config, std::mt19937_64& rng)
{
  config.validate();
  ScaleParams<T> params(config.channels, config.scales(), config.scale_dim);
  if (config.init == InitScheme::gaussian)
  {
    std::normal_distribution<double> normal(0.0, config.init_sigma);
    for (T& v : params.weights)
      v = static_cast<T>(normal(rng));
    return params;
  }
  // cosine: one log-uniform frequency in [1, d/2] per channel, shared by all scales
  const double f_max = std::max(1.0, static_cast<double>(config.scale_dim) / 2.0);
  std::uniform_real_distribution<double> log_f(0.0, std::log(f_max));
  for (std::size_t h = 0; h < config.channels; ++h)
  {
    const auto w = cosine_weights<T>(config.scale_dim, std::exp(log_f(rng)));
    for (std::size_t i = 0; i < params.num_scales; ++i)
      std::copy(w.begin(), w.end(), params.weight(h, i).begin());
  }
  return params;
}

/// Per-channel decay. Cosine init in concat mode draws alpha uniformly from
/// [1/3, 1]; otherwise every channel uses config.decay_alpha.
template <typename T>
std::vector<T> init_channel_alpha(const KernelConfig& config, std::mt19937_64& rng)
{
  std::vector<T> alpha(config.channels, static_cast<T>(config.decay_alpha));
  if (config.init == InitScheme::cosine && config.mode == KernelMode::concat)
  {
    std::uniform_real_distribution<double> uniform(1.0 / 3.0, 1.0);
    for (T& a : alpha)
      a = static_cast<T>(uniform(rng));
  }
  return alpha;
}

/// Parameters plus the constants frozen at initialization.
template <typename T>
struct KernelState
{
  KernelConfig config;
  ScaleParams<T> params;
  std::vector<T> alpha;
  std::vector<T> normalizer;

  MaterializedKernel<T> materialize() const { return build_kernel<T>(params, config, normalizer, alpha); }
};

template <typename T>
KernelState<T> init_kernel_state(const KernelConfig& config)
{
  config.validate();
  std::mt19937_64 rng(config.seed);
  KernelState<T> state;
  state.config = config;
  state.params = init_params<T>(config, rng);
  state.alpha = init_channel_alpha<T>(config, rng);
  const auto raw = build_raw_kernel<T>(state.params, config, state.alpha);
  state.normalizer.resize(config.channels);
  for (std::size_t h = 0; h < config.channels; ++h)
    state.normalizer[h] = compute_normalizer(std::span<const T>(raw.data() + h * config.seq_len, config.seq_len));
  return state;
}

/// CSV dump: header `channel,position,value`, 9 significant digits.
template <typename T>
void write_kernel_csv(std::ostream& os, const MaterializedKernel<T>& kernel)
{
  os << "channel,position,value\n";
  char buf[64];
  for (std::size_t h = 0; h < kernel.channels; ++h)
  {
    const auto values = kernel.channel(h);
    for (std::size_t p = 0; p < kernel.seq_len; ++p)
    {
      std::snprintf(buf, sizeof(buf), "%zu,%zu,%.8e\n", h, p, static_cast<double>(values[p]));
      os << buf;
    }
  }
}

} // namespace sgconv
