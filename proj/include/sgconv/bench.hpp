#pragma once

// Timing harness comparing direct convolution, FFT convolution (kernel build
// plus convolution) and a quadratic attention-score baseline across lengths.
//
// Large configurations are timed on a prefix of their independent work units
// (rows for the direct path, batch entries for the FFT path, query rows for
// the attention baseline) and scaled to the full batch, so every length fits
// a fixed work budget. The sampled fraction is reported with each record.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgconv/common.hpp"
#include "sgconv/fftconv.hpp"
#include "sgconv/kernelgen.hpp"

namespace sgconv
{

enum class BenchImpl
{
  conv_direct,
  conv_fft,
  attn_quadratic
};

inline std::string to_string(BenchImpl impl)
{
  switch (impl)
  {
  case BenchImpl::conv_direct: return "conv_direct";
  case BenchImpl::conv_fft: return "conv_fft";
  case BenchImpl::attn_quadratic: return "attn_quadratic";
  }
  return "unknown";
}

inline std::vector<std::size_t> default_bench_lengths()
{
  std::vector<std::size_t> out;
  for (std::size_t L = 256; L <= 16384; L *= 2)
    out.push_back(L);
  return out;
}

struct BenchOptions
{
  std::vector<std::size_t> lengths = default_bench_lengths();
  std::size_t channels = 128;
  std::size_t batch = 64;
  std::size_t reps = 5;
  std::size_t warmup = 1;
  std::size_t direct_cap = 8192; // conv_direct is skipped above this length
  double work_cap = 2e8;         // multiply-adds per timed repetition before sampling kicks in
  std::size_t fit_min_len = 1024;
  std::size_t threads = 1;
  std::uint64_t seed = 0;

  void validate() const
  {
    require(!lengths.empty(), "bench: at least one length is required");
    for (std::size_t i = 0; i < lengths.size(); ++i)
    {
      require(lengths[i] >= 1, "bench: lengths must be >= 1");
      require(i == 0 || lengths[i] > lengths[i - 1], "bench: lengths must be strictly ascending");
    }
    require(reps >= 5, "bench: reps must be >= 5");
    require(channels >= 1 && batch >= 1, "bench: channels and batch must be >= 1");
    require(work_cap > 0.0, "bench: work_cap must be > 0");
  }
};

struct BenchRecord
{
  BenchImpl impl = BenchImpl::conv_fft;
  std::size_t seq_len = 0;
  std::size_t channels = 0;
  std::size_t batch = 0;
  double median_ms = 0.0;
  double p10_ms = 0.0;
  double p90_ms = 0.0;
  std::size_t reps = 0;
  double sampled_fraction = 1.0;
  std::size_t workspace_bytes = 0;
};

/// Linear-interpolated quantile of an unsorted sample, q in [0, 1].
inline double quantile(std::vector<double> v, double q)
{
  require(!v.empty(), "quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Least-squares slope of log(y) against log(x).
inline double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y)
{
  require(x.size() == y.size() && x.size() >= 2, "slope fit needs at least two points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
  {
    require(x[i] > 0.0 && y[i] > 0.0, "slope fit needs positive values");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
  {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  require(sxx > 0.0, "slope fit needs distinct lengths");
  return sxy / sxx;
}

/// Bytes held by each path's buffers for the full configuration.
template <typename T>
std::size_t workspace_bytes(BenchImpl impl, std::size_t L, std::size_t H, std::size_t B)
{
  const std::size_t s = sizeof(T);
  switch (impl)
  {
  case BenchImpl::conv_direct: return B * H * L * s;
  case BenchImpl::conv_fft:
  {
    const std::size_t bins = next_pow2(2 * L) / 2 + 1;
    // kernel, kernel spectra, one workspace per channel task, output
    return H * L * s + H * bins * 2 * s + 2 * bins * 2 * s + B * H * L * s;
  }
  case BenchImpl::attn_quadratic: return B * L * L * s + B * L * H * s;
  }
  return 0;
}

namespace detail
{
using BenchClock = std::chrono::steady_clock;

inline std::size_t sampled_units(std::size_t total, double work_per_unit, double cap)
{
  const double fit = std::floor(cap / std::max(work_per_unit, 1.0));
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(fit, 1.0)), 1, total);
}

template <typename Fn>
double time_ms(Fn&& fn)
{
  const auto t0 = BenchClock::now();
  fn();
  return std::chrono::duration<double, std::milli>(BenchClock::now() - t0).count();
}

template <typename T>
void attention_rows(const std::vector<T>& q, const std::vector<T>& k, const std::vector<T>& v, std::size_t L,
                    std::size_t H, std::size_t units, std::vector<T>& scores, std::vector<T>& out)
{
  const T inv = T(1) / std::sqrt(static_cast<T>(H));
  for (std::size_t u = 0; u < units; ++u)
  {
    const std::size_t b = u / L;
    const T* qi = q.data() + u * H;
    const T* kb = k.data() + b * L * H;
    const T* vb = v.data() + b * L * H;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < L; ++j)
    {
      T acc = T(0);
      for (std::size_t h = 0; h < H; ++h)
        acc += qi[h] * kb[j * H + h];
      scores[j] = acc * inv;
      mx = std::max(mx, scores[j]);
    }
    T sum = T(0);
    for (std::size_t j = 0; j < L; ++j)
    {
      scores[j] = std::exp(scores[j] - mx);
      sum += scores[j];
    }
    T* o = out.data() + u * H;
    std::fill(o, o + H, T(0));
    for (std::size_t j = 0; j < L; ++j)
    {
      const T p = scores[j] / sum;
      for (std::size_t h = 0; h < H; ++h)
        o[h] += p * vb[j * H + h];
    }
  }
}
} // namespace detail

/// Times every impl at every length. on_record is invoked as each record completes.
template <typename T>
std::vector<BenchRecord> run_bench(const BenchOptions& opt,
                                   const std::function<void(const BenchRecord&)>& on_record = nullptr)
{
  opt.validate();
  const std::size_t H = opt.channels;
  const std::size_t B = opt.batch;
  std::vector<BenchRecord> records;
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random_fill = [&](std::vector<T>& v) {
    for (T& x : v)
      x = static_cast<T>(normal(rng));
  };

  auto finish = [&](BenchImpl impl, std::size_t L, std::vector<double> samples, double fraction) {
    BenchRecord r;
    r.impl = impl;
    r.seq_len = L;
    r.channels = H;
    r.batch = B;
    r.median_ms = quantile(samples, 0.5);
    r.p10_ms = quantile(samples, 0.1);
    r.p90_ms = quantile(samples, 0.9);
    r.reps = samples.size();
    r.sampled_fraction = fraction;
    r.workspace_bytes = workspace_bytes<T>(impl, L, H, B);
    records.push_back(r);
    if (on_record)
      on_record(r);
  };

  for (std::size_t L : opt.lengths)
  {
    KernelConfig kc;
    kc.seq_len = L;
    kc.scale_dim = std::min<std::size_t>(8, L);
    kc.channels = H;
    kc.seed = mix_seed(opt.seed, L);
    const auto kstate = init_kernel_state<T>(kc);
    const ConvPlan<T> plan(L);
    const double Ld = static_cast<double>(L);

    if (L <= opt.direct_cap)
    {
      // units: (b, h) rows
      const std::size_t total = B * H;
      const std::size_t units = detail::sampled_units(total, Ld * (Ld + 1) / 2, opt.work_cap);
      const auto kernel = kstate.materialize();
      std::vector<T> x(units * L), y(units * L);
      random_fill(x);
      auto run = [&] {
        for (std::size_t u = 0; u < units; ++u)
          causal_conv_direct<T>(std::span<const T>(x.data() + u * L, L), kernel.channel(u % H),
                                std::span<T>(y.data() + u * L, L));
      };
      const double scale = static_cast<double>(total) / static_cast<double>(units);
      for (std::size_t w = 0; w < opt.warmup; ++w)
        run();
      std::vector<double> samples;
      for (std::size_t r = 0; r < opt.reps; ++r)
        samples.push_back(detail::time_ms(run) * scale);
      finish(BenchImpl::conv_direct, L, samples, 1.0 / scale);
    }

    {
      // units: batch entries; the kernel build and its spectra are timed once per repetition
      const double M = static_cast<double>(plan.fft_size());
      const std::size_t units = detail::sampled_units(B, static_cast<double>(H) * 3.0 * M * std::log2(M), opt.work_cap);
      Tensor3<T> x(units, H, L), y(units, H, L);
      random_fill(x.data());
      const double scale = static_cast<double>(B) / static_cast<double>(units);
      auto run = [&] {
        double kernel_ms = 0.0;
        std::vector<std::complex<T>> spectra;
        kernel_ms = detail::time_ms([&] { spectra = kernel_spectra(kstate.materialize(), plan); });
        const double conv_ms = detail::time_ms([&] { depthwise_conv_spectra<T>(x, spectra, plan, y, opt.threads); });
        return kernel_ms + conv_ms * scale;
      };
      for (std::size_t w = 0; w < opt.warmup; ++w)
        run();
      std::vector<double> samples;
      for (std::size_t r = 0; r < opt.reps; ++r)
        samples.push_back(run());
      finish(BenchImpl::conv_fft, L, samples, 1.0 / scale);
    }

    {
      // units: (b, query) rows of a single-head softmax attention with width H
      const std::size_t total = B * L;
      const std::size_t units = detail::sampled_units(total, 2.0 * Ld * static_cast<double>(H), opt.work_cap);
      const std::size_t batches_touched = (units + L - 1) / L;
      std::vector<T> q(units * H), k(batches_touched * L * H), v(batches_touched * L * H), out(units * H), scores(L);
      random_fill(q);
      random_fill(k);
      random_fill(v);
      auto run = [&] { detail::attention_rows(q, k, v, L, H, units, scores, out); };
      const double scale = static_cast<double>(total) / static_cast<double>(units);
      for (std::size_t w = 0; w < opt.warmup; ++w)
        run();
      std::vector<double> samples;
      for (std::size_t r = 0; r < opt.reps; ++r)
        samples.push_back(detail::time_ms(run) * scale);
      finish(BenchImpl::attn_quadratic, L, samples, 1.0 / scale);
    }
  }
  return records;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRecord>& records)
{
  os << "impl,seq_len,channels,batch,median_ms,p10_ms,p90_ms,reps\n";
  for (const auto& r : records)
    os << to_string(r.impl) << ',' << r.seq_len << ',' << r.channels << ',' << r.batch << ',' << r.median_ms << ','
       << r.p10_ms << ',' << r.p90_ms << ',' << r.reps << '\n';
}

/// Slope of log(median_ms) against log(L) over records with L >= min_len.
inline std::optional<double> impl_slope(const std::vector<BenchRecord>& records, BenchImpl impl, std::size_t min_len)
{
  std::vector<double> x, y;
  for (const auto& r : records)
    if (r.impl == impl && r.seq_len >= min_len)
    {
      x.push_back(static_cast<double>(r.seq_len));
      y.push_back(r.median_ms);
    }
  if (x.size() < 2)
    return std::nullopt;
  return fit_loglog_slope(x, y);
}

inline nlohmann::json bench_summary_json(const std::vector<BenchRecord>& records, const BenchOptions& opt,
                                         const std::string& precision)
{
  nlohmann::json impls = nlohmann::json::object();
  for (auto impl : {BenchImpl::conv_direct, BenchImpl::conv_fft, BenchImpl::attn_quadratic})
  {
    nlohmann::json entry;
    const auto slope = impl_slope(records, impl, opt.fit_min_len);
    entry["slope"] = slope ? nlohmann::json(*slope) : nlohmann::json(nullptr);
    nlohmann::json lengths = nlohmann::json::array();
    for (const auto& r : records)
      if (r.impl == impl)
        lengths.push_back({{"seq_len", r.seq_len},
                           {"median_ms", r.median_ms},
                           {"workspace_bytes", r.workspace_bytes},
                           {"sampled_fraction", r.sampled_fraction}});
    entry["lengths"] = std::move(lengths);
    impls[to_string(impl)] = std::move(entry);
  }
  return {{"channels", opt.channels},     {"batch", opt.batch},     {"reps", opt.reps},
          {"precision", precision},       {"fit_min_len", opt.fit_min_len}, {"direct_cap", opt.direct_cap},
          {"work_cap", opt.work_cap},     {"impls", std::move(impls)}};
}

} // namespace sgconv
