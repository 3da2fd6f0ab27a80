#pragma once

// Self-check suites run by `sgconv verify`. Every suite draws its data from
// fixed seeds so reports are reproducible byte for byte.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgconv/checkpoint.hpp"
#include "sgconv/fftconv.hpp"
#include "sgconv/grad.hpp"
#include "sgconv/kernelgen.hpp"
#include "sgconv/model.hpp"
#include "sgconv/tasks.hpp"

namespace sgconv
{

struct CheckResult
{
  std::string name;
  double value = 0.0;
  double limit = 0.0;
  bool passed = false;
};

struct SuiteResult
{
  std::string name;
  std::vector<CheckResult> checks;

  bool passed() const
  {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
  }
};

struct VerifyOptions
{
  std::vector<std::string> filter; // empty runs every suite
  std::uint64_t seed = 0;
  bool corrupt_adjoint = false; // mutation test: swap the adjoint's correlation for a convolution
};

inline const std::vector<std::string>& verify_suite_names()
{
  static const std::vector<std::string> names{"kernelgen", "upsample", "fftconv", "grad", "model", "tasks", "checkpoint"};
  return names;
}

inline nlohmann::json to_json(const SuiteResult& s)
{
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : s.checks)
    checks.push_back({{"name", c.name}, {"value", c.value}, {"limit", c.limit}, {"passed", c.passed}});
  return {{"suite", s.name}, {"passed", s.passed()}, {"checks", std::move(checks)}};
}

namespace detail
{

class Checker
{
public:
  explicit Checker(SuiteResult& out) : out_(out) {}

  void at_most(const std::string& name, double value, double limit)
  {
    out_.checks.push_back({name, value, limit, std::isfinite(value) && value <= limit});
  }
  void at_least(const std::string& name, double value, double limit)
  {
    out_.checks.push_back({name, value, limit, std::isfinite(value) && value >= limit});
  }
  void holds(const std::string& name, bool ok) { out_.checks.push_back({name, ok ? 1.0 : 0.0, 1.0, ok}); }
  template <typename Fn>
  void throws(const std::string& name, Fn&& fn)
  {
    bool threw = false;
    try
    {
      fn();
    }
    catch (const std::exception&)
    {
      threw = true;
    }
    holds(name, threw);
  }

private:
  SuiteResult& out_;
};

template <typename T>
std::vector<T> normal_vector(std::size_t n, std::mt19937_64& rng)
{
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<T> v(n);
  for (T& x : v)
    x = static_cast<T>(normal(rng));
  return v;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b)
{
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += a[i] * b[i];
  return s;
}

inline double rel_diff(double a, double b)
{
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

template <typename T>
double rel_max_error(const std::vector<T>& got, const std::vector<T>& ref)
{
  double scale = 0.0, err = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i)
  {
    scale = std::max(scale, std::abs(static_cast<double>(ref[i])));
    err = std::max(err, std::abs(static_cast<double>(got[i]) - static_cast<double>(ref[i])));
  }
  return scale == 0.0 ? err : err / scale;
}

/// The adjoint under test. With corrupt set, the correlation is replaced by a
/// convolution, the classic conjugation slip.
inline ConvAdjoint<double> adjoint_under_test(const std::vector<double>& x, const std::vector<double>& k,
                                              const std::vector<double>& dy, bool corrupt)
{
  if (!corrupt)
    return conv_adjoint(x, k, dy);
  const ConvPlan<double> plan(x.size());
  return {causal_conv_fft(dy, k, plan), causal_conv_fft(dy, x, plan)};
}

template <typename T>
SuiteResult suite_kernelgen(std::uint64_t seed)
{
  SuiteResult out{"kernelgen", {}};
  Checker check(out);
  check.holds("param count L=16384 d=64 is 576", num_scales(16384, 64) * 64 == 576);
  bool coverage = true;
  for (std::size_t d : {1u, 4u, 8u, 32u})
    for (std::size_t ratio = 1; ratio <= 1024; ratio *= 2)
    {
      std::size_t total = 0;
      for (std::size_t i = 0; i < num_scales(ratio * d, d); ++i)
        total += sub_kernel_len(i, d);
      coverage = coverage && total == ratio * d;
    }
  check.holds("sub-kernel lengths sum to L when L/d is a power of two", coverage);

  std::mt19937_64 rng(mix_seed(seed, 1));
  double worst_norm = 0.0;
  double worst_bound = 0.0;
  for (int trial = 0; trial < 200; ++trial)
  {
    KernelConfig c;
    c.scale_dim = std::size_t(1) << (rng() % 5);
    c.seq_len = c.scale_dim + rng() % 2048;
    c.channels = 1 + rng() % 3;
    c.mode = rng() % 2 ? KernelMode::concat : KernelMode::disentangled;
    c.init = rng() % 2 ? InitScheme::gaussian : InitScheme::cosine;
    c.decay_alpha = 0.25 + 0.75 * static_cast<double>(rng() % 1000) / 1000.0;
    c.decay_t = static_cast<double>(rng() % 300) / 100.0;
    c.seed = rng();
    const auto st = init_kernel_state<T>(c);
    const auto k = st.materialize();
    for (std::size_t h = 0; h < c.channels; ++h)
    {
      double sq = 0.0;
      for (T v : k.channel(h))
        sq += static_cast<double>(v) * static_cast<double>(v);
      worst_norm = std::max(worst_norm, std::abs(std::sqrt(sq) - 1.0));
      if (c.mode != KernelMode::concat)
        continue;
      for (std::size_t i = 0; i < st.params.num_scales; ++i)
      {
        const std::size_t off = sub_kernel_offset(i, c.scale_dim);
        if (off >= c.seq_len)
          break;
        double wmax = 0.0;
        for (T w : st.params.weight(h, i))
          wmax = std::max(wmax, std::abs(static_cast<double>(w)));
        const double bound = std::pow(static_cast<double>(st.alpha[h]), static_cast<double>(i)) * wmax /
                             static_cast<double>(st.normalizer[h]);
        const std::size_t end = std::min(c.seq_len, off + sub_kernel_len(i, c.scale_dim));
        for (std::size_t p = off; p < end; ++p)
          worst_bound = std::max(worst_bound, std::abs(static_cast<double>(k.channel(h)[p])) - bound);
      }
    }
  }
  const double norm_tol = sizeof(T) == 8 ? 1e-6 : 1e-5;
  check.at_most("unit norm at init, 200 configs", worst_norm, norm_tol);
  check.at_most("per-scale magnitude bound alpha^i max|w_i| / Z", worst_bound, sizeof(T) == 8 ? 1e-12 : 1e-6);

  KernelConfig c;
  c.seq_len = 300;
  c.scale_dim = 8;
  c.channels = 2;
  c.seed = seed;
  check.holds("init is deterministic", init_kernel_state<T>(c).params == init_kernel_state<T>(c).params);
  c.scale_dim = 301;
  check.throws("d > L is rejected", [&] { c.validate(); });
  return out;
}

template <typename T>
SuiteResult suite_upsample(std::uint64_t seed)
{
  SuiteResult out{"upsample", {}};
  Checker check(out);
  const auto up = upsample_linear<T>(std::vector<T>{T(0), T(1)}, 4);
  check.at_most("[0,1] -> 4 points", std::abs(static_cast<double>(up[1]) - 1.0 / 3.0) +
                                         std::abs(static_cast<double>(up[2]) - 2.0 / 3.0) +
                                         std::abs(static_cast<double>(up[3]) - 1.0),
                sizeof(T) == 8 ? 1e-15 : 1e-7);
  std::mt19937_64 rng(mix_seed(seed, 2));
  bool identity = true, endpoints = true;
  double adjoint_err = 0.0;
  for (std::size_t d = 1; d <= 16; ++d)
  {
    const auto w = normal_vector<T>(d, rng);
    identity = identity && upsample_linear<T>(w, d) == w;
    for (std::size_t l : {d, d + 1, 2 * d, 4 * d + 3, std::size_t(64)})
    {
      if (l < d)
        continue;
      const auto u = upsample_linear<T>(w, l);
      endpoints = endpoints && u.front() == w.front() && u.back() == w.back();
      // <U w, g> = <w, U^T g>
      const auto g = normal_vector<T>(l, rng);
      const auto ut = upsample_adjoint<T>(g, d);
      double lhs = 0.0, rhs = 0.0;
      for (std::size_t j = 0; j < l; ++j)
        lhs += static_cast<double>(u[j]) * static_cast<double>(g[j]);
      for (std::size_t i = 0; i < d; ++i)
        rhs += static_cast<double>(w[i]) * static_cast<double>(ut[i]);
      adjoint_err = std::max(adjoint_err, rel_diff(lhs, rhs));
    }
  }
  check.holds("target length d is the identity", identity);
  check.holds("endpoints are preserved", endpoints);
  check.at_most("upsample adjoint identity", adjoint_err, sizeof(T) == 8 ? 1e-12 : 1e-4);
  return out;
}

template <typename T>
SuiteResult suite_fftconv(std::uint64_t seed)
{
  SuiteResult out{"fftconv", {}};
  Checker check(out);
  std::mt19937_64 rng(mix_seed(seed, 3));
  const double tol = sizeof(T) == 8 ? 1e-10 : 1e-4;
  for (std::size_t L : {16u, 64u, 256u, 1024u})
  {
    const ConvPlan<T> plan(L);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial)
    {
      const auto x = normal_vector<T>(L, rng);
      const auto k = normal_vector<T>(L, rng);
      worst = std::max(worst, rel_max_error(causal_conv_fft(x, k, plan), causal_conv_direct(x, k)));
    }
    check.at_most("fft vs direct L=" + std::to_string(L), worst, tol);
  }
  const std::size_t L = 128;
  const ConvPlan<T> plan(L);
  const auto x = normal_vector<T>(L, rng);
  const auto k = normal_vector<T>(L, rng);
  auto cut = x;
  std::fill(cut.begin() + 64, cut.end(), T(0));
  const auto full = causal_conv_fft(x, k, plan);
  const auto part = causal_conv_fft(cut, k, plan);
  check.at_most("causality", rel_max_error(std::vector<T>(part.begin(), part.begin() + 64),
                                           std::vector<T>(full.begin(), full.begin() + 64)),
                tol);
  std::vector<T> impulse(L, T(0));
  impulse[0] = T(1);
  check.at_most("impulse response is the kernel", rel_max_error(causal_conv_fft(impulse, k, plan), k), tol);
  return out;
}

inline SuiteResult suite_grad(std::uint64_t seed, bool corrupt)
{
  SuiteResult out{"grad", {}};
  Checker check(out);
  std::mt19937_64 rng(mix_seed(seed, 4));
  double worst = 0.0;
  for (std::size_t L : {1u, 7u, 64u, 256u, 1000u})
    for (int trial = 0; trial < 5; ++trial)
    {
      const auto x = normal_vector<double>(L, rng);
      const auto k = normal_vector<double>(L, rng);
      const auto u = normal_vector<double>(L, rng);
      const auto v = normal_vector<double>(L, rng);
      const auto dy = normal_vector<double>(L, rng);
      const auto adj = adjoint_under_test(x, k, dy, corrupt);
      worst = std::max(worst, rel_diff(dot(causal_conv_direct(u, k), dy), dot(u, adj.dx)));
      worst = std::max(worst, rel_diff(dot(causal_conv_direct(x, v), dy), dot(v, adj.dk)));
    }
  check.at_most("adjoint inner-product identities", worst, 1e-10);

  for (auto mode : {KernelMode::concat, KernelMode::disentangled})
  {
    KernelConfig c;
    c.seq_len = 256;
    c.scale_dim = 8;
    c.channels = 2;
    c.mode = mode;
    c.seed = mix_seed(seed, 5);
    const auto st = init_kernel_state<double>(c);
    const auto x = normal_vector<double>(c.channels * c.seq_len, rng);
    const auto readout = normal_vector<double>(c.seq_len, rng);
    // loss = sum_h <readout, conv(x_h, k_h)>^2 / 2
    auto forward = [&](const ScaleParams<double>& p, std::vector<double>* dk) {
      const auto k = build_kernel<double>(p, c, st.normalizer, st.alpha);
      double loss = 0.0;
      for (std::size_t h = 0; h < c.channels; ++h)
      {
        const std::vector<double> xh(x.begin() + static_cast<std::ptrdiff_t>(h * c.seq_len),
                                     x.begin() + static_cast<std::ptrdiff_t>((h + 1) * c.seq_len));
        const std::vector<double> kh(k.channel(h).begin(), k.channel(h).end());
        const double r = dot(readout, causal_conv_direct(xh, kh));
        loss += 0.5 * r * r;
        if (dk)
        {
          std::vector<double> dy(readout);
          for (double& e : dy)
            e *= r;
          const auto adj = adjoint_under_test(xh, kh, dy, corrupt);
          std::copy(adj.dk.begin(), adj.dk.end(), dk->begin() + static_cast<std::ptrdiff_t>(h * c.seq_len));
        }
      }
      return loss;
    };
    std::vector<double> dk(c.channels * c.seq_len);
    forward(st.params, &dk);
    const auto g = kernel_param_grad<double>(dk, st.params, c, st.normalizer, st.alpha);
    const std::function<double(std::span<const double>)> loss = [&](std::span<const double> w) {
      ScaleParams<double> p = st.params;
      p.weights.assign(w.begin(), w.end());
      return forward(p, nullptr);
    };
    const auto report = finite_diff_check<double>(loss, st.params.weights, g.d_weights);
    check.at_most("end-to-end finite differences, " + to_string(mode), report.max_rel_error, 1e-5);
  }
  check.throws("finite_diff_check rejects eps = 0", [] {
    const std::vector<double> p{1.0};
    finite_diff_check<double>([](std::span<const double> v) { return v[0]; }, p, p, 0.0);
  });
  return out;
}

inline SuiteResult suite_model(std::uint64_t seed)
{
  SuiteResult out{"model", {}};
  Checker check(out);
  TaskSpec task;
  task.seq_len = 32;
  task.num_classes = 3;
  task.noise_tokens = 4;
  task.seed = seed;
  KernelConfig k;
  k.scale_dim = 4;
  auto cfg = ModelConfig::for_task(task, 4, 2, k);

  auto zero_mix = cfg;
  zero_mix.mix_init_scale = 0.0;
  const auto s0 = init_model<double>(zero_mix, seed);
  std::mt19937_64 rng(mix_seed(seed, 6));
  Tensor3<double> x(2, 4, 32);
  x.data() = normal_vector<double>(x.size(), rng);
  const ConvPlan<double> plan(32);
  auto y = x;
  for (std::size_t b = 0; b < zero_mix.depth; ++b)
    y = block_forward(y, s0.block(b), s0.block_config(b), plan);
  check.holds("zero Mix stack is the identity", y == x);

  const auto s = init_model<double>(cfg, seed);
  const auto batch = gen_batch(task, 3, std::uint64_t{0});
  const auto lg = loss_and_grad(s, batch);
  const std::function<double(std::span<const double>)> loss = [&](std::span<const double> p) {
    auto probe = s;
    probe.params.assign(p.begin(), p.end());
    return batch_metrics<double>(cfg, classifier_forward(probe, batch), batch).loss;
  };
  check.at_most("classifier gradient vs finite differences", finite_diff_check<double>(loss, s.params, lg.grad).max_rel_error,
                1e-4);

  std::size_t decreased = 0;
  for (std::uint64_t trial = 0; trial < 20; ++trial)
  {
    auto st = init_model<double>(cfg, mix_seed(seed, trial));
    const auto b = gen_batch(task, 8, trial);
    const auto g = loss_and_grad(st, b);
    for (std::size_t i = 0; i < st.params.size(); ++i)
      st.params[i] -= 1e-4 * g.grad[i];
    decreased += batch_metrics<double>(cfg, classifier_forward(st, b), b).loss < g.metrics.loss ? 1 : 0;
  }
  check.at_least("small gradient step decreases loss, 20 seeds", static_cast<double>(decreased), 20.0);

  const auto logits = classifier_forward(s, batch);
  check.holds("forward is deterministic", classifier_forward(s, batch) == logits);
  return out;
}

inline SuiteResult suite_tasks(std::uint64_t seed)
{
  SuiteResult out{"tasks", {}};
  Checker check(out);
  bool consistent = true, deterministic = true;
  for (auto kind : {TaskKind::first_token_recall, TaskKind::adding_problem, TaskKind::sparse_majority})
  {
    TaskSpec t;
    t.kind = kind;
    t.seq_len = 256;
    t.num_classes = kind == TaskKind::sparse_majority ? 2 : 4;
    t.seed = seed;
    for (std::uint64_t i = 0; i < 4; ++i)
    {
      const auto batch = gen_batch(t, 64, i);
      for (std::size_t b = 0; b < batch.batch; ++b)
        consistent = consistent && label_consistent(t, batch, b);
      deterministic = deterministic && gen_batch(t, 64, i) == batch;
    }
  }
  check.holds("labels re-derivable from inputs", consistent);
  check.holds("same seed gives the same batch", deterministic);

  TaskSpec t;
  t.seq_len = 2;
  t.seed = seed;
  const std::size_t n = 10000;
  const auto batch = gen_batch(t, n, std::uint64_t{0});
  std::vector<double> counts(t.num_classes, 0.0);
  for (int label : batch.labels)
    counts[static_cast<std::size_t>(label)] += 1.0;
  const double p = 1.0 / static_cast<double>(t.num_classes);
  double worst_sigma = 0.0;
  for (double c : counts)
    worst_sigma = std::max(worst_sigma, std::abs(c - p * n) / std::sqrt(n * p * (1 - p)));
  check.at_most("class balance in sigmas", worst_sigma, 5.0);
  return out;
}

inline SuiteResult suite_checkpoint(std::uint64_t seed)
{
  SuiteResult out{"checkpoint", {}};
  Checker check(out);
  TaskSpec task;
  task.seq_len = 64;
  task.seed = seed;
  KernelConfig k;
  k.init = InitScheme::cosine;
  const auto cfg = ModelConfig::for_task(task, 8, 2, k);
  const auto s = init_model<double>(cfg, seed);
  std::stringstream ss;
  save_checkpoint(ss, s);
  const std::string bytes = ss.str();
  const auto back = load_checkpoint<double>(ss);
  check.holds("round trip is bit exact", back == s);
  const auto batch = gen_batch(task, 4, std::uint64_t{0});
  check.holds("reloaded model gives identical logits", classifier_forward(back, batch) == classifier_forward(s, batch));
  check.throws("bad magic is rejected", [&] {
    std::stringstream bad("XXXX" + bytes.substr(4));
    load_checkpoint<double>(bad);
  });
  check.throws("truncated file is rejected", [&] {
    std::stringstream bad(bytes.substr(0, bytes.size() / 2));
    load_checkpoint<double>(bad);
  });
  return out;
}

} // namespace detail

/// Runs the selected suites. T selects the precision of the kernel, upsampling
/// and convolution suites; gradient and model suites always run in double
/// because central differences need it.
template <typename T>
std::vector<SuiteResult> run_verify(const VerifyOptions& opt)
{
  for (const auto& name : opt.filter)
    require(std::find(verify_suite_names().begin(), verify_suite_names().end(), name) != verify_suite_names().end(),
            "unknown verify suite: " + name);
  auto selected = [&](const std::string& name) {
    return opt.filter.empty() || std::find(opt.filter.begin(), opt.filter.end(), name) != opt.filter.end();
  };
  std::vector<SuiteResult> out;
  if (selected("kernelgen"))
    out.push_back(detail::suite_kernelgen<T>(opt.seed));
  if (selected("upsample"))
    out.push_back(detail::suite_upsample<T>(opt.seed));
  if (selected("fftconv"))
    out.push_back(detail::suite_fftconv<T>(opt.seed));
  if (selected("grad"))
    out.push_back(detail::suite_grad(opt.seed, opt.corrupt_adjoint));
  if (selected("model"))
    out.push_back(detail::suite_model(opt.seed));
  if (selected("tasks"))
    out.push_back(detail::suite_tasks(opt.seed));
  if (selected("checkpoint"))
    out.push_back(detail::suite_checkpoint(opt.seed));
  return out;
}

} // namespace sgconv
