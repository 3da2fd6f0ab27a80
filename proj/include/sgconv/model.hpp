#pragma once

// A small SGConv sequence classifier with hand-written adjoints.
//
//   x0      = Embed(tokens) or Proj(features)            B x H x L
//   x_{b+1} = x_b + Mix(act(SGConv(LayerNorm(x_b))))     per block
//   logits  = Head(mean_l x_D)
//
// LayerNorm normalizes over channels at each position, SGConv is the causal
// depthwise global convolution whose kernel is rebuilt from the block's
// ScaleParams on every forward pass, Mix is a pointwise H -> H affine map.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgconv/common.hpp"
#include "sgconv/fftconv.hpp"
#include "sgconv/grad.hpp"
#include "sgconv/kernelgen.hpp"
#include "sgconv/tasks.hpp"

namespace sgconv
{

enum class Activation
{
  gelu,
  relu
};

inline std::string to_string(Activation a) { return a == Activation::gelu ? "gelu" : "relu"; }

inline Activation parse_activation(const std::string& s)
{
  if (s == "gelu")
    return Activation::gelu;
  if (s == "relu")
    return Activation::relu;
  throw std::invalid_argument("unknown activation: " + s);
}

struct BlockConfig
{
  std::size_t channels = 0;
  std::size_t seq_len = 0;
  KernelConfig kernel;
  std::size_t mix_dim = 0; // width of the pointwise map; must equal channels
  Activation activation = Activation::gelu;
  double norm_eps = 1e-5;

  void validate() const
  {
    kernel.validate();
    require(kernel.seq_len == seq_len, "BlockConfig: kernel.seq_len must equal seq_len");
    require(kernel.channels == channels, "BlockConfig: kernel.channels must equal channels");
    require(mix_dim == channels, "BlockConfig: mix_dim must equal channels (residual H -> H map)");
  }
};

struct ModelConfig
{
  std::size_t seq_len = 1024;
  std::size_t channels = 32;
  std::size_t depth = 2;
  std::size_t vocab_size = 0;     // > 0: token input through an embedding table
  std::size_t input_features = 0; // > 0: real input through an affine projection
  std::size_t output_dim = 2;
  bool regression = false;
  KernelConfig kernel; // seq_len, channels and seed are set per block
  Activation activation = Activation::gelu;
  double mix_init_scale = 1.0; // Mix weights ~ N(0, (scale^2) / H); 0 gives an identity stack
  double embed_init_scale = 1.0;
  double head_init_scale = 0.1;
  double norm_eps = 1e-5;

  void validate() const
  {
    require(seq_len >= 1 && channels >= 1 && depth >= 1, "ModelConfig: seq_len, channels and depth must be >= 1");
    require((vocab_size > 0) != (input_features > 0), "ModelConfig: exactly one of vocab_size / input_features");
    require(output_dim >= 1, "ModelConfig: output_dim must be >= 1");
    require(!regression || output_dim == 1, "ModelConfig: regression requires output_dim == 1");
    require(mix_init_scale >= 0.0 && embed_init_scale > 0.0 && head_init_scale >= 0.0, "ModelConfig: bad init scale");
    block_config(0, 0).validate();
  }

  BlockConfig block_config(std::size_t block, std::uint64_t seed) const
  {
    BlockConfig b;
    b.channels = channels;
    b.seq_len = seq_len;
    b.kernel = kernel;
    b.kernel.seq_len = seq_len;
    b.kernel.channels = channels;
    b.kernel.seed = mix_seed(seed, 1000 + block);
    b.mix_dim = channels;
    b.activation = activation;
    b.norm_eps = norm_eps;
    return b;
  }

  static ModelConfig for_task(const TaskSpec& task, std::size_t channels, std::size_t depth, const KernelConfig& kernel)
  {
    ModelConfig m;
    m.seq_len = task.seq_len;
    m.channels = channels;
    m.depth = depth;
    m.vocab_size = task.uses_tokens() ? task.vocab_size() : 0;
    m.input_features = task.uses_tokens() ? 0 : task.input_features();
    m.output_dim = task.output_dim();
    m.regression = task.is_regression();
    m.kernel = kernel;
    return m;
  }
};

inline nlohmann::json to_json(const KernelConfig& k)
{
  return {{"seq_len", k.seq_len},     {"scale_dim", k.scale_dim},   {"decay_alpha", k.decay_alpha},
          {"decay_t", k.decay_t},     {"channels", k.channels},     {"mode", to_string(k.mode)},
          {"init", to_string(k.init)}, {"init_sigma", k.init_sigma}, {"seed", k.seed}};
}

inline KernelConfig kernel_config_from_json(const nlohmann::json& j)
{
  KernelConfig k;
  k.seq_len = j.at("seq_len").get<std::size_t>();
  k.scale_dim = j.at("scale_dim").get<std::size_t>();
  k.decay_alpha = j.at("decay_alpha").get<double>();
  k.decay_t = j.at("decay_t").get<double>();
  k.channels = j.at("channels").get<std::size_t>();
  k.mode = parse_kernel_mode(j.at("mode").get<std::string>());
  k.init = parse_init_scheme(j.at("init").get<std::string>());
  k.init_sigma = j.at("init_sigma").get<double>();
  k.seed = j.at("seed").get<std::uint64_t>();
  return k;
}

inline nlohmann::json to_json(const ModelConfig& m)
{
  return {{"seq_len", m.seq_len},
          {"channels", m.channels},
          {"depth", m.depth},
          {"vocab_size", m.vocab_size},
          {"input_features", m.input_features},
          {"output_dim", m.output_dim},
          {"regression", m.regression},
          {"kernel", to_json(m.kernel)},
          {"activation", to_string(m.activation)},
          {"mix_init_scale", m.mix_init_scale},
          {"embed_init_scale", m.embed_init_scale},
          {"head_init_scale", m.head_init_scale},
          {"norm_eps", m.norm_eps}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j)
{
  ModelConfig m;
  m.seq_len = j.at("seq_len").get<std::size_t>();
  m.channels = j.at("channels").get<std::size_t>();
  m.depth = j.at("depth").get<std::size_t>();
  m.vocab_size = j.at("vocab_size").get<std::size_t>();
  m.input_features = j.at("input_features").get<std::size_t>();
  m.output_dim = j.at("output_dim").get<std::size_t>();
  m.regression = j.at("regression").get<bool>();
  m.kernel = kernel_config_from_json(j.at("kernel"));
  m.activation = parse_activation(j.at("activation").get<std::string>());
  m.mix_init_scale = j.at("mix_init_scale").get<double>();
  m.embed_init_scale = j.at("embed_init_scale").get<double>();
  m.head_init_scale = j.at("head_init_scale").get<double>();
  m.norm_eps = j.at("norm_eps").get<double>();
  return m;
}

struct TensorInfo
{
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct BlockOffsets
{
  std::size_t scale_weights, norm_gamma, norm_beta, mix_weight, mix_bias; // into params
  std::size_t alpha, normalizer;                                          // into buffers
};

/// Declaration order of every tensor. Parameters are trained; buffers hold the
/// per-block constants frozen at initialization (alpha, Z).
struct ParamLayout
{
  std::vector<TensorInfo> params;
  std::vector<TensorInfo> buffers;
  std::size_t param_count = 0;
  std::size_t buffer_count = 0;
  std::size_t embed = 0, input_proj = 0, input_bias = 0, head_weight = 0, head_bias = 0;
  std::vector<BlockOffsets> blocks;

  explicit ParamLayout(const ModelConfig& c)
  {
    const std::size_t H = c.channels;
    auto add = [](std::vector<TensorInfo>& list, std::size_t& total, std::string name, std::vector<std::size_t> shape) {
      std::size_t n = 1;
      for (auto s : shape)
        n *= s;
      list.push_back({std::move(name), std::move(shape), total, n});
      total += n;
      return list.back().offset;
    };
    if (c.vocab_size > 0)
      embed = add(params, param_count, "embed", {c.vocab_size, H});
    else
    {
      input_proj = add(params, param_count, "input_proj", {H, c.input_features});
      input_bias = add(params, param_count, "input_bias", {H});
    }
    const std::size_t N = num_scales(c.seq_len, c.kernel.scale_dim);
    for (std::size_t b = 0; b < c.depth; ++b)
    {
      const std::string prefix = "block" + std::to_string(b) + ".";
      BlockOffsets o{};
      o.scale_weights = add(params, param_count, prefix + "scale_weights", {H, N, c.kernel.scale_dim});
      o.norm_gamma = add(params, param_count, prefix + "norm_gamma", {H});
      o.norm_beta = add(params, param_count, prefix + "norm_beta", {H});
      o.mix_weight = add(params, param_count, prefix + "mix_weight", {H, H});
      o.mix_bias = add(params, param_count, prefix + "mix_bias", {H});
      o.alpha = add(buffers, buffer_count, prefix + "alpha", {H});
      o.normalizer = add(buffers, buffer_count, prefix + "normalizer", {H});
      blocks.push_back(o);
    }
    head_weight = add(params, param_count, "head_weight", {c.output_dim, H});
    head_bias = add(params, param_count, "head_bias", {c.output_dim});
  }
};

/// Read-only view of one block's tensors.
template <typename T>
struct BlockParams
{
  ScaleParams<T> scale; // copied so the kernel builders can consume it directly
  std::span<const T> norm_gamma, norm_beta, mix_weight, mix_bias;
  std::span<const T> alpha, normalizer;
};

/// Writable gradient slots of one block.
template <typename T>
struct BlockGrads
{
  std::span<T> scale_weights, norm_gamma, norm_beta, mix_weight, mix_bias;
};

template <typename T>
struct ModelState
{
  ModelConfig config;
  ParamLayout layout;
  std::vector<T> params;
  std::vector<T> buffers;

  explicit ModelState(const ModelConfig& c)
      : config(c), layout(c), params(layout.param_count, T(0)), buffers(layout.buffer_count, T(0))
  {
  }

  std::span<T> param(std::size_t offset, std::size_t n) { return {params.data() + offset, n}; }
  std::span<const T> param(std::size_t offset, std::size_t n) const { return {params.data() + offset, n}; }

  BlockConfig block_config(std::size_t b) const { return config.block_config(b, 0); }

  BlockParams<T> block(std::size_t b) const
  {
    const auto& o = layout.blocks[b];
    const std::size_t H = config.channels;
    BlockParams<T> p;
    const std::size_t N = num_scales(config.seq_len, config.kernel.scale_dim);
    p.scale = ScaleParams<T>(H, N, config.kernel.scale_dim);
    std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(o.scale_weights), p.scale.weights.size(),
                p.scale.weights.begin());
    p.norm_gamma = param(o.norm_gamma, H);
    p.norm_beta = param(o.norm_beta, H);
    p.mix_weight = param(o.mix_weight, H * H);
    p.mix_bias = param(o.mix_bias, H);
    p.alpha = {buffers.data() + o.alpha, H};
    p.normalizer = {buffers.data() + o.normalizer, H};
    return p;
  }

  bool operator==(const ModelState& other) const { return params == other.params && buffers == other.buffers; }
};

template <typename T>
BlockGrads<T> block_grads(std::span<T> grad, const ModelState<T>& state, std::size_t b)
{
  const auto& o = state.layout.blocks[b];
  const std::size_t H = state.config.channels;
  const std::size_t n_scale = H * num_scales(state.config.seq_len, state.config.kernel.scale_dim) * state.config.kernel.scale_dim;
  return {grad.subspan(o.scale_weights, n_scale), grad.subspan(o.norm_gamma, H), grad.subspan(o.norm_beta, H),
          grad.subspan(o.mix_weight, H * H), grad.subspan(o.mix_bias, H)};
}

template <typename T>
ModelState<T> init_model(const ModelConfig& config, std::uint64_t seed)
{
  config.validate();
  ModelState<T> state(config);
  std::mt19937_64 rng(mix_seed(seed, 7));
  const std::size_t H = config.channels;
  const auto& L = state.layout;
  auto fill_normal = [&](std::size_t offset, std::size_t n, double stddev) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i)
    {
      const double z = normal(rng);
      state.params[offset + i] = static_cast<T>(stddev * z);
    }
  };
  if (config.vocab_size > 0)
    fill_normal(L.embed, config.vocab_size * H, config.embed_init_scale);
  else
    fill_normal(L.input_proj, H * config.input_features, config.embed_init_scale);
  for (std::size_t b = 0; b < config.depth; ++b)
  {
    const auto& o = L.blocks[b];
    const auto kstate = init_kernel_state<T>(config.block_config(b, seed).kernel);
    std::copy(kstate.params.weights.begin(), kstate.params.weights.end(),
              state.params.begin() + static_cast<std::ptrdiff_t>(o.scale_weights));
    std::copy(kstate.alpha.begin(), kstate.alpha.end(), state.buffers.begin() + static_cast<std::ptrdiff_t>(o.alpha));
    std::copy(kstate.normalizer.begin(), kstate.normalizer.end(),
              state.buffers.begin() + static_cast<std::ptrdiff_t>(o.normalizer));
    for (std::size_t h = 0; h < H; ++h)
      state.params[o.norm_gamma + h] = T(1);
    if (config.mix_init_scale > 0.0)
      fill_normal(o.mix_weight, H * H, config.mix_init_scale / std::sqrt(static_cast<double>(H)));
  }
  if (config.head_init_scale > 0.0)
    fill_normal(L.head_weight, config.output_dim * H, config.head_init_scale / std::sqrt(static_cast<double>(H)));
  return state;
}

namespace detail
{
template <typename T>
T activate(Activation a, T v)
{
  if (a == Activation::relu)
    return v > T(0) ? v : T(0);
  return T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
}

template <typename T>
T activate_grad(Activation a, T v)
{
  if (a == Activation::relu)
    return v > T(0) ? T(1) : T(0);
  const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * v * v) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + v * pdf;
}
} // namespace detail

template <typename T>
struct BlockCache
{
  Tensor3<T> xhat;       // normalized input before gamma/beta
  std::vector<T> rstd;   // B x L
  Tensor3<T> u;          // LayerNorm output, convolution input
  MaterializedKernel<T> kernel;
  Tensor3<T> v;          // convolution output
  Tensor3<T> a;          // activation output
};

/// y = x + Mix(act(SGConv(Norm(x)))).
template <typename T>
Tensor3<T> block_forward(const Tensor3<T>& x, const BlockParams<T>& p, const BlockConfig& cfg, const ConvPlan<T>& plan,
                         std::type_identity_t<BlockCache<T>>* cache = nullptr, std::size_t threads = 1)
{
  cfg.validate();
  const std::size_t B = x.dim(0);
  const std::size_t H = cfg.channels;
  const std::size_t L = cfg.seq_len;
  require(x.dim(1) == H && x.dim(2) == L, "block_forward: input shape mismatch");
  require(plan.seq_len() == L, "block_forward: plan length mismatch");

  BlockCache<T> local;
  BlockCache<T>& c = cache ? *cache : local;
  c.xhat = Tensor3<T>(B, H, L);
  c.u = Tensor3<T>(B, H, L);
  c.rstd.assign(B * L, T(0));

  parallel_for(B, threads, [&](std::size_t b) {
    for (std::size_t l = 0; l < L; ++l)
    {
      T mean = T(0);
      for (std::size_t h = 0; h < H; ++h)
        mean += x(b, h, l);
      mean /= static_cast<T>(H);
      T var = T(0);
      for (std::size_t h = 0; h < H; ++h)
      {
        const T dlt = x(b, h, l) - mean;
        var += dlt * dlt;
      }
      var /= static_cast<T>(H);
      const T rstd = T(1) / std::sqrt(var + static_cast<T>(cfg.norm_eps));
      c.rstd[b * L + l] = rstd;
      for (std::size_t h = 0; h < H; ++h)
      {
        const T xh = (x(b, h, l) - mean) * rstd;
        c.xhat(b, h, l) = xh;
        c.u(b, h, l) = p.norm_gamma[h] * xh + p.norm_beta[h];
      }
    }
  });

  c.kernel = build_kernel<T>(p.scale, cfg.kernel, p.normalizer, p.alpha);
  depthwise_conv_batch(c.u, c.kernel, plan, c.v, threads);

  c.a = Tensor3<T>(B, H, L);
  for (std::size_t i = 0; i < c.v.size(); ++i)
    c.a.data()[i] = detail::activate(cfg.activation, c.v.data()[i]);

  Tensor3<T> y = x;
  parallel_for(B, threads, [&](std::size_t b) {
    for (std::size_t ho = 0; ho < H; ++ho)
    {
      T* out = y.row(b, ho).data();
      const T bias = p.mix_bias[ho];
      for (std::size_t l = 0; l < L; ++l)
        out[l] += bias;
      for (std::size_t hi = 0; hi < H; ++hi)
      {
        const T w = p.mix_weight[ho * H + hi];
        if (w == T(0))
          continue;
        const T* in = c.a.row(b, hi).data();
        for (std::size_t l = 0; l < L; ++l)
          out[l] += w * in[l];
      }
    }
  });
  return y;
}

/// Adjoint of block_forward. Accumulates parameter gradients into g and
/// returns dL/dx. Reductions over the batch run in index order.
template <typename T>
Tensor3<T> block_backward(const Tensor3<T>& dy, const BlockCache<T>& c, const BlockParams<T>& p, const BlockConfig& cfg,
                          const ConvPlan<T>& plan, BlockGrads<T> g, std::size_t threads = 1)
{
  const std::size_t B = dy.dim(0);
  const std::size_t H = cfg.channels;
  const std::size_t L = cfg.seq_len;

  // Mix
  parallel_for(H, threads, [&](std::size_t ho) {
    T bias_acc = T(0);
    for (std::size_t b = 0; b < B; ++b)
    {
      const T* d = dy.row(b, ho).data();
      for (std::size_t l = 0; l < L; ++l)
        bias_acc += d[l];
      for (std::size_t hi = 0; hi < H; ++hi)
      {
        const T* in = c.a.row(b, hi).data();
        T acc = T(0);
        for (std::size_t l = 0; l < L; ++l)
          acc += d[l] * in[l];
        g.mix_weight[ho * H + hi] += acc;
      }
    }
    g.mix_bias[ho] += bias_acc;
  });
  Tensor3<T> dv(B, H, L);
  parallel_for(B, threads, [&](std::size_t b) {
    for (std::size_t ho = 0; ho < H; ++ho)
    {
      const T* d = dy.row(b, ho).data();
      for (std::size_t hi = 0; hi < H; ++hi)
      {
        const T w = p.mix_weight[ho * H + hi];
        if (w == T(0))
          continue;
        T* out = dv.row(b, hi).data();
        for (std::size_t l = 0; l < L; ++l)
          out[l] += w * d[l];
      }
    }
  });

  // activation
  for (std::size_t i = 0; i < dv.size(); ++i)
    dv.data()[i] *= detail::activate_grad(cfg.activation, c.v.data()[i]);

  // convolution and kernel construction
  auto conv = depthwise_conv_backward(c.u, c.kernel, dv, plan, threads);
  const auto kgrad = kernel_param_grad<T>(conv.d_kernel, p.scale, cfg.kernel, p.normalizer, p.alpha);
  for (std::size_t i = 0; i < kgrad.d_weights.size(); ++i)
    g.scale_weights[i] += kgrad.d_weights[i];

  // LayerNorm, plus the residual path
  const Tensor3<T>& du = conv.d_input;
  Tensor3<T> dx = dy;
  std::vector<T> dgamma(B * H, T(0)), dbeta(B * H, T(0));
  parallel_for(B, threads, [&](std::size_t b) {
    for (std::size_t l = 0; l < L; ++l)
    {
      T mean_dxh = T(0);
      T mean_dxh_xh = T(0);
      for (std::size_t h = 0; h < H; ++h)
      {
        const T d = du(b, h, l);
        const T xh = c.xhat(b, h, l);
        dgamma[b * H + h] += d * xh;
        dbeta[b * H + h] += d;
        const T dxh = d * p.norm_gamma[h];
        mean_dxh += dxh;
        mean_dxh_xh += dxh * xh;
      }
      mean_dxh /= static_cast<T>(H);
      mean_dxh_xh /= static_cast<T>(H);
      const T rstd = c.rstd[b * L + l];
      for (std::size_t h = 0; h < H; ++h)
      {
        const T dxh = du(b, h, l) * p.norm_gamma[h];
        dx(b, h, l) += rstd * (dxh - mean_dxh - c.xhat(b, h, l) * mean_dxh_xh);
      }
    }
  });
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
    {
      g.norm_gamma[h] += dgamma[b * H + h];
      g.norm_beta[h] += dbeta[b * H + h];
    }
  return dx;
}

template <typename T>
struct ForwardPass
{
  std::vector<BlockCache<T>> blocks;
  std::vector<T> pooled; // B x H
  std::vector<T> logits; // B x O
};

namespace detail
{
template <typename T>
Tensor3<T> embed_input(const ModelState<T>& s, const TaskBatch& batch)
{
  const auto& c = s.config;
  const std::size_t B = batch.batch;
  const std::size_t H = c.channels;
  const std::size_t L = c.seq_len;
  require(batch.seq_len == L, "model: batch sequence length does not match model");
  Tensor3<T> x(B, H, L);
  if (c.vocab_size > 0)
  {
    require(batch.tokens.size() == B * L, "model: token input required");
    for (int t : batch.tokens)
      require(t >= 0 && static_cast<std::size_t>(t) < c.vocab_size, "model: token id out of range");
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l)
      {
        const T* e = s.params.data() + s.layout.embed + static_cast<std::size_t>(batch.token(b, l)) * H;
        for (std::size_t h = 0; h < H; ++h)
          x(b, h, l) = e[h];
      }
  }
  else
  {
    require(batch.features == c.input_features && batch.values.size() == B * L * c.input_features,
            "model: feature input shape mismatch");
    const T* w = s.params.data() + s.layout.input_proj;
    const T* bias = s.params.data() + s.layout.input_bias;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t l = 0; l < L; ++l)
        {
          T acc = bias[h];
          for (std::size_t f = 0; f < c.input_features; ++f)
            acc += w[h * c.input_features + f] * static_cast<T>(batch.value(b, l, f));
          x(b, h, l) = acc;
        }
  }
  return x;
}
} // namespace detail

template <typename T>
std::vector<T> classifier_forward(const ModelState<T>& s, const TaskBatch& batch,
                                  std::type_identity_t<ForwardPass<T>>* pass = nullptr,
                                  std::size_t threads = 1)
{
  const auto& c = s.config;
  const std::size_t B = batch.batch;
  const std::size_t H = c.channels;
  const std::size_t L = c.seq_len;
  const std::size_t O = c.output_dim;
  const ConvPlan<T> plan(L);

  Tensor3<T> x = detail::embed_input(s, batch);
  ForwardPass<T> local;
  ForwardPass<T>& fp = pass ? *pass : local;
  fp.blocks.assign(c.depth, BlockCache<T>{});
  for (std::size_t b = 0; b < c.depth; ++b)
    x = block_forward(x, s.block(b), s.block_config(b), plan, &fp.blocks[b], threads);

  fp.pooled.assign(B * H, T(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
    {
      T sum = T(0);
      for (T v : x.row(b, h))
        sum += v;
      fp.pooled[b * H + h] = sum / static_cast<T>(L);
    }
  fp.logits.assign(B * O, T(0));
  const T* w = s.params.data() + s.layout.head_weight;
  const T* bias = s.params.data() + s.layout.head_bias;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
    {
      T acc = bias[o];
      for (std::size_t h = 0; h < H; ++h)
        acc += w[o * H + h] * fp.pooled[b * H + h];
      fp.logits[b * O + o] = acc;
    }
  return fp.logits;
}

struct BatchMetrics
{
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean cross-entropy (classification) or mean squared error (regression).
/// Regression accuracy counts predictions within 0.04 of the target.
template <typename T>
BatchMetrics batch_metrics(const ModelConfig& c, std::span<const T> logits, const TaskBatch& batch,
                           std::vector<T>* dlogits = nullptr)
{
  const std::size_t B = batch.batch;
  const std::size_t O = c.output_dim;
  BatchMetrics m;
  if (dlogits)
    dlogits->assign(B * O, T(0));
  for (std::size_t b = 0; b < B; ++b)
  {
    const T* z = logits.data() + b * O;
    if (c.regression)
    {
      const double err = static_cast<double>(z[0]) - batch.targets[b];
      m.loss += err * err;
      m.accuracy += std::abs(err) < 0.04 ? 1.0 : 0.0;
      if (dlogits)
        (*dlogits)[b] = static_cast<T>(2.0 * err / static_cast<double>(B));
      continue;
    }
    const int label = batch.labels[b];
    double zmax = static_cast<double>(z[0]);
    std::size_t argmax = 0;
    for (std::size_t o = 1; o < O; ++o)
      if (static_cast<double>(z[o]) > zmax)
      {
        zmax = static_cast<double>(z[o]);
        argmax = o;
      }
    double sum = 0.0;
    for (std::size_t o = 0; o < O; ++o)
      sum += std::exp(static_cast<double>(z[o]) - zmax);
    const double lse = zmax + std::log(sum);
    m.loss += lse - static_cast<double>(z[label]);
    m.accuracy += static_cast<int>(argmax) == label ? 1.0 : 0.0;
    if (dlogits)
      for (std::size_t o = 0; o < O; ++o)
      {
        const double prob = std::exp(static_cast<double>(z[o]) - lse);
        (*dlogits)[b * O + o] =
            static_cast<T>((prob - (static_cast<int>(o) == label ? 1.0 : 0.0)) / static_cast<double>(B));
      }
  }
  m.loss /= static_cast<double>(B);
  m.accuracy /= static_cast<double>(B);
  return m;
}

template <typename T>
struct LossGrad
{
  BatchMetrics metrics;
  std::vector<T> grad; // same layout as ModelState::params
};

template <typename T>
LossGrad<T> loss_and_grad(const ModelState<T>& s, const TaskBatch& batch, std::size_t threads = 1)
{
  const auto& c = s.config;
  const std::size_t B = batch.batch;
  const std::size_t H = c.channels;
  const std::size_t L = c.seq_len;
  const std::size_t O = c.output_dim;
  const ConvPlan<T> plan(L);

  ForwardPass<T> fp;
  classifier_forward(s, batch, &fp, threads);
  std::vector<T> dlogits;
  LossGrad<T> out;
  out.metrics = batch_metrics<T>(c, fp.logits, batch, &dlogits);
  out.grad.assign(s.params.size(), T(0));
  std::span<T> g(out.grad);

  // head and pooling
  const T* w = s.params.data() + s.layout.head_weight;
  Tensor3<T> dx(B, H, L);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
    {
      const T d = dlogits[b * O + o];
      g[s.layout.head_bias + o] += d;
      for (std::size_t h = 0; h < H; ++h)
        g[s.layout.head_weight + o * H + h] += d * fp.pooled[b * H + h];
    }
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
    {
      T dp = T(0);
      for (std::size_t o = 0; o < O; ++o)
        dp += w[o * H + h] * dlogits[b * O + o];
      dp /= static_cast<T>(L);
      for (T& v : dx.row(b, h))
        v = dp;
    }

  for (std::size_t blk = c.depth; blk-- > 0;)
    dx = block_backward(dx, fp.blocks[blk], s.block(blk), s.block_config(blk), plan, block_grads(g, s, blk), threads);

  if (c.vocab_size > 0)
  {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l)
      {
        T* e = out.grad.data() + s.layout.embed + static_cast<std::size_t>(batch.token(b, l)) * H;
        for (std::size_t h = 0; h < H; ++h)
          e[h] += dx(b, h, l);
      }
  }
  else
  {
    const std::size_t F = c.input_features;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t l = 0; l < L; ++l)
        {
          const T d = dx(b, h, l);
          g[s.layout.input_bias + h] += d;
          for (std::size_t f = 0; f < F; ++f)
            g[s.layout.input_proj + h * F + f] += d * static_cast<T>(batch.value(b, l, f));
        }
  }
  return out;
}

template <typename T>
BatchMetrics evaluate(const ModelState<T>& s, const std::vector<TaskBatch>& batches, std::size_t threads = 1)
{
  BatchMetrics total;
  std::size_t samples = 0;
  for (const auto& batch : batches)
  {
    const auto logits = classifier_forward(s, batch, nullptr, threads);
    const auto m = batch_metrics<T>(s.config, logits, batch);
    total.loss += m.loss * static_cast<double>(batch.batch);
    total.accuracy += m.accuracy * static_cast<double>(batch.batch);
    samples += batch.batch;
  }
  if (samples > 0)
  {
    total.loss /= static_cast<double>(samples);
    total.accuracy /= static_cast<double>(samples);
  }
  return total;
}

enum class OptimizerKind
{
  adam,
  sgd
};

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

inline OptimizerKind parse_optimizer(const std::string& s)
{
  if (s == "adam")
    return OptimizerKind::adam;
  if (s == "sgd")
    return OptimizerKind::sgd;
  throw std::invalid_argument("unknown optimizer: " + s);
}

struct TrainConfig
{
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double momentum = 0.9;
  double grad_clip = 0.0; // global-norm clip, 0 disables
  std::uint64_t seed = 0;
  std::size_t eval_every = 100;
  std::size_t eval_batches = 4;
  std::size_t threads = 1;

  void validate() const
  {
    require(steps >= 1, "TrainConfig: steps must be >= 1");
    require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
    require(learning_rate >= 0.0 && std::isfinite(learning_rate), "TrainConfig: learning rate must be >= 0");
    require(eval_every >= 1 && eval_batches >= 1, "TrainConfig: eval_every and eval_batches must be >= 1");
    require(grad_clip >= 0.0, "TrainConfig: grad_clip must be >= 0");
  }
};

template <typename T>
class Optimizer
{
public:
  Optimizer(const TrainConfig& cfg, std::size_t n) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<T> params, std::span<const T> grad)
  {
    ++t_;
    const double lr = cfg_.learning_rate;
    if (cfg_.optimizer == OptimizerKind::sgd)
    {
      for (std::size_t i = 0; i < params.size(); ++i)
      {
        m_[i] = cfg_.momentum * m_[i] + static_cast<double>(grad[i]);
        params[i] -= static_cast<T>(lr * m_[i]);
      }
      return;
    }
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i)
    {
      const double gi = static_cast<double>(grad[i]);
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * gi;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      params[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps));
    }
  }

private:
  TrainConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

class DivergenceError : public std::runtime_error
{
public:
  DivergenceError(std::size_t step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step_(step)
  {
  }
  std::size_t step() const { return step_; }

private:
  std::size_t step_;
};

/// One evaluation point. loss and acc are measured on the fixed held-out set;
/// train_loss is the mean training-batch loss since the previous entry.
struct LogEntry
{
  std::size_t step = 0;
  double loss = 0.0;
  double acc = 0.0;
  double train_loss = 0.0;

  bool operator==(const LogEntry&) const = default;
};

inline nlohmann::json to_json(const LogEntry& e)
{
  return {{"step", e.step}, {"loss", e.loss}, {"acc", e.acc}, {"train_loss", e.train_loss}};
}

template <typename T>
struct TrainResult
{
  std::vector<LogEntry> log;
  ModelState<T> state;
};

/// Held-out batches, drawn from a stream disjoint from the training stream.
inline std::vector<TaskBatch> eval_set(const TaskSpec& task, std::size_t batches, std::size_t batch_size)
{
  TaskSpec eval = task;
  eval.seed = mix_seed(task.seed, 0xE7A1ULL);
  std::vector<TaskBatch> out;
  for (std::size_t i = 0; i < batches; ++i)
    out.push_back(gen_batch(eval, batch_size, static_cast<std::uint64_t>(i)));
  return out;
}

/// Trains from a fresh initialization (or from `initial` when given). Fully
/// deterministic in (task, model_cfg, train_cfg).
template <typename T>
TrainResult<T> train(const TaskSpec& task, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                     const ModelState<T>* initial = nullptr,
                     const std::function<void(const LogEntry&)>& on_log = nullptr)
{
  task.validate();
  model_cfg.validate();
  train_cfg.validate();
  require(task.seq_len == model_cfg.seq_len, "train: task and model sequence lengths differ");

  TrainResult<T> result{{}, initial ? *initial : init_model<T>(model_cfg, train_cfg.seed)};
  auto& state = result.state;
  require(state.config.seq_len == task.seq_len, "train: initial state does not match task");
  Optimizer<T> opt(train_cfg, state.params.size());
  const auto held_out = eval_set(task, train_cfg.eval_batches, train_cfg.batch_size);

  auto record = [&](std::size_t step, double train_loss) {
    const auto m = evaluate(state, held_out, train_cfg.threads);
    LogEntry e{step, m.loss, m.accuracy, train_loss};
    result.log.push_back(e);
    if (on_log)
      on_log(e);
  };
  record(0, std::numeric_limits<double>::quiet_NaN());

  double window = 0.0;
  std::size_t window_n = 0;
  for (std::size_t step = 1; step <= train_cfg.steps; ++step)
  {
    const auto batch = gen_batch(task, train_cfg.batch_size, static_cast<std::uint64_t>(step));
    auto lg = loss_and_grad(state, batch, train_cfg.threads);
    if (!std::isfinite(lg.metrics.loss))
      throw DivergenceError(step, "non-finite loss");
    double norm2 = 0.0;
    for (T gi : lg.grad)
      norm2 += static_cast<double>(gi) * static_cast<double>(gi);
    if (!std::isfinite(norm2))
      throw DivergenceError(step, "non-finite gradient");
    if (train_cfg.grad_clip > 0.0 && norm2 > train_cfg.grad_clip * train_cfg.grad_clip)
    {
      const T scale = static_cast<T>(train_cfg.grad_clip / std::sqrt(norm2));
      for (T& gi : lg.grad)
        gi *= scale;
    }
    opt.step(state.params, lg.grad);
    window += lg.metrics.loss;
    ++window_n;
    if (step % train_cfg.eval_every == 0 || step == train_cfg.steps)
    {
      record(step, window / static_cast<double>(window_n));
      window = 0.0;
      window_n = 0;
    }
  }
  return result;
}

struct AblationRow
{
  double t = 0.0;
  std::size_t d = 0;
  double accuracy = 0.0;
  std::uint64_t seed = 0;
};

/// Trains one disentangled-mode model per (t, d) grid point and seed and
/// reports the final held-out accuracy.
template <typename T>
std::vector<AblationRow> ablate_decay(const TaskSpec& task, const ModelConfig& base, const std::vector<std::pair<double, std::size_t>>& grid,
                                      const TrainConfig& train_cfg, const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const AblationRow&)>& on_row = nullptr)
{
  require(!grid.empty(), "ablate_decay: empty grid");
  require(!seeds.empty(), "ablate_decay: at least one seed is required");
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : seeds)
    for (const auto& [t, d] : grid)
    {
      // a point shared by both sweeps is trained once
      const auto done = std::find_if(rows.begin(), rows.end(), [&](const AblationRow& r) {
        return r.t == t && r.d == d && r.seed == seed;
      });
      if (done != rows.end())
      {
        const AblationRow row = *done;
        rows.push_back(row);
        if (on_row)
          on_row(row);
        continue;
      }
      ModelConfig cfg = base;
      cfg.kernel.mode = KernelMode::disentangled;
      cfg.kernel.decay_t = t;
      cfg.kernel.scale_dim = d;
      TaskSpec task_seeded = task;
      task_seeded.seed = mix_seed(task.seed, seed);
      TrainConfig tc = train_cfg;
      tc.seed = seed;
      const auto result = train<T>(task_seeded, cfg, tc);
      AblationRow row{t, d, result.log.back().acc, seed};
      rows.push_back(row);
      if (on_row)
        on_row(row);
    }
  return rows;
}

} // namespace sgconv
