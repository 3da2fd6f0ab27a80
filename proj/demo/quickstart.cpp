#include <algorithm>
#include <cmath>
#include <iostream>
#include <span>
#include <vector>

#include "sgconv/fftconv.hpp"
#include "sgconv/kernelgen.hpp"

int main()
{
  sgconv::KernelConfig config;
  config.seq_len = 4096;
  config.scale_dim = 16;
  config.channels = 2;
  config.seed = 7;

  const auto state = sgconv::init_kernel_state<double>(config);
  const auto kernel = state.materialize();
  std::cout << "L=" << config.seq_len << " d=" << config.scale_dim << " scales=" << config.scales()
            << " params/channel=" << config.params_per_channel() << "\n";

  for (std::size_t h = 0; h < kernel.channels; ++h)
  {
    double sq = 0.0;
    for (double v : kernel.channel(h))
      sq += v * v;
    std::cout << "channel " << h << " kernel norm " << std::sqrt(sq) << "\n";
  }

  std::vector<double> x(config.seq_len, 0.0);
  x[0] = 1.0;
  const sgconv::ConvPlan<double> plan(config.seq_len);
  const auto k0 = kernel.channel(0);
  const auto y = sgconv::causal_conv_fft(std::span<const double>(x), k0, plan);
  double err = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    err = std::max(err, std::abs(y[i] - k0[i]));
  std::cout << "impulse response matches kernel to " << err << "\n";
  return 0;
}
