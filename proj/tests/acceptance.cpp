// Acceptance checks. Usage: acceptance [criterion numbers...]; no arguments runs all.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgconv/fftconv.hpp"
#include "sgconv/grad.hpp"
#include "sgconv/io.hpp"
#include "sgconv/kernelgen.hpp"

namespace fs = std::filesystem;
using namespace sgconv;

namespace
{

constexpr std::uint64_t kSeed = 20240101;
constexpr std::size_t kTrainBudget = 2000;

struct Outcome
{
  bool pass = true;
  std::string detail;
};

std::string num(double v, int digits = 4)
{
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

fs::path work_dir(int criterion)
{
  const auto dir = fs::temp_directory_path() / ("sgconv_acceptance_" + std::to_string(criterion));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int cli(const fs::path& dir, const std::string& args)
{
  const std::string cmd = "cd '" + dir.string() + "' && '" SGCONV_CLI_PATH "' " + args + " > '" +
                          (dir / "stdout.txt").string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<double> normal_vector(std::size_t n, std::mt19937_64& rng)
{
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n);
  for (double& e : v)
    e = dist(rng);
  return v;
}

double dot(const std::vector<double>& a, std::span<const double> b)
{
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += a[i] * b[i];
  return s;
}

Outcome parameter_count()
{
  KernelConfig c;
  c.seq_len = 16384;
  c.scale_dim = 64;
  const std::size_t n = c.scales();
  const std::size_t per_channel = c.params_per_channel();
  Outcome o;
  o.pass = n == 9 && per_channel == 9 * 64;
  double prev = std::numeric_limits<double>::infinity();
  bool monotone = true;
  for (std::size_t L = 256; L <= 16384; L *= 2)
  {
    c.seq_len = L;
    const double ratio = static_cast<double>(c.params_per_channel()) / static_cast<double>(L);
    monotone = monotone && ratio < prev;
    prev = ratio;
  }
  o.pass = o.pass && monotone;
  o.detail = "N=" + std::to_string(n) + " N*d=" + std::to_string(per_channel) + " vs L=16384; N*d/L at 16384 = " + num(prev) +
             (monotone ? ", strictly decreasing" : ", NOT decreasing");
  return o;
}

Outcome coverage()
{
  std::size_t cases = 0, bad = 0;
  for (std::size_t d = 1; d <= 64; ++d)
    for (std::size_t r = 1; r <= 1024; r *= 2)
    {
      const std::size_t L = r * d;
      std::size_t total = 0;
      const std::size_t n = num_scales(L, d);
      for (std::size_t i = 0; i < n; ++i)
        total += sub_kernel_len(i, d);
      bad += total == L ? 0 : 1;
      ++cases;
    }
  return {bad == 0, std::to_string(cases) + " (L, d) pairs, " + std::to_string(bad) + " mismatches"};
}

Outcome norm_at_init()
{
  std::mt19937_64 rng(kSeed);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial)
  {
    KernelConfig c;
    c.scale_dim = std::uniform_int_distribution<std::size_t>(1, 32)(rng);
    c.seq_len = std::uniform_int_distribution<std::size_t>(c.scale_dim, 4096)(rng);
    c.channels = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
    c.mode = trial % 2 ? KernelMode::concat : KernelMode::disentangled;
    c.init = (trial / 2) % 2 ? InitScheme::gaussian : InitScheme::cosine;
    c.decay_alpha = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
    c.decay_t = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
    c.init_sigma = std::uniform_real_distribution<double>(0.1, 10.0)(rng);
    c.seed = rng();
    const auto k = init_kernel_state<double>(c).materialize();
    for (std::size_t h = 0; h < k.channels; ++h)
    {
      double sq = 0.0;
      for (double v : k.channel(h))
        sq += v * v;
      worst = std::max(worst, std::abs(std::sqrt(sq) - 1.0));
    }
  }
  return {worst <= 1e-6, "1000 configs, max |norm - 1| = " + num(worst, 3) + " (limit 1e-6)"};
}

Outcome fft_direct()
{
  std::mt19937_64 rng(kSeed + 1);
  double worst = 0.0;
  for (std::size_t L : {16u, 64u, 256u, 1024u, 4096u})
  {
    const ConvPlan<double> plan(L);
    for (int trial = 0; trial < 1000; ++trial)
    {
      const auto x = normal_vector(L, rng);
      const auto k = normal_vector(L, rng);
      const auto ref = causal_conv_direct(x, k);
      const auto got = causal_conv_fft(x, k, plan);
      double err = 0.0, scale = 0.0;
      for (std::size_t i = 0; i < L; ++i)
      {
        err = std::max(err, std::abs(got[i] - ref[i]));
        scale = std::max(scale, std::abs(ref[i]));
      }
      worst = std::max(worst, err / scale);
    }
  }
  return {worst <= 1e-10, "5000 pairs, max relative error " + num(worst, 3) + " (limit 1e-10)"};
}

Outcome adjoints()
{
  std::mt19937_64 rng(kSeed + 2);
  double identity = 0.0;
  for (std::size_t L : {1u, 2u, 3u, 16u, 100u, 256u, 512u, 1000u, 4096u})
    for (int trial = 0; trial < 20; ++trial)
    {
      const auto x = normal_vector(L, rng);
      const auto k = normal_vector(L, rng);
      const auto u = normal_vector(L, rng);
      const auto v = normal_vector(L, rng);
      const auto dy = normal_vector(L, rng);
      const auto adj = conv_adjoint(x, k, dy);
      const auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); };
      identity = std::max(identity, rel(dot(dy, causal_conv_direct(u, k)), dot(u, adj.dx)));
      identity = std::max(identity, rel(dot(dy, causal_conv_direct(x, v)), dot(v, adj.dk)));
    }

  // loss = sum_{b,h} <r_h, conv(x_bh, k_h)>^2 / 2 through the batched FFT path
  double fd = 0.0;
  std::size_t instances = 0;
  for (auto mode : {KernelMode::concat, KernelMode::disentangled})
    for (std::size_t L : {64u, 200u, 512u})
      for (std::size_t d : {4u, 8u})
      {
        KernelConfig c;
        c.seq_len = L;
        c.scale_dim = d;
        c.channels = 2;
        c.mode = mode;
        c.decay_t = 0.5;
        c.seed = rng();
        const auto st = init_kernel_state<double>(c);
        const ConvPlan<double> plan(L);
        const std::size_t B = 2;
        Tensor3<double> x(B, c.channels, L);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t h = 0; h < c.channels; ++h)
          {
            const auto row = normal_vector(L, rng);
            std::copy(row.begin(), row.end(), x.row(b, h).begin());
          }
        const auto readout = normal_vector(c.channels * L, rng);
        auto forward = [&](const ScaleParams<double>& p, Tensor3<double>* dy) {
          const auto k = build_kernel<double>(p, c, st.normalizer, st.alpha);
          const auto y = depthwise_conv_batch(x, k, plan);
          double loss = 0.0;
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t h = 0; h < c.channels; ++h)
            {
              const std::span<const double> r(readout.data() + h * L, L);
              double s = 0.0;
              for (std::size_t i = 0; i < L; ++i)
                s += r[i] * y(b, h, i);
              loss += 0.5 * s * s;
              if (dy)
                for (std::size_t i = 0; i < L; ++i)
                  (*dy)(b, h, i) = s * r[i];
            }
          return loss;
        };
        Tensor3<double> dy(B, c.channels, L);
        forward(st.params, &dy);
        const auto k = st.materialize();
        const auto back = depthwise_conv_backward(x, k, dy, plan);
        const auto g = kernel_param_grad<double>(back.d_kernel, st.params, c, st.normalizer, st.alpha);
        const std::function<double(std::span<const double>)> loss = [&](std::span<const double> w) {
          ScaleParams<double> p = st.params;
          p.weights.assign(w.begin(), w.end());
          return forward(p, nullptr);
        };
        fd = std::max(fd, finite_diff_check<double>(loss, st.params.weights, g.d_weights).max_rel_error);
        ++instances;
      }
  return {identity <= 1e-10 && fd <= 1e-5, "inner-product identities max rel " + num(identity, 3) +
                                               " (limit 1e-10); finite differences over " + std::to_string(instances) +
                                               " instances, both modes, max rel " + num(fd, 3) + " (limit 1e-5)"};
}

Outcome complexity()
{
  const auto dir = work_dir(6);
  const int code = cli(dir, "--seed " + std::to_string(kSeed) +
                                " --out bench.csv bench --lengths 1024,2048,4096,8192,16384 --channels 128 --batch 64 "
                                "--direct-cap 16384 --fit-min-len 1024 --work-cap 3e9");
  if (code != 0)
    return {false, "bench exited with " + std::to_string(code)};
  const auto s = nlohmann::json::parse(read_file(dir / "bench.json"));
  const auto median_at = [&](const std::string& impl, std::size_t L) {
    for (const auto& e : s["impls"][impl]["lengths"])
      if (e["seq_len"].get<std::size_t>() == L)
        return e["median_ms"].get<double>();
    return std::numeric_limits<double>::quiet_NaN();
  };
  const double fft16k = median_at("conv_fft", 16384);
  const double direct16k = median_at("conv_direct", 16384);
  const auto slope = [&](const std::string& impl) {
    const auto& v = s["impls"][impl]["slope"];
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  const double fft_slope = slope("conv_fft");
  const double attn_slope = slope("attn_quadratic");
  const bool pass = fft16k < direct16k && fft_slope >= 0.9 && fft_slope <= 1.4 && attn_slope >= 1.7;
  fs::copy_file(dir / "bench.csv", fs::current_path() / "acceptance_bench.csv", fs::copy_options::overwrite_existing);
  return {pass, "L=16384: fft " + num(fft16k) + " ms vs direct " + num(direct16k) + " ms; slopes fft " +
                    num(fft_slope, 3) + " in [0.9, 1.4], attention " + num(attn_slope, 3) + " >= 1.7, direct " +
                    num(slope("conv_direct"), 3)};
}

std::vector<nlohmann::json> read_jsonl(const fs::path& path)
{
  std::vector<nlohmann::json> rows;
  std::istringstream is(read_file(path));
  std::string line;
  while (std::getline(is, line))
    if (!line.empty())
      rows.push_back(nlohmann::json::parse(line));
  return rows;
}

Outcome learning()
{
  const auto dir = work_dir(7);
  const int code = cli(dir, "--seed " + std::to_string(kSeed) + " --out run train --task first-token-recall --len 1024 "
                                "--classes 4 --steps " + std::to_string(kTrainBudget));
  if (code != 0)
    return {false, "train exited with " + std::to_string(code)};
  const auto log = read_jsonl(dir / "run" / "log.jsonl");
  const double acc0 = log.front()["acc"].get<double>();
  const double loss0 = log.front()["loss"].get<double>();
  const double acc1 = log.back()["acc"].get<double>();
  const double loss1 = log.back()["loss"].get<double>();
  std::size_t first_hit = 0;
  for (const auto& e : log)
    if (e["acc"].get<double>() >= 0.95)
    {
      first_hit = e["step"].get<std::size_t>();
      break;
    }
  const bool pass = acc0 <= 0.45 && acc1 >= 0.95 && loss1 < 0.5 * loss0 && log.back()["step"] == kTrainBudget;
  fs::copy_file(dir / "run" / "log.jsonl", fs::current_path() / "acceptance_train_log.jsonl",
                fs::copy_options::overwrite_existing);
  return {pass, "L=1024, C=4: eval acc " + num(acc0) + " -> " + num(acc1) + " (>= 0.95) at step " +
                    std::to_string(kTrainBudget) + ", first >= 0.95 at step " + std::to_string(first_hit) +
                    "; loss " + num(loss0) + " -> " + num(loss1)};
}

Outcome ablation()
{
  const auto dir = work_dir(8);
  const int code = cli(dir, "--seed " + std::to_string(kSeed) + " --out abl ablate");
  if (code != 0)
    return {false, "ablate exited with " + std::to_string(code)};
  std::istringstream is(read_file(dir / "abl" / "ablation_summary.csv"));
  std::string line;
  std::getline(is, line);
  std::vector<std::string> expected{"t,0,8", "t,0.5,8", "t,1,8", "t,2,8", "d,1,1", "d,1,8", "d,1,64"};
  std::vector<std::pair<std::string, double>> rows;
  while (std::getline(is, line))
  {
    const auto cut = line.find(',', line.find(',', line.find(',') + 1) + 1);
    const auto rest = line.substr(cut + 1);
    rows.emplace_back(line.substr(0, cut), std::stod(rest.substr(0, rest.find(','))));
  }
  bool pass = rows.size() == expected.size();
  for (std::size_t i = 0; pass && i < rows.size(); ++i)
    pass = rows[i].first == expected[i];
  fs::copy_file(dir / "abl" / "ablation_summary.csv", fs::current_path() / "acceptance_ablation.csv",
                fs::copy_options::overwrite_existing);
  std::string table;
  for (const auto& [key, acc] : rows)
    table += (table.empty() ? "" : "; ") + key + "=" + num(acc, 3);
  if (rows.size() == expected.size())
  {
    const bool decay_helps = std::max({rows[1].second, rows[2].second, rows[3].second}) > rows[0].second;
    const bool drop_at_64 = rows[6].second < rows[5].second;
    table += std::string(" | decay beats no-decay: ") + (decay_helps ? "yes" : "no") +
             ", drop at d=64: " + (drop_at_64 ? "yes" : "no") + " (reported, not asserted)";
  }
  return {pass, "table (sweep,t,d=acc): " + table};
}

Outcome determinism()
{
  const auto dir = work_dir(9);
  const std::string seed = "--seed " + std::to_string(kSeed) + " ";
  const std::vector<std::pair<std::string, std::string>> commands{
      {"verify", "verify --out verify.json"},
      {"dump-kernel", "--out kernel.csv dump-kernel --len 4096 --scale-dim 16 --channels 4 --mode disentangled"},
      {"train", "--out train train --len 256 --steps 150 --eval-every 50"},
      {"ablate", "--out ablate ablate --len 128 --channels 8 --steps 60 --eval-every 30 --seeds 2"},
  };
  const std::vector<std::vector<std::string>> outputs{
      {"verify.json"}, {"kernel.csv"}, {"train/log.jsonl", "train/model.ckpt"},
      {"ablate/ablation.csv", "ablate/ablation_summary.csv"}};
  std::string detail;
  bool pass = true;
  for (std::size_t i = 0; i < commands.size(); ++i)
  {
    std::vector<std::string> first;
    bool same = true;
    for (int run = 0; run < 2; ++run)
    {
      if (cli(dir, seed + commands[i].second) != 0)
      {
        same = false;
        break;
      }
      for (std::size_t f = 0; f < outputs[i].size(); ++f)
      {
        const auto contents = read_file(dir / outputs[i][f]);
        if (run == 0)
          first.push_back(contents);
        else
          same = same && contents == first[f];
      }
    }
    pass = pass && same;
    detail += (detail.empty() ? "" : ", ") + commands[i].first + (same ? " identical" : " DIFFERS");
  }
  return {pass, detail};
}

const std::vector<std::pair<std::string, std::function<Outcome()>>>& criteria()
{
  static const std::vector<std::pair<std::string, std::function<Outcome()>>> list{
      {"parameter count N*d independent of L", parameter_count},
      {"sub-kernel lengths cover L exactly", coverage},
      {"unit kernel norm at initialization", norm_at_init},
      {"FFT convolution equals direct convolution", fft_direct},
      {"adjoints and parameter gradients", adjoints},
      {"complexity ordering and scaling slopes", complexity},
      {"first-token recall learned at L=1024", learning},
      {"decay ablation table", ablation},
      {"bit-identical reruns", determinism},
  };
  return list;
}

} // namespace

int main(int argc, char** argv)
{
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i)
    selected.push_back(std::atoi(argv[i]));
  if (selected.empty())
    for (int i = 1; i <= static_cast<int>(criteria().size()); ++i)
      selected.push_back(i);

  int failures = 0;
  for (int id : selected)
  {
    if (id < 1 || id > static_cast<int>(criteria().size()))
    {
      std::cout << "FAIL criterion " << id << ": no such criterion\n";
      ++failures;
      continue;
    }
    const auto& [name, fn] = criteria()[static_cast<std::size_t>(id - 1)];
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try
    {
      o = fn();
    }
    catch (const std::exception& e)
    {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail << " ["
              << num(secs, 3) << " s]" << std::endl;
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
