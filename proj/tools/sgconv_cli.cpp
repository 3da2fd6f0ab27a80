#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sgconv/bench.hpp"
#include "sgconv/checkpoint.hpp"
#include "sgconv/io.hpp"
#include "sgconv/kernelgen.hpp"
#include "sgconv/model.hpp"
#include "sgconv/tasks.hpp"
#include "sgconv/verify.hpp"

namespace fs = std::filesystem;
using namespace sgconv;

namespace
{

struct GlobalFlags
{
  std::uint64_t seed = 0;
  std::string out;
  std::string precision; // empty: per-command default
  std::string config;
  std::size_t threads = 1;
};

struct TaskFlags
{
  std::string task = "first-token-recall";
  std::size_t len = 1024;
  std::size_t classes = 4;
  std::size_t noise_tokens = 8;
  std::size_t votes = 5;
  CLI::Option* classes_opt = nullptr;
  CLI::Option* len_opt = nullptr;

  void add(CLI::App* app)
  {
    app->add_option("--task", task, "first-token-recall | adding-problem | sparse-majority")->capture_default_str();
    len_opt = app->add_option("--len", len, "sequence length")->capture_default_str();
    classes_opt = app->add_option("--classes", classes, "class count (sparse-majority is always 2)")->capture_default_str();
    app->add_option("--noise-tokens", noise_tokens, "distractor vocabulary for first-token-recall")->capture_default_str();
    app->add_option("--votes", votes, "flagged positions for sparse-majority (odd)")->capture_default_str();
  }

  TaskSpec spec(std::uint64_t seed) const
  {
    TaskSpec t;
    t.kind = parse_task_kind(task);
    t.seq_len = len;
    t.num_classes = t.kind == TaskKind::sparse_majority && classes_opt->count() == 0 ? 2 : classes;
    t.noise_tokens = noise_tokens;
    t.num_votes = votes;
    t.seed = seed;
    t.validate();
    return t;
  }
};

struct KernelFlags
{
  std::size_t scale_dim = 8;
  double alpha = 0.5;
  double t = 1.0;
  std::string mode = "concat";
  std::string init;
  double sigma = 1.0;

  void add(CLI::App* app, const std::string& default_init)
  {
    init = default_init;
    app->add_option("--scale-dim", scale_dim, "sub-kernel parameter count d")->capture_default_str();
    app->add_option("--alpha", alpha, "scale decay (concat mode)")->capture_default_str();
    app->add_option("--t", t, "position decay exponent (disentangled mode)")->capture_default_str();
    app->add_option("--mode", mode, "concat | disentangled")->capture_default_str();
    app->add_option("--init", init, "gaussian | cosine")->capture_default_str();
    app->add_option("--sigma", sigma, "gaussian init standard deviation")->capture_default_str();
  }

  KernelConfig config() const
  {
    KernelConfig k;
    k.scale_dim = scale_dim;
    k.decay_alpha = alpha;
    k.decay_t = t;
    k.mode = parse_kernel_mode(mode);
    k.init = parse_init_scheme(init);
    k.init_sigma = sigma;
    return k;
  }
};

struct ModelFlags
{
  std::size_t channels = 16;
  std::size_t depth = 2;
  std::string activation = "gelu";

  void add(CLI::App* app)
  {
    app->add_option("--channels", channels, "model width H")->capture_default_str();
    app->add_option("--depth", depth, "number of blocks")->capture_default_str();
    app->add_option("--activation", activation, "gelu | relu")->capture_default_str();
  }

  ModelConfig config(const TaskSpec& task, const KernelConfig& kernel) const
  {
    auto m = ModelConfig::for_task(task, channels, depth, kernel);
    m.activation = parse_activation(activation);
    m.validate();
    return m;
  }
};

struct TrainFlags
{
  TrainConfig cfg;
  std::string optimizer = "adam";

  TrainFlags()
  {
    cfg.batch_size = 16;
    cfg.learning_rate = 3e-3;
  }

  void add(CLI::App* app, std::size_t default_steps)
  {
    cfg.steps = default_steps;
    app->add_option("--steps", cfg.steps, "optimizer steps")->capture_default_str();
    app->add_option("--batch", cfg.batch_size, "batch size")->capture_default_str();
    app->add_option("--lr", cfg.learning_rate, "learning rate")->capture_default_str();
    app->add_option("--optimizer", optimizer, "adam | sgd")->capture_default_str();
    app->add_option("--beta1", cfg.beta1)->capture_default_str();
    app->add_option("--beta2", cfg.beta2)->capture_default_str();
    app->add_option("--adam-eps", cfg.adam_eps)->capture_default_str();
    app->add_option("--momentum", cfg.momentum, "sgd momentum")->capture_default_str();
    app->add_option("--clip", cfg.grad_clip, "global gradient-norm clip, 0 disables")->capture_default_str();
    app->add_option("--eval-every", cfg.eval_every, "steps between held-out evaluations")->capture_default_str();
    app->add_option("--eval-batches", cfg.eval_batches, "held-out batches per evaluation")->capture_default_str();
  }

  TrainConfig config(const GlobalFlags& g) const
  {
    TrainConfig c = cfg;
    c.optimizer = parse_optimizer(optimizer);
    c.seed = g.seed;
    c.threads = g.threads;
    c.validate();
    return c;
  }
};

std::string precision_or(const GlobalFlags& g, const std::string& fallback)
{
  const std::string p = g.precision.empty() ? fallback : g.precision;
  if (p != "f32" && p != "f64")
    throw std::invalid_argument("--precision must be f32 or f64");
  return p;
}

void emit(const GlobalFlags& g, const std::string& contents)
{
  if (g.out.empty())
    std::cout << contents;
  else
    write_file_atomic(g.out, contents);
}

std::string fmt(double v, int digits = 6)
{
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

// verify

struct VerifyFlags
{
  std::vector<std::string> filter;
  std::string fault;
};

template <typename T>
int run_verify_cmd(const GlobalFlags& g, const VerifyFlags& f)
{
  VerifyOptions opt;
  for (const auto& item : f.filter)
  {
    std::stringstream ss(item);
    std::string name;
    while (std::getline(ss, name, ','))
      if (!name.empty())
        opt.filter.push_back(name);
  }
  opt.seed = g.seed;
  if (!f.fault.empty())
  {
    if (f.fault != "adjoint")
      throw std::invalid_argument("unknown fault: " + f.fault);
    opt.corrupt_adjoint = true;
  }
  const auto suites = run_verify<T>(opt);
  nlohmann::json report = nlohmann::json::array();
  std::size_t failed = 0;
  for (const auto& s : suites)
  {
    std::size_t ok = 0;
    for (const auto& c : s.checks)
      ok += c.passed ? 1 : 0;
    std::cout << (s.passed() ? "PASS " : "FAIL ") << s.name << " (" << ok << "/" << s.checks.size() << " checks)\n";
    for (const auto& c : s.checks)
      if (!c.passed)
        std::cout << "  failed: " << c.name << " value=" << fmt(c.value) << " limit=" << fmt(c.limit) << "\n";
    failed += s.passed() ? 0 : 1;
    report.push_back(to_json(s));
  }
  std::cout << "verify: " << suites.size() - failed << " of " << suites.size() << " suites passed\n";
  if (!g.out.empty())
    write_file_atomic(g.out, report.dump(2) + "\n");
  return failed == 0 ? 0 : 1;
}

// bench

struct BenchFlags
{
  BenchOptions opt;
  std::string lengths;
};

template <typename T>
int run_bench_cmd(const GlobalFlags& g, BenchFlags f, const std::string& precision)
{
  if (!f.lengths.empty())
  {
    f.opt.lengths.clear();
    std::stringstream ss(f.lengths);
    std::string item;
    while (std::getline(ss, item, ','))
      f.opt.lengths.push_back(std::stoul(item));
  }
  f.opt.seed = g.seed;
  f.opt.threads = g.threads;
  f.opt.validate();
  const fs::path csv = g.out.empty() ? fs::path("bench.csv") : fs::path(g.out);
  auto json_path = csv;
  json_path.replace_extension(".json");
  std::cout << "impl,seq_len,median_ms,p10_ms,p90_ms,sampled_fraction\n";
  const auto records = run_bench<T>(f.opt, [](const BenchRecord& r) {
    std::cout << to_string(r.impl) << ',' << r.seq_len << ',' << fmt(r.median_ms) << ',' << fmt(r.p10_ms) << ','
              << fmt(r.p90_ms) << ',' << fmt(r.sampled_fraction, 4) << std::endl;
  });
  std::ostringstream os;
  write_bench_csv(os, records);
  write_file_atomic(csv, os.str());
  const auto summary = bench_summary_json(records, f.opt, precision);
  write_file_atomic(json_path, summary.dump(2) + "\n");
  for (const auto& [name, entry] : summary["impls"].items())
    std::cout << "slope " << name << " = " << (entry["slope"].is_null() ? "n/a" : fmt(entry["slope"].template get<double>(), 4))
              << "\n";
  std::cout << "wrote " << csv.string() << " and " << json_path.string() << "\n";
  return 0;
}

// dump-kernel

template <typename T>
int run_dump_kernel(const GlobalFlags& g, const KernelFlags& kf, std::size_t len, std::size_t channels)
{
  KernelConfig c = kf.config();
  c.seq_len = len;
  c.channels = channels;
  c.seed = g.seed;
  c.validate();
  const auto kernel = init_kernel_state<T>(c).materialize();
  std::ostringstream os;
  write_kernel_csv(os, kernel);
  emit(g, os.str());
  return 0;
}

// train / eval

struct RunFlags
{
  std::string resume;
};

template <typename T>
int run_train_cmd(const GlobalFlags& g, TaskFlags tf, const KernelFlags& kf, const ModelFlags& mf, const TrainFlags& trf,
                  const RunFlags& rf)
{
  const fs::path dir = g.out.empty() ? fs::path("runs/train") : fs::path(g.out);
  std::optional<ModelState<T>> initial;
  if (!rf.resume.empty())
  {
    std::istringstream is(read_file(rf.resume));
    initial = load_checkpoint<T>(is);
    if (tf.len_opt->count() == 0)
      tf.len = initial->config.seq_len;
  }
  const TaskSpec task = tf.spec(g.seed);
  const ModelConfig model = initial ? initial->config : mf.config(task, kf.config());
  require(model.seq_len == task.seq_len, "checkpoint sequence length does not match --len");
  require(model.output_dim == task.output_dim() && model.vocab_size == (task.uses_tokens() ? task.vocab_size() : 0),
          "checkpoint was trained on a different task shape");
  const TrainConfig tc = trf.config(g);

  std::cout << "task " << to_string(task.kind) << " L=" << task.seq_len << " H=" << model.channels
            << " depth=" << model.depth << " params=" << ParamLayout(model).param_count << "\n";
  std::ostringstream log;
  const auto result = train<T>(task, model, tc, initial ? &*initial : nullptr, [&](const LogEntry& e) {
    log << to_json(e).dump() << "\n";
    std::cout << "step " << e.step << " loss " << fmt(e.loss, 5) << " acc " << fmt(e.acc, 4) << std::endl;
  });
  write_file_atomic(dir / "log.jsonl", log.str());
  std::ostringstream ckpt;
  save_checkpoint(ckpt, result.state);
  write_file_atomic(dir / "model.ckpt", ckpt.str());
  std::cout << "final acc " << fmt(result.log.back().acc, 4) << "; wrote " << (dir / "log.jsonl").string() << " and "
            << (dir / "model.ckpt").string() << "\n";
  return 0;
}

template <typename T>
int run_eval_cmd(const GlobalFlags& g, TaskFlags tf, const std::string& checkpoint, std::size_t batch_size,
                 std::uint64_t index)
{
  std::istringstream is(read_file(checkpoint));
  const auto state = load_checkpoint<T>(is);
  if (tf.len_opt->count() == 0)
    tf.len = state.config.seq_len;
  const TaskSpec task = tf.spec(g.seed);
  const auto batch = gen_batch(task, batch_size, index);
  const auto logits = classifier_forward(state, batch, nullptr, g.threads);
  const auto m = batch_metrics<T>(state.config, logits, batch);
  nlohmann::json out{{"loss", m.loss}, {"accuracy", m.accuracy}, {"logits", logits}};
  emit(g, out.dump() + "\n");
  return 0;
}

// ablate

struct AblateFlags
{
  std::vector<double> t_values{0.0, 0.5, 1.0, 2.0};
  std::size_t t_sweep_d = 8;
  std::vector<std::size_t> d_values{1, 8, 64};
  double d_sweep_t = 1.0;
  std::size_t seeds = 1;
};

template <typename T>
int run_ablate_cmd(const GlobalFlags& g, const TaskFlags& tf, const KernelFlags& kf, const ModelFlags& mf,
                   const TrainFlags& trf, const AblateFlags& af)
{
  require(af.seeds >= 1, "--seeds must be >= 1");
  const fs::path dir = g.out.empty() ? fs::path("runs/ablate") : fs::path(g.out);
  const TaskSpec task = tf.spec(g.seed);
  KernelConfig kernel = kf.config();
  kernel.mode = KernelMode::disentangled;
  const ModelConfig base = mf.config(task, kernel);
  const TrainConfig tc = trf.config(g);
  std::vector<std::pair<double, std::size_t>> grid;
  for (double t : af.t_values)
    grid.emplace_back(t, af.t_sweep_d);
  for (std::size_t d : af.d_values)
    grid.emplace_back(af.d_sweep_t, d);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < af.seeds; ++i)
    seeds.push_back(g.seed + i);

  std::cout << "t,d,accuracy,seed\n";
  const auto rows = ablate_decay<T>(task, base, grid, tc, seeds, [](const AblationRow& r) {
    std::cout << fmt(r.t) << ',' << r.d << ',' << fmt(r.accuracy, 6) << ',' << r.seed << std::endl;
  });

  std::ostringstream csv;
  csv << "t,d,accuracy,seed\n";
  for (const auto& r : rows)
    csv << fmt(r.t) << ',' << r.d << ',' << fmt(r.accuracy, 9) << ',' << r.seed << '\n';
  write_file_atomic(dir / "ablation.csv", csv.str());

  std::ostringstream summary;
  summary << "sweep,t,d,mean_accuracy,seeds\n";
  std::cout << "\nsweep  t     d    mean_accuracy\n";
  for (std::size_t gi = 0; gi < grid.size(); ++gi)
  {
    const auto [t, d] = grid[gi];
    std::map<std::uint64_t, double> by_seed;
    for (const auto& r : rows)
      if (r.t == t && r.d == d)
        by_seed[r.seed] = r.accuracy;
    double sum = 0.0;
    for (const auto& [seed, acc] : by_seed)
      sum += acc;
    const std::size_t n = by_seed.size();
    const char* sweep = gi < af.t_values.size() ? "t" : "d";
    summary << sweep << ',' << fmt(t) << ',' << d << ',' << fmt(sum / static_cast<double>(n), 9) << ',' << n << '\n';
    std::cout << std::left << std::setw(7) << sweep << std::setw(6) << fmt(t) << std::setw(5) << d
              << fmt(sum / static_cast<double>(n), 4) << "\n";
  }
  write_file_atomic(dir / "ablation_summary.csv", summary.str());
  std::cout << "wrote " << (dir / "ablation.csv").string() << " and " << (dir / "ablation_summary.csv").string() << "\n";
  return 0;
}

// config file merging

std::string option_name(std::string key)
{
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

bool given_on_command_line(const std::vector<std::string>& args, const std::string& name)
{
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == name || a.rfind(name + "=", 0) == 0; });
}

/// Appends `--key=value` for every config entry the command line does not set.
/// Keys that belong to a different subcommand are ignored; unknown keys are errors.
std::vector<std::string> merge_config(CLI::App& app, std::vector<std::string> args)
{
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i)
  {
    if (args[i] == "--config" && i + 1 < args.size())
      path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      path = args[i].substr(9);
  }
  if (path.empty())
    return args;
  CLI::App* active = nullptr;
  for (const auto& a : args)
    if (auto* sub = app.get_subcommand_no_throw(a))
    {
      active = sub;
      break;
    }
  for (const auto& [key, value] : parse_config_text(read_file(path)))
  {
    const std::string name = option_name(key);
    if (name == "--config")
      throw std::invalid_argument("config file cannot name another config file");
    if (given_on_command_line(args, name))
      continue;
    const bool here = app.get_option_no_throw(name) != nullptr || (active && active->get_option_no_throw(name) != nullptr);
    if (!here)
    {
      bool elsewhere = false;
      for (const auto* sub : app.get_subcommands([](CLI::App*) { return true; }))
        elsewhere = elsewhere || sub->get_option_no_throw(name) != nullptr;
      if (!elsewhere)
        throw std::invalid_argument("unknown config key: " + key);
      continue;
    }
    args.push_back(name + "=" + value);
  }
  return args;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Structured global convolution toolkit", "sgconv"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalFlags g;
  app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--out", g.out, "output file or directory");
  app.add_option("--precision", g.precision, "f32 | f64 (verify/train default f64, bench default f32)");
  app.add_option("--config", g.config, "file of `key = value` lines; command-line flags win");
  app.add_option("--threads", g.threads, "worker threads")->capture_default_str();

  auto* verify = app.add_subcommand("verify", "run the invariant suites");
  VerifyFlags vf;
  verify->add_option("--filter", vf.filter, "suites to run (comma separated)");
  verify->add_option("--inject-fault", vf.fault, "mutation test: adjoint")->group("");

  auto* bench = app.add_subcommand("bench", "time direct, FFT and attention baselines across lengths");
  BenchFlags bf;
  bench->add_option("--lengths", bf.lengths, "comma-separated ascending lengths (default 256..16384)");
  bench->add_option("--channels", bf.opt.channels)->capture_default_str();
  bench->add_option("--batch", bf.opt.batch)->capture_default_str();
  bench->add_option("--reps", bf.opt.reps, "timed repetitions (>= 5)")->capture_default_str();
  bench->add_option("--warmup", bf.opt.warmup)->capture_default_str();
  bench->add_option("--direct-cap", bf.opt.direct_cap, "skip direct convolution above this length")->capture_default_str();
  bench->add_option("--work-cap", bf.opt.work_cap, "multiply-adds per repetition before sampling")->capture_default_str();
  bench->add_option("--fit-min-len", bf.opt.fit_min_len, "shortest length in the slope fit")->capture_default_str();

  auto* dump = app.add_subcommand("dump-kernel", "write a freshly initialized kernel as CSV");
  KernelFlags dkf;
  dkf.add(dump, "gaussian");
  std::size_t dump_len = 1024, dump_channels = 1;
  dump->add_option("--len", dump_len, "kernel length L")->capture_default_str();
  dump->add_option("--channels", dump_channels)->capture_default_str();

  auto* trn = app.add_subcommand("train", "train a classifier on a synthetic task");
  TaskFlags ttf;
  KernelFlags tkf;
  ModelFlags tmf;
  TrainFlags ttrf;
  RunFlags rf;
  ttf.add(trn);
  tkf.add(trn, "cosine");
  tmf.add(trn);
  ttrf.add(trn, 2000);
  trn->add_option("--resume", rf.resume, "continue from a checkpoint (optimizer state restarts)");

  auto* ev = app.add_subcommand("eval", "print logits of a checkpoint on a generated batch");
  TaskFlags etf;
  std::string eval_ckpt;
  std::size_t eval_batch = 8;
  std::uint64_t eval_index = 0;
  etf.add(ev);
  ev->add_option("--checkpoint", eval_ckpt)->required();
  ev->add_option("--batch", eval_batch)->capture_default_str();
  ev->add_option("--index", eval_index, "batch index in the task stream")->capture_default_str();

  auto* abl = app.add_subcommand("ablate", "decay-speed and scale-dimension sweeps in disentangled mode");
  TaskFlags atf;
  KernelFlags akf;
  ModelFlags amf;
  TrainFlags atrf;
  AblateFlags af;
  atf.len = 256;
  atf.add(abl);
  akf.add(abl, "cosine");
  amf.add(abl);
  atrf.add(abl, 1500);
  abl->add_option("--t-values", af.t_values, "t sweep")->delimiter(',')->capture_default_str();
  abl->add_option("--t-sweep-d", af.t_sweep_d, "d held fixed in the t sweep")->capture_default_str();
  abl->add_option("--d-values", af.d_values, "d sweep")->delimiter(',')->capture_default_str();
  abl->add_option("--d-sweep-t", af.d_sweep_t, "t held fixed in the d sweep")->capture_default_str();
  abl->add_option("--seeds", af.seeds, "seeds per grid point")->capture_default_str();

  auto* data = app.add_subcommand("dump-data", "write generated samples as JSON lines");
  TaskFlags dtf;
  std::size_t data_count = 16;
  std::uint64_t data_index = 0;
  dtf.add(data);
  data->add_option("--count", data_count)->capture_default_str();
  data->add_option("--index", data_index, "batch index in the task stream")->capture_default_str();

  try
  {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = merge_config(app, std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  }
  catch (const CLI::ParseError& e)
  {
    return app.exit(e);
  }
  catch (const std::exception& e)
  {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try
  {
    const auto dispatch = [&](const std::string& precision, auto&& fn) {
      return precision == "f32" ? fn(float{}) : fn(double{});
    };
    if (*verify)
      return dispatch(precision_or(g, "f64"), [&](auto tag) { return run_verify_cmd<decltype(tag)>(g, vf); });
    if (*bench)
    {
      const auto p = precision_or(g, "f32");
      return dispatch(p, [&](auto tag) { return run_bench_cmd<decltype(tag)>(g, bf, p); });
    }
    if (*dump)
      return dispatch(precision_or(g, "f64"),
                      [&](auto tag) { return run_dump_kernel<decltype(tag)>(g, dkf, dump_len, dump_channels); });
    if (*trn)
      return dispatch(precision_or(g, "f64"),
                      [&](auto tag) { return run_train_cmd<decltype(tag)>(g, ttf, tkf, tmf, ttrf, rf); });
    if (*ev)
      return dispatch(precision_or(g, "f64"),
                      [&](auto tag) { return run_eval_cmd<decltype(tag)>(g, etf, eval_ckpt, eval_batch, eval_index); });
    if (*abl)
      return dispatch(precision_or(g, "f64"),
                      [&](auto tag) { return run_ablate_cmd<decltype(tag)>(g, atf, akf, amf, atrf, af); });
    if (*data)
    {
      const auto task = dtf.spec(g.seed);
      std::ostringstream os;
      write_dataset_jsonl(os, gen_batch(task, data_count, data_index));
      emit(g, os.str());
      return 0;
    }
  }
  catch (const DivergenceError& e)
  {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  catch (const std::exception& e)
  {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
