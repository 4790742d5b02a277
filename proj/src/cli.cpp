#include "ergodic/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "ergodic/baselines.hpp"
#include "ergodic/demos.hpp"
#include "ergodic/ergodic_mpc.hpp"
#include "ergodic/errors.hpp"
#include "ergodic/metrics.hpp"
#include "ergodic/service.hpp"
#include "ergodic/task_learning.hpp"

namespace ergodic::cli
{
namespace fs = std::filesystem;

namespace
{
/// Runtime failure reported with exit code 2.
class CommandError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

const std::vector<std::string> kSystems{"cartpole", "planar"};
const std::vector<std::string> kScenarios{"reach", "clean"};
const std::vector<std::string> kModes{"posonly", "negonly", "posneg"};

std::string num(double v)
{
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<fs::path> files_with_suffix(const fs::path& dir, std::string_view suffix)
{
  if (!fs::is_directory(dir))
  {
    throw CommandError("not a directory: " + dir.string());
  }
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
  {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.size() > suffix.size() && name.ends_with(suffix))
    {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------

struct SynthArgs
{
  std::string system;
  std::string task = "reach";
  int pos = 3;
  int neg = 3;
  std::uint64_t seed = 1;
  double duration = 30.0;
  double noise = 0.5;
  std::string out;
};

void synth(const SynthArgs& a, std::ostream& out)
{
  SynthRequest rq;
  rq.system = system_from_string(a.system);
  rq.task = planar_task_from_string(a.task);
  rq.positives = a.pos;
  rq.negatives = a.neg;
  rq.seed = a.seed;
  rq.cartpole_duration = a.duration;
  rq.expert_noise = a.noise;
  DemoSet set;
  try
  {
    set = synthesize(rq);
  }
  catch (const GenerationError& e)
  {
    throw CommandError(std::string(e.what()) + " while synthesizing with --seed " + std::to_string(a.seed));
  }
  save_demos(a.out, set);
  out << "wrote " << set.demos.size() << " demos (" << set.count(Label::positive) << " positive, "
      << set.count(Label::negative) << " negative) to " << a.out << "\n";
}

// ---------------------------------------------------------------------------

struct LearnArgs
{
  std::string demos;
  std::string mode;
  int order = 10;
  double beta = 0.5;
  double gamma = 0.5;
  std::string out;
  std::string grid;
  int res = 64;
  bool no_clip = false;
};

void write_grid_csv(const fs::path& path, const DensityGrid& grid)
{
  std::ofstream f(path, std::ios::binary);
  if (!f)
  {
    throw CommandError("cannot write " + path.string());
  }
  f << "x0,x1,density\n";
  for (std::size_t i = 0; i < grid.values.size(); ++i)
  {
    const auto c = grid.cell_center(i);
    f << num(c[0]) << ',' << num(c[1]) << ',' << num(grid.values[i]) << '\n';
  }
}

void learn(const LearnArgs& a, std::ostream& out)
{
  const DemoSet set = load_demos(a.demos);
  FusionConfig cfg;
  cfg.order = a.order;
  cfg.beta = a.beta;
  cfg.gamma = a.gamma;
  const TaskDefinition task = learn_task(set, mode_from_string(a.mode), cfg);
  save_task(a.out, task);
  out << "learned " << a.mode << " task (K=" << a.order << ") from " << set.demos.size() << " demos -> " << a.out
      << "\n";
  if (!a.grid.empty())
  {
    if (task.domain.dim() != 2)
    {
      throw CommandError("density grids are written for 2-D tasks only");
    }
    write_grid_csv(a.grid, reconstruct_density(task.phi, task.domain, static_cast<std::size_t>(a.res), !a.no_clip));
    out << "density grid " << a.res << "x" << a.res << " -> " << a.grid << "\n";
  }
}

// ---------------------------------------------------------------------------

struct RolloutArgs
{
  std::string task;
  std::string system;
  std::string scenario = "reach";
  int trials = 1;
  std::uint64_t seed = 0;
  double duration = 30.0;
  std::optional<double> noise;
  std::optional<double> q;
  std::optional<double> horizon;
  std::optional<double> sample_time;
  std::optional<int> iters;
  std::optional<double> barrier_weight;
  std::string memory;
  std::string mode;
  std::string true_task;
  std::string out;
  unsigned jobs = 0;
};

std::string trial_name(int i)
{
  char buf[32];
  std::snprintf(buf, sizeof(buf), "trial_%03d", i);
  return buf;
}

void rollout(const RolloutArgs& a, std::ostream& out)
{
  const TaskDefinition task = load_task(a.task);
  const SystemKind kind = system_from_string(a.system);
  const PlanarTask scenario = planar_task_from_string(a.scenario);
  const auto sys = make_system(kind);
  if (task.projection != sys->ergodic_projection() || task.domain.dim() != sys->ergodic_domain().dim())
  {
    throw CommandError("task projection does not fit the " + a.system + " system");
  }
  MpcConfig cfg = default_mpc_config(*sys);
  cfg.order = task.order();
  if (a.q) cfg.q = *a.q;
  if (a.horizon) cfg.horizon = *a.horizon;
  if (a.sample_time) cfg.sample_time = *a.sample_time;
  if (a.iters) cfg.max_iters = *a.iters;
  if (a.barrier_weight) cfg.barrier_weight = *a.barrier_weight;
  if (!a.memory.empty()) cfg.memory = memory_from_string(a.memory);
  cfg.validate(*sys);

  std::optional<TaskDefinition> truth;
  if (!a.true_task.empty())
  {
    truth = load_task(a.true_task);
  }
  const double noise = a.noise.value_or(kind == SystemKind::cartpole ? 0.5 : 0.0);
  const std::string mode = a.mode.empty() ? std::string(to_string(task.mode)) : a.mode;

  std::vector<RolloutResult> results(static_cast<std::size_t>(a.trials));
  auto one = [&](int i) {
    RolloutOptions opt;
    opt.seed = a.seed + static_cast<std::uint64_t>(i);
    opt.control_noise = noise;
    const Eigen::VectorXd x0 =
        kind == SystemKind::cartpole ? sys->rest_state() : planar_start(planar_scenario(scenario), opt.seed);
    results[static_cast<std::size_t>(i)] = run_closed_loop(sys, task, cfg, x0, a.duration, opt);
  };
  const unsigned jobs =
      std::min<unsigned>(static_cast<unsigned>(a.trials), a.jobs > 0 ? a.jobs : std::max(1u, std::thread::hardware_concurrency()));
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (unsigned j = 0; j < jobs; ++j)
  {
    pool.emplace_back([&] {
      for (int i = next++; i < a.trials; i = next++)
      {
        one(i);
      }
    });
  }
  for (auto& t : pool)
  {
    t.join();
  }

  fs::create_directories(a.out);
  std::vector<MetricsRow> rows;
  for (int i = 0; i < a.trials; ++i)
  {
    const RolloutResult& r = results[static_cast<std::size_t>(i)];
    if (r.failed)
    {
      throw CommandError(trial_name(i) + " failed: " + r.error);
    }
    write_rollout_csv(fs::path(a.out) / (trial_name(i) + ".rollout.csv"), r);
    rows.push_back(score_rollout(r.traj, kind, scenario, truth ? &*truth : nullptr, trial_name(i), mode));
  }
  write_metrics_csv(fs::path(a.out) / "rollouts.metrics.csv", rows);
  out << "wrote " << a.trials << " rollouts and rollouts.metrics.csv to " << a.out << "\n";
}

// ---------------------------------------------------------------------------

struct EvalArgs
{
  std::string rollouts;
  std::string system;
  std::string scenario = "reach";
  std::string true_task;
  std::string mode;
  std::string out;
};

void eval(const EvalArgs& a, std::ostream& out)
{
  const auto files = files_with_suffix(a.rollouts, ".rollout.csv");
  if (files.empty())
  {
    throw CommandError("no .rollout.csv files in " + a.rollouts);
  }
  const SystemKind kind = system_from_string(a.system);
  const PlanarTask scenario = planar_task_from_string(a.scenario);
  std::optional<TaskDefinition> truth;
  if (!a.true_task.empty())
  {
    truth = load_task(a.true_task);
  }
  const std::string mode = a.mode.empty() ? fs::path(a.rollouts).lexically_normal().filename().string() : a.mode;
  std::vector<MetricsRow> rows;
  for (const auto& f : files)
  {
    const RolloutRecord rec = read_rollout_csv(f);
    std::string id = f.filename().string();
    id.resize(id.size() - std::string_view(".rollout.csv").size());
    rows.push_back(score_rollout(rec.traj, kind, scenario, truth ? &*truth : nullptr, id, mode));
  }
  const fs::path target = a.out.empty() ? fs::path(a.rollouts) / "eval.metrics.csv" : fs::path(a.out);
  write_metrics_csv(target, rows);
  out << "scored " << rows.size() << " rollouts -> " << target.string() << "\n";
}

// ---------------------------------------------------------------------------

struct CompareArgs
{
  std::vector<std::string> dirs;
  std::string out;
};

double median(std::vector<double> v)
{
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v)
{
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

void compare(const CompareArgs& a, std::ostream& out)
{
  std::vector<std::string> order;
  std::map<std::string, std::vector<MetricsRow>> by_mode;
  for (const auto& dir : a.dirs)
  {
    for (const auto& f : files_with_suffix(dir, ".metrics.csv"))
    {
      for (auto& row : read_metrics_csv(f))
      {
        if (!by_mode.count(row.mode))
        {
          order.push_back(row.mode);
        }
        by_mode[row.mode].push_back(std::move(row));
      }
    }
  }
  if (order.empty())
  {
    throw CommandError("no metrics rows found in the given directories");
  }

  std::ostringstream table;
  table << "mode,n,success_rate,median_success_time,mean_success_time,median_m,mean_m,reach_rate,median_eps_true\n";
  for (const auto& mode : order)
  {
    const auto& rows = by_mode[mode];
    std::vector<double> success, m, eps;
    int reached = 0, reach_rows = 0, succeeded = 0;
    for (const auto& r : rows)
    {
      if (r.success_time)
      {
        success.push_back(*r.success_time);
        succeeded += *r.success_time > 0.0 ? 1 : 0;
      }
      if (r.cleaning_m) m.push_back(*r.cleaning_m);
      if (r.eps_true) eps.push_back(*r.eps_true);
      if (r.reach)
      {
        ++reach_rows;
        reached += *r.reach ? 1 : 0;
      }
    }
    auto cell = [](bool have, double v) { return have ? num(v) : std::string(); };
    table << mode << ',' << rows.size() << ','
          << cell(!success.empty(), success.empty() ? 0.0 : static_cast<double>(succeeded) / success.size()) << ','
          << cell(!success.empty(), success.empty() ? 0.0 : median(success)) << ','
          << cell(!success.empty(), success.empty() ? 0.0 : mean(success)) << ','
          << cell(!m.empty(), m.empty() ? 0.0 : median(m)) << ',' << cell(!m.empty(), m.empty() ? 0.0 : mean(m)) << ','
          << cell(reach_rows > 0, reach_rows > 0 ? static_cast<double>(reached) / reach_rows : 0.0) << ','
          << cell(!eps.empty(), eps.empty() ? 0.0 : median(eps)) << '\n';
  }
  out << table.str();
  if (!a.out.empty())
  {
    std::ofstream f(a.out, std::ios::binary);
    if (!f)
    {
      throw CommandError("cannot write " + a.out);
    }
    f << table.str();
  }
}

// ---------------------------------------------------------------------------

struct ServeArgs
{
  std::string host = "127.0.0.1";
  int port = -1;  // unset: ERGO_PORT or the default
  double tick_hz = 0.0;
  std::string cors;
  unsigned threads = 2;
};

void serve(const ServeArgs& a, std::ostream& out)
{
  service::ServiceConfig cfg = service::ServiceConfig::from_env(service::ServiceConfig{});
  cfg.host = a.host;
  cfg.threads = a.threads;
  if (a.port >= 0) cfg.port = static_cast<unsigned short>(a.port);
  if (a.tick_hz > 0.0) cfg.tick_hz = a.tick_hz;
  if (!a.cors.empty())
  {
    cfg.cors_origins.clear();
    std::stringstream ss(a.cors);
    for (std::string o; std::getline(ss, o, ',');)
    {
      if (!o.empty()) cfg.cors_origins.push_back(o);
    }
  }
  auto svc = std::make_shared<service::Service>(cfg);
  service::Server server(svc);
  const unsigned short port = server.start();
  out << "listening on http://" << cfg.host << ":" << port << " (tick " << cfg.tick_hz << " Hz)" << std::endl;
  server.wait();
  out << "stopped" << std::endl;
}
}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
  CLI::App app{"Learn spatial task distributions from demonstrations and reproduce them with ergodic MPC.", "ergo"};
  app.set_config("--config", "", "key=value configuration file");
  app.require_subcommand(1);

  SynthArgs sa;
  auto* s = app.add_subcommand("synth", "Write synthetic positive/negative demonstrations");
  s->add_option("--system", sa.system, "cartpole or planar")->required()->check(CLI::IsMember(kSystems));
  s->add_option("--task", sa.task, "planar task")->check(CLI::IsMember(kScenarios))->capture_default_str();
  s->add_option("--pos", sa.pos, "positive demos")->check(CLI::NonNegativeNumber)->capture_default_str();
  s->add_option("--neg", sa.neg, "negative demos")->check(CLI::NonNegativeNumber)->capture_default_str();
  s->add_option("--seed", sa.seed, "base seed")->capture_default_str();
  s->add_option("--duration", sa.duration, "cart-pole demo length, s")->check(CLI::Range(10.0, 3600.0))->capture_default_str();
  s->add_option("--noise", sa.noise, "expert control noise")->check(CLI::NonNegativeNumber)->capture_default_str();
  s->add_option("-o,--out", sa.out, ".demos.jsonl output")->required();

  LearnArgs la;
  auto* l = app.add_subcommand("learn", "Fuse demonstrations into a task definition");
  l->add_option("--demos", la.demos, ".demos.jsonl input")->required()->check(CLI::ExistingFile);
  l->add_option("--mode", la.mode, "posonly, negonly or posneg")->required()->check(CLI::IsMember(kModes));
  l->add_option("-K,--order", la.order, "coefficients per dimension minus one")->check(CLI::Range(0, 40))->capture_default_str();
  l->add_option("--beta", la.beta, "negative share in posneg")->check(CLI::NonNegativeNumber)->capture_default_str();
  l->add_option("--gamma", la.gamma, "negative share in negonly")->check(CLI::NonNegativeNumber)->capture_default_str();
  l->add_option("-o,--out", la.out, ".task.json output")->required();
  l->add_option("--grid", la.grid, "also write the density grid as CSV");
  l->add_option("--res", la.res, "grid cells per axis")->check(CLI::Range(2, 1024))->capture_default_str();
  l->add_flag("--no-clip", la.no_clip, "keep negative density values");

  RolloutArgs ra;
  auto* r = app.add_subcommand("rollout", "Run closed-loop ergodic MPC trials");
  r->add_option("--task", ra.task, ".task.json input")->required()->check(CLI::ExistingFile);
  r->add_option("--system", ra.system, "cartpole or planar")->required()->check(CLI::IsMember(kSystems));
  r->add_option("--scenario", ra.scenario, "planar starts and metrics")->check(CLI::IsMember(kScenarios))->capture_default_str();
  r->add_option("--trials", ra.trials, "number of rollouts")->check(CLI::PositiveNumber)->capture_default_str();
  r->add_option("--seed", ra.seed, "trial i uses seed + i")->capture_default_str();
  r->add_option("--duration", ra.duration, "seconds per rollout")->check(CLI::PositiveNumber)->capture_default_str();
  r->add_option("--noise", ra.noise, "actuation noise std (default 0.5 cart-pole, 0 planar)")->check(CLI::NonNegativeNumber);
  r->add_option("--q", ra.q, "ergodic weight")->check(CLI::PositiveNumber);
  r->add_option("--horizon", ra.horizon, "planning horizon, s")->check(CLI::PositiveNumber);
  r->add_option("--sample-time", ra.sample_time, "replanning period, s")->check(CLI::PositiveNumber);
  r->add_option("--iters", ra.iters, "descent iterations per replan")->check(CLI::NonNegativeNumber);
  r->add_option("--barrier-weight", ra.barrier_weight, "soft state-box weight")->check(CLI::NonNegativeNumber);
  r->add_option("--memory", ra.memory, "full_history or horizon_only")->check(CLI::IsMember({"full_history", "horizon_only"}));
  r->add_option("--mode", ra.mode, "mode label in the metrics file (default: the task's)");
  r->add_option("--true-task", ra.true_task, "task file for eps_true")->check(CLI::ExistingFile);
  r->add_option("-o,--out", ra.out, "output directory")->required();
  r->add_option("-j,--jobs", ra.jobs, "parallel trials (default: all cores)");

  EvalArgs ea;
  auto* e = app.add_subcommand("eval", "Score saved rollouts");
  e->add_option("--rollouts", ea.rollouts, "directory of .rollout.csv files")->required();
  e->add_option("--system", ea.system, "cartpole or planar")->required()->check(CLI::IsMember(kSystems));
  e->add_option("--scenario", ea.scenario, "planar metrics")->check(CLI::IsMember(kScenarios))->capture_default_str();
  e->add_option("--true-task", ea.true_task, "task file for eps_true")->check(CLI::ExistingFile);
  e->add_option("--mode", ea.mode, "mode label (default: directory name)");
  e->add_option("-o,--out", ea.out, "metrics CSV (default: <rollouts>/eval.metrics.csv)");

  CompareArgs ca;
  auto* c = app.add_subcommand("compare", "Summarize metrics per mode");
  c->add_option("dirs", ca.dirs, "directories holding .metrics.csv files")->required();
  c->add_option("-o,--out", ca.out, "summary CSV");

  ServeArgs va;
  auto* v = app.add_subcommand("serve", "Start the HTTP + WebSocket service");
  v->add_option("--host", va.host, "bind address")->capture_default_str();
  v->add_option("--port", va.port, "port; 0 picks a free one (default ERGO_PORT or 8753)")->check(CLI::Range(0, 65535));
  v->add_option("--tick-hz", va.tick_hz, "live sim rate (default ERGO_TICK_HZ or 50)")->check(CLI::PositiveNumber);
  v->add_option("--cors", va.cors, "comma-separated allowed origins (default ERGO_CORS)");
  v->add_option("--threads", va.threads, "I/O threads")->check(CLI::PositiveNumber)->capture_default_str();

  std::vector<std::string> storage{"ergo"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : storage)
  {
    argv.push_back(a.c_str());
  }
  try
  {
    app.parse(static_cast<int>(argv.size()), argv.data());
  }
  catch (const CLI::ParseError& ex)
  {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try
  {
    if (s->parsed()) synth(sa, out);
    else if (l->parsed()) learn(la, out);
    else if (r->parsed()) rollout(ra, out);
    else if (e->parsed()) eval(ea, out);
    else if (c->parsed()) compare(ca, out);
    else if (v->parsed()) serve(va, out);
  }
  catch (const std::exception& ex)
  {
    err << "ergo: " << ex.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace ergodic::cli
