#include "ergodic/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

namespace ergodic
{
namespace
{
constexpr double kPi = std::numbers::pi;
constexpr double kSamplePeriod = 0.02;
constexpr double kIntegrationDt = 0.002;

double sgn_nonzero(double v)
{
  return v < 0.0 ? -1.0 : 1.0;
}
}  // namespace

// ---------------------------------------------------------------------------
// Cart-pole expert

UprightRegulator upright_regulator(const CartPoleParams& params, double period)
{
  // theta_ddot = (g/l) theta - u/l about theta = 0.
  Eigen::Matrix3d aug = Eigen::Matrix3d::Zero();
  aug(0, 1) = 1.0;
  aug(1, 0) = params.gravity / params.pole_length;
  aug(1, 2) = -1.0 / params.pole_length;
  const Eigen::Matrix3d phi = (aug * period).exp();
  const Eigen::Matrix2d a = phi.topLeftCorner<2, 2>();
  const Eigen::Vector2d b = phi.topRightCorner<2, 1>();

  const Eigen::Matrix2d q = Eigen::Vector2d(10.0, 1.0).asDiagonal();
  const double r = 0.05;
  Eigen::Matrix2d p = q;
  for (int it = 0; it < 10000; ++it)
  {
    const double s = r + b.dot(p * b);
    const Eigen::RowVector2d k = (b.transpose() * p * a) / s;
    const Eigen::Matrix2d next = q + a.transpose() * p * a - (a.transpose() * p * b) * k;
    const double change = (next - p).cwiseAbs().maxCoeff();
    p = next;
    if (change < 1e-12 * (1.0 + p.cwiseAbs().maxCoeff()))
    {
      break;
    }
  }
  UprightRegulator reg;
  reg.period = period;
  reg.gain = (b.transpose() * p * a) / (r + b.dot(p * b));
  reg.a_closed = a - b * reg.gain;
  return reg;
}

namespace
{
std::optional<Demonstration> try_expert(const CartPole& sys, const UprightRegulator& reg, double duration,
                                        double noise_scale, std::uint64_t seed, const std::string& id,
                                        const ExpertOptions& options)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double e_top = sys.params().gravity * sys.params().pole_length;
  const auto substeps = static_cast<int>(std::llround(options.control_period / kIntegrationDt));
  const auto ticks = static_cast<long>(std::llround(duration / options.control_period));

  DemoRecorder rec(SystemKind::cartpole, 4);
  Eigen::VectorXd x = sys.rest_state();
  Eigen::VectorXd u(1);
  rec.push(0.0, x);
  for (long i = 0; i < ticks; ++i)
  {
    const double theta = x[0];
    const double theta_dot = x[1];
    double cmd = 0.0;
    if (std::abs(theta) < options.catch_angle)
    {
      cmd = -reg.gain.dot(Eigen::Vector2d(theta, theta_dot));
    }
    else
    {
      cmd = options.energy_gain * (sys.energy(x) - e_top) * sgn_nonzero(theta_dot * std::cos(theta));
    }
    if (noise_scale > 0.0)
    {
      cmd += noise_scale * noise(rng);
    }
    u[0] = cmd;
    for (int s = 0; s < substeps; ++s)
    {
      x = step_rk4(sys, x, u, kIntegrationDt);
    }
    rec.push(static_cast<double>(i + 1) * options.control_period, x);
  }
  Demonstration demo = rec.finalize(id, Label::positive, Source::synthetic);
  demo.seed = seed;
  if (cartpole_success(demo.samples).total_success_time <= 0.5 * duration - 5.0)
  {
    return std::nullopt;
  }
  return demo;
}
}  // namespace

Demonstration expert_cartpole(double duration, double noise_scale, std::uint64_t seed, std::string id,
                              const ExpertOptions& options)
{
  if (!(duration >= 10.0))
  {
    throw std::invalid_argument("expert demos need at least 10 s");
  }
  if (!(noise_scale >= 0.0))
  {
    throw std::invalid_argument("noise scale must be non-negative");
  }
  const CartPole sys;
  const UprightRegulator reg = upright_regulator(sys.params(), options.control_period);
  const int attempts = noise_scale > 0.0 ? 4 : 1;
  for (int attempt = 0; attempt < attempts; ++attempt)
  {
    if (auto demo = try_expert(sys, reg, duration, noise_scale, seed + static_cast<std::uint64_t>(attempt) * 7919, id,
                               options))
    {
      return std::move(*demo);
    }
  }
  throw GenerationError("expert swing-up failed to stabilize (seed " + std::to_string(seed) + ")");
}

Demonstration negative_cartpole(double duration, std::uint64_t seed, std::string id)
{
  if (!(duration >= 10.0))
  {
    throw std::invalid_argument("negative demos need at least 10 s");
  }
  const CartPole sys;
  const double g = sys.params().gravity * sys.params().pole_length;
  for (int attempt = 0; attempt < 5; ++attempt)
  {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(attempt) * 104729);
    std::uniform_real_distribution<double> amplitude(0.4, 1.6);  // swing about rest, rad
    std::uniform_real_distribution<double> hold(2.0, 5.0);
    std::uniform_real_distribution<double> gain(0.3, 1.0);
    std::normal_distribution<double> noise(0.0, 0.8);

    DemoRecorder rec(SystemKind::cartpole, 4);
    Eigen::VectorXd x = sys.rest_state();
    Eigen::VectorXd u(1);
    rec.push(0.0, x);
    const auto ticks = static_cast<long>(std::llround(duration / kSamplePeriod));
    const int substeps = static_cast<int>(std::llround(kSamplePeriod / kIntegrationDt));
    double e_target = -g * std::cos(amplitude(rng));
    double k = gain(rng);
    double switch_at = hold(rng);
    for (long i = 0; i < ticks; ++i)
    {
      const double t = static_cast<double>(i) * kSamplePeriod;
      if (t >= switch_at)
      {
        e_target = -g * std::cos(amplitude(rng));
        k = gain(rng);
        switch_at = t + hold(rng);
      }
      u[0] = std::clamp(k * (sys.energy(x) - e_target) * sgn_nonzero(x[1] * std::cos(x[0])), -8.0, 8.0) + noise(rng);
      for (int s = 0; s < substeps; ++s)
      {
        x = step_rk4(sys, x, u, kIntegrationDt);
      }
      rec.push(static_cast<double>(i + 1) * kSamplePeriod, x);
    }
    Demonstration demo = rec.finalize(id, Label::negative, Source::synthetic);
    demo.seed = seed;
    if (cartpole_success(demo.samples).total_success_time == 0.0)
    {
      return demo;
    }
  }
  throw GenerationError("negative demo kept reaching the success region (seed " + std::to_string(seed) + ")");
}

// ---------------------------------------------------------------------------
// Planar scenes

std::string_view to_string(PlanarTask task)
{
  return task == PlanarTask::reach ? "reach" : "clean";
}

PlanarTask planar_task_from_string(std::string_view name)
{
  if (name == "reach")
  {
    return PlanarTask::reach;
  }
  if (name == "clean")
  {
    return PlanarTask::clean;
  }
  throw std::invalid_argument("unknown planar task '" + std::string(name) + "'");
}

PlanarScenario planar_scenario(PlanarTask task)
{
  PlanarScenario s;
  s.task = task;
  if (task == PlanarTask::reach)
  {
    s.obstacle = {{0.5, 0.5}, 0.12};
    s.target = {{0.85, 0.8}, 0.08};
    s.surface = {{0.0, 0.0}, {1.0, 1.0}};
    s.start_region = {{0.08, 0.1}, {0.17, 0.17}};
  }
  else
  {
    s.obstacle = {{0.5, 0.5}, 0.12};
    s.target = {{0.5, 0.5}, 0.0};
    s.surface = {{0.1, 0.1}, {0.8, 0.8}};
    s.start_region = s.surface;
  }
  return s;
}

Eigen::VectorXd planar_start(const PlanarScenario& scenario, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(scenario.start_region.lower[0],
                                            scenario.start_region.lower[0] + scenario.start_region.lengths[0]);
  std::uniform_real_distribution<double> uy(scenario.start_region.lower[1],
                                            scenario.start_region.lower[1] + scenario.start_region.lengths[1]);
  for (;;)
  {
    const double x = ux(rng);
    const double y = uy(rng);
    if (scenario.obstacle.distance(x, y) > scenario.obstacle.radius + 0.1)
    {
      Eigen::VectorXd s(4);
      s << x, y, 0.0, 0.0;
      return s;
    }
  }
}

namespace
{
struct Waypoint
{
  double x;
  double y;
  double speed;
};

constexpr double kTrackGain = 4.0;
constexpr double kSwitchRadius = 0.02;

/// Drives the double integrator through `route` with a velocity-command tracker, sampling every 20 ms.
Demonstration follow(const std::vector<Waypoint>& route, const Eigen::VectorXd& x0, double max_time, Label label,
                     std::string id)
{
  const PlanarArm arm;
  DemoRecorder rec(SystemKind::planar, 4);
  Eigen::VectorXd x = x0;
  Eigen::VectorXd u(2);
  rec.push(0.0, x);
  std::size_t next = 0;
  const int substeps = static_cast<int>(std::llround(kSamplePeriod / kIntegrationDt));
  const auto ticks = static_cast<long>(std::llround(max_time / kSamplePeriod));
  for (long i = 0; i < ticks; ++i)
  {
    // Skip every waypoint already within reach; the last one ends the demo.
    while (next < route.size())
    {
      const bool last_wp = next + 1 == route.size();
      const double reach = std::hypot(route[next].x - x[0], route[next].y - x[1]);
      if (reach >= (last_wp ? 0.005 : kSwitchRadius))
      {
        break;
      }
      ++next;
    }
    if (next == route.size())
    {
      break;
    }
    const Waypoint& w = route[next];
    const double dx = w.x - x[0];
    const double dy = w.y - x[1];
    const double d = std::hypot(dx, dy);
    const bool last = next + 1 == route.size();
    const double speed = w.speed * (last ? std::min(1.0, d / 0.08) : 1.0);
    u[0] = kTrackGain * (speed * dx / d - x[2]);
    u[1] = kTrackGain * (speed * dy / d - x[3]);
    for (int s = 0; s < substeps; ++s)
    {
      x = step_rk4(arm, x, u, kIntegrationDt);
    }
    rec.push(static_cast<double>(i + 1) * kSamplePeriod, x);
  }
  return rec.finalize(std::move(id), label, Source::synthetic);
}

/// Pushes points closer than `keep_out` to the disc center radially out onto that circle.
void push_clear(Waypoint& w, const Disc& obstacle, double keep_out)
{
  const double dx = w.x - obstacle.center[0];
  const double dy = w.y - obstacle.center[1];
  const double d = std::hypot(dx, dy);
  if (d < keep_out)
  {
    const double s = keep_out / std::max(d, 1e-9);
    w.x = obstacle.center[0] + dx * s;
    w.y = obstacle.center[1] + dy * s;
  }
}

/// Replaces any leg that dips inside `keep_out` with an arc on that circle, taking the short way round.
std::vector<Waypoint> arc_around(const std::vector<Waypoint>& route, const Disc& obstacle, double keep_out)
{
  std::vector<Waypoint> out;
  for (std::size_t i = 0; i < route.size(); ++i)
  {
    if (i > 0)
    {
      const Waypoint& a = route[i - 1];
      const Waypoint& b = route[i];
      const double ex = b.x - a.x;
      const double ey = b.y - a.y;
      const double len2 = ex * ex + ey * ey;
      const double s = len2 > 0.0
                           ? std::clamp(((obstacle.center[0] - a.x) * ex + (obstacle.center[1] - a.y) * ey) / len2,
                                        0.0, 1.0)
                           : 0.0;
      if (obstacle.distance(a.x + s * ex, a.y + s * ey) < keep_out - 1e-9)
      {
        const double a0 = std::atan2(a.y - obstacle.center[1], a.x - obstacle.center[0]);
        const double sweep = wrap_angle(std::atan2(b.y - obstacle.center[1], b.x - obstacle.center[0]) - a0);
        const int n = static_cast<int>(std::ceil(std::abs(sweep) / 0.1));
        for (int j = 1; j < n; ++j)
        {
          const double ang = a0 + sweep * j / n;
          out.push_back({obstacle.center[0] + keep_out * std::cos(ang), obstacle.center[1] + keep_out * std::sin(ang),
                         b.speed});
        }
      }
    }
    out.push_back(route[i]);
  }
  return out;
}

/// Sets one speed on every waypoint so the polyline from x0 takes roughly `seconds`.
void pace(std::vector<Waypoint>& route, const Eigen::VectorXd& x0, double seconds)
{
  double length = 0.0;
  double px = x0[0], py = x0[1];
  for (const auto& w : route)
  {
    length += std::hypot(w.x - px, w.y - py);
    px = w.x;
    py = w.y;
  }
  for (auto& w : route)
  {
    w.speed = length / seconds;
  }
}

void append_orbit(std::vector<Waypoint>& route, const Disc& obstacle, double radius, double wobble, double start_angle,
                  double sweep, double speed)
{
  const int n = static_cast<int>(std::ceil(std::abs(sweep) / 0.12));
  for (int i = 1; i <= n; ++i)
  {
    const double a = start_angle + sweep * i / n;
    const double r = radius + wobble * std::sin(2.0 * a);
    route.push_back({obstacle.center[0] + r * std::cos(a), obstacle.center[1] + r * std::sin(a), speed});
  }
}

Demonstration reach_demo(const PlanarScenario& sc, Label label, std::uint64_t seed, std::string id)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Eigen::VectorXd x0 = planar_start(sc, seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Waypoint> route;
  const double speed = 0.22 + 0.06 * unit(rng);
  const double duration = 10.0 + 5.0 * unit(rng);
  if (label == Label::positive)
  {
    // Around the upper-left side of the obstacle, then circle the target until time runs out.
    const double j1 = 0.04 * (unit(rng) - 0.5);
    const double j2 = 0.04 * (unit(rng) - 0.5);
    const double r = 0.02 + 0.015 * unit(rng);
    const double a0 = kPi + 0.5 * (unit(rng) - 0.5);
    route.push_back({0.22 + j1, 0.52 + j2, 0.0});
    route.push_back({0.36 + j2, 0.78 + j1, 0.0});
    route.push_back({sc.target.center[0] + r * std::cos(a0), sc.target.center[1] + r * std::sin(a0), 0.0});
    // Unhurried approach: the path itself takes most of the demo.
    pace(route, x0, 0.75 * duration);
    for (int i = 1; i <= 12 * 20; ++i)
    {
      const double a = a0 + 2.0 * kPi * i / 12.0;
      route.push_back({sc.target.center[0] + r * std::cos(a), sc.target.center[1] + r * std::sin(a), 0.12});
    }
  }
  else
  {
    const double radius = sc.obstacle.radius * (1.3 + 0.5 * unit(rng));
    const double dir = unit(rng) < 0.5 ? 1.0 : -1.0;
    const double a0 = std::atan2(x0[1] - sc.obstacle.center[1], x0[0] - sc.obstacle.center[0]);
    route.push_back({sc.obstacle.center[0] + radius * std::cos(a0), sc.obstacle.center[1] + radius * std::sin(a0),
                     speed});
    append_orbit(route, sc.obstacle, radius, 0.0, a0, dir * 2.0 * kPi * 10.0, speed);
  }
  Demonstration d = follow(route, x0, duration, label, std::move(id));
  d.seed = seed;
  return d;
}

Demonstration clean_demo(const PlanarScenario& sc, Label label, std::uint64_t seed, std::string id)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double speed = 0.18 + 0.06 * unit(rng);
  std::vector<Waypoint> route;
  Eigen::VectorXd x0(4);
  double max_time = 0.0;
  if (label == Label::positive)
  {
    const double keep_out = sc.obstacle.radius + 0.07;
    const double lo = sc.surface.lower[0] + 0.05;
    const double hi = sc.surface.lower[0] + sc.surface.lengths[0] - 0.05;
    const bool vertical_first = unit(rng) < 0.5;
    for (int pass = 0; pass < 2; ++pass)
    {
      const bool vertical = (pass == 0) == vertical_first;
      const int lanes = 5;
      for (int lane = 0; lane < lanes; ++lane)
      {
        // The second pass runs backwards so it begins at the corner where the first one ended.
        const int slot = pass == 0 ? lane : lanes - 1 - lane;
        const double across = lo + (hi - lo) * (slot + 0.5) / lanes + 0.03 * (unit(rng) - 0.5);
        const bool forward = (lane % 2 == 0) == (pass == 0);
        const int n = 24;
        for (int i = 0; i <= n; ++i)
        {
          const double along = forward ? lo + (hi - lo) * i / n : hi - (hi - lo) * i / n;
          Waypoint w = vertical ? Waypoint{across, along, speed} : Waypoint{along, across, speed};
          push_clear(w, sc.obstacle, keep_out);
          route.push_back(w);
        }
      }
    }
    route = arc_around(route, sc.obstacle, keep_out);
    x0 << route.front().x, route.front().y, 0.0, 0.0;
    const double duration = 40.0 + 10.0 * unit(rng);
    pace(route, x0, 0.92 * duration);
    max_time = duration;
  }
  else
  {
    // Wiping the object itself: a spiral that breathes between its middle and just past its edge.
    const double inner = sc.obstacle.radius * (0.15 + 0.1 * unit(rng));
    const double outer = sc.obstacle.radius * (1.1 + 0.1 * unit(rng));
    const double breath = 2.0 * kPi * (2.5 + unit(rng));
    const double dir = unit(rng) < 0.5 ? 1.0 : -1.0;
    double a = 2.0 * kPi * unit(rng);
    max_time = 18.0 + 7.0 * unit(rng);
    auto radius_at = [&](double swept) { return inner + (outer - inner) * 0.5 * (1.0 - std::cos(kPi * swept / breath)); };
    double swept = 0.0;
    x0 << sc.obstacle.center[0] + inner * std::cos(a), sc.obstacle.center[1] + inner * std::sin(a), 0.0, 0.0;
    for (double path = 0.0; path < 1.2 * max_time * speed;)
    {
      const double r = radius_at(swept);
      const double da = std::min(0.12, 0.03 / r);
      swept += da;
      a += dir * da;
      path += r * da;
      const double rn = radius_at(swept);
      route.push_back({sc.obstacle.center[0] + rn * std::cos(a), sc.obstacle.center[1] + rn * std::sin(a), speed});
    }
  }
  Demonstration d = follow(route, x0, max_time, label, std::move(id));
  d.seed = seed;
  return d;
}
}  // namespace

Demonstration scripted_planar(PlanarTask task, Label label, std::uint64_t seed, std::string id)
{
  const PlanarScenario sc = planar_scenario(task);
  if (id.empty())
  {
    id = std::string(to_string(task)) + "_" + std::string(to_string(label)) + "_" + std::to_string(seed);
  }
  return task == PlanarTask::reach ? reach_demo(sc, label, seed, std::move(id))
                                   : clean_demo(sc, label, seed, std::move(id));
}

// ---------------------------------------------------------------------------
// Sets

namespace
{
std::string numbered(const char* prefix, int i)
{
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%03d", prefix, i);
  return buf;
}
}  // namespace

DemoSet synthesize(const SynthRequest& request)
{
  if (request.positives < 0 || request.negatives < 0)
  {
    throw std::invalid_argument("demo counts must be non-negative");
  }
  DemoSet set = DemoSet::for_system(request.system);
  for (int i = 0; i < request.positives; ++i)
  {
    const std::uint64_t seed = request.seed * 1000 + static_cast<std::uint64_t>(i);
    set.demos.push_back(request.system == SystemKind::cartpole
                            ? expert_cartpole(request.cartpole_duration, request.expert_noise, seed, numbered("pos", i))
                            : scripted_planar(request.task, Label::positive, seed, numbered("pos", i)));
  }
  for (int i = 0; i < request.negatives; ++i)
  {
    const std::uint64_t seed = request.seed * 1000 + 500 + static_cast<std::uint64_t>(i);
    set.demos.push_back(request.system == SystemKind::cartpole
                            ? negative_cartpole(request.cartpole_duration, seed, numbered("neg", i))
                            : scripted_planar(request.task, Label::negative, seed, numbered("neg", i)));
  }
  return set;
}

MetricsRow score_rollout(const Trajectory& traj, SystemKind system, PlanarTask scenario,
                         const TaskDefinition* true_task, std::string rollout_id, std::string mode)
{
  MetricsRow row;
  row.rollout_id = std::move(rollout_id);
  row.mode = std::move(mode);
  if (system == SystemKind::cartpole)
  {
    const CartpoleSuccess s = cartpole_success(traj);
    row.success_time = s.total_success_time;
    row.first_success = s.first_success_time;
    row.eps_true = true_task ? ergodicity_vs_true(traj, *true_task)
                             : ergodicity_vs_true(traj, true_task_cartpole(10, CartPole().ergodic_domain()));
    return row;
  }
  const PlanarScenario sc = planar_scenario(scenario);
  if (scenario == PlanarTask::reach)
  {
    row.reach = reach_success(traj, sc.target, sc.obstacle);
  }
  else
  {
    row.cleaning_m = cleaning_score(traj, sc.obstacle, sc.surface).m;
  }
  if (true_task)
  {
    row.eps_true = ergodicity_vs_true(traj, *true_task);
  }
  return row;
}

}  // namespace ergodic
