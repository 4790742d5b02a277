#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>
#include <random>

#include "ergodic/errors.hpp"
#include "ergodic/ergodic_mpc.hpp"
#include "gradient_check.hpp"
#include "oracles.hpp"

using namespace ergodic;

namespace
{
std::shared_ptr<const ControlAffineSystem> planar() { return make_system(SystemKind::planar); }

TaskDefinition task_with(const CoefficientSet& phi, const ControlAffineSystem& sys)
{
  TaskDefinition task;
  task.phi = phi;
  task.domain = sys.ergodic_domain();
  task.projection = sys.ergodic_projection();
  return task;
}

MpcConfig bare_config(const ControlAffineSystem& sys, int order)
{
  MpcConfig cfg = default_mpc_config(sys);
  cfg.order = order;
  cfg.barrier.reset();
  cfg.barrier_weight = 0.0;
  return cfg;
}

Trajectory line(int samples, double dt)
{
  Trajectory traj;
  traj.x.resize(samples, 4);
  for (int i = 0; i < samples; ++i)
  {
    const double t = dt * i;
    traj.t.push_back(t);
    traj.x.row(i) << 0.2 + 0.3 * t, 0.3 + 0.1 * std::sin(3.0 * t), 0.3, 0.3 * std::cos(3.0 * t);
  }
  return traj;
}
}  // namespace

TEST(Objective, ZeroWhenStatisticsMatch)
{
  const auto sys = planar();
  const Trajectory traj = line(51, 0.02);
  const TaskDefinition task =
      task_with(traj_coefficients(traj, sys->ergodic_projection(), 6, sys->ergodic_domain()), *sys);
  const StateMatrix u = StateMatrix::Zero(50, 2);
  const ObjectiveTerms t = objective(traj, u, task, bare_config(*sys, 6));
  EXPECT_NEAR(t.total(), 0.0, 1e-14);
}

TEST(Objective, ControlQuadrature)
{
  const auto sys = planar();
  const Trajectory traj = line(101, 0.01);
  const TaskDefinition task =
      task_with(traj_coefficients(traj, sys->ergodic_projection(), 4, sys->ergodic_domain()), *sys);
  MpcConfig cfg = bare_config(*sys, 4);
  cfg.r_diag = Eigen::Vector2d::Ones();
  StateMatrix u = StateMatrix::Zero(100, 2);
  u.col(0).setOnes();
  EXPECT_NEAR(objective(traj, u, task, cfg).total(), 0.5, 1e-12);
  EXPECT_THROW(objective(traj, StateMatrix::Zero(99, 2), task, cfg), DimensionError);
}

TEST(Objective, MatchesIndependentRecomputation)
{
  const auto sys = planar();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int order = 4;
  const std::vector<double> lengths{1.0, 1.0};
  for (int trial = 0; trial < 5; ++trial)
  {
    const int n = 40;
    Trajectory traj;
    traj.x.resize(n, 4);
    double t = 0.0;
    for (int i = 0; i < n; ++i)
    {
      traj.t.push_back(t);
      traj.x.row(i) << unit(rng), unit(rng), unit(rng), unit(rng);
      t += 0.01 + 0.03 * unit(rng);
    }
    StateMatrix u(n - 1, 2);
    for (int j = 0; j < n - 1; ++j)
    {
      u.row(j) << 4.0 * unit(rng) - 2.0, 4.0 * unit(rng) - 2.0;
    }
    std::vector<double> phi((order + 1) * (order + 1));
    CoefficientSet phi_set(order, 2);
    for (std::size_t f = 1; f < phi.size(); ++f)
    {
      phi[f] = phi_set[f] = unit(rng) - 0.5;
    }
    phi[0] = phi_set[0] = 1.0;
    const TaskDefinition task = task_with(phi_set, *sys);
    MpcConfig cfg = default_mpc_config(*sys);
    cfg.order = order;
    cfg.q = 7.0;
    cfg.r_diag = Eigen::Vector2d(0.3, 0.05);
    const ObjectiveTerms got = objective(traj, u, task, cfg);

    // Oracle: trapezoid over the samples with quadrature-normalized basis functions.
    std::vector<double> c(phi.size(), 0.0);
    const double total = traj.t.back() - traj.t.front();
    for (int k1 = 0; k1 <= order; ++k1)
    {
      for (int k2 = 0; k2 <= order; ++k2)
      {
        const std::size_t f = static_cast<std::size_t>(k1 * (order + 1) + k2);
        const double h = oracle::normalizer({k1, k2}, lengths);
        auto fk = [&](int i) {
          return std::cos(k1 * std::numbers::pi * traj.x(i, 0)) * std::cos(k2 * std::numbers::pi * traj.x(i, 1)) / h;
        };
        double acc = 0.0;
        for (int i = 0; i + 1 < n; ++i)
        {
          acc += 0.5 * (fk(i) + fk(i + 1)) * (traj.t[i + 1] - traj.t[i]);
        }
        c[f] = acc / total;
      }
    }
    double control = 0.0;
    double barrier = 0.0;
    for (int j = 0; j < n - 1; ++j)
    {
      const double h = traj.t[j + 1] - traj.t[j];
      control += 0.5 * h * (0.3 * u(j, 0) * u(j, 0) + 0.05 * u(j, 1) * u(j, 1));
    }
    auto over = [](double v, double lo, double hi) { return v > hi ? v - hi : (v < lo ? lo - v : 0.0); };
    const double vmax = PlanarParams{}.velocity_limit;
    for (int i = 0; i < n; ++i)
    {
      const double w = 0.5 * ((i > 0 ? traj.t[i] - traj.t[i - 1] : 0.0) + (i + 1 < n ? traj.t[i + 1] - traj.t[i] : 0.0));
      double p = 0.0;
      for (int d = 0; d < 2; ++d)
      {
        p += std::pow(over(traj.x(i, d), 0.0, 1.0), 2) + std::pow(over(traj.x(i, d + 2), -vmax, vmax), 2);
      }
      barrier += w * p;
    }
    const double expected = 7.0 * oracle::metric_2d(c, phi, order) + control + cfg.barrier_weight * barrier;
    EXPECT_NEAR(got.total(), expected, 1e-10 * std::max(1.0, std::abs(expected))) << trial;
  }
}

TEST(Gradient, AdjointMatchesFiniteDifferences)
{
  for (std::uint64_t seed = 1; seed <= 20; ++seed)
  {
    const auto r = check::gradient_instance(seed);
    EXPECT_LT(r.relative_error, 1e-4) << "seed " << seed;
    EXPECT_GT(r.gradient_norm, 0.0);
  }
}

TEST(Plan, DeltaAtRestIsStationary)
{
  const auto sys = planar();
  const Eigen::VectorXd x = (Eigen::VectorXd(4) << 0.3, 0.6, 0.0, 0.0).finished();
  const std::vector<double> p{0.3, 0.6};
  ErgodicMpc mpc(sys, task_with(delta_coefficients(p, 10, sys->ergodic_domain()), *sys), default_mpc_config(*sys));
  CoefficientAccumulator history(mpc.basis());
  const PlanResult r = mpc.plan(x, history);
  EXPECT_LT(r.controls.cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Plan, UniformTaskImprovesOnZeroPlan)
{
  const auto sys = planar();
  const Domain d = sys->ergodic_domain();
  ErgodicMpc mpc(sys, task_with(uniform_coefficients(10, d), *sys), default_mpc_config(*sys));
  CoefficientAccumulator history(mpc.basis());
  const Eigen::VectorXd x = (Eigen::VectorXd(4) << 0.2, 0.2, 0.0, 0.0).finished();
  const StateMatrix zero = StateMatrix::Zero(static_cast<Eigen::Index>(mpc.config().horizon_steps()), 2);
  const double j_zero = mpc.evaluate(x, zero, &history);
  const PlanResult r = mpc.plan(x, history);
  EXPECT_LT(r.diagnostics.j_after, j_zero);
  EXPECT_NEAR(mpc.evaluate(x, r.controls, &history), r.diagnostics.j_after, 1e-12 * j_zero);
}

TEST(Plan, AcceptedStepsNeverIncreaseJ)
{
  for (SystemKind kind : {SystemKind::planar, SystemKind::cartpole})
  {
    const auto sys = make_system(kind);
    const Domain d = sys->ergodic_domain();
    std::vector<double> p(d.dim());
    for (std::size_t i = 0; i < d.dim(); ++i)
    {
      p[i] = d.lower()[i] + 0.3 * d.lengths()[i];
    }
    ErgodicMpc mpc(sys, task_with(delta_coefficients(p, 10, d), *sys), default_mpc_config(*sys));
    CoefficientAccumulator history(mpc.basis());
    Eigen::VectorXd x = sys->rest_state();
    for (int tick = 0; tick < 5; ++tick)
    {
      const PlanResult r = mpc.plan(x, history);
      const auto& h = r.diagnostics.j_history;
      ASSERT_FALSE(h.empty());
      for (std::size_t i = 1; i < h.size(); ++i)
      {
        EXPECT_LE(h[i], h[i - 1]);
      }
      EXPECT_EQ(h.size(), static_cast<std::size_t>(r.diagnostics.iterations) + 1);
      EXPECT_TRUE((r.controls.array() <= sys->u_max().transpose().replicate(r.controls.rows(), 1).array()).all());
      EXPECT_TRUE((r.controls.array() >= sys->u_min().transpose().replicate(r.controls.rows(), 1).array()).all());
      x = mpc.simulate(x, r.controls).x.row(50).transpose();
    }
  }
}

TEST(Plan, ZeroIterationsShiftsPreviousPlan)
{
  const auto sys = planar();
  MpcConfig cfg = default_mpc_config(*sys);
  cfg.max_iters = 0;
  ErgodicMpc mpc(sys, task_with(uniform_coefficients(10, sys->ergodic_domain()), *sys), cfg);
  CoefficientAccumulator history(mpc.basis());
  const auto steps = static_cast<Eigen::Index>(cfg.horizon_steps());
  const auto shift = static_cast<Eigen::Index>(cfg.steps_per_tick());
  StateMatrix previous(steps, 2);
  for (Eigen::Index j = 0; j < steps; ++j)
  {
    previous.row(j) << std::sin(0.01 * j), std::cos(0.02 * j);
  }
  mpc.set_plan(previous);
  const PlanResult r = mpc.plan(sys->rest_state(), history);
  EXPECT_TRUE(r.controls.topRows(steps - shift) == previous.bottomRows(steps - shift));
  EXPECT_TRUE(r.controls.bottomRows(shift).isZero(0.0));
  EXPECT_EQ(r.diagnostics.iterations, 0);
  EXPECT_THROW(mpc.set_plan(StateMatrix::Zero(3, 2)), DimensionError);
}

TEST(Config, Validation)
{
  const auto sys = planar();
  MpcConfig cfg = default_mpc_config(*sys);
  EXPECT_NO_THROW(cfg.validate(*sys));
  MpcConfig bad = cfg;
  bad.q = 0.0;
  EXPECT_THROW(bad.validate(*sys), std::invalid_argument);
  bad = cfg;
  bad.sample_time = 2.0;
  EXPECT_THROW(bad.validate(*sys), std::invalid_argument);
  bad = cfg;
  bad.r_diag = Eigen::Vector2d(0.01, -1.0);
  EXPECT_THROW(bad.validate(*sys), std::invalid_argument);
  bad = cfg;
  bad.sample_time = 0.101;
  EXPECT_THROW(bad.validate(*sys), std::invalid_argument);
  const TaskDefinition wrong_order = task_with(uniform_coefficients(6, sys->ergodic_domain()), *sys);
  EXPECT_THROW(ErgodicMpc(sys, wrong_order, cfg), DimensionError);
}

TEST(ClosedLoop, OneTickIsOneReplan)
{
  const auto sys = planar();
  const MpcConfig cfg = default_mpc_config(*sys);
  const TaskDefinition task = task_with(uniform_coefficients(10, sys->ergodic_domain()), *sys);
  const RolloutResult r = run_closed_loop(sys, task, cfg, sys->rest_state(), cfg.sample_time);
  EXPECT_EQ(r.replans.size(), 1u);
  EXPECT_FALSE(r.failed);
  EXPECT_GE(r.traj.size(), 2u);
  EXPECT_NEAR(r.traj.t.back(), cfg.sample_time, 1e-12);
  EXPECT_EQ(r.eps_running.size(), r.traj.size());
  EXPECT_THROW(run_closed_loop(sys, task, cfg, sys->rest_state(), 0.0), std::invalid_argument);
}

TEST(ClosedLoop, CancelStopsEarly)
{
  const auto sys = planar();
  const TaskDefinition task = task_with(uniform_coefficients(10, sys->ergodic_domain()), *sys);
  RolloutOptions opt;
  int ticks = 0;
  opt.on_tick = [&](const RolloutResult&) { return ++ticks < 3; };
  const RolloutResult r = run_closed_loop(sys, task, default_mpc_config(*sys), sys->rest_state(), 5.0, opt);
  EXPECT_TRUE(r.cancelled);
  EXPECT_EQ(r.replans.size(), 3u);
}

TEST(ClosedLoop, CsvRoundTrip)
{
  const auto sys = planar();
  const TaskDefinition task = task_with(uniform_coefficients(10, sys->ergodic_domain()), *sys);
  RolloutOptions opt;
  opt.control_noise = 0.3;
  opt.seed = 11;
  const RolloutResult r = run_closed_loop(sys, task, default_mpc_config(*sys), sys->rest_state(), 0.5, opt);
  const auto path = std::filesystem::temp_directory_path() / "ergodic_rollout_roundtrip.csv";
  write_rollout_csv(path, r);
  const RolloutRecord back = read_rollout_csv(path);
  EXPECT_EQ(back.traj.t, r.traj.t);
  EXPECT_TRUE(back.traj.x == r.traj.x);
  EXPECT_TRUE(back.controls == r.controls);
  EXPECT_EQ(back.eps_running, r.eps_running);
  std::filesystem::remove(path);
}
