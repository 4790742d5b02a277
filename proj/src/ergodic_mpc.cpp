#include "ergodic/ergodic_mpc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "ergodic/errors.hpp"

namespace ergodic
{

std::string_view to_string(CoefficientMemory memory)
{
  return memory == CoefficientMemory::full_history ? "full_history" : "horizon_only";
}

CoefficientMemory memory_from_string(std::string_view name)
{
  if (name == "full_history")
  {
    return CoefficientMemory::full_history;
  }
  if (name == "horizon_only")
  {
    return CoefficientMemory::horizon_only;
  }
  throw std::invalid_argument("unknown coefficient memory '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Configuration

namespace
{
std::size_t steps_for(double span, double dt)
{
  return static_cast<std::size_t>(std::llround(span / dt));
}
}  // namespace

std::size_t MpcConfig::horizon_steps() const
{
  return steps_for(horizon, dt);
}

std::size_t MpcConfig::steps_per_tick() const
{
  return steps_for(sample_time, dt);
}

void MpcConfig::validate(const ControlAffineSystem& sys) const
{
  if (!(q > 0.0))
  {
    throw std::invalid_argument("ergodic weight q must be positive");
  }
  if (static_cast<std::size_t>(r_diag.size()) != sys.control_dim())
  {
    throw DimensionError("R has " + std::to_string(r_diag.size()) + " diagonal entries, system has " +
                         std::to_string(sys.control_dim()) + " controls");
  }
  if (!(r_diag.array() > 0.0).all())
  {
    throw std::invalid_argument("R must be positive definite");
  }
  if (!(dt > 0.0) || !(sample_time > 0.0) || sample_time > horizon + 1e-12)
  {
    throw std::invalid_argument("need dt > 0 and 0 < sample_time <= horizon");
  }
  if (std::abs(static_cast<double>(steps_per_tick()) * dt - sample_time) > 1e-9 ||
      std::abs(static_cast<double>(horizon_steps()) * dt - horizon) > 1e-9)
  {
    throw std::invalid_argument("sample_time and horizon must be multiples of dt");
  }
  if (order < 0 || max_iters < 0)
  {
    throw std::invalid_argument("order and max_iters must be non-negative");
  }
  if (!(armijo.initial_step > 0.0) || !(armijo.shrink > 0.0 && armijo.shrink < 1.0) || armijo.max_steps < 1)
  {
    throw std::invalid_argument("invalid line-search parameters");
  }
  if (barrier && (static_cast<std::size_t>(barrier->lo.size()) != sys.state_dim() ||
                  static_cast<std::size_t>(barrier->hi.size()) != sys.state_dim()))
  {
    throw DimensionError("barrier box dimension differs from the state dimension");
  }
}

MpcConfig default_mpc_config(const ControlAffineSystem& sys)
{
  MpcConfig cfg;
  cfg.r_diag = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(sys.control_dim()), 0.01);
  const double inf = std::numeric_limits<double>::infinity();
  SoftBox box{Eigen::VectorXd::Constant(4, -inf), Eigen::VectorXd::Constant(4, inf)};
  if (const auto* cp = dynamic_cast<const CartPole*>(&sys))
  {
    // u spans +-20 here against +-2 on the arm, so the control term needs a stronger ergodic weight to balance it.
    cfg.q = 40.0;
    box.lo[1] = -cp->params().theta_dot_bound;
    box.hi[1] = cp->params().theta_dot_bound;
  }
  else if (const auto* arm = dynamic_cast<const PlanarArm*>(&sys))
  {
    const auto& p = arm->params();
    for (int i = 0; i < 2; ++i)
    {
      box.lo[i] = p.workspace_lower[static_cast<std::size_t>(i)];
      box.hi[i] = p.workspace_lower[static_cast<std::size_t>(i)] + p.workspace_lengths[static_cast<std::size_t>(i)];
      box.lo[i + 2] = -p.velocity_limit;
      box.hi[i + 2] = p.velocity_limit;
    }
  }
  cfg.barrier = box;
  cfg.barrier_weight = 100.0;
  if (dynamic_cast<const PlanarArm*>(&sys) != nullptr)
  {
    // The speed limit has to bite before the arm can cut corners past the obstacle.
    cfg.barrier_weight = 1e5;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Objective on an arbitrary sampled trajectory

namespace
{
void project_into(std::span<const double> row, std::span<const int> projection, std::vector<double>& out)
{
  out.resize(projection.size());
  for (std::size_t i = 0; i < projection.size(); ++i)
  {
    out[i] = row[static_cast<std::size_t>(projection[i])];
  }
}
}  // namespace

ObjectiveTerms objective(const Trajectory& traj, const StateMatrix& controls, const TaskDefinition& task,
                         const MpcConfig& cfg, const CoefficientAccumulator* history)
{
  validate_trajectory(traj);
  if (controls.rows() + 1 != traj.x.rows())
  {
    throw DimensionError("objective needs one control row per trajectory interval");
  }
  if (controls.cols() != cfg.r_diag.size())
  {
    throw DimensionError("control width differs from R");
  }
  if (cfg.barrier && cfg.barrier->lo.size() != traj.x.cols())
  {
    throw DimensionError("barrier box dimension differs from the state dimension");
  }
  const CosineBasis basis(task.domain, task.order());
  const FrequencyWeights weights(task.order(), task.domain.dim());

  std::vector<double> integral(basis.size(), 0.0);
  std::vector<double> f(basis.size());
  std::vector<double> p;
  ObjectiveTerms terms;
  double barrier = 0.0;
  for (std::size_t i = 0; i < traj.size(); ++i)
  {
    const double w = 0.5 * ((i > 0 ? traj.t[i] - traj.t[i - 1] : 0.0) +
                            (i + 1 < traj.size() ? traj.t[i + 1] - traj.t[i] : 0.0));
    project_into(traj.state(i), task.projection, p);
    task.domain.fold(p);
    basis.evaluate(p, f);
    for (std::size_t k = 0; k < f.size(); ++k)
    {
      integral[k] += w * f[k];
    }
    if (cfg.barrier)
    {
      const Eigen::VectorXd xi = traj.x.row(static_cast<Eigen::Index>(i)).transpose();
      barrier += w * barrier_penalty(xi, *cfg.barrier).value;
    }
  }
  double total_time = traj.duration();
  if (cfg.memory == CoefficientMemory::full_history && history != nullptr && !history->empty())
  {
    const auto h = history->integral();
    for (std::size_t k = 0; k < integral.size(); ++k)
    {
      integral[k] += h[k];
    }
    total_time += history->duration();
  }
  CoefficientSet c(task.order(), task.domain.dim());
  for (std::size_t k = 0; k < c.size(); ++k)
  {
    c[k] = integral[k] / total_time;
  }
  c[0] = basis.inverse_normalizer(0);
  terms.eps = ergodic_metric(c, task.phi, weights);
  terms.ergodic = cfg.q * terms.eps;

  for (Eigen::Index j = 0; j < controls.rows(); ++j)
  {
    const double h = traj.t[static_cast<std::size_t>(j) + 1] - traj.t[static_cast<std::size_t>(j)];
    terms.control += 0.5 * h * (controls.row(j).array().square() * cfg.r_diag.transpose().array()).sum();
  }
  terms.barrier = cfg.barrier_weight * barrier;
  return terms;
}

// ---------------------------------------------------------------------------
// Controller

ErgodicMpc::ErgodicMpc(std::shared_ptr<const ControlAffineSystem> sys, TaskDefinition task, MpcConfig cfg)
  : sys_(std::move(sys))
  , task_(std::move(task))
  , cfg_(std::move(cfg))
  , basis_(task_.domain, task_.order())
  , weights_(task_.order(), task_.domain.dim())
  , step_(cfg_.armijo.initial_step)
{
  if (cfg_.r_diag.size() == 0)
  {
    cfg_.r_diag = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(sys_->control_dim()), 0.01);
  }
  cfg_.validate(*sys_);
  if (cfg_.order != task_.order())
  {
    throw DimensionError("controller order K=" + std::to_string(cfg_.order) + " differs from task order K=" +
                         std::to_string(task_.order()));
  }
  for (int p : task_.projection)
  {
    if (p < 0 || static_cast<std::size_t>(p) >= sys_->state_dim())
    {
      throw DimensionError("task projection index outside the system state");
    }
  }
}

void ErgodicMpc::reset()
{
  plan_.resize(0, 0);
  step_ = cfg_.armijo.initial_step;
}

Trajectory ErgodicMpc::simulate(const Eigen::VectorXd& x0, const StateMatrix& controls) const
{
  const auto n = static_cast<Eigen::Index>(sys_->state_dim());
  const Eigen::Index steps = controls.rows();
  Trajectory traj;
  traj.t.resize(static_cast<std::size_t>(steps) + 1);
  traj.x.resize(steps + 1, n);
  Eigen::VectorXd x = x0;
  wrap_periodic(*sys_, x);
  Eigen::VectorXd next(n);
  Eigen::VectorXd u(controls.cols());
  Rk4Stages stages(sys_->state_dim());
  traj.t[0] = 0.0;
  traj.x.row(0) = x.transpose();
  for (Eigen::Index j = 0; j < steps; ++j)
  {
    u = controls.row(j).transpose();
    rk4_step(*sys_, x, u, cfg_.dt, stages, next);
    if (!next.allFinite())
    {
      throw IntegrationDiverged("horizon rollout diverged at step " + std::to_string(j));
    }
    wrap_periodic(*sys_, next);
    x = next;
    traj.t[static_cast<std::size_t>(j) + 1] = static_cast<double>(j + 1) * cfg_.dt;
    traj.x.row(j + 1) = x.transpose();
  }
  return traj;
}

namespace
{
// Backpropagates lam = dJ/dx_{j+1} through one RK4 step from x with control u.
struct AdjointWork
{
  explicit AdjointWork(Eigen::Index n) : next(n), g1(n), g2(n), g3(n), g4(n), ybar(n) {}
  Eigen::VectorXd next, g1, g2, g3, g4, ybar;
};

void rk4_adjoint(const ControlAffineSystem& sys, const Eigen::VectorXd& x, const Eigen::VectorXd& u, double dt,
                 const Eigen::VectorXd& lam, Rk4Stages& s, Eigen::MatrixXd& jac, AdjointWork& w,
                 Eigen::VectorXd& xbar, Eigen::VectorXd& ubar)
{
  rk4_step(sys, x, u, dt, s, w.next);

  w.g1 = (dt / 6.0) * lam;
  w.g2 = (dt / 3.0) * lam;
  w.g3 = (dt / 3.0) * lam;
  w.g4 = (dt / 6.0) * lam;
  xbar = lam;
  ubar.setZero(u.size());

  sys.state_jacobian(s.y[3], u, jac);
  w.ybar.noalias() = jac.transpose() * w.g4;
  ubar.noalias() += sys.control_matrix(s.y[3]).transpose() * w.g4;
  xbar += w.ybar;
  w.g3 += dt * w.ybar;

  sys.state_jacobian(s.y[2], u, jac);
  w.ybar.noalias() = jac.transpose() * w.g3;
  ubar.noalias() += sys.control_matrix(s.y[2]).transpose() * w.g3;
  xbar += w.ybar;
  w.g2 += (0.5 * dt) * w.ybar;

  sys.state_jacobian(s.y[1], u, jac);
  w.ybar.noalias() = jac.transpose() * w.g2;
  ubar.noalias() += sys.control_matrix(s.y[1]).transpose() * w.g2;
  xbar += w.ybar;
  w.g1 += (0.5 * dt) * w.ybar;

  sys.state_jacobian(s.y[0], u, jac);
  xbar.noalias() += jac.transpose() * w.g1;
  ubar.noalias() += sys.control_matrix(s.y[0]).transpose() * w.g1;
}
}  // namespace

double ErgodicMpc::evaluate(const Eigen::VectorXd& x0, const StateMatrix& controls,
                            const CoefficientAccumulator* history, StateMatrix* gradient, ObjectiveTerms* terms) const
{
  if (controls.cols() != static_cast<Eigen::Index>(sys_->control_dim()))
  {
    throw DimensionError("control sequence width differs from the system control dimension");
  }
  const Trajectory traj = simulate(x0, controls);
  const std::size_t samples = traj.size();
  const std::size_t nk = basis_.size();
  const double dt = cfg_.dt;
  const auto& projection = task_.projection;

  // Horizon coefficients, with the run history folded in when configured.
  std::vector<double> integral(nk, 0.0);
  std::vector<double> f(nk);
  const std::size_t pdim = projection.size();
  std::vector<double> points(samples * pdim);
  std::vector<double> p;
  for (std::size_t i = 0; i < samples; ++i)
  {
    project_into(traj.state(i), projection, p);
    task_.domain.fold(p);
    std::copy(p.begin(), p.end(), points.begin() + static_cast<std::ptrdiff_t>(i * pdim));
    basis_.evaluate(p, f);
    const double w = (i == 0 || i + 1 == samples) ? 0.5 * dt : dt;
    for (std::size_t k = 0; k < nk; ++k)
    {
      integral[k] += w * f[k];
    }
  }
  double total_time = traj.duration();
  if (cfg_.memory == CoefficientMemory::full_history && history != nullptr && !history->empty())
  {
    const auto h = history->integral();
    for (std::size_t k = 0; k < nk; ++k)
    {
      integral[k] += h[k];
    }
    total_time += history->duration();
  }
  std::vector<double> diff(nk);
  double eps = 0.0;
  for (std::size_t k = 0; k < nk; ++k)
  {
    const double c = k == 0 ? basis_.inverse_normalizer(0) : integral[k] / total_time;
    diff[k] = c - task_.phi[k];
    eps += weights_[k] * diff[k] * diff[k];
  }

  ObjectiveTerms t;
  t.eps = eps;
  t.ergodic = cfg_.q * eps;
  for (Eigen::Index j = 0; j < controls.rows(); ++j)
  {
    t.control += 0.5 * dt * (controls.row(j).array().square() * cfg_.r_diag.transpose().array()).sum();
  }
  // Same quadratic one-sided penalty as barrier_penalty, inlined over the rows.
  const bool barred = cfg_.barrier && cfg_.barrier_weight > 0.0;
  Eigen::MatrixXd barrier_grad;
  if (barred)
  {
    const SoftBox& box = *cfg_.barrier;
    double b = 0.0;
    barrier_grad.setZero(static_cast<Eigen::Index>(samples), traj.x.cols());
    for (std::size_t i = 0; i < samples; ++i)
    {
      const auto r = static_cast<Eigen::Index>(i);
      const double w = (i == 0 || i + 1 == samples) ? 0.5 * dt : dt;
      for (Eigen::Index c = 0; c < traj.x.cols(); ++c)
      {
        const double v = traj.x(r, c);
        const double d = v > box.hi[c] ? v - box.hi[c] : (v < box.lo[c] ? v - box.lo[c] : 0.0);
        if (d != 0.0)
        {
          b += w * d * d;
          barrier_grad(r, c) = cfg_.barrier_weight * w * 2.0 * d;
        }
      }
    }
    t.barrier = cfg_.barrier_weight * b;
  }
  if (terms != nullptr)
  {
    *terms = t;
  }
  if (gradient == nullptr)
  {
    return t.total();
  }

  // Costate sweep: lam_j = dJ/dx_j, accumulated backward through each RK4 step.
  std::vector<double> a(nk);
  for (std::size_t k = 0; k < nk; ++k)
  {
    a[k] = 2.0 * cfg_.q * weights_[k] * diff[k] / total_time;
  }
  a[0] = 0.0;
  const auto n = static_cast<Eigen::Index>(sys_->state_dim());
  std::vector<double> grad_p(projection.size());
  auto direct = [&](std::size_t i, Eigen::VectorXd& out) {
    const double w = (i == 0 || i + 1 == samples) ? 0.5 * dt : dt;
    basis_.weighted_gradient(std::span<const double>(points).subspan(i * pdim, pdim), a, grad_p);
    out.setZero(n);
    for (std::size_t d = 0; d < pdim; ++d)
    {
      out[projection[d]] += w * grad_p[d];
    }
    if (barred)
    {
      out += barrier_grad.row(static_cast<Eigen::Index>(i)).transpose();
    }
  };

  gradient->resize(controls.rows(), controls.cols());
  Eigen::VectorXd lam(n);
  Eigen::VectorXd xbar(n);
  Eigen::VectorXd ubar(controls.cols());
  Eigen::VectorXd local(n);
  Eigen::VectorXd xj(n);
  Eigen::VectorXd uj(controls.cols());
  Eigen::MatrixXd jac(n, n);
  Rk4Stages stages(sys_->state_dim());
  AdjointWork work(n);
  direct(samples - 1, lam);
  for (std::size_t jj = samples - 1; jj-- > 0;)
  {
    const auto j = static_cast<Eigen::Index>(jj);
    xj = traj.x.row(j).transpose();
    uj = controls.row(j).transpose();
    rk4_adjoint(*sys_, xj, uj, dt, lam, stages, jac, work, xbar, ubar);
    gradient->row(j) = (ubar + dt * cfg_.r_diag.cwiseProduct(uj)).transpose();
    direct(jj, local);
    lam = xbar + local;
  }
  return t.total();
}

StateMatrix ErgodicMpc::project(const StateMatrix& controls) const
{
  StateMatrix out = controls;
  for (Eigen::Index j = 0; j < out.rows(); ++j)
  {
    out.row(j) = out.row(j).cwiseMax(sys_->u_min().transpose()).cwiseMin(sys_->u_max().transpose());
  }
  return out;
}

void ErgodicMpc::set_plan(StateMatrix plan)
{
  if (plan.rows() != static_cast<Eigen::Index>(cfg_.horizon_steps()) ||
      plan.cols() != static_cast<Eigen::Index>(sys_->control_dim()))
  {
    throw DimensionError("plan shape differs from horizon steps x control dimension");
  }
  plan_ = std::move(plan);
}

StateMatrix ErgodicMpc::warm_start() const
{
  const auto steps = static_cast<Eigen::Index>(cfg_.horizon_steps());
  const auto m = static_cast<Eigen::Index>(sys_->control_dim());
  StateMatrix u = StateMatrix::Zero(steps, m);
  if (plan_.rows() == steps)
  {
    const auto shift = static_cast<Eigen::Index>(cfg_.steps_per_tick());
    if (shift < steps)
    {
      u.topRows(steps - shift) = plan_.bottomRows(steps - shift);
    }
  }
  return u;
}

PlanResult ErgodicMpc::plan(const Eigen::VectorXd& x_now, const CoefficientAccumulator& history)
{
  if (!x_now.allFinite() || static_cast<std::size_t>(x_now.size()) != sys_->state_dim())
  {
    throw std::invalid_argument("plan needs a finite state of the system dimension");
  }
  PlanResult result;
  result.controls = descend(x_now, history, project(warm_start()), result.diagnostics);
  plan_ = result.controls;
  return result;
}

StateMatrix ErgodicMpc::descend(const Eigen::VectorXd& x_now, const CoefficientAccumulator& history, StateMatrix u,
                                PlanDiagnostics& diag)
{
  StateMatrix grad;
  ObjectiveTerms terms;
  double j_cur = evaluate(x_now, u, &history, cfg_.max_iters > 0 ? &grad : nullptr, &terms);
  diag.j_before = j_cur;
  diag.eps_before = terms.eps;
  diag.j_history.push_back(j_cur);

  const Eigen::RowVectorXd range = sys_->u_max().transpose();
  for (int it = 0; it < cfg_.max_iters; ++it)
  {
    // Steepest-descent direction scaled so its largest entry spans `step` of that channel's bound.
    double scale = 0.0;
    for (Eigen::Index j = 0; j < grad.rows(); ++j)
    {
      scale = std::max(scale, (grad.row(j).array() / range.array()).abs().maxCoeff());
    }
    if (!(scale > 0.0))
    {
      break;
    }
    StateMatrix direction = -grad / scale;
    for (Eigen::Index j = 0; j < direction.rows(); ++j)
    {
      direction.row(j).array() *= range.array();
    }

    bool accepted = false;
    StateMatrix trial;
    double j_trial = 0.0;
    double alpha = step_;
    for (int s = 0; s < cfg_.armijo.max_steps; ++s)
    {
      ++diag.line_search_steps;
      trial = project(u + alpha * direction);
      try
      {
        j_trial = evaluate(x_now, trial, &history, nullptr, nullptr);
      }
      catch (const IntegrationDiverged&)
      {
        j_trial = std::numeric_limits<double>::infinity();
      }
      const double slope = (grad.array() * (trial - u).array()).sum();
      if (std::isfinite(j_trial) && j_trial <= j_cur + cfg_.armijo.slope_tolerance * slope)
      {
        accepted = true;
        break;
      }
      alpha *= cfg_.armijo.shrink;
    }
    if (!accepted)
    {
      diag.line_search_exhausted = true;
      step_ = cfg_.armijo.initial_step;
      break;
    }
    ++diag.iterations;
    const double decrease = j_cur - j_trial;
    u = std::move(trial);
    step_ = std::min(cfg_.armijo.initial_step, alpha / cfg_.armijo.shrink);
    j_cur = evaluate(x_now, u, &history, &grad, &terms);
    diag.j_history.push_back(j_cur);
    if (decrease < cfg_.stop_tolerance * std::max(std::abs(diag.j_history[diag.j_history.size() - 2]), 1e-12))
    {
      break;
    }
  }
  if (cfg_.max_iters == 0 || diag.iterations == 0)
  {
    evaluate(x_now, u, &history, nullptr, &terms);
  }
  diag.j_after = j_cur;
  diag.eps_after = terms.eps;
  return u;
}

// ---------------------------------------------------------------------------
// Closed loop

RolloutResult run_closed_loop(std::shared_ptr<const ControlAffineSystem> sys, const TaskDefinition& task,
                              const MpcConfig& cfg, const Eigen::VectorXd& x0, double t_f,
                              const RolloutOptions& options)
{
  if (!(t_f > 0.0))
  {
    throw std::invalid_argument("rollout duration must be positive");
  }
  ErgodicMpc mpc(sys, task, cfg);
  const MpcConfig& c = mpc.config();
  const double dt = c.dt;
  const std::size_t total_steps = steps_for(t_f, dt);
  const std::size_t per_tick = c.steps_per_tick();
  const std::size_t record_every = std::max<std::size_t>(1, steps_for(options.record_period, dt));
  const auto n = static_cast<Eigen::Index>(sys->state_dim());
  const auto m = static_cast<Eigen::Index>(sys->control_dim());

  RolloutResult result;
  result.system = sys->kind();
  std::vector<double> xs;
  std::vector<double> us;

  CoefficientAccumulator acc(mpc.basis());
  std::vector<double> p;
  auto push_acc = [&](double t, const Eigen::VectorXd& x) {
    project_into(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), task.projection, p);
    acc.push(t, p);
  };
  auto running_eps = [&]() { return ergodic_metric(acc.coefficients(), task.phi, mpc.weights()); };
  auto record = [&](double t, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    result.traj.t.push_back(t);
    xs.insert(xs.end(), x.data(), x.data() + n);
    us.insert(us.end(), u.data(), u.data() + m);
    result.eps_running.push_back(running_eps());
  };
  auto publish = [&]() {
    const auto rows = static_cast<Eigen::Index>(result.traj.t.size());
    result.traj.x = Eigen::Map<const StateMatrix>(xs.data(), rows, n);
    result.controls = Eigen::Map<const StateMatrix>(us.data(), rows, m);
  };

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  Eigen::VectorXd x = x0;
  wrap_periodic(*sys, x);
  push_acc(0.0, x);
  std::size_t step = 0;
  bool first = true;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(m);
  while (step < total_steps)
  {
    const double t_now = static_cast<double>(step) * dt;
    PlanResult plan;
    try
    {
      plan = mpc.plan(x, acc);
    }
    catch (const std::exception& e)
    {
      result.failed = true;
      result.error = e.what();
      break;
    }
    result.replans.push_back(plan.diagnostics);

    Eigen::VectorXd tick_noise = Eigen::VectorXd::Zero(m);
    if (options.control_noise > 0.0)
    {
      for (Eigen::Index i = 0; i < m; ++i)
      {
        tick_noise[i] = options.control_noise * noise(rng);
      }
    }
    const std::size_t apply = std::min(per_tick, total_steps - step);
    try
    {
      for (std::size_t s = 0; s < apply; ++s)
      {
        u = sys->clamp_control(plan.controls.row(static_cast<Eigen::Index>(s)).transpose() + tick_noise);
        if (first)
        {
          record(t_now, x, u);
          first = false;
        }
        x = step_rk4(*sys, x, u, dt);
        ++step;
        const double t = static_cast<double>(step) * dt;
        push_acc(t, x);
        if (step % record_every == 0 || step == total_steps)
        {
          const bool more = step < total_steps;
          Eigen::VectorXd u_next = u;
          if (more && s + 1 < apply)
          {
            u_next = sys->clamp_control(plan.controls.row(static_cast<Eigen::Index>(s + 1)).transpose() + tick_noise);
          }
          record(t, x, u_next);
        }
      }
    }
    catch (const std::exception& e)
    {
      result.failed = true;
      result.error = e.what();
      break;
    }
    if (options.on_tick)
    {
      publish();
      if (!options.on_tick(result))
      {
        result.cancelled = true;
        break;
      }
    }
    (void)t_now;
  }
  publish();
  result.final_eps = running_eps();
  return result;
}

// ---------------------------------------------------------------------------
// CSV export

std::string rollout_csv(const RolloutResult& result)
{
  std::ostringstream out;
  const Eigen::Index n = result.traj.x.cols();
  const Eigen::Index m = result.controls.cols();
  out << "t";
  for (Eigen::Index i = 0; i < n; ++i)
  {
    out << ",x_" << i;
  }
  for (Eigen::Index i = 0; i < m; ++i)
  {
    out << ",u_" << i;
  }
  out << ",eps_running\n";
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
  };
  for (std::size_t r = 0; r < result.traj.size(); ++r)
  {
    const auto row = static_cast<Eigen::Index>(r);
    put(result.traj.t[r]);
    for (Eigen::Index i = 0; i < n; ++i)
    {
      out << ',';
      put(result.traj.x(row, i));
    }
    for (Eigen::Index i = 0; i < m; ++i)
    {
      out << ',';
      put(result.controls(row, i));
    }
    out << ',';
    put(result.eps_running[r]);
    out << '\n';
  }
  return out.str();
}

void write_rollout_csv(const std::filesystem::path& path, const RolloutResult& result)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
  {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out << rollout_csv(result);
}

RolloutRecord read_rollout_csv(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
  {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::string line;
  if (!std::getline(in, line))
  {
    throw ParseError("empty rollout file", 1);
  }
  Eigen::Index n = 0;
  Eigen::Index m = 0;
  {
    std::istringstream header(line);
    std::string col;
    while (std::getline(header, col, ','))
    {
      n += col.rfind("x_", 0) == 0 ? 1 : 0;
      m += col.rfind("u_", 0) == 0 ? 1 : 0;
    }
  }
  if (n == 0)
  {
    throw ParseError("rollout header has no state columns", 1);
  }
  std::vector<double> t;
  std::vector<double> xs;
  std::vector<double> us;
  RolloutRecord rec;
  std::size_t line_no = 1;
  while (std::getline(in, line))
  {
    ++line_no;
    if (line.empty())
    {
      continue;
    }
    std::vector<double> vals;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ','))
    {
      try
      {
        vals.push_back(std::stod(cell));
      }
      catch (const std::exception&)
      {
        throw ParseError("bad number '" + cell + "'", line_no);
      }
    }
    if (static_cast<Eigen::Index>(vals.size()) != 2 + n + m)
    {
      throw ParseError("wrong column count", line_no);
    }
    t.push_back(vals[0]);
    xs.insert(xs.end(), vals.begin() + 1, vals.begin() + 1 + n);
    us.insert(us.end(), vals.begin() + 1 + n, vals.begin() + 1 + n + m);
    rec.eps_running.push_back(vals.back());
  }
  const auto rows = static_cast<Eigen::Index>(t.size());
  rec.traj.t = std::move(t);
  rec.traj.x = Eigen::Map<const StateMatrix>(xs.data(), rows, n);
  rec.controls = Eigen::Map<const StateMatrix>(us.data(), rows, m);
  return rec;
}

}  // namespace ergodic
