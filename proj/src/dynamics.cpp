#include "ergodic/dynamics.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ergodic/errors.hpp"

namespace ergodic
{

std::string_view to_string(SystemKind kind)
{
  switch (kind)
  {
    case SystemKind::cartpole:
      return "cartpole";
    case SystemKind::planar:
      return "planar";
  }
  return "unknown";
}

SystemKind system_from_string(std::string_view name)
{
  if (name == "cartpole")
  {
    return SystemKind::cartpole;
  }
  if (name == "planar")
  {
    return SystemKind::planar;
  }
  throw std::invalid_argument("unknown system '" + std::string(name) + "'");
}

double wrap_angle(double theta)
{
  constexpr double two_pi = 2.0 * std::numbers::pi;
  if (theta > -std::numbers::pi && theta <= std::numbers::pi)
  {
    return theta;
  }
  double r = std::fmod(theta + std::numbers::pi, two_pi);
  if (r <= 0.0)
  {
    r += two_pi;
  }
  return r - std::numbers::pi;
}

void ControlAffineSystem::deriv(const Eigen::VectorXd& x, const Eigen::VectorXd& u, Eigen::VectorXd& out) const
{
  out = drift(x) + control_matrix(x) * u;
}

Eigen::VectorXd ControlAffineSystem::clamp_control(const Eigen::VectorXd& u) const
{
  if (static_cast<std::size_t>(u.size()) != control_dim())
  {
    throw DimensionError("control has " + std::to_string(u.size()) + " entries, system expects " +
                         std::to_string(control_dim()));
  }
  return u.cwiseMax(u_min_).cwiseMin(u_max_);
}

// ---------------------------------------------------------------------------
// Cart-pole

CartPole::CartPole(CartPoleParams params) : params_(params)
{
  if (!(params_.pole_length > 0.0))
  {
    throw std::invalid_argument("pole length must be positive");
  }
  u_min_ = Eigen::VectorXd::Constant(1, -params_.max_accel);
  u_max_ = Eigen::VectorXd::Constant(1, params_.max_accel);
  periodic_ = {true, false, false, false};
}

std::vector<std::string> CartPole::state_names() const
{
  return {"theta", "theta_dot", "x_c", "x_c_dot"};
}

Eigen::VectorXd CartPole::drift(const Eigen::VectorXd& x) const
{
  Eigen::VectorXd g(4);
  g << x[1], params_.gravity * std::sin(x[0]) / params_.pole_length, x[3], 0.0;
  return g;
}

Eigen::MatrixXd CartPole::control_matrix(const Eigen::VectorXd& x) const
{
  Eigen::MatrixXd h(4, 1);
  h << 0.0, -std::cos(x[0]) / params_.pole_length, 0.0, 1.0;
  return h;
}

void CartPole::deriv(const Eigen::VectorXd& x, const Eigen::VectorXd& u, Eigen::VectorXd& out) const
{
  out[0] = x[1];
  out[1] = (params_.gravity * std::sin(x[0]) - u[0] * std::cos(x[0])) / params_.pole_length;
  out[2] = x[3];
  out[3] = u[0];
}

void CartPole::state_jacobian(const Eigen::VectorXd& x, const Eigen::VectorXd& u, Eigen::MatrixXd& out) const
{
  out.setZero(4, 4);
  out(0, 1) = 1.0;
  out(1, 0) = (params_.gravity * std::cos(x[0]) + u[0] * std::sin(x[0])) / params_.pole_length;
  out(2, 3) = 1.0;
}

Domain CartPole::ergodic_domain() const
{
  return Domain({-std::numbers::pi, -params_.theta_dot_bound}, {2.0 * std::numbers::pi, 2.0 * params_.theta_dot_bound},
                {true, false});
}

Eigen::VectorXd CartPole::rest_state() const
{
  Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
  x[0] = std::numbers::pi;
  return x;
}

double CartPole::energy(const Eigen::VectorXd& x) const
{
  const double l = params_.pole_length;
  return 0.5 * l * l * x[1] * x[1] + params_.gravity * l * std::cos(x[0]);
}

// ---------------------------------------------------------------------------
// Planar double integrator

PlanarArm::PlanarArm(PlanarParams params) : params_(params)
{
  if (!(params_.workspace_lengths[0] > 0.0 && params_.workspace_lengths[1] > 0.0))
  {
    throw std::invalid_argument("planar workspace must be non-degenerate");
  }
  u_min_ = Eigen::VectorXd::Constant(2, -params_.max_accel);
  u_max_ = Eigen::VectorXd::Constant(2, params_.max_accel);
  periodic_ = {false, false, false, false};
}

std::vector<std::string> PlanarArm::state_names() const
{
  return {"x", "y", "x_dot", "y_dot"};
}

Eigen::VectorXd PlanarArm::drift(const Eigen::VectorXd& x) const
{
  Eigen::VectorXd g(4);
  g << x[2], x[3], 0.0, 0.0;
  return g;
}

Eigen::MatrixXd PlanarArm::control_matrix(const Eigen::VectorXd&) const
{
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(4, 2);
  h(2, 0) = 1.0;
  h(3, 1) = 1.0;
  return h;
}

void PlanarArm::deriv(const Eigen::VectorXd& x, const Eigen::VectorXd& u, Eigen::VectorXd& out) const
{
  out[0] = x[2];
  out[1] = x[3];
  out[2] = u[0];
  out[3] = u[1];
}

void PlanarArm::state_jacobian(const Eigen::VectorXd&, const Eigen::VectorXd&, Eigen::MatrixXd& out) const
{
  out.setZero(4, 4);
  out(0, 2) = 1.0;
  out(1, 3) = 1.0;
}

Domain PlanarArm::ergodic_domain() const
{
  return Domain({params_.workspace_lower[0], params_.workspace_lower[1]},
                {params_.workspace_lengths[0], params_.workspace_lengths[1]});
}

Eigen::VectorXd PlanarArm::rest_state() const
{
  Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
  x[0] = params_.workspace_lower[0] + 0.5 * params_.workspace_lengths[0];
  x[1] = params_.workspace_lower[1] + 0.5 * params_.workspace_lengths[1];
  return x;
}

std::shared_ptr<const ControlAffineSystem> make_system(SystemKind kind)
{
  switch (kind)
  {
    case SystemKind::cartpole:
      return std::make_shared<CartPole>();
    case SystemKind::planar:
      return std::make_shared<PlanarArm>();
  }
  throw std::invalid_argument("unknown system kind");
}

Eigen::MatrixXd numerical_state_jacobian(const ControlAffineSystem& sys, const Eigen::VectorXd& x,
                                         const Eigen::VectorXd& u, double h)
{
  const auto n = static_cast<Eigen::Index>(sys.state_dim());
  Eigen::MatrixXd jac(n, n);
  Eigen::VectorXd fp(n);
  Eigen::VectorXd fm(n);
  for (Eigen::Index j = 0; j < n; ++j)
  {
    Eigen::VectorXd xp = x;
    Eigen::VectorXd xm = x;
    xp[j] += h;
    xm[j] -= h;
    sys.deriv(xp, u, fp);
    sys.deriv(xm, u, fm);
    jac.col(j) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

// ---------------------------------------------------------------------------
// Integration

Rk4Stages::Rk4Stages(std::size_t n)
{
  for (auto& v : y)
  {
    v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  }
  for (auto& v : k)
  {
    v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  }
}

void rk4_step(const ControlAffineSystem& sys, const Eigen::VectorXd& x, const Eigen::VectorXd& u, double dt,
              Rk4Stages& s, Eigen::VectorXd& x_next)
{
  s.y[0] = x;
  sys.deriv(s.y[0], u, s.k[0]);
  s.y[1] = x + (0.5 * dt) * s.k[0];
  sys.deriv(s.y[1], u, s.k[1]);
  s.y[2] = x + (0.5 * dt) * s.k[1];
  sys.deriv(s.y[2], u, s.k[2]);
  s.y[3] = x + dt * s.k[2];
  sys.deriv(s.y[3], u, s.k[3]);
  x_next = x + (dt / 6.0) * (s.k[0] + 2.0 * s.k[1] + 2.0 * s.k[2] + s.k[3]);
}

void wrap_periodic(const ControlAffineSystem& sys, Eigen::VectorXd& x)
{
  const auto& periodic = sys.periodic_dims();
  for (std::size_t i = 0; i < periodic.size(); ++i)
  {
    if (periodic[i])
    {
      x[static_cast<Eigen::Index>(i)] = wrap_angle(x[static_cast<Eigen::Index>(i)]);
    }
  }
}

Eigen::VectorXd step_rk4(const ControlAffineSystem& sys, const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                         double dt)
{
  if (!(dt > 0.0))
  {
    throw std::invalid_argument("integration step must be positive");
  }
  if (static_cast<std::size_t>(x.size()) != sys.state_dim())
  {
    throw DimensionError("state has " + std::to_string(x.size()) + " entries, system expects " +
                         std::to_string(sys.state_dim()));
  }
  const Eigen::VectorXd uc = sys.clamp_control(u);
  Rk4Stages stages(sys.state_dim());
  Eigen::VectorXd next(x.size());
  rk4_step(sys, x, uc, dt, stages, next);
  if (!next.allFinite())
  {
    throw IntegrationDiverged("integration diverged: non-finite state");
  }
  wrap_periodic(sys, next);
  return next;
}

BarrierValue barrier_penalty(const Eigen::VectorXd& x, const SoftBox& box)
{
  if (box.lo.size() != x.size() || box.hi.size() != x.size())
  {
    throw DimensionError("barrier box and state dimension differ");
  }
  BarrierValue b;
  b.gradient = Eigen::VectorXd::Zero(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i)
  {
    if (x[i] > box.hi[i])
    {
      const double d = x[i] - box.hi[i];
      b.value += d * d;
      b.gradient[i] = 2.0 * d;
    }
    else if (x[i] < box.lo[i])
    {
      const double d = box.lo[i] - x[i];
      b.value += d * d;
      b.gradient[i] = -2.0 * d;
    }
  }
  return b;
}

}  // namespace ergodic
