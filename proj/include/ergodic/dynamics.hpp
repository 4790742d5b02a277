#pragma once

#include <array>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "ergodic/spectral.hpp"

namespace ergodic
{

enum class SystemKind
{
  cartpole,
  planar
};

std::string_view to_string(SystemKind kind);
SystemKind system_from_string(std::string_view name);

/// Wraps an angle into (-pi, pi].
double wrap_angle(double theta);

/**
 * Dynamics of the form xdot = g(x) + h(x) u.
 *
 * Implementations provide the drift, the control matrix and the analytic
 * state Jacobian of f, plus the bookkeeping the controller and learner need
 * (control bounds, angle dimensions, ergodic projection and its domain).
 */
class ControlAffineSystem
{
public:
  virtual ~ControlAffineSystem() = default;

  virtual SystemKind kind() const = 0;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t control_dim() const = 0;
  virtual std::vector<std::string> state_names() const = 0;

  virtual Eigen::VectorXd drift(const Eigen::VectorXd& x) const = 0;
  virtual Eigen::MatrixXd control_matrix(const Eigen::VectorXd& x) const = 0;

  /// out = g(x) + h(x) u. `out` must already have state_dim() entries.
  virtual void deriv(const Eigen::VectorXd& x, const Eigen::VectorXd& u, Eigen::VectorXd& out) const;

  /// out = df/dx at (x, u).
  virtual void state_jacobian(const Eigen::VectorXd& x, const Eigen::VectorXd& u, Eigen::MatrixXd& out) const = 0;

  const Eigen::VectorXd& u_min() const { return u_min_; }
  const Eigen::VectorXd& u_max() const { return u_max_; }
  Eigen::VectorXd clamp_control(const Eigen::VectorXd& u) const;

  /// Angle dimensions, kept in (-pi, pi] after every integration step.
  const std::vector<bool>& periodic_dims() const { return periodic_; }

  virtual std::vector<int> ergodic_projection() const = 0;
  virtual Domain ergodic_domain() const = 0;
  virtual Eigen::VectorXd rest_state() const = 0;

protected:
  Eigen::VectorXd u_min_;
  Eigen::VectorXd u_max_;
  std::vector<bool> periodic_;
};

struct CartPoleParams
{
  double gravity = 9.81;
  double pole_length = 1.0;
  double max_accel = 20.0;       // |x_c ddot| bound, m/s^2
  double theta_dot_bound = 6.0;  // ergodic domain half-width for theta dot, rad/s
};

/**
 * Pendulum on a cart driven directly by cart acceleration.
 *
 * State [theta, theta_dot, x_c, x_c_dot] with theta = 0 upright and theta = pi
 * hanging at rest; input u = x_c ddot. theta_ddot = (g sin(theta) - u cos(theta)) / l.
 */
class CartPole final : public ControlAffineSystem
{
public:
  explicit CartPole(CartPoleParams params = {});

  const CartPoleParams& params() const { return params_; }

  SystemKind kind() const override { return SystemKind::cartpole; }
  std::size_t state_dim() const override { return 4; }
  std::size_t control_dim() const override { return 1; }
  std::vector<std::string> state_names() const override;

  Eigen::VectorXd drift(const Eigen::VectorXd& x) const override;
  Eigen::MatrixXd control_matrix(const Eigen::VectorXd& x) const override;
  void deriv(const Eigen::VectorXd& x, const Eigen::VectorXd& u, Eigen::VectorXd& out) const override;
  void state_jacobian(const Eigen::VectorXd& x, const Eigen::VectorXd& u, Eigen::MatrixXd& out) const override;

  std::vector<int> ergodic_projection() const override { return {0, 1}; }
  Domain ergodic_domain() const override;
  Eigen::VectorXd rest_state() const override;

  /// Pole energy per unit mass, 0.5 l^2 theta_dot^2 + g l cos(theta); g*l at the upright equilibrium.
  double energy(const Eigen::VectorXd& x) const;

private:
  CartPoleParams params_;
};

struct PlanarParams
{
  std::array<double, 2> workspace_lower{0.0, 0.0};
  std::array<double, 2> workspace_lengths{1.0, 1.0};
  double velocity_limit = 0.4;  // m/s, enforced softly by the controller
  double max_accel = 2.0;       // per-axis |u_i| bound, m/s^2
};

/// End effector as a planar double integrator, X = [x, y, xdot, ydot], U = [xddot, yddot].
class PlanarArm final : public ControlAffineSystem
{
public:
  explicit PlanarArm(PlanarParams params = {});

  const PlanarParams& params() const { return params_; }

  SystemKind kind() const override { return SystemKind::planar; }
  std::size_t state_dim() const override { return 4; }
  std::size_t control_dim() const override { return 2; }
  std::vector<std::string> state_names() const override;

  Eigen::VectorXd drift(const Eigen::VectorXd& x) const override;
  Eigen::MatrixXd control_matrix(const Eigen::VectorXd& x) const override;
  void deriv(const Eigen::VectorXd& x, const Eigen::VectorXd& u, Eigen::VectorXd& out) const override;
  void state_jacobian(const Eigen::VectorXd& x, const Eigen::VectorXd& u, Eigen::MatrixXd& out) const override;

  std::vector<int> ergodic_projection() const override { return {0, 1}; }
  Domain ergodic_domain() const override;
  Eigen::VectorXd rest_state() const override;

private:
  PlanarParams params_;
};

/// Default-parameter instance of a benchmark system.
std::shared_ptr<const ControlAffineSystem> make_system(SystemKind kind);

/// Central-difference df/dx, used to cross-check the analytic Jacobians.
Eigen::MatrixXd numerical_state_jacobian(const ControlAffineSystem& sys, const Eigen::VectorXd& x,
                                         const Eigen::VectorXd& u, double h = 1e-6);

/// Intermediate points of one classical RK4 step, kept for the adjoint sweep.
struct Rk4Stages
{
  std::array<Eigen::VectorXd, 4> y;  // stage evaluation points
  std::array<Eigen::VectorXd, 4> k;  // stage slopes

  explicit Rk4Stages(std::size_t n = 0);
};

/// Raw RK4 step without clamping or wrapping; fills `stages` and `x_next`.
void rk4_step(const ControlAffineSystem& sys, const Eigen::VectorXd& x, const Eigen::VectorXd& u, double dt,
              Rk4Stages& stages, Eigen::VectorXd& x_next);

/**
 * One RK4 step with zero-order hold on u. The control is clamped to the
 * system bounds first and angle dimensions are wrapped afterwards.
 * Throws IntegrationDiverged on a non-finite result.
 */
Eigen::VectorXd step_rk4(const ControlAffineSystem& sys, const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                         double dt);

/// Wraps the system's periodic dimensions of `x` in place.
void wrap_periodic(const ControlAffineSystem& sys, Eigen::VectorXd& x);

/// Per-dimension soft bounds; infinite entries leave a side unconstrained.
struct SoftBox
{
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
};

struct BarrierValue
{
  double value = 0.0;
  Eigen::VectorXd gradient;
};

/// sum_i max(0, x_i - hi_i)^2 + max(0, lo_i - x_i)^2 and its gradient.
BarrierValue barrier_penalty(const Eigen::VectorXd& x, const SoftBox& box);

}  // namespace ergodic
