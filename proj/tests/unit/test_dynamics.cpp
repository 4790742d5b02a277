#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <unsupported/Eigen/MatrixFunctions>

#include "ergodic/dynamics.hpp"
#include "ergodic/errors.hpp"

using namespace ergodic;

namespace
{
// xdot = A x + B u with a lightly damped oscillator block, for convergence-order checks.
class LinearTestSystem final : public ControlAffineSystem
{
public:
  LinearTestSystem()
  {
    a_ << 0.0, 1.0, -4.0, -0.3;
    b_ << 0.0, 1.0;
    u_min_ = Eigen::VectorXd::Constant(1, -10.0);
    u_max_ = Eigen::VectorXd::Constant(1, 10.0);
    periodic_ = {false, false};
  }
  SystemKind kind() const override { return SystemKind::planar; }
  std::size_t state_dim() const override { return 2; }
  std::size_t control_dim() const override { return 1; }
  std::vector<std::string> state_names() const override { return {"p", "v"}; }
  Eigen::VectorXd drift(const Eigen::VectorXd& x) const override { return a_ * x; }
  Eigen::MatrixXd control_matrix(const Eigen::VectorXd&) const override { return b_; }
  void state_jacobian(const Eigen::VectorXd&, const Eigen::VectorXd&, Eigen::MatrixXd& out) const override
  {
    out = a_;
  }
  std::vector<int> ergodic_projection() const override { return {0}; }
  Domain ergodic_domain() const override { return Domain({-1.0}, {2.0}); }
  Eigen::VectorXd rest_state() const override { return Eigen::VectorXd::Zero(2); }

  Eigen::Matrix2d a_;
  Eigen::Vector2d b_;
};

// Exact zero-order-hold propagation through the augmented matrix exponential.
Eigen::VectorXd expm_step(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Eigen::VectorXd& x,
                          const Eigen::VectorXd& u, double t)
{
  const auto n = a.rows();
  const auto m = b.cols();
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(n + m, n + m);
  aug.topLeftCorner(n, n) = a;
  aug.topRightCorner(n, m) = b;
  const Eigen::MatrixXd phi = (aug * t).exp();
  return phi.topLeftCorner(n, n) * x + phi.topRightCorner(n, m) * u;
}

Eigen::VectorXd vec(std::initializer_list<double> v)
{
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v)
  {
    out[i++] = d;
  }
  return out;
}
}  // namespace

TEST(CartPole, DerivativeKnownPoints)
{
  const CartPole cp;
  Eigen::VectorXd out(4);
  cp.deriv(vec({0, 0, 0, 0}), vec({0}), out);
  EXPECT_TRUE(out.isZero(0.0));
  cp.deriv(vec({std::numbers::pi, 0, 0, 0}), vec({0}), out);
  EXPECT_NEAR(out.norm(), 0.0, 1e-14);
  cp.deriv(vec({std::numbers::pi / 2, 0, 0, 0}), vec({0}), out);
  EXPECT_NEAR(out[1], 9.81, 1e-12);
  cp.deriv(vec({0.3, 0.5, 1.0, -2.0}), vec({4.0}), out);
  EXPECT_NEAR(out[0], 0.5, 1e-15);
  EXPECT_NEAR(out[1], 9.81 * std::sin(0.3) - 4.0 * std::cos(0.3), 1e-12);
  EXPECT_NEAR(out[2], -2.0, 1e-15);
  EXPECT_NEAR(out[3], 4.0, 1e-15);
}

TEST(Planar, DerivativeKnownPoints)
{
  const PlanarArm arm;
  Eigen::VectorXd out(4);
  arm.deriv(vec({0.5, 0.5, 0, 0}), vec({0, 0}), out);
  EXPECT_NEAR(out.norm(), 0.0, 1e-15);
  arm.deriv(vec({0.5, 0.5, 0, 0}), vec({1, 0}), out);
  EXPECT_EQ(out, vec({0, 0, 1, 0}));
}

TEST(Planar, OneSecondOfConstantAcceleration)
{
  const PlanarArm arm;
  Eigen::VectorXd x = vec({0, 0, 0, 0});
  for (int i = 0; i < 100; ++i)
  {
    x = step_rk4(arm, x, vec({1, 0}), 0.01);
  }
  EXPECT_NEAR(x[0], 0.5, 1e-9);
  EXPECT_NEAR(x[2], 1.0, 1e-9);
}

TEST(Jacobians, AnalyticMatchesFiniteDifference)
{
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const CartPole cp;
  const PlanarArm arm;
  for (int trial = 0; trial < 20; ++trial)
  {
    const Eigen::VectorXd x = vec({u(rng), u(rng), u(rng), u(rng)});
    Eigen::MatrixXd j;
    const Eigen::VectorXd uc = vec({u(rng)});
    cp.state_jacobian(x, uc, j);
    EXPECT_LT((j - numerical_state_jacobian(cp, x, uc)).cwiseAbs().maxCoeff(), 1e-6);
    const Eigen::VectorXd ua = vec({u(rng), u(rng)});
    arm.state_jacobian(x, ua, j);
    EXPECT_LT((j - numerical_state_jacobian(arm, x, ua)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Rk4, DoubleIntegratorMatchesMatrixExponential)
{
  const PlanarArm arm;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(4, 4);
  a(0, 2) = a(1, 3) = 1.0;
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(4, 2);
  b(2, 0) = b(3, 1) = 1.0;
  const Eigen::VectorXd x = vec({0.2, 0.7, 0.3, -0.1});
  const Eigen::VectorXd u = vec({1.5, -0.5});
  for (double dt : {0.1, 0.01, 0.002})
  {
    EXPECT_LT((step_rk4(arm, x, u, dt) - expm_step(a, b, x, u, dt)).norm(), 1e-13);
  }
}

TEST(Rk4, FourthOrderConvergence)
{
  const LinearTestSystem sys;
  const Eigen::VectorXd x0 = vec({1.0, 0.0});
  const Eigen::VectorXd u = vec({0.7});
  const double horizon = 1.0;
  const Eigen::VectorXd exact = expm_step(sys.a_, sys.b_, x0, u, horizon);
  auto error = [&](int steps) {
    Eigen::VectorXd x = x0;
    for (int i = 0; i < steps; ++i)
    {
      x = step_rk4(sys, x, u, horizon / steps);
    }
    return (x - exact).norm();
  };
  for (int steps : {10, 20, 40})
  {
    const double ratio = error(steps) / error(2 * steps);
    EXPECT_GE(ratio, 12.0) << steps;
    EXPECT_LE(ratio, 20.0) << steps;
  }
  // Single step: local error is fifth order.
  const double e1 = (step_rk4(sys, x0, u, 0.1) - expm_step(sys.a_, sys.b_, x0, u, 0.1)).norm();
  const double e2 = (step_rk4(sys, x0, u, 0.05) - expm_step(sys.a_, sys.b_, x0, u, 0.05)).norm();
  EXPECT_NEAR(std::log2(e1 / e2), 5.0, 0.5);
}

TEST(Rk4, RejectsNonPositiveStep)
{
  const CartPole cp;
  EXPECT_THROW(step_rk4(cp, cp.rest_state(), vec({0}), 0.0), std::invalid_argument);
  EXPECT_THROW(step_rk4(cp, cp.rest_state(), vec({0}), -0.1), std::invalid_argument);
}

TEST(Rk4, DivergenceIsReported)
{
  const CartPole cp;
  EXPECT_THROW(step_rk4(cp, vec({0.1, std::numeric_limits<double>::infinity(), 0, 0}), vec({0}), 0.002),
               IntegrationDiverged);
}

TEST(Rk4, ControlIsClamped)
{
  const CartPole cp;
  const Eigen::VectorXd x = vec({0.3, 0.0, 0.0, 0.0});
  EXPECT_EQ(step_rk4(cp, x, vec({500.0}), 0.002), step_rk4(cp, x, vec({20.0}), 0.002));
  const PlanarArm arm;
  const Eigen::VectorXd p = vec({0.5, 0.5, 0, 0});
  EXPECT_EQ(step_rk4(arm, p, vec({-9, 9}), 0.01), step_rk4(arm, p, vec({-2, 2}), 0.01));
}

TEST(Rk4, AngleStaysWrapped)
{
  const CartPole cp;
  Eigen::VectorXd x = vec({3.0, 5.5, 0, 0});
  for (int i = 0; i < 5000; ++i)
  {
    x = step_rk4(cp, x, vec({0}), 0.002);
    ASSERT_GT(x[0], -std::numbers::pi);
    ASSERT_LE(x[0], std::numbers::pi);
  }
  EXPECT_EQ(wrap_angle(-std::numbers::pi), std::numbers::pi);
  EXPECT_NEAR(wrap_angle(3.0 * std::numbers::pi / 2.0), -std::numbers::pi / 2.0, 1e-15);
}

TEST(CartPole, EnergyDriftUnforced)
{
  const CartPole cp;
  Eigen::VectorXd x = vec({2.0, 0.0, 0.0, 0.0});
  const double e0 = cp.energy(x);
  double worst = 0.0;
  for (int i = 0; i < 5000; ++i)
  {
    x = step_rk4(cp, x, vec({0}), 0.002);
    worst = std::max(worst, std::abs(cp.energy(x) - e0));
  }
  EXPECT_LT(worst, 1e-3);
  EXPECT_NEAR(cp.energy(vec({0, 0, 0, 0})), 9.81, 1e-15);
}

TEST(Systems, RestStatesAndDomains)
{
  const auto cp = make_system(SystemKind::cartpole);
  EXPECT_EQ(cp->rest_state(), vec({std::numbers::pi, 0, 0, 0}));
  EXPECT_EQ(cp->ergodic_projection(), (std::vector<int>{0, 1}));
  EXPECT_EQ(cp->ergodic_domain().lengths(), (std::vector<double>{2.0 * std::numbers::pi, 12.0}));
  const auto arm = make_system(SystemKind::planar);
  EXPECT_EQ(arm->rest_state(), vec({0.5, 0.5, 0, 0}));
  EXPECT_EQ(system_from_string("planar"), SystemKind::planar);
  EXPECT_THROW(system_from_string("segway"), std::invalid_argument);
}

TEST(Barrier, ValuesAndGradient)
{
  const SoftBox box{vec({-1.0, 0.0}), vec({1.0, 2.0})};
  const BarrierValue inside = barrier_penalty(vec({0.5, 1.0}), box);
  EXPECT_EQ(inside.value, 0.0);
  EXPECT_TRUE(inside.gradient.isZero(0.0));
  EXPECT_NEAR(barrier_penalty(vec({1.1, 1.0}), box).value, 0.01, 1e-15);

  const Eigen::VectorXd x = vec({-1.3, 2.4});
  const BarrierValue b = barrier_penalty(x, box);
  for (int i = 0; i < 2; ++i)
  {
    Eigen::VectorXd hi = x, lo = x;
    hi[i] += 1e-6;
    lo[i] -= 1e-6;
    const double fd = (barrier_penalty(hi, box).value - barrier_penalty(lo, box).value) / 2e-6;
    EXPECT_NEAR(b.gradient[i], fd, 1e-6);
  }
}
