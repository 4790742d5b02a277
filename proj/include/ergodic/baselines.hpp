#pragma once

#include <cstdint>
#include <string>
#include <optional>

#include <Eigen/Core>

#include "ergodic/demos.hpp"
#include "ergodic/dynamics.hpp"
#include "ergodic/errors.hpp"
#include "ergodic/metrics.hpp"
#include "ergodic/task_learning.hpp"

namespace ergodic
{

/// Discrete-time regulator for (theta, theta_dot) about the upright equilibrium.
struct UprightRegulator
{
  Eigen::RowVector2d gain;   // u = -gain * [theta, theta_dot]
  Eigen::Matrix2d a_closed;  // A_d - B_d gain
  double period = 0.02;
};

/// Zero-order-hold linearization at theta = 0 solved through the discrete Riccati equation.
UprightRegulator upright_regulator(const CartPoleParams& params = {}, double period = 0.02);

struct ExpertOptions
{
  double energy_gain = 1.0;
  double catch_angle = 0.3;     // rad; regulator takes over inside |theta| < catch_angle
  double control_period = 0.02; // s; both the controller rate and the demo sample period
};

/**
 * Energy-shaping swing-up from rest followed by the upright regulator.
 * Control noise is N(0, noise_scale^2) per control period. If the demo spends
 * less than duration/2 - 5 s in the success region, it is regenerated with a
 * new noise seed up to three more times before GenerationError.
 */
Demonstration expert_cartpole(double duration, double noise_scale, std::uint64_t seed = 0, std::string id = "expert",
                              const ExpertOptions& options = {});

/// Novice-like pumping about the rest state with a randomized energy cap; never reaches the success region.
Demonstration negative_cartpole(double duration, std::uint64_t seed, std::string id = "negative");

enum class PlanarTask
{
  reach,
  clean
};

std::string_view to_string(PlanarTask task);
PlanarTask planar_task_from_string(std::string_view name);

/// Scene geometry for the planar benchmarks, in workspace meters.
struct PlanarScenario
{
  PlanarTask task = PlanarTask::reach;
  Disc obstacle;
  Disc target;   // reach only
  Rect surface;  // cleaning surface; the whole workspace for reach
  Rect start_region;
};

PlanarScenario planar_scenario(PlanarTask task);

/// Random rollout start inside the scenario's start region, at rest and clear of the obstacle.
Eigen::VectorXd planar_start(const PlanarScenario& scenario, std::uint64_t seed);

/**
 * Waypoint-tracked double-integrator demos. Positive reach goes around the
 * obstacle to the target and lingers there; negative reach loops around the
 * obstacle. Positive clean is a lawnmower sweep that detours around the
 * obstacle; negative clean orbits tightly around it.
 */
Demonstration scripted_planar(PlanarTask task, Label label, std::uint64_t seed, std::string id = "");

struct SynthRequest
{
  SystemKind system = SystemKind::cartpole;
  PlanarTask task = PlanarTask::reach;  // planar only
  int positives = 3;
  int negatives = 3;
  std::uint64_t seed = 1;
  double cartpole_duration = 30.0;
  double expert_noise = 0.5;
};

/// Labeled demo set with ids pos_NNN / neg_NNN; demo i of each label uses a seed derived from `seed` and i.
DemoSet synthesize(const SynthRequest& request);

/**
 * Metrics row for one rollout. Cart-pole rows get success times and, by
 * default, eps against the upright delta task; planar rows are scored against
 * the scenario (reach flag or cleaning m) and get eps only when `true_task`
 * is given.
 */
MetricsRow score_rollout(const Trajectory& traj, SystemKind system, PlanarTask scenario,
                         const TaskDefinition* true_task, std::string rollout_id, std::string mode);

}  // namespace ergodic
