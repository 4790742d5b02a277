#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ergodic/dynamics.hpp"
#include "ergodic/spectral.hpp"
#include "ergodic/task_learning.hpp"

namespace ergodic
{

enum class CoefficientMemory
{
  full_history,  // statistics over the whole run so far plus the horizon
  horizon_only   // statistics over the planning horizon alone
};

std::string_view to_string(CoefficientMemory memory);
CoefficientMemory memory_from_string(std::string_view name);

/// Projected-gradient backtracking parameters.
struct ArmijoParams
{
  double initial_step = 1.0;  // largest trial change, as a fraction of each channel's bound
  double shrink = 0.5;
  double slope_tolerance = 1e-4;
  int max_steps = 16;
};

struct MpcConfig
{
  double q = 20.0;
  Eigen::VectorXd r_diag;  // diagonal of R, one entry per control channel
  int order = 10;
  double horizon = 1.5;
  double sample_time = 0.1;
  double dt = 0.002;
  int max_iters = 15;
  ArmijoParams armijo;
  CoefficientMemory memory = CoefficientMemory::full_history;
  double barrier_weight = 0.0;
  std::optional<SoftBox> barrier;
  double stop_tolerance = 1e-6;  // relative J decrease that ends a replan early

  std::size_t horizon_steps() const;
  std::size_t steps_per_tick() const;
  void validate(const ControlAffineSystem& sys) const;
};

/// Defaults for a benchmark system, including its soft state box.
MpcConfig default_mpc_config(const ControlAffineSystem& sys);

struct ObjectiveTerms
{
  double eps = 0.0;      // ergodic metric
  double ergodic = 0.0;  // q * eps
  double control = 0.0;
  double barrier = 0.0;  // weighted

  double total() const { return ergodic + control + barrier; }
};

/**
 * J = q eps + int 0.5 u'Ru dt + barrier for a sampled trajectory. `controls`
 * has one row per interval (traj.size() - 1 rows), held constant across it.
 * With full_history memory and a non-empty `history`, the coefficients average
 * over the history and the trajectory together.
 */
ObjectiveTerms objective(const Trajectory& traj, const StateMatrix& controls, const TaskDefinition& task,
                         const MpcConfig& cfg, const CoefficientAccumulator* history = nullptr);

struct PlanDiagnostics
{
  double eps_before = 0.0;
  double eps_after = 0.0;
  double j_before = 0.0;
  double j_after = 0.0;
  int iterations = 0;
  int line_search_steps = 0;
  bool line_search_exhausted = false;
  std::vector<double> j_history;  // J after each accepted step, starting with j_before
};

struct PlanResult
{
  StateMatrix controls;
  PlanDiagnostics diagnostics;
};

/**
 * Receding-horizon ergodic controller.
 *
 * Each plan() call warm-starts from the previous plan shifted by one
 * controller tick, then takes projected steepest-descent steps on J with
 * Armijo backtracking. Gradients come from the discrete adjoint of the RK4
 * rollout, i.e. the costate integrated backward along the horizon.
 */
class ErgodicMpc
{
public:
  ErgodicMpc(std::shared_ptr<const ControlAffineSystem> sys, TaskDefinition task, MpcConfig cfg);

  const ControlAffineSystem& system() const { return *sys_; }
  const TaskDefinition& task() const { return task_; }
  const MpcConfig& config() const { return cfg_; }
  const CosineBasis& basis() const { return basis_; }
  const FrequencyWeights& weights() const { return weights_; }

  /// Forward RK4 rollout of `controls` from x0 at the configured dt.
  Trajectory simulate(const Eigen::VectorXd& x0, const StateMatrix& controls) const;

  /// J of the horizon rollout, and dJ/dU when `gradient` is non-null.
  double evaluate(const Eigen::VectorXd& x0, const StateMatrix& controls, const CoefficientAccumulator* history,
                  StateMatrix* gradient = nullptr, ObjectiveTerms* terms = nullptr) const;

  PlanResult plan(const Eigen::VectorXd& x_now, const CoefficientAccumulator& history);

  /// The plan the next call will shift; empty before the first plan.
  const StateMatrix& last_plan() const { return plan_; }
  /// Replaces the stored plan; rows must match the horizon.
  void set_plan(StateMatrix plan);
  void reset();

private:
  StateMatrix warm_start() const;
  StateMatrix descend(const Eigen::VectorXd& x_now, const CoefficientAccumulator& history, StateMatrix u,
                      PlanDiagnostics& diag);
  StateMatrix project(const StateMatrix& controls) const;

  std::shared_ptr<const ControlAffineSystem> sys_;
  TaskDefinition task_;
  MpcConfig cfg_;
  CosineBasis basis_;
  FrequencyWeights weights_;
  StateMatrix plan_;
  double step_ = 1.0;
};

struct RolloutOptions
{
  double record_period = 0.02;
  double control_noise = 0.0;  // std dev of additive actuation noise, drawn per controller tick
  std::uint64_t seed = 0;
  /// Called after every controller tick with the samples recorded so far; return false to cancel.
  std::function<bool(const struct RolloutResult&)> on_tick;
};

struct RolloutResult
{
  SystemKind system = SystemKind::cartpole;
  Trajectory traj;
  StateMatrix controls;               // control applied from each recorded sample onward
  std::vector<double> eps_running;    // eps of the realized trajectory up to each sample
  std::vector<PlanDiagnostics> replans;
  double final_eps = 0.0;
  bool failed = false;
  bool cancelled = false;
  std::string error;
};

/// Plans and applies controls every sample_time until t_f, tracking whole-run statistics.
RolloutResult run_closed_loop(std::shared_ptr<const ControlAffineSystem> sys, const TaskDefinition& task,
                              const MpcConfig& cfg, const Eigen::VectorXd& x0, double t_f,
                              const RolloutOptions& options = {});

/// Columns t, x_0..x_{n-1}, u_0..u_{m-1}, eps_running.
void write_rollout_csv(const std::filesystem::path& path, const RolloutResult& result);
std::string rollout_csv(const RolloutResult& result);

struct RolloutRecord
{
  Trajectory traj;
  StateMatrix controls;
  std::vector<double> eps_running;
};

RolloutRecord read_rollout_csv(const std::filesystem::path& path);

}  // namespace ergodic
