#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ergodic/spectral.hpp"
#include "ergodic/task_learning.hpp"

namespace ergodic
{

inline constexpr double kSuccessTheta = 0.4;      // rad
inline constexpr double kSuccessThetaDot = 0.75;  // rad/s
inline constexpr double kCollisionMargin = 0.02;  // m, added to the obstacle radius when cleaning
inline constexpr int kCleaningGrid = 5;

struct CartpoleSuccess
{
  double total_success_time = 0.0;
  std::optional<double> first_success_time;
};

/// |theta| < 0.4 and |theta_dot| < 0.75 around the inverted equilibrium.
bool in_success_region(const Eigen::VectorXd& x);
bool in_success_region(double theta, double theta_dot);

/// Time inside the success region, integrated with the trapezoid rule on the indicator.
CartpoleSuccess cartpole_success(const Trajectory& traj);

double ergodicity_vs_true(const Trajectory& traj, const TaskDefinition& true_task);

struct Disc
{
  std::array<double, 2> center{0.0, 0.0};
  double radius = 0.0;

  double distance(double x, double y) const;
};

struct Rect
{
  std::array<double, 2> lower{0.0, 0.0};
  std::array<double, 2> lengths{1.0, 1.0};
};

struct CleaningScore
{
  double m = 0.0;
  bool collided = false;
  int covered_cells = 0;
  int eligible_cells = 0;  // grid cells not wholly under the obstacle
};

/**
 * Coverage of a kCleaningGrid x kCleaningGrid grid over `surface`, or zero on
 * contact. A sample closer than radius + margin to the obstacle center counts
 * as contact. Cells entirely under the obstacle disc leave the denominator.
 */
CleaningScore cleaning_score(const Trajectory& traj, const Disc& obstacle, const Rect& surface,
                             double margin = kCollisionMargin);

/// Some sample within the target disc and none strictly inside the obstacle.
bool reach_success(const Trajectory& traj, const Disc& target, const Disc& obstacle);

/// Strict interior test, no margin.
bool hits_obstacle(const Trajectory& traj, const Disc& obstacle);

/// One row of a .metrics.csv file; unset fields are written empty.
struct MetricsRow
{
  std::string rollout_id;
  std::string mode;
  std::optional<double> success_time;
  std::optional<double> first_success;
  std::optional<double> eps_true;
  std::optional<double> cleaning_m;
  std::optional<bool> reach;
};

std::string metrics_csv(const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace ergodic
