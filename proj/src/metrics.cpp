#include "ergodic/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ergodic/errors.hpp"

namespace ergodic
{

bool in_success_region(double theta, double theta_dot)
{
  return std::abs(theta) < kSuccessTheta && std::abs(theta_dot) < kSuccessThetaDot;
}

bool in_success_region(const Eigen::VectorXd& x)
{
  if (x.size() != 4)
  {
    throw DimensionError("success region is defined on the 4-dim cart-pole state");
  }
  return in_success_region(x[0], x[1]);
}

CartpoleSuccess cartpole_success(const Trajectory& traj)
{
  validate_trajectory(traj);
  if (traj.x.cols() != 4)
  {
    throw DimensionError("cartpole_success needs a cart-pole trajectory");
  }
  CartpoleSuccess out;
  double prev = 0.0;
  for (std::size_t i = 0; i < traj.size(); ++i)
  {
    const auto row = static_cast<Eigen::Index>(i);
    const double inside = in_success_region(traj.x(row, 0), traj.x(row, 1)) ? 1.0 : 0.0;
    if (inside > 0.0 && !out.first_success_time)
    {
      out.first_success_time = traj.t[i];
    }
    if (i > 0)
    {
      out.total_success_time += 0.5 * (prev + inside) * (traj.t[i] - traj.t[i - 1]);
    }
    prev = inside;
  }
  return out;
}

double ergodicity_vs_true(const Trajectory& traj, const TaskDefinition& true_task)
{
  for (int p : true_task.projection)
  {
    if (p < 0 || p >= traj.x.cols())
    {
      throw DimensionError("true-task projection exceeds the trajectory state");
    }
  }
  const CoefficientSet c = traj_coefficients(traj, true_task.projection, true_task.order(), true_task.domain);
  return ergodic_metric(c, true_task.phi, frequency_weights(true_task.order(), true_task.domain.dim()));
}

double Disc::distance(double x, double y) const
{
  return std::hypot(x - center[0], y - center[1]);
}

namespace
{
void require_planar(const Trajectory& traj)
{
  validate_trajectory(traj);
  if (traj.x.cols() < 2)
  {
    throw DimensionError("planar metrics need (x, y) in the first two state columns");
  }
}
}  // namespace

CleaningScore cleaning_score(const Trajectory& traj, const Disc& obstacle, const Rect& surface, double margin)
{
  require_planar(traj);
  if (!(surface.lengths[0] > 0.0) || !(surface.lengths[1] > 0.0))
  {
    throw std::invalid_argument("cleaning surface must have positive extent");
  }
  const double cw = surface.lengths[0] / kCleaningGrid;
  const double ch = surface.lengths[1] / kCleaningGrid;

  std::array<bool, kCleaningGrid * kCleaningGrid> eligible{};
  CleaningScore score;
  for (int i = 0; i < kCleaningGrid; ++i)
  {
    for (int j = 0; j < kCleaningGrid; ++j)
    {
      // A disc is convex, so a cell lies inside it iff all four corners do.
      bool covered_by_obstacle = true;
      for (int corner = 0; corner < 4; ++corner)
      {
        const double x = surface.lower[0] + (i + (corner & 1)) * cw;
        const double y = surface.lower[1] + (j + (corner >> 1)) * ch;
        covered_by_obstacle = covered_by_obstacle && obstacle.distance(x, y) <= obstacle.radius;
      }
      eligible[static_cast<std::size_t>(i * kCleaningGrid + j)] = !covered_by_obstacle;
      score.eligible_cells += covered_by_obstacle ? 0 : 1;
    }
  }

  std::array<bool, kCleaningGrid * kCleaningGrid> visited{};
  for (Eigen::Index r = 0; r < traj.x.rows(); ++r)
  {
    const double x = traj.x(r, 0);
    const double y = traj.x(r, 1);
    if (obstacle.distance(x, y) < obstacle.radius + margin)
    {
      score.collided = true;
    }
    const double u = (x - surface.lower[0]) / cw;
    const double v = (y - surface.lower[1]) / ch;
    if (u < 0.0 || v < 0.0 || u > kCleaningGrid || v > kCleaningGrid)
    {
      continue;
    }
    const int i = std::min(static_cast<int>(u), kCleaningGrid - 1);
    const int j = std::min(static_cast<int>(v), kCleaningGrid - 1);
    visited[static_cast<std::size_t>(i * kCleaningGrid + j)] = true;
  }
  for (std::size_t c = 0; c < visited.size(); ++c)
  {
    score.covered_cells += visited[c] && eligible[c] ? 1 : 0;
  }
  score.m = score.collided || score.eligible_cells == 0
              ? 0.0
              : static_cast<double>(score.covered_cells) / score.eligible_cells;
  return score;
}

bool hits_obstacle(const Trajectory& traj, const Disc& obstacle)
{
  require_planar(traj);
  for (Eigen::Index r = 0; r < traj.x.rows(); ++r)
  {
    if (obstacle.distance(traj.x(r, 0), traj.x(r, 1)) < obstacle.radius)
    {
      return true;
    }
  }
  return false;
}

bool reach_success(const Trajectory& traj, const Disc& target, const Disc& obstacle)
{
  if (hits_obstacle(traj, obstacle))
  {
    return false;
  }
  for (Eigen::Index r = 0; r < traj.x.rows(); ++r)
  {
    if (target.distance(traj.x(r, 0), traj.x(r, 1)) <= target.radius)
    {
      return true;
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// CSV

namespace
{
constexpr const char* kMetricsHeader = "rollout_id,mode,success_time,first_success,eps_true,cleaning_m,reach";

std::string cell(const std::optional<double>& v)
{
  if (!v)
  {
    return {};
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", *v);
  return buf;
}

std::optional<double> parse_cell(const std::string& s, std::size_t line)
{
  if (s.empty())
  {
    return std::nullopt;
  }
  try
  {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size())
    {
      throw std::invalid_argument(s);
    }
    return v;
  }
  catch (const std::exception&)
  {
    throw ParseError("bad number '" + s + "'", line);
  }
}
}  // namespace

std::string metrics_csv(const std::vector<MetricsRow>& rows)
{
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows)
  {
    out += r.rollout_id + "," + r.mode + "," + cell(r.success_time) + "," + cell(r.first_success) + "," +
           cell(r.eps_true) + "," + cell(r.cleaning_m) + "," + (r.reach ? (*r.reach ? "1" : "0") : "") + "\n";
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
  {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out << metrics_csv(rows);
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
  {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader)
  {
    throw ParseError("unexpected metrics header", 1);
  }
  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line))
  {
    ++line_no;
    if (line.empty())
    {
      continue;
    }
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;)
    {
      const auto comma = line.find(',', start);
      f.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos)
      {
        break;
      }
      start = comma + 1;
    }
    if (f.size() != 7)
    {
      throw ParseError("expected 7 columns", line_no);
    }
    MetricsRow r;
    r.rollout_id = f[0];
    r.mode = f[1];
    r.success_time = parse_cell(f[2], line_no);
    r.first_success = parse_cell(f[3], line_no);
    r.eps_true = parse_cell(f[4], line_no);
    r.cleaning_m = parse_cell(f[5], line_no);
    if (!f[6].empty())
    {
      r.reach = f[6] == "1";
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace ergodic
