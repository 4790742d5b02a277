#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ergodic/demos.hpp"
#include "ergodic/spectral.hpp"

namespace ergodic
{

enum class FusionMode
{
  posonly,
  negonly,
  posneg
};

std::string_view to_string(FusionMode mode);
FusionMode mode_from_string(std::string_view name);

/// Id under which the injected uniform pseudo-demo appears in provenance.
inline constexpr std::string_view kUniformDemoId = "uniform";

struct Provenance
{
  std::string id;
  double weight = 0.0;

  bool operator==(const Provenance&) const = default;
};

/// Learned target distribution in coefficient form.
struct TaskDefinition
{
  CoefficientSet phi;
  Domain domain;
  std::vector<int> projection;
  FusionMode mode = FusionMode::posonly;
  std::vector<Provenance> provenance;

  int order() const { return phi.order(); }
  bool operator==(const TaskDefinition&) const = default;
};

struct FusionConfig
{
  int order = 10;
  double beta = 0.5;   // total negative weight in posneg
  double gamma = 0.5;  // total negative weight in negonly

  void validate() const;
};

/**
 * Fuses labeled demos into phi_k = sum_j w_j c_{k,j}.
 *
 * Within each label class, demos are weighted by duration (or by their
 * weight override). Positives share 1 + beta, negatives share -beta; negonly
 * replaces the positives with a uniform pseudo-demo of weight 1 + gamma and
 * gives the negatives -gamma. The weights always sum to one, so phi_0 = 1/h_0.
 */
TaskDefinition learn_task(const DemoSet& set, FusionMode mode, const FusionConfig& cfg = {});

/// Dirac delta at the upright equilibrium (theta, theta_dot) = (0, 0).
TaskDefinition true_task_cartpole(int order, const Domain& domain);

std::string serialize_task(const TaskDefinition& task);
TaskDefinition parse_task(std::string_view text);

void save_task(const std::filesystem::path& path, const TaskDefinition& task);
TaskDefinition load_task(const std::filesystem::path& path);

}  // namespace ergodic
