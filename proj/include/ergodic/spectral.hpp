#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace ergodic
{

/// Per-sample state rows, one row per timestamp.
using StateMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Timestamped state sequence. Rows of `x` line up with entries of `t`.
struct Trajectory
{
  std::vector<double> t;
  StateMatrix x;

  std::size_t size() const { return t.size(); }
  double duration() const { return t.empty() ? 0.0 : t.back() - t.front(); }
  std::span<const double> state(std::size_t i) const
  {
    return {x.data() + i * static_cast<std::size_t>(x.cols()), static_cast<std::size_t>(x.cols())};
  }
};

/// Throws TrajectoryError unless the trajectory has >= 2 samples and strictly increasing time.
void validate_trajectory(const Trajectory& traj);

using MultiIndex = std::vector<int>;

/// Largest ergodic subspace dimension supported by CosineBasis.
inline constexpr std::size_t kMaxBasisDim = 8;

/**
 * Axis-aligned box [lower, lower + lengths] in the ergodic subspace.
 *
 * Periodic dimensions wrap into (lower, lower + L]; every other dimension is
 * clamped to the box when a sample falls outside it.
 */
class Domain
{
public:
  Domain() = default;
  Domain(std::vector<double> lower, std::vector<double> lengths, std::vector<bool> periodic = {});

  std::size_t dim() const { return lower_.size(); }
  const std::vector<double>& lower() const { return lower_; }
  const std::vector<double>& lengths() const { return lengths_; }
  const std::vector<bool>& periodic() const { return periodic_; }
  double upper(std::size_t i) const { return lower_[i] + lengths_[i]; }
  double volume() const;

  bool contains(std::span<const double> x) const;

  /// Brings `x` into the box in place; returns the number of clamped coordinates.
  std::size_t fold(std::span<double> x) const;

  bool operator==(const Domain& other) const = default;

private:
  std::vector<double> lower_;
  std::vector<double> lengths_;
  std::vector<bool> periodic_;
};

/// Number of lattice points in {0..K}^n.
std::size_t lattice_size(int order, std::size_t dim);

/**
 * Dense coefficient array over the lattice {0..K}^n in row-major order
 * (the last index varies fastest).
 */
class CoefficientSet
{
public:
  CoefficientSet() = default;
  CoefficientSet(int order, std::size_t dim);
  CoefficientSet(int order, std::size_t dim, std::vector<double> values);

  int order() const { return order_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return values_.size(); }

  double operator[](std::size_t flat) const { return values_[flat]; }
  double& operator[](std::size_t flat) { return values_[flat]; }
  double at(const MultiIndex& k) const { return values_[flat_index(k)]; }

  std::size_t flat_index(const MultiIndex& k) const;
  MultiIndex multi_index(std::size_t flat) const;

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  bool same_lattice(const CoefficientSet& other) const
  {
    return order_ == other.order_ && dim_ == other.dim_;
  }
  bool operator==(const CoefficientSet& other) const = default;

private:
  int order_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

/// Sobolev-type weights Lambda_k = (1 + |k|^2)^(-(n+1)/2).
class FrequencyWeights
{
public:
  FrequencyWeights(int order, std::size_t dim);

  int order() const { return order_; }
  std::size_t dim() const { return dim_; }
  double exponent() const { return exponent_; }
  std::size_t size() const { return lambda_.size(); }
  double operator[](std::size_t flat) const { return lambda_[flat]; }
  std::span<const double> values() const { return lambda_; }

private:
  int order_;
  std::size_t dim_;
  double exponent_;
  std::vector<double> lambda_;
};

FrequencyWeights frequency_weights(int order, std::size_t dim);

/// h_k giving each basis function unit L2 norm on the domain box.
double normalizer(const MultiIndex& k, const Domain& domain);

/// F_k(x) = (1/h_k) prod_i cos(k_i pi (x_i - lower_i) / L_i). `x` must already lie in the box.
double basis_eval(const MultiIndex& k, std::span<const double> x, const Domain& domain);

/**
 * All basis functions of order <= K on one domain, evaluated together using
 * the separable product structure.
 */
class CosineBasis
{
public:
  CosineBasis(Domain domain, int order);

  const Domain& domain() const { return domain_; }
  int order() const { return order_; }
  std::size_t size() const { return inv_h_.size(); }
  double inverse_normalizer(std::size_t flat) const { return inv_h_[flat]; }

  /// out[k] = F_k(x) for every lattice point.
  void evaluate(std::span<const double> x, std::span<double> out) const;

  /// acc[k] += weight * F_k(x).
  void accumulate(std::span<const double> x, double weight, std::span<double> acc) const;

  /// grad = sum_k a[k] * dF_k/dx(x).
  void weighted_gradient(std::span<const double> x, std::span<const double> a, std::span<double> grad) const;

private:
  Domain domain_;
  int order_;
  std::vector<double> inv_h_;
};

/// Coefficients of the time-averaged trajectory (trapezoid rule) in the projected subspace.
CoefficientSet traj_coefficients(const Trajectory& traj, std::span<const int> projection, int order,
                                 const Domain& domain, std::size_t* clamped = nullptr);

/// phi_k = F_k(x_star).
CoefficientSet delta_coefficients(std::span<const double> x_star, int order, const Domain& domain);

/// 1/h_0 at k = 0 and zero elsewhere.
CoefficientSet uniform_coefficients(int order, const Domain& domain);

/// epsilon = sum_k Lambda_k (c_k - phi_k)^2.
double ergodic_metric(const CoefficientSet& c, const CoefficientSet& phi, const FrequencyWeights& w);

/**
 * Running time integral of F_k over a trajectory that arrives one sample at a
 * time. Used for the whole-run statistics of a closed-loop rollout.
 */
class CoefficientAccumulator
{
public:
  explicit CoefficientAccumulator(const CosineBasis& basis);

  /// Appends a projected sample; `point` is folded into the domain first.
  void push(double t, std::span<const double> point);

  bool empty() const { return !has_last_; }
  double duration() const { return duration_; }

  /// Integral of F_k dt so far (trapezoid rule), not divided by time.
  std::span<const double> integral() const { return integral_; }

  /// Time-averaged coefficients; a single sample yields F_k of that sample.
  CoefficientSet coefficients() const;

  std::size_t clamped() const { return clamped_; }

private:
  const CosineBasis* basis_;
  std::vector<double> integral_;
  std::vector<double> last_f_;
  std::vector<double> scratch_;
  std::vector<double> point_;
  double last_t_ = 0.0;
  double duration_ = 0.0;
  bool has_last_ = false;
  std::size_t clamped_ = 0;
};

/// Density sampled at cell centers of a regular grid; values are row-major, dimension 0 slowest.
struct DensityGrid
{
  Domain domain;
  std::vector<std::size_t> shape;
  std::vector<double> values;

  double cell_volume() const;
  std::vector<double> cell_center(std::size_t flat) const;
  std::size_t argmax() const;
};

/// Pointwise sum_k phi_k F_k(x). With `clip_negative`, floors at zero and renormalizes to unit mass.
DensityGrid reconstruct_density(const CoefficientSet& phi, const Domain& domain, std::size_t resolution,
                                bool clip_negative);

}  // namespace ergodic
