#include "ergodic/spectral.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "ergodic/errors.hpp"

namespace ergodic
{
namespace
{
constexpr double kPi = std::numbers::pi;

void check_point_dim(std::size_t got, std::size_t want, const char* what)
{
  if (got != want)
  {
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(want) + ", got " +
                         std::to_string(got));
  }
}

// Expands per-dimension tables into their row-major outer product. `tables[d]`
// holds K+1 entries; the result has (K+1)^n entries.
void outer_product(std::span<const double* const> tables, std::size_t per_dim, std::span<double> out)
{
  std::size_t size = 1;
  out[0] = 1.0;
  for (const double* table : tables)
  {
    // Walk backwards so the expansion can happen in place.
    for (std::size_t s = size; s-- > 0;)
    {
      const double base = out[s];
      double* dst = out.data() + s * per_dim;
      for (std::size_t j = per_dim; j-- > 0;)
      {
        dst[j] = base * table[j];
      }
    }
    size *= per_dim;
  }
}

std::vector<double>& scratch(std::size_t n)
{
  thread_local std::vector<double> buf;
  if (buf.size() < n)
  {
    buf.resize(n);
  }
  return buf;
}

}  // namespace

void validate_trajectory(const Trajectory& traj)
{
  if (traj.t.size() < 2)
  {
    throw TrajectoryError("trajectory needs at least 2 samples, got " + std::to_string(traj.t.size()));
  }
  if (static_cast<std::size_t>(traj.x.rows()) != traj.t.size())
  {
    throw DimensionError("trajectory has " + std::to_string(traj.t.size()) + " timestamps but " +
                         std::to_string(traj.x.rows()) + " state rows");
  }
  for (std::size_t i = 1; i < traj.t.size(); ++i)
  {
    if (!(traj.t[i] > traj.t[i - 1]))
    {
      throw TrajectoryError("timestamps not strictly increasing at sample " + std::to_string(i));
    }
  }
}

// ---------------------------------------------------------------------------
// Domain

Domain::Domain(std::vector<double> lower, std::vector<double> lengths, std::vector<bool> periodic)
  : lower_(std::move(lower)), lengths_(std::move(lengths)), periodic_(std::move(periodic))
{
  if (lower_.empty())
  {
    throw DimensionError("domain needs at least one dimension");
  }
  if (lower_.size() != lengths_.size())
  {
    throw DimensionError("domain lower/lengths size mismatch");
  }
  if (periodic_.empty())
  {
    periodic_.assign(lower_.size(), false);
  }
  if (periodic_.size() != lower_.size())
  {
    throw DimensionError("domain periodic flags size mismatch");
  }
  for (std::size_t i = 0; i < lengths_.size(); ++i)
  {
    if (!(lengths_[i] > 0.0) || !std::isfinite(lengths_[i]) || !std::isfinite(lower_[i]))
    {
      throw std::invalid_argument("domain length " + std::to_string(i) + " must be positive and finite");
    }
  }
}

double Domain::volume() const
{
  double v = 1.0;
  for (double l : lengths_)
  {
    v *= l;
  }
  return v;
}

bool Domain::contains(std::span<const double> x) const
{
  check_point_dim(x.size(), dim(), "Domain::contains");
  for (std::size_t i = 0; i < dim(); ++i)
  {
    if (x[i] < lower_[i] || x[i] > upper(i))
    {
      return false;
    }
  }
  return true;
}

std::size_t Domain::fold(std::span<double> x) const
{
  check_point_dim(x.size(), dim(), "Domain::fold");
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < dim(); ++i)
  {
    if (x[i] >= lower_[i] && x[i] <= upper(i))
    {
      continue;
    }
    if (periodic_[i])
    {
      double r = std::fmod(x[i] - lower_[i], lengths_[i]);
      if (r <= 0.0)
      {
        r += lengths_[i];
      }
      x[i] = lower_[i] + r;
    }
    else if (std::isfinite(x[i]))
    {
      x[i] = std::clamp(x[i], lower_[i], upper(i));
      ++clamped;
    }
  }
  return clamped;
}

// ---------------------------------------------------------------------------
// Lattice containers

std::size_t lattice_size(int order, std::size_t dim)
{
  if (order < 0)
  {
    throw std::invalid_argument("coefficient order must be non-negative");
  }
  std::size_t n = 1;
  for (std::size_t i = 0; i < dim; ++i)
  {
    n *= static_cast<std::size_t>(order + 1);
  }
  return n;
}

CoefficientSet::CoefficientSet(int order, std::size_t dim)
  : order_(order), dim_(dim), values_(lattice_size(order, dim), 0.0)
{
}

CoefficientSet::CoefficientSet(int order, std::size_t dim, std::vector<double> values)
  : order_(order), dim_(dim), values_(std::move(values))
{
  if (values_.size() != lattice_size(order, dim))
  {
    throw DimensionError("coefficient array has " + std::to_string(values_.size()) + " entries, lattice needs " +
                         std::to_string(lattice_size(order, dim)));
  }
}

std::size_t CoefficientSet::flat_index(const MultiIndex& k) const
{
  check_point_dim(k.size(), dim_, "CoefficientSet::flat_index");
  std::size_t flat = 0;
  for (int ki : k)
  {
    if (ki < 0 || ki > order_)
    {
      throw std::out_of_range("multi-index entry " + std::to_string(ki) + " outside 0.." + std::to_string(order_));
    }
    flat = flat * static_cast<std::size_t>(order_ + 1) + static_cast<std::size_t>(ki);
  }
  return flat;
}

MultiIndex CoefficientSet::multi_index(std::size_t flat) const
{
  MultiIndex k(dim_);
  const auto base = static_cast<std::size_t>(order_ + 1);
  for (std::size_t i = dim_; i-- > 0;)
  {
    k[i] = static_cast<int>(flat % base);
    flat /= base;
  }
  return k;
}

FrequencyWeights::FrequencyWeights(int order, std::size_t dim)
  : order_(order), dim_(dim), exponent_(0.5 * static_cast<double>(dim + 1)), lambda_(lattice_size(order, dim))
{
  if (dim == 0)
  {
    throw DimensionError("frequency weights need at least one dimension");
  }
  const CoefficientSet shape(order, dim);
  for (std::size_t f = 0; f < lambda_.size(); ++f)
  {
    double norm2 = 0.0;
    for (int ki : shape.multi_index(f))
    {
      norm2 += static_cast<double>(ki) * ki;
    }
    lambda_[f] = std::pow(1.0 + norm2, -exponent_);
  }
}

FrequencyWeights frequency_weights(int order, std::size_t dim)
{
  return FrequencyWeights(order, dim);
}

// ---------------------------------------------------------------------------
// Single basis functions

double normalizer(const MultiIndex& k, const Domain& domain)
{
  check_point_dim(k.size(), domain.dim(), "normalizer");
  double h = 1.0;
  for (std::size_t i = 0; i < k.size(); ++i)
  {
    if (k[i] < 0)
    {
      throw std::out_of_range("negative multi-index entry");
    }
    h *= k[i] == 0 ? std::sqrt(domain.lengths()[i]) : std::sqrt(0.5 * domain.lengths()[i]);
  }
  return h;
}

double basis_eval(const MultiIndex& k, std::span<const double> x, const Domain& domain)
{
  check_point_dim(x.size(), domain.dim(), "basis_eval");
  double value = 1.0 / normalizer(k, domain);
  for (std::size_t i = 0; i < k.size(); ++i)
  {
    value *= std::cos(k[i] * kPi * (x[i] - domain.lower()[i]) / domain.lengths()[i]);
  }
  return value;
}

// ---------------------------------------------------------------------------
// CosineBasis

CosineBasis::CosineBasis(Domain domain, int order) : domain_(std::move(domain)), order_(order)
{
  const std::size_t n = domain_.dim();
  if (n > kMaxBasisDim)
  {
    throw DimensionError("basis supports at most " + std::to_string(kMaxBasisDim) + " dimensions");
  }
  const CoefficientSet shape(order_, n);
  inv_h_.resize(shape.size());
  for (std::size_t f = 0; f < inv_h_.size(); ++f)
  {
    inv_h_[f] = 1.0 / normalizer(shape.multi_index(f), domain_);
  }
}

namespace
{
// cos(j*a) and -j*w*sin(j*a) for j = 0..K via the angle-addition recurrence.
void trig_tables(double angle, double w, std::size_t per_dim, double* cos_out, double* dcos_out)
{
  const double c1 = std::cos(angle);
  const double s1 = std::sin(angle);
  double c = 1.0;
  double s = 0.0;
  for (std::size_t j = 0; j < per_dim; ++j)
  {
    cos_out[j] = c;
    if (dcos_out != nullptr)
    {
      dcos_out[j] = -static_cast<double>(j) * w * s;
    }
    const double cn = c * c1 - s * s1;
    s = s * c1 + c * s1;
    c = cn;
  }
}
}  // namespace

void CosineBasis::evaluate(std::span<const double> x, std::span<double> out) const
{
  const std::size_t n = domain_.dim();
  check_point_dim(x.size(), n, "CosineBasis::evaluate");
  if (out.size() != size())
  {
    throw DimensionError("CosineBasis::evaluate output size mismatch");
  }
  const std::size_t per_dim = static_cast<std::size_t>(order_ + 1);
  auto& tables = scratch(n * per_dim);
  std::array<const double*, kMaxBasisDim> ptrs{};
  for (std::size_t d = 0; d < n; ++d)
  {
    const double w = kPi / domain_.lengths()[d];
    trig_tables(w * (x[d] - domain_.lower()[d]), w, per_dim, tables.data() + d * per_dim, nullptr);
    ptrs[d] = tables.data() + d * per_dim;
  }
  if (n == 2)
  {
    const double* c0 = ptrs[0];
    const double* c1 = ptrs[1];
    for (std::size_t i = 0, f = 0; i < per_dim; ++i)
    {
      for (std::size_t j = 0; j < per_dim; ++j, ++f)
      {
        out[f] = c0[i] * c1[j] * inv_h_[f];
      }
    }
    return;
  }
  outer_product(std::span(ptrs.data(), n), per_dim, out);
  for (std::size_t f = 0; f < out.size(); ++f)
  {
    out[f] *= inv_h_[f];
  }
}

void CosineBasis::accumulate(std::span<const double> x, double weight, std::span<double> acc) const
{
  std::vector<double> f(size());
  evaluate(x, f);
  for (std::size_t i = 0; i < f.size(); ++i)
  {
    acc[i] += weight * f[i];
  }
}

void CosineBasis::weighted_gradient(std::span<const double> x, std::span<const double> a,
                                    std::span<double> grad) const
{
  const std::size_t n = domain_.dim();
  check_point_dim(x.size(), n, "CosineBasis::weighted_gradient");
  check_point_dim(grad.size(), n, "CosineBasis::weighted_gradient");
  if (a.size() != size())
  {
    throw DimensionError("CosineBasis::weighted_gradient weight size mismatch");
  }
  const std::size_t per_dim = static_cast<std::size_t>(order_ + 1);
  const std::size_t total = size();
  auto& buf = scratch(2 * n * per_dim + total);
  double* cos_tab = buf.data();
  double* dcos_tab = buf.data() + n * per_dim;
  std::span<double> product(buf.data() + 2 * n * per_dim, total);
  for (std::size_t d = 0; d < n; ++d)
  {
    const double w = kPi / domain_.lengths()[d];
    trig_tables(w * (x[d] - domain_.lower()[d]), w, per_dim, cos_tab + d * per_dim, dcos_tab + d * per_dim);
  }
  if (n == 2)
  {
    // Inner sums over the fast index serve both partials.
    const double* c1 = cos_tab + per_dim;
    const double* dc1 = dcos_tab + per_dim;
    double g0 = 0.0;
    double g1 = 0.0;
    for (std::size_t i = 0, f = 0; i < per_dim; ++i)
    {
      double sc = 0.0;
      double sd = 0.0;
      for (std::size_t j = 0; j < per_dim; ++j, ++f)
      {
        const double ah = a[f] * inv_h_[f];
        sc += ah * c1[j];
        sd += ah * dc1[j];
      }
      g0 += dcos_tab[i] * sc;
      g1 += cos_tab[i] * sd;
    }
    grad[0] = g0;
    grad[1] = g1;
    return;
  }
  std::array<const double*, kMaxBasisDim> ptrs{};
  for (std::size_t d = 0; d < n; ++d)
  {
    for (std::size_t i = 0; i < n; ++i)
    {
      ptrs[i] = (i == d ? dcos_tab : cos_tab) + i * per_dim;
    }
    outer_product(std::span(ptrs.data(), n), per_dim, product);
    double g = 0.0;
    for (std::size_t f = 0; f < total; ++f)
    {
      g += a[f] * inv_h_[f] * product[f];
    }
    grad[d] = g;
  }
}

// ---------------------------------------------------------------------------
// Coefficient constructors

namespace
{
std::vector<double> project_row(std::span<const double> row, std::span<const int> projection)
{
  std::vector<double> p(projection.size());
  for (std::size_t i = 0; i < projection.size(); ++i)
  {
    p[i] = row[static_cast<std::size_t>(projection[i])];
  }
  return p;
}
}  // namespace

CoefficientSet traj_coefficients(const Trajectory& traj, std::span<const int> projection, int order,
                                 const Domain& domain, std::size_t* clamped)
{
  validate_trajectory(traj);
  if (projection.size() != domain.dim())
  {
    throw DimensionError("projection selects " + std::to_string(projection.size()) + " dimensions, domain has " +
                         std::to_string(domain.dim()));
  }
  for (int p : projection)
  {
    if (p < 0 || p >= traj.x.cols())
    {
      throw DimensionError("projection index " + std::to_string(p) + " outside state dimension " +
                           std::to_string(traj.x.cols()));
    }
  }
  const CosineBasis basis(domain, order);
  CoefficientAccumulator acc(basis);
  for (std::size_t i = 0; i < traj.size(); ++i)
  {
    acc.push(traj.t[i], project_row(traj.state(i), projection));
  }
  if (clamped != nullptr)
  {
    *clamped = acc.clamped();
  }
  return acc.coefficients();
}

CoefficientSet delta_coefficients(std::span<const double> x_star, int order, const Domain& domain)
{
  check_point_dim(x_star.size(), domain.dim(), "delta_coefficients");
  if (!domain.contains(x_star))
  {
    throw std::invalid_argument("delta location lies outside the domain");
  }
  const CosineBasis basis(domain, order);
  CoefficientSet phi(order, domain.dim());
  basis.evaluate(x_star, phi.values());
  return phi;
}

CoefficientSet uniform_coefficients(int order, const Domain& domain)
{
  CoefficientSet phi(order, domain.dim());
  phi[0] = 1.0 / normalizer(MultiIndex(domain.dim(), 0), domain);
  return phi;
}

double ergodic_metric(const CoefficientSet& c, const CoefficientSet& phi, const FrequencyWeights& w)
{
  if (!c.same_lattice(phi) || w.order() != c.order() || w.dim() != c.dim())
  {
    throw DimensionError("ergodic_metric lattice mismatch");
  }
  double eps = 0.0;
  for (std::size_t f = 0; f < c.size(); ++f)
  {
    const double d = c[f] - phi[f];
    eps += w[f] * d * d;
  }
  return eps;
}

// ---------------------------------------------------------------------------
// CoefficientAccumulator

CoefficientAccumulator::CoefficientAccumulator(const CosineBasis& basis)
  : basis_(&basis)
  , integral_(basis.size(), 0.0)
  , last_f_(basis.size(), 0.0)
  , scratch_(basis.size(), 0.0)
  , point_(basis.domain().dim())
{
}

void CoefficientAccumulator::push(double t, std::span<const double> point)
{
  check_point_dim(point.size(), point_.size(), "CoefficientAccumulator::push");
  std::copy(point.begin(), point.end(), point_.begin());
  clamped_ += basis_->domain().fold(point_);
  basis_->evaluate(point_, scratch_);
  if (has_last_)
  {
    const double dt = t - last_t_;
    if (!(dt > 0.0))
    {
      throw TrajectoryError("accumulator samples must advance in time");
    }
    for (std::size_t f = 0; f < integral_.size(); ++f)
    {
      integral_[f] += 0.5 * dt * (last_f_[f] + scratch_[f]);
    }
    duration_ += dt;
  }
  std::swap(last_f_, scratch_);
  last_t_ = t;
  has_last_ = true;
}

CoefficientSet CoefficientAccumulator::coefficients() const
{
  if (!has_last_)
  {
    throw TrajectoryError("accumulator is empty");
  }
  std::vector<double> c(integral_.size());
  if (duration_ > 0.0)
  {
    for (std::size_t f = 0; f < c.size(); ++f)
    {
      c[f] = integral_[f] / duration_;
    }
  }
  else
  {
    c = last_f_;
  }
  c[0] = basis_->inverse_normalizer(0);
  return CoefficientSet(basis_->order(), basis_->domain().dim(), std::move(c));
}

// ---------------------------------------------------------------------------
// Density reconstruction

double DensityGrid::cell_volume() const
{
  double v = 1.0;
  for (std::size_t d = 0; d < shape.size(); ++d)
  {
    v *= domain.lengths()[d] / static_cast<double>(shape[d]);
  }
  return v;
}

std::vector<double> DensityGrid::cell_center(std::size_t flat) const
{
  std::vector<double> x(shape.size());
  for (std::size_t d = shape.size(); d-- > 0;)
  {
    const std::size_t j = flat % shape[d];
    flat /= shape[d];
    x[d] = domain.lower()[d] + (static_cast<double>(j) + 0.5) * domain.lengths()[d] / static_cast<double>(shape[d]);
  }
  return x;
}

std::size_t DensityGrid::argmax() const
{
  return static_cast<std::size_t>(std::distance(values.begin(), std::max_element(values.begin(), values.end())));
}

DensityGrid reconstruct_density(const CoefficientSet& phi, const Domain& domain, std::size_t resolution,
                                bool clip_negative)
{
  if (resolution < 2)
  {
    throw std::invalid_argument("density resolution must be at least 2");
  }
  if (phi.dim() != domain.dim())
  {
    throw DimensionError("density coefficients and domain dimension differ");
  }
  DensityGrid grid;
  grid.domain = domain;
  grid.shape.assign(domain.dim(), resolution);
  std::size_t cells = 1;
  for (std::size_t d = 0; d < domain.dim(); ++d)
  {
    cells *= resolution;
  }
  grid.values.resize(cells);

  const CosineBasis basis(domain, phi.order());
  std::vector<double> f(basis.size());
  for (std::size_t c = 0; c < cells; ++c)
  {
    basis.evaluate(grid.cell_center(c), f);
    double v = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k)
    {
      v += phi[k] * f[k];
    }
    grid.values[c] = v;
  }

  if (clip_negative)
  {
    double mass = 0.0;
    for (double& v : grid.values)
    {
      v = std::max(v, 0.0);
      mass += v;
    }
    mass *= grid.cell_volume();
    if (mass > 0.0)
    {
      for (double& v : grid.values)
      {
        v /= mass;
      }
    }
  }
  return grid;
}

}  // namespace ergodic
