#include "ergodic/task_learning.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ergodic/errors.hpp"

namespace ergodic
{
using json = nlohmann::json;

std::string_view to_string(FusionMode mode)
{
  switch (mode)
  {
    case FusionMode::posonly:
      return "posonly";
    case FusionMode::negonly:
      return "negonly";
    case FusionMode::posneg:
      return "posneg";
  }
  return "unknown";
}

FusionMode mode_from_string(std::string_view name)
{
  if (name == "posonly")
  {
    return FusionMode::posonly;
  }
  if (name == "negonly")
  {
    return FusionMode::negonly;
  }
  if (name == "posneg")
  {
    return FusionMode::posneg;
  }
  throw std::invalid_argument("unknown fusion mode '" + std::string(name) + "'");
}

void FusionConfig::validate() const
{
  if (order < 0)
  {
    throw std::invalid_argument("coefficient order must be non-negative");
  }
  if (!(beta >= 0.0) || !(gamma >= 0.0) || !std::isfinite(beta) || !std::isfinite(gamma))
  {
    throw std::invalid_argument("beta and gamma must be finite and non-negative");
  }
}

namespace
{
struct Term
{
  const Demonstration* demo;
  double weight;
};

// Splits `total` across a label class in proportion to demo duration (or override).
void distribute(const std::vector<const Demonstration*>& demos, double total, std::vector<Term>& out)
{
  double sum = 0.0;
  for (const auto* d : demos)
  {
    sum += d->weight_override.value_or(d->duration());
  }
  for (const auto* d : demos)
  {
    out.push_back({d, total * d->weight_override.value_or(d->duration()) / sum});
  }
}
}  // namespace

TaskDefinition learn_task(const DemoSet& set, FusionMode mode, const FusionConfig& cfg)
{
  cfg.validate();
  if (set.demos.empty())
  {
    throw LabelMissingError("cannot learn a task from an empty demo set");
  }
  std::vector<const Demonstration*> pos;
  std::vector<const Demonstration*> neg;
  for (const auto& d : set.demos)
  {
    if (d.system != set.system)
    {
      throw DimensionError("demo '" + d.id + "' belongs to a different system");
    }
    (d.label == Label::positive ? pos : neg).push_back(&d);
  }

  TaskDefinition task;
  task.domain = set.domain;
  task.projection = set.projection;
  task.mode = mode;
  task.phi = CoefficientSet(cfg.order, set.domain.dim());

  std::vector<Term> terms;
  double uniform_weight = 0.0;
  switch (mode)
  {
    case FusionMode::posonly:
      if (pos.empty())
      {
        throw LabelMissingError("posonly learning needs at least one positive demo");
      }
      distribute(pos, 1.0, terms);
      break;
    case FusionMode::posneg:
    {
      if (pos.empty())
      {
        throw LabelMissingError("posneg learning needs at least one positive demo");
      }
      const double beta = neg.empty() ? 0.0 : cfg.beta;
      distribute(pos, 1.0 + beta, terms);
      if (!neg.empty())
      {
        distribute(neg, -beta, terms);
      }
      break;
    }
    case FusionMode::negonly:
      if (neg.empty())
      {
        throw LabelMissingError("negonly learning needs at least one negative demo");
      }
      uniform_weight = 1.0 + cfg.gamma;
      distribute(neg, -cfg.gamma, terms);
      break;
  }

  if (mode == FusionMode::negonly)
  {
    const CoefficientSet u = uniform_coefficients(cfg.order, set.domain);
    for (std::size_t f = 0; f < u.size(); ++f)
    {
      task.phi[f] += uniform_weight * u[f];
    }
    task.provenance.push_back({std::string(kUniformDemoId), uniform_weight});
  }
  for (const auto& term : terms)
  {
    const CoefficientSet c = traj_coefficients(term.demo->samples, set.projection, cfg.order, set.domain);
    for (std::size_t f = 0; f < c.size(); ++f)
    {
      task.phi[f] += term.weight * c[f];
    }
    task.provenance.push_back({term.demo->id, term.weight});
  }
  // Every contributing set has c_0 = 1/h_0 and the weights sum to one; pin it exactly.
  task.phi[0] = 1.0 / normalizer(MultiIndex(set.domain.dim(), 0), set.domain);
  return task;
}

TaskDefinition true_task_cartpole(int order, const Domain& domain)
{
  if (domain.dim() != 2)
  {
    throw DimensionError("cart-pole true task lives in the (theta, theta_dot) plane");
  }
  const std::vector<double> origin{0.0, 0.0};
  if (!domain.contains(origin))
  {
    throw std::invalid_argument("cart-pole domain must contain the upright equilibrium");
  }
  TaskDefinition task;
  task.phi = delta_coefficients(origin, order, domain);
  task.domain = domain;
  task.projection = {0, 1};
  task.mode = FusionMode::posonly;
  task.provenance = {{"dirac_delta", 1.0}};
  return task;
}

// ---------------------------------------------------------------------------
// Task files

std::string serialize_task(const TaskDefinition& task)
{
  json prov = json::array();
  for (const auto& p : task.provenance)
  {
    prov.push_back({{"id", p.id}, {"w", p.weight}});
  }
  const std::vector<double> phi(task.phi.values().begin(), task.phi.values().end());
  json doc = {{"version", 1},
              {"mode", std::string(to_string(task.mode))},
              {"K", task.order()},
              {"domain",
               {{"lower", task.domain.lower()},
                {"lengths", task.domain.lengths()},
                {"periodic", task.domain.periodic()}}},
              {"projection", task.projection},
              {"phi", phi},
              {"provenance", prov}};
  return doc.dump(1) + "\n";
}

TaskDefinition parse_task(std::string_view text)
{
  try
  {
    const json doc = json::parse(text);
    if (doc.at("version").get<int>() != 1)
    {
      throw ParseError("unsupported task file version", 0);
    }
    TaskDefinition task;
    task.mode = mode_from_string(doc.at("mode").get<std::string>());
    const int order = doc.at("K").get<int>();
    const auto& dom = doc.at("domain");
    std::vector<bool> periodic;
    if (dom.contains("periodic"))
    {
      periodic = dom.at("periodic").get<std::vector<bool>>();
    }
    task.domain = Domain(dom.at("lower").get<std::vector<double>>(), dom.at("lengths").get<std::vector<double>>(),
                         periodic);
    task.projection = doc.at("projection").get<std::vector<int>>();
    if (task.projection.size() != task.domain.dim())
    {
      throw DimensionError("task projection and domain dimension differ");
    }
    task.phi = CoefficientSet(order, task.domain.dim(), doc.at("phi").get<std::vector<double>>());
    for (const auto& p : doc.at("provenance"))
    {
      task.provenance.push_back({p.at("id").get<std::string>(), p.at("w").get<double>()});
    }
    return task;
  }
  catch (const json::exception& e)
  {
    throw ParseError(std::string("task file: ") + e.what(), 0);
  }
}

void save_task(const std::filesystem::path& path, const TaskDefinition& task)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
  {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out << serialize_task(task);
}

TaskDefinition load_task(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
  {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_task(buf.str());
}

}  // namespace ergodic
