#include "ergodic/demos.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ergodic/errors.hpp"

namespace ergodic
{
using json = nlohmann::json;

std::string_view to_string(Label label)
{
  return label == Label::positive ? "positive" : "negative";
}

std::string_view to_string(Source source)
{
  return source == Source::human ? "human" : "synthetic";
}

Label label_from_string(std::string_view name)
{
  if (name == "positive")
  {
    return Label::positive;
  }
  if (name == "negative")
  {
    return Label::negative;
  }
  throw std::invalid_argument("unknown label '" + std::string(name) + "'");
}

Source source_from_string(std::string_view name)
{
  if (name == "human")
  {
    return Source::human;
  }
  if (name == "synthetic")
  {
    return Source::synthetic;
  }
  throw std::invalid_argument("unknown source '" + std::string(name) + "'");
}

bool Demonstration::operator==(const Demonstration& other) const
{
  return id == other.id && system == other.system && label == other.label && source == other.source &&
         weight_override == other.weight_override && seed == other.seed && samples.t == other.samples.t &&
         samples.x.rows() == other.samples.x.rows() && samples.x.cols() == other.samples.x.cols() &&
         samples.x == other.samples.x;
}

std::size_t state_dim_of(SystemKind kind)
{
  return make_system(kind)->state_dim();
}

void validate(const Demonstration& demo)
{
  validate_trajectory(demo.samples);
  if (demo.state_dim() != state_dim_of(demo.system))
  {
    throw DimensionError("demo '" + demo.id + "' has state dimension " + std::to_string(demo.state_dim()) + ", " +
                         std::string(to_string(demo.system)) + " expects " +
                         std::to_string(state_dim_of(demo.system)));
  }
  if (!demo.samples.x.allFinite())
  {
    throw TrajectoryError("demo '" + demo.id + "' contains non-finite states");
  }
  if (demo.weight_override && !(std::isfinite(*demo.weight_override) && *demo.weight_override > 0.0))
  {
    throw std::invalid_argument("demo '" + demo.id + "' weight override must be positive");
  }
}

// ---------------------------------------------------------------------------
// Recording

DemoRecorder::DemoRecorder(SystemKind system, std::size_t state_dim) : system_(system), state_dim_(state_dim)
{
}

void DemoRecorder::push(double t, const Eigen::VectorXd& state)
{
  if (static_cast<std::size_t>(state.size()) != state_dim_)
  {
    throw DimensionError("recorded state has " + std::to_string(state.size()) + " entries, expected " +
                         std::to_string(state_dim_));
  }
  if (!t_.empty() && !(t > t_.back()))
  {
    throw TrajectoryError("time regression while recording: " + format_double(t) + " after " +
                          format_double(t_.back()));
  }
  t_.push_back(t);
  x_.insert(x_.end(), state.data(), state.data() + state.size());
}

Demonstration DemoRecorder::finalize(std::string id, Label label, Source source)
{
  Demonstration demo;
  demo.id = std::move(id);
  demo.system = system_;
  demo.label = label;
  demo.source = source;
  demo.samples.t = std::move(t_);
  demo.samples.x = Eigen::Map<const StateMatrix>(x_.data(), static_cast<Eigen::Index>(demo.samples.t.size()),
                                                 static_cast<Eigen::Index>(state_dim_));
  t_.clear();
  x_.clear();
  validate(demo);
  return demo;
}

Demonstration record(SystemKind system, std::span<const double> t, const std::vector<Eigen::VectorXd>& states,
                     Label label, std::string id, Source source)
{
  if (t.size() != states.size())
  {
    throw DimensionError("record: timestamp and state counts differ");
  }
  DemoRecorder rec(system, state_dim_of(system));
  for (std::size_t i = 0; i < t.size(); ++i)
  {
    rec.push(t[i], states[i]);
  }
  return rec.finalize(std::move(id), label, source);
}

// ---------------------------------------------------------------------------
// Sets

DemoSet DemoSet::for_system(SystemKind system)
{
  const auto sys = make_system(system);
  DemoSet set;
  set.system = system;
  set.domain = sys->ergodic_domain();
  set.projection = sys->ergodic_projection();
  return set;
}

const Demonstration* DemoSet::find(std::string_view id) const
{
  for (const auto& d : demos)
  {
    if (d.id == id)
    {
      return &d;
    }
  }
  return nullptr;
}

std::size_t DemoSet::count(Label label) const
{
  std::size_t n = 0;
  for (const auto& d : demos)
  {
    n += d.label == label ? 1 : 0;
  }
  return n;
}

std::pair<DemoSet, DemoSet> split_by_label(const DemoSet& set)
{
  DemoSet pos = set;
  DemoSet neg = set;
  pos.demos.clear();
  neg.demos.clear();
  for (const auto& d : set.demos)
  {
    (d.label == Label::positive ? pos : neg).demos.push_back(d);
  }
  return {std::move(pos), std::move(neg)};
}

// ---------------------------------------------------------------------------
// Serialization

std::string format_double(double v)
{
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%#.17g", v);
  return buf;
}

namespace
{
void append_array(std::string& out, std::span<const double> values)
{
  out += '[';
  for (std::size_t i = 0; i < values.size(); ++i)
  {
    if (i > 0)
    {
      out += ',';
    }
    out += format_double(values[i]);
  }
  out += ']';
}

std::string demo_line(const Demonstration& d)
{
  std::string line = "{\"id\":" + json(d.id).dump() + ",\"label\":\"" + std::string(to_string(d.label)) +
                     "\",\"source\":\"" + std::string(to_string(d.source)) + "\"";
  if (d.weight_override)
  {
    line += ",\"weight\":" + format_double(*d.weight_override);
  }
  if (d.seed)
  {
    line += ",\"seed\":" + std::to_string(*d.seed);
  }
  line += ",\"t\":";
  append_array(line, d.samples.t);
  line += ",\"x\":[";
  for (std::size_t i = 0; i < d.samples.size(); ++i)
  {
    if (i > 0)
    {
      line += ',';
    }
    append_array(line, d.samples.state(i));
  }
  line += "]}";
  return line;
}

template <typename T>
T require(const json& obj, const char* key, std::size_t line)
{
  if (!obj.contains(key))
  {
    throw ParseError(std::string("missing field '") + key + "'", line);
  }
  try
  {
    return obj.at(key).get<T>();
  }
  catch (const json::exception& e)
  {
    throw ParseError(std::string("field '") + key + "': " + e.what(), line);
  }
}
}  // namespace

std::string serialize_demos(const DemoSet& set)
{
  const auto sys = make_system(set.system);
  json header = {{"version", 1},
                 {"system", std::string(to_string(set.system))},
                 {"state_dim", sys->state_dim()},
                 {"state_names", sys->state_names()}};
  std::string out = header.dump() + "\n";
  for (const auto& d : set.demos)
  {
    out += demo_line(d);
    out += '\n';
  }
  return out;
}

DemoSet parse_demos(std::string_view text)
{
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::optional<DemoSet> set;
  std::size_t state_dim = 0;
  std::set<std::string> ids;

  while (std::getline(in, line))
  {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos)
    {
      continue;
    }
    json obj;
    try
    {
      obj = json::parse(line);
    }
    catch (const json::parse_error& e)
    {
      throw ParseError(e.what(), line_no);
    }
    if (!obj.is_object())
    {
      throw ParseError("expected a JSON object", line_no);
    }

    if (!set)
    {
      if (require<int>(obj, "version", line_no) != 1)
      {
        throw ParseError("unsupported demo file version", line_no);
      }
      SystemKind system{};
      try
      {
        system = system_from_string(require<std::string>(obj, "system", line_no));
      }
      catch (const std::invalid_argument& e)
      {
        throw ParseError(e.what(), line_no);
      }
      set = DemoSet::for_system(system);
      state_dim = require<std::size_t>(obj, "state_dim", line_no);
      if (state_dim != state_dim_of(system))
      {
        throw DimensionError("line " + std::to_string(line_no) + ": state_dim " + std::to_string(state_dim) +
                             " does not match system " + std::string(to_string(system)));
      }
      continue;
    }

    Demonstration d;
    d.system = set->system;
    d.id = require<std::string>(obj, "id", line_no);
    try
    {
      d.label = label_from_string(require<std::string>(obj, "label", line_no));
      d.source = source_from_string(require<std::string>(obj, "source", line_no));
    }
    catch (const std::invalid_argument& e)
    {
      throw ParseError(e.what(), line_no);
    }
    if (obj.contains("weight"))
    {
      d.weight_override = require<double>(obj, "weight", line_no);
    }
    if (obj.contains("seed"))
    {
      d.seed = require<std::uint64_t>(obj, "seed", line_no);
    }
    d.samples.t = require<std::vector<double>>(obj, "t", line_no);
    const auto rows = require<std::vector<std::vector<double>>>(obj, "x", line_no);
    if (rows.size() != d.samples.t.size())
    {
      throw ParseError("'t' and 'x' lengths differ", line_no);
    }
    d.samples.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(state_dim));
    for (std::size_t i = 0; i < rows.size(); ++i)
    {
      if (rows[i].size() != state_dim)
      {
        throw DimensionError("line " + std::to_string(line_no) + ": sample " + std::to_string(i) + " has " +
                             std::to_string(rows[i].size()) + " entries, expected " + std::to_string(state_dim));
      }
      for (std::size_t j = 0; j < state_dim; ++j)
      {
        d.samples.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
      }
    }
    try
    {
      validate(d);
    }
    catch (const DimensionError&)
    {
      throw;
    }
    catch (const std::exception& e)
    {
      throw ParseError(e.what(), line_no);
    }
    if (!ids.insert(d.id).second)
    {
      throw ParseError("duplicate demo id '" + d.id + "'", line_no);
    }
    set->demos.push_back(std::move(d));
  }
  if (!set)
  {
    throw ParseError("missing header line", 0);
  }
  return std::move(*set);
}

void save_demos(const std::filesystem::path& path, const DemoSet& set)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
  {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out << serialize_demos(set);
}

DemoSet load_demos(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
  {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_demos(buf.str());
}

}  // namespace ergodic
