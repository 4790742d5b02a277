#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "ergodic/dynamics.hpp"
#include "ergodic/spectral.hpp"

namespace ergodic
{

enum class Label
{
  positive,
  negative
};

enum class Source
{
  human,
  synthetic
};

std::string_view to_string(Label label);
std::string_view to_string(Source source);
Label label_from_string(std::string_view name);
Source source_from_string(std::string_view name);

/// One labeled demonstration, stored in the full system state dimension.
struct Demonstration
{
  std::string id;
  SystemKind system = SystemKind::cartpole;
  Trajectory samples;
  Label label = Label::positive;
  Source source = Source::human;
  std::optional<double> weight_override;
  std::optional<std::uint64_t> seed;

  double duration() const { return samples.duration(); }
  std::size_t state_dim() const { return static_cast<std::size_t>(samples.x.cols()); }

  bool operator==(const Demonstration& other) const;
};

/// Throws unless the demo has >= 2 samples, increasing time, finite states of the system's dimension.
void validate(const Demonstration& demo);

/// State dimension of the benchmark system (used for validating demo files).
std::size_t state_dim_of(SystemKind kind);

/**
 * Accumulates (t, state) samples from a live stream and seals them into a
 * Demonstration. Rejects time regressions as they arrive.
 */
class DemoRecorder
{
public:
  DemoRecorder(SystemKind system, std::size_t state_dim);

  void push(double t, const Eigen::VectorXd& state);
  std::size_t size() const { return t_.size(); }

  /// Validates and returns the demo; the recorder is left empty.
  Demonstration finalize(std::string id, Label label, Source source = Source::human);

private:
  SystemKind system_;
  std::size_t state_dim_;
  std::vector<double> t_;
  std::vector<double> x_;
};

/// Builds a validated demo from an ordered stream of samples.
Demonstration record(SystemKind system, std::span<const double> t, const std::vector<Eigen::VectorXd>& states,
                     Label label, std::string id = "demo", Source source = Source::human);

struct DemoSet
{
  SystemKind system = SystemKind::cartpole;
  std::vector<Demonstration> demos;
  Domain domain;
  std::vector<int> projection;

  /// Empty set carrying the system's default ergodic domain and projection.
  static DemoSet for_system(SystemKind system);

  const Demonstration* find(std::string_view id) const;
  std::size_t count(Label label) const;
};

/// Stable partition into (positive, negative) subsets.
std::pair<DemoSet, DemoSet> split_by_label(const DemoSet& set);

/// Serializes to the .demos.jsonl text format (header line, then one demo per line).
std::string serialize_demos(const DemoSet& set);
DemoSet parse_demos(std::string_view text);

void save_demos(const std::filesystem::path& path, const DemoSet& set);
DemoSet load_demos(const std::filesystem::path& path);

/// Shortest-exact decimal representation with at least 17 significant digits.
std::string format_double(double v);

}  // namespace ergodic
