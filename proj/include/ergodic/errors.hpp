#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ergodic
{

/// Shape disagreement between two objects that must share a lattice or state layout.
class DimensionError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed demonstration, task, or configuration input.
class ParseError : public std::runtime_error
{
public:
  ParseError(const std::string& what, std::size_t line)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line)
  {
  }

  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

/// Timestamps not strictly increasing, or too few samples to define a trajectory.
class TrajectoryError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// A fusion mode was requested without the demonstration labels it needs.
class LabelMissingError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical integration produced a non-finite state.
class IntegrationDiverged : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// A synthetic demonstrator could not produce a demo satisfying its contract.
class GenerationError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

}  // namespace ergodic
