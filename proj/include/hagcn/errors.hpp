#pragma once

#include <stdexcept>
#include <string>

namespace hagcn {

// Incompatible tensor shapes or ranks.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input files: skeletons, caches, checkpoints, edge lists.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration values or arguments outside an operation's contract.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite losses, undefined ratios, non-deterministic functions, graph cycles.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hagcn
