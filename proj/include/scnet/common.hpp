#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace scnet {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

struct EmptyMaskError : std::runtime_error {
  explicit EmptyMaskError(const std::string& what) : std::runtime_error(what) {}
};

struct EmptyLossError : std::runtime_error {
  explicit EmptyLossError(const std::string& what) : std::runtime_error(what) {}
};

struct NoBackgroundError : std::runtime_error {
  explicit NoBackgroundError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Carries the byte offset at which a checkpoint file stopped making sense.
struct CheckpointError : std::runtime_error {
  std::size_t offset;
  CheckpointError(const std::string& what, std::size_t at)
      : std::runtime_error(what + " (offset " + std::to_string(at) + ")"), offset(at) {}
};

}  // namespace scnet
