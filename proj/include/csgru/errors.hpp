#pragma once

#include <stdexcept>
#include <string>

namespace csgru {

// Shape/dimension mismatch between tensors or operators.
struct shape_error : std::runtime_error {
  explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration (bad combination, bad value, unusable option).
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Input data violates a declared contract (range, format).
struct data_error : std::runtime_error {
  explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed external file content.
struct parse_error : std::runtime_error {
  explicit parse_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced a non-finite loss.
struct divergence_error : std::runtime_error {
  explicit divergence_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad node id or malformed use of the autodiff tape.
struct tape_error : std::runtime_error {
  explicit tape_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace csgru
