#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace poisonlab {

// Bad input: malformed files, inconsistent shapes, invalid configuration.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numeric failure during training or evaluation.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace poisonlab
