#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sane {

// Input is structurally valid but numerically unusable (zero-norm vector,
// empty same-class key pool, ...).
class DegenerateInputError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// An iterative routine failed to converge or produced non-finite values.
class NumericFailureError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Rejection sampling exhausted its round budget.
class GenerationFailureError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// A positive pair cannot be formed (single-crop center with eps > 0).
class PairingFailureError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Training loss exceeded the divergence threshold; carries the iteration.
class DivergenceError : public std::runtime_error {
public:
  DivergenceError(const std::string& what, std::size_t iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  std::size_t iteration() const { return iteration_; }

private:
  std::size_t iteration_;
};

// Config schema violation: missing/unknown key, type mismatch.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace sane
