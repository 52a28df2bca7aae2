#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vfm {

// Input outside the domain of a physical relation (nonpositive pressure, p_r > 1, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A value object violates one of its invariants (e.g. mass fractions do not close).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller broke an API contract (dimension mismatch, reused tape, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Bad or incomplete configuration, scenario or prior specification.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IngestError : public std::runtime_error {
 public:
  IngestError(std::size_t row, const std::string& what)
      : std::runtime_error("row " + std::to_string(row) + ": " + what), row_(row) {}

  // 1-based line number in the input, header is line 1.
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// A model evaluation produced something unusable (negative radicand, floored substitutions).
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t epoch, std::size_t batch, const std::string& what)
      : std::runtime_error("diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch) + ": " + what),
        epoch_(epoch),
        batch_(batch) {}

  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

}  // namespace vfm
