#pragma once
#include <stdexcept>
#include <string>

namespace dgf {

// Caller broke an interface contract (bad shape, bad argument, wrong state).
struct ContractViolation : std::runtime_error {
  explicit ContractViolation(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerically invalid input or result (div by zero, log of <=0, non-finite).
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// File or serialization problem.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dgf
