#pragma once

#include <stdexcept>
#include <string>

namespace langgrasp {

// Caller broke a documented precondition (shape mismatch, empty input, bad range).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced a non-finite value or diverged.
class NumericFault : public std::runtime_error {
 public:
  NumericFault(std::string where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

// Missing, unreadable or malformed artifact on disk.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define LANGGRASP_REQUIRE(cond, msg)                                  \
  do {                                                                \
    if (!(cond)) throw ::langgrasp::ContractViolation(std::string(msg)); \
  } while (0)

}  // namespace langgrasp
