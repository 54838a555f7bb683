#pragma once

#include <stdexcept>
#include <string>

namespace fnd {

/// Invalid or inconsistent input data (malformed files, broken invariants).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller passed arguments outside an operation's contract.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace fnd
