// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace shapectl {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Joint vector outside the hard rack limits. Carries the offending indices.
class BoundViolation : public Error {
 public:
  BoundViolation(const std::string& what, std::vector<int> indices)
      : Error(what), indices_(std::move(indices)) {}
  const std::vector<int>& indices() const { return indices_; }

 private:
  std::vector<int> indices_;
};

/// Non-finite value produced inside a numeric pipeline. `where` is a layer or
/// batch index depending on the raiser.
class NumericFault : public Error {
 public:
  NumericFault(const std::string& what, int where) : Error(what), where_(where) {}
  int where() const { return where_; }

 private:
  int where_;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class InternalFault : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InfeasiblePlan : public Error {
 public:
  using Error::Error;
};

/// Malformed or invalid message on the live wire protocol.
class ProtocolError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

}  // namespace shapectl
