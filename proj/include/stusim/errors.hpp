#pragma once

#include <stdexcept>
#include <string>

namespace stusim {

/// Bad or inconsistent input data (CLI exit code 1).
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or flags (CLI exit code 2).
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// The grading backend could not produce a report. Retriable; never a
/// grading outcome.
class GraderUnavailable : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class SerializeError : public DataError {
  public:
    explicit SerializeError(const std::string& what, int index = -1) : DataError(what), index_(index) {}
    int index() const { return index_; }

  private:
    int index_;
};

/// The most recent submission alone exceeds the token budget.
class CannotFit : public DataError {
  public:
    using DataError::DataError;
};

/// Model output had no non-whitespace content.
class EmptyGeneration : public DataError {
  public:
    EmptyGeneration() : DataError("empty_generation") {}
};

/// Chat endpoint unreachable after all retries.
class EndpointUnavailable : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Chat endpoint answered with a body that does not follow the protocol.
class ProtocolError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace stusim
