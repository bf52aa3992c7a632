#pragma once

#include <stdexcept>
#include <string>

namespace pcstream {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A coordinate lies outside the quantization box.
class OutOfRangeError : public Error {
 public:
  using Error::Error;
};

// Corrupted or truncated payload / wire data.
class DecodeError : public Error {
 public:
  using Error::Error;
};

// Invalid arguments or configuration (bad q/c, empty grid, bad scenario).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Least-squares fit failed; the message names the degenerate features.
class FitError : public Error {
 public:
  using Error::Error;
};

// No calibration row satisfies the distortion budget.
class InfeasibleError : public Error {
 public:
  InfeasibleError(const std::string& what, double best_achievable)
      : Error(what), best_achievable_(best_achievable) {}
  double best_achievable() const { return best_achievable_; }

 private:
  double best_achievable_;
};

// Feedback counters regressed.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// A cross-module runtime invariant was violated during a scenario run.
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace pcstream
