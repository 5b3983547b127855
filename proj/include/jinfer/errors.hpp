#pragma once

#include <stdexcept>
#include <string>

namespace jinfer {

// Base type for everything this library throws on purpose. Argument-validation
// failures use std::invalid_argument directly; these subtypes exist where a
// caller plausibly wants to catch one condition and not another.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An enumeration (tuples or labelings) would exceed its configured cap.
struct CapExceededError : Error {
  using Error::Error;
};

// Training aborted: parameters blew up or the objective went non-finite.
struct DivergenceError : Error {
  using Error::Error;
};

// Support-set sampling asked for more instances than the pool holds.
struct InsufficientPoolError : Error {
  using Error::Error;
};

// Two answers share a first token, so the first-token approximation is
// undefined for this answer set.
struct FirstTokenAmbiguousError : Error {
  using Error::Error;
};

// Remote endpoint returned a non-retryable error status.
struct HttpError : Error {
  HttpError(int status_code, const std::string& what) : Error(what), status(status_code) {}
  int status;
};

// Remote endpoint kept failing transiently until the retry budget ran out.
struct TransientExhaustedError : Error {
  using Error::Error;
};

}  // namespace jinfer
