#pragma once

#include <stdexcept>
#include <string>

namespace semfuse {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Weights file missing, unreadable or truncated.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// A tensor does not have the shape the architecture expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Image too small for the network.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Unknown layer name requested as a tap.
class TapError : public Error {
 public:
  using Error::Error;
};

/// Caller violated a precondition (mismatched shapes, invalid class id, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Optimisation produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// Normalisation of a constant map was requested with the strict policy.
class DegenerateMapError : public Error {
 public:
  using Error::Error;
};

/// Operation not available for this kind of input (e.g. colour images in metrics).
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// Image file could not be decoded or written.
class ImageIoError : public Error {
 public:
  using Error::Error;
};

}  // namespace semfuse
