#pragma once

#include <stdexcept>
#include <string>

namespace reads {

// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not fit the operation (mismatched matmul extents,
// non-broadcastable elementwise operands, kernel larger than input, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A structurally valid request that cannot produce a usable result
// (zero-extent convolution output, reduction ratio not dividing C, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse: non-scalar loss, consumed tape, empty label, bad CLI input.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Numerically singular or ill-conditioned linear system.
class SolverError : public Error {
 public:
  using Error::Error;
};

// Label cannot be aligned to the available frames.
class InfeasibleAlignmentError : public Error {
 public:
  using Error::Error;
};

// Decoder asked to run past its configured step cap.
class DecodeLengthError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Unreadable files, malformed datasets or checkpoints.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace reads
