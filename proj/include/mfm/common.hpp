#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mfm {

template <class T>
concept Scalar = std::floating_point<T>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/grid rank or channel-count disagreement.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid argument value (dilation < 1, patch > grid, ...).
struct ParamError : Error {
  using Error::Error;
};

// Filesystem-level failure (missing file, unwritable path).
struct IoError : Error {
  using Error::Error;
};

// Malformed file contents; message carries the byte offset.
struct ParseError : Error {
  using Error::Error;
};

// Structurally valid file that disagrees with its own declaration
// (dimension mismatch, checkpoint version/manifest conflicts).
struct FormatError : Error {
  using Error::Error;
};

// NaN/Inf surfaced where the pipeline requires finite values.
struct NumericError : Error {
  using Error::Error;
};

template <Scalar Real>
inline bool finite(Real v) {
  return std::isfinite(static_cast<double>(v));
}

}  // namespace mfm
