#pragma once

#include <stdexcept>
#include <string>

namespace octgan {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument values (out-of-range probabilities, counts, flags).
class ParameterError : public Error {
public:
  using Error::Error;
};

/// Tensor or image dimensions that do not fit the operation.
class ShapeError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

/// NaN/Inf values or a matrix that should be PSD but is not.
class NumericError : public Error {
public:
  using Error::Error;
};

/// Wrong magic bytes or unsupported version in a serialized container.
class FormatError : public Error {
public:
  using Error::Error;
};

/// Digest mismatch or truncated payload.
class CorruptionError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class ConflictError : public Error {
public:
  using Error::Error;
};

class NotFoundError : public Error {
public:
  using Error::Error;
};

} // namespace octgan
