#pragma once

#include <stdexcept>
#include <string>

namespace coral {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Vector or code length does not match the configured latent dimension.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes disagree between producer and consumer.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument is outside its documented domain (tau, layer index, ...).
class RangeError : public Error {
 public:
  using Error::Error;
};

/// On-disk layout could not be parsed (bad magic, malformed manifest).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Format version or structural expectation mismatch.
class VersionError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public Error {
 public:
  using Error::Error;
};

/// Artifact was trained against a different backbone.
class FingerprintError : public Error {
 public:
  using Error::Error;
};

class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

}  // namespace coral
