#pragma once

#include <stdexcept>
#include <string>

namespace deformsplat {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IndexError : public Error {
public:
  using Error::Error;
};

/// Covariance that is singular or not positive definite.
class DegenerateCovarianceError : public Error {
public:
  using Error::Error;
};

/// Caller violated a shape or size precondition.
class ContractError : public Error {
public:
  using Error::Error;
};

class EmptyInitializationError : public Error {
public:
  using Error::Error;
};

class InsufficientOverlapError : public Error {
public:
  using Error::Error;
};

/// A loss had no pixel or edge with nonzero weight.
class EmptySupervisionError : public Error {
public:
  using Error::Error;
};

class TooFewPointsError : public Error {
public:
  using Error::Error;
};

class DivergedOptimizationError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

class LoadError : public Error {
public:
  using Error::Error;
};

class SceneOutOfViewError : public Error {
public:
  using Error::Error;
};

/// Invalid user configuration; the CLI maps this to exit code 2.
class ConfigError : public Error {
public:
  using Error::Error;
};

} // namespace deformsplat
