#pragma once

#include <stdexcept>
#include <string>

namespace lady
{

class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not chain or do not match a configuration.
class DimensionError : public Error
{
public:
  using Error::Error;
};

/// Invalid configuration value (unknown activation tag, mode/chunk mismatch, bad probability...).
class ConfigError : public Error
{
public:
  using Error::Error;
};

/// Non-finite value encountered in a numeric kernel.
class NumericError : public Error
{
public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractViolation : public Error
{
public:
  using Error::Error;
};

class OrderingError : public Error
{
public:
  using Error::Error;
};

class SceneError : public Error
{
public:
  using Error::Error;
};

class InsufficientDataError : public Error
{
public:
  using Error::Error;
};

/// Malformed snapshot or input file.
class FormatError : public Error
{
public:
  using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error
{
public:
  using Error::Error;
};

}  // namespace lady
