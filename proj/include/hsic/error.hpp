#pragma once

#include <stdexcept>
#include <string>

namespace hsic {

/// Error families. The CLI maps each family to its own exit code.
enum class ErrorFamily { Shape, Parameter, Config, Data, Numeric, Label, State, Load, Input, Metric, Io };

class Error : public std::runtime_error {
 public:
  Error(ErrorFamily family, const std::string& what) : std::runtime_error(what), family_(family) {}
  ErrorFamily family() const noexcept { return family_; }

 private:
  ErrorFamily family_;
};

#define HSIC_DEFINE_ERROR(Name, Family)                                           \
  class Name : public Error {                                                     \
   public:                                                                        \
    explicit Name(const std::string& what) : Error(ErrorFamily::Family, what) {} \
  }

HSIC_DEFINE_ERROR(ShapeError, Shape);
HSIC_DEFINE_ERROR(ParameterError, Parameter);
HSIC_DEFINE_ERROR(ConfigError, Config);
HSIC_DEFINE_ERROR(DataError, Data);
HSIC_DEFINE_ERROR(NumericError, Numeric);
HSIC_DEFINE_ERROR(LabelError, Label);
HSIC_DEFINE_ERROR(StateError, State);
HSIC_DEFINE_ERROR(InputError, Input);
HSIC_DEFINE_ERROR(MetricError, Metric);
HSIC_DEFINE_ERROR(IoError, Io);

#undef HSIC_DEFINE_ERROR

/// Distinguishes the ways a binary file can fail to load.
enum class LoadFailure { BadMagic, VersionMismatch, CorruptHeader, DimensionOverflow, Truncated, TrailingBytes };

class LoadError : public Error {
 public:
  LoadError(LoadFailure failure, const std::string& what) : Error(ErrorFamily::Load, what), failure_(failure) {}
  LoadFailure failure() const noexcept { return failure_; }

 private:
  LoadFailure failure_;
};

}  // namespace hsic
