#pragma once

#include <stdexcept>
#include <string>

namespace comodal {

/// Base class of every error raised by the library. `kind()` is a short
/// machine-parsable tag used by the CLI when it prints a failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

#define COMODAL_DEFINE_ERROR(Name, tag)                               \
  class Name : public Error {                                         \
   public:                                                            \
    using Error::Error;                                               \
    const char* kind() const noexcept override { return tag; }        \
  }

COMODAL_DEFINE_ERROR(ConfigError, "config");
COMODAL_DEFINE_ERROR(ContractError, "contract");
COMODAL_DEFINE_ERROR(NumericError, "numeric");
COMODAL_DEFINE_ERROR(IoError, "io");
COMODAL_DEFINE_ERROR(GenerationError, "generation");
COMODAL_DEFINE_ERROR(IndexError, "index");
COMODAL_DEFINE_ERROR(EmptyMaskError, "empty-mask");
COMODAL_DEFINE_ERROR(UndefinedMetricError, "undefined-metric");

#undef COMODAL_DEFINE_ERROR

}  // namespace comodal
