#pragma once

#include <stdexcept>
#include <string>

namespace prism {

// Every failure the library reports derives from prism::Error so callers
// (the CLI in particular) can map kinds onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

#define PRISM_DEFINE_ERROR(Name, tag)                           \
  class Name : public Error {                                   \
   public:                                                      \
    using Error::Error;                                         \
    const char* kind() const noexcept override { return tag; }  \
  };

PRISM_DEFINE_ERROR(DimensionError, "dimension")
PRISM_DEFINE_ERROR(InvalidArgument, "invalid_argument")
PRISM_DEFINE_ERROR(NonFiniteError, "non_finite")
PRISM_DEFINE_ERROR(SingularMatrixError, "singular_matrix")
PRISM_DEFINE_ERROR(NeumannGuardError, "neumann_guard")
PRISM_DEFINE_ERROR(DegenerateBasisError, "degenerate_basis")
PRISM_DEFINE_ERROR(DegenerateInputError, "degenerate_input")
PRISM_DEFINE_ERROR(NumericalInstabilityError, "numerical_instability")
PRISM_DEFINE_ERROR(DivergenceError, "divergence")
PRISM_DEFINE_ERROR(InfeasibleConfigError, "infeasible_config")
PRISM_DEFINE_ERROR(FormatError, "format")
PRISM_DEFINE_ERROR(LengthError, "length")
PRISM_DEFINE_ERROR(VersionError, "version")
PRISM_DEFINE_ERROR(IoError, "io")
PRISM_DEFINE_ERROR(ParseError, "parse")

#undef PRISM_DEFINE_ERROR

}  // namespace prism
