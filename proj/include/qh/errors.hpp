#ifndef QH_ERRORS_HPP
#define QH_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace qh {

/// Base of every error raised by the library.  `name()` is the stable
/// identifier the CLI prints next to its exit code.
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& what)
      : std::runtime_error(name + ": " + what), name_(std::move(name)) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

/// Input rejected before any numerics ran (bad masses, exponents, shapes).
/// The CLI maps this family to exit code 2.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error("ValidationError", what) {}

 protected:
  ValidationError(std::string name, const std::string& what) : Error(std::move(name), what) {}
};

/// Numerical failure.  The CLI maps this family to exit code 3.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error("NumericalError", what) {}

 protected:
  NumericalError(std::string name, const std::string& what) : Error(std::move(name), what) {}
};

#define QH_DEFINE_ERROR(Base, Name)                               \
  class Name : public Base {                                      \
   public:                                                        \
    explicit Name(const std::string& what) : Base(#Name, what) {} \
  };

QH_DEFINE_ERROR(NumericalError, CollisionError)
QH_DEFINE_ERROR(NumericalError, NotOnSphereError)
QH_DEFINE_ERROR(NumericalError, BracketError)
QH_DEFINE_ERROR(NumericalError, ToleranceError)
QH_DEFINE_ERROR(NumericalError, ZeroSizeError)
QH_DEFINE_ERROR(NumericalError, OffManifoldError)
QH_DEFINE_ERROR(NumericalError, DegenerateError)
QH_DEFINE_ERROR(NumericalError, MismatchError)
QH_DEFINE_ERROR(NumericalError, StiffnessError)
QH_DEFINE_ERROR(NumericalError, FieldError)
QH_DEFINE_ERROR(NumericalError, DegenerateStateError)
QH_DEFINE_ERROR(ValidationError, DegenerateTermError)
QH_DEFINE_ERROR(ValidationError, ManevOnlyError)
QH_DEFINE_ERROR(ValidationError, AdmissibilityError)
QH_DEFINE_ERROR(ValidationError, EnergySignError)

#undef QH_DEFINE_ERROR

/// Iteration budget exhausted; carries the last residual reached.
class NoConvergenceError : public NumericalError {
 public:
  NoConvergenceError(const std::string& what, double last_residual)
      : NumericalError("NoConvergenceError", what), last_residual_(last_residual) {}
  double last_residual() const noexcept { return last_residual_; }

 private:
  double last_residual_;
};

}  // namespace qh

#endif  // QH_ERRORS_HPP
