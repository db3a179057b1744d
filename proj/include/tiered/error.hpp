#pragma once

#include <stdexcept>
#include <string>

namespace tiered {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Validation errors: the input violates a documented precondition.
class InvalidModel : public Error {
    using Error::Error;
};
class ShapeMismatch : public Error {
    using Error::Error;
};
class NonUniqueOptimal : public Error {
    using Error::Error;
};
class ParameterOutOfRange : public Error {
    using Error::Error;
};
class PerturbationTooLarge : public Error {
    using Error::Error;
};
class UninitializedArm : public Error {
    using Error::Error;
};
class DeltaOutOfRange : public Error {
    using Error::Error;
};
class ConfigError : public Error {
    using Error::Error;
};
class SchemaMismatch : public Error {
    using Error::Error;
};

// Runtime errors: the inputs were valid but the computation could not finish.
class CalibrationFailed : public Error {
    using Error::Error;
};
class MissingArtifacts : public Error {
    using Error::Error;
};

} // namespace tiered
