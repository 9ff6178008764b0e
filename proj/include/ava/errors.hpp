#pragma once

#include <stdexcept>
#include <string>

namespace ava {

/// Base class for recoverable library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Input-contract violations (bad shapes, malformed files, invalid configs).
/// CLI maps these to exit code 2.
struct ValidationError : Error {
    using Error::Error;
};

struct ShapeMismatch : ValidationError {
    using ValidationError::ValidationError;
};
struct LengthMismatch : ValidationError {
    using ValidationError::ValidationError;
};
struct NonScalarLoss : ValidationError {
    using ValidationError::ValidationError;
};
struct DoubleBackward : Error {
    using Error::Error;
};
struct NonFiniteValue : Error {
    using Error::Error;
};

struct MalformedRow : ValidationError {
    using ValidationError::ValidationError;
};
struct EmptyTrial : ValidationError {
    using ValidationError::ValidationError;
};
struct EmptyFeature : ValidationError {
    using ValidationError::ValidationError;
};
struct OverlappingSpans : ValidationError {
    using ValidationError::ValidationError;
};

struct BadMagic : ValidationError {
    using ValidationError::ValidationError;
};
struct TruncatedFile : ValidationError {
    using ValidationError::ValidationError;
};
struct DimOverflow : ValidationError {
    using ValidationError::ValidationError;
};
struct IoError : Error {
    using Error::Error;
};

struct SubjectSplitImpossible : ValidationError {
    using ValidationError::ValidationError;
};
struct DegenerateRaters : ValidationError {
    using ValidationError::ValidationError;
};
struct NonFiniteInput : ValidationError {
    using ValidationError::ValidationError;
};

struct EmptyFold : ValidationError {
    using ValidationError::ValidationError;
};
struct CheckpointMismatch : ValidationError {
    using ValidationError::ValidationError;
};

}  // namespace ava
