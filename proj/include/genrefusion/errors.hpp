#pragma once

#include <stdexcept>
#include <string>

namespace genrefusion {

// Base for everything the engine can throw; the CLI maps any Error to a
// nonzero exit with the message on stderr.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/dimension mismatch between tensors.
struct DimensionError : Error {
    using Error::Error;
};

// Non-finite values produced or encountered by a numeric operation.
struct NumericError : Error {
    using Error::Error;
};

// Class/token index out of range.
struct LabelError : Error {
    using Error::Error;
};

// A precondition of an API was violated by the caller.
struct ContractError : Error {
    using Error::Error;
};

// Filesystem-level failure (missing file, unwritable directory).
struct IoError : Error {
    using Error::Error;
};

// File exists but its contents cannot be parsed.
struct FormatError : Error {
    using Error::Error;
};

// A raw genre string has no canonical mapping.
struct GenreError : Error {
    using Error::Error;
};

// Bad or unknown configuration key/value.
struct ConfigError : Error {
    using Error::Error;
};

// Checkpoint and prepared data disagree.
struct CompatibilityError : Error {
    using Error::Error;
};

// Command-line misuse.
struct UsageError : Error {
    using Error::Error;
};

}  // namespace genrefusion
