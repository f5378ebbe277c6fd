#pragma once

#include <stdexcept>
#include <string>

namespace patchnet {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/op dimension disagreements. The message carries the dimension report.
struct ShapeError : Error {
    using Error::Error;
};

// Non-finite values detected in tensor data or op outputs.
struct NumericError : Error {
    using Error::Error;
};

// File and format problems (PGM/PPM, manifests, checkpoints).
struct IoError : Error {
    using Error::Error;
};

// Bad configuration: unknown keys, invalid ranges, inconsistent specs.
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace patchnet
