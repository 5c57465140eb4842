#pragma once

#include <stdexcept>
#include <string>

namespace aifn {

// Base for every error raised by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor shapes. The message names both shapes.
struct DimensionError : Error {
    using Error::Error;
};

// Input outside an operation's documented domain (e.g. pooling an empty axis).
struct DomainError : Error {
    using Error::Error;
};

// Invalid model/training configuration (e.g. head count not dividing 2h).
struct ConfigError : Error {
    using Error::Error;
};

// API contract violation (e.g. backward on a non-scalar).
struct ContractError : Error {
    using Error::Error;
};

// Malformed external data: corpus lines, embedding files, checkpoints.
struct FormatError : Error {
    using Error::Error;
};

// Training failure such as a diverged loss.
struct TrainError : Error {
    using Error::Error;
};

}  // namespace aifn
