#pragma once

#include <stdexcept>
#include <string>

namespace brq {

// Failure categories surfaced by the library. The CLI maps NonFiniteGradient
// to exit code 3 and every other kind to exit code 2.
enum class ErrorKind {
    UnsupportedFormat,
    CorruptFile,
    TooShort,
    EmptyInput,
    InvalidConfig,
    DimensionMismatch,
    IndexOutOfRange,
    LengthMismatch,
    EmptyMask,
    InvalidEpsilon,
    InvalidRange,
    EmptyManifest,
    ShapeMismatch,
    NonFiniteGradient,
    DegenerateLabels,
    EmptyEval,
    InvalidGrid,
    IoError,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

} // namespace brq
