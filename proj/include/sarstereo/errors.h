#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sarstereo {

/// Failure categories surfaced by the library. The CLI maps these onto exit
/// codes and prints the category name.
enum class ErrorCode {
    InvalidArgument,
    NonConvergence,
    OutOfTrackBounds,
    NoZeroDoppler,
    NoIntersection,
    DegenerateGeometry,
    MalformedHeader,
    TruncatedPayload,
    DimensionOverflow,
    MissingField,
    InconsistentTrajectory,
    IoFailure,
    PatchLargerThanImage,
    PatchTooSmall,
    Timeout,
    MalformedResponse,
    SpawnFailure,
    EmptyFusion,
    InsufficientOverlap,
    SplitLeakage,
    DimensionMismatch,
    NoOverlap,
    FootprintMiss,
    ConfigError,
};

std::string_view to_string(ErrorCode code);

/// Coarse category: config, io, geometry, matcher or data.
std::string_view category(ErrorCode code);

/// Process exit code per category: config 2, io 3, geometry 4, matcher 5,
/// data 6. Exit code 1 is reserved for unexpected failures.
int exit_code(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, std::string field = {});

    ErrorCode code() const noexcept { return code_; }

    /// Offending field or path, when the error names one.
    const std::string& field() const noexcept { return field_; }

    /// Message without the category prefix that what() carries.
    const std::string& message() const noexcept { return message_; }

private:
    ErrorCode code_;
    std::string message_;
    std::string field_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message,
                       std::string field = {});

} // namespace sarstereo
