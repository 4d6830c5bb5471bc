#include "sarstereo/errors.h"

namespace sarstereo {

std::string_view to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::OutOfTrackBounds: return "OutOfTrackBounds";
    case ErrorCode::NoZeroDoppler: return "NoZeroDoppler";
    case ErrorCode::NoIntersection: return "NoIntersection";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::DimensionOverflow: return "DimensionOverflow";
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::InconsistentTrajectory: return "InconsistentTrajectory";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::PatchLargerThanImage: return "PatchLargerThanImage";
    case ErrorCode::PatchTooSmall: return "PatchTooSmall";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::SpawnFailure: return "SpawnFailure";
    case ErrorCode::EmptyFusion: return "EmptyFusion";
    case ErrorCode::InsufficientOverlap: return "InsufficientOverlap";
    case ErrorCode::SplitLeakage: return "SplitLeakage";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NoOverlap: return "NoOverlap";
    case ErrorCode::FootprintMiss: return "FootprintMiss";
    case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

std::string_view category(ErrorCode code)
{
    switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument:
    case ErrorCode::PatchLargerThanImage:
    case ErrorCode::PatchTooSmall:
    case ErrorCode::SplitLeakage:
        return "config";
    case ErrorCode::MalformedHeader:
    case ErrorCode::TruncatedPayload:
    case ErrorCode::DimensionOverflow:
    case ErrorCode::MissingField:
    case ErrorCode::InconsistentTrajectory:
    case ErrorCode::IoFailure:
        return "io";
    case ErrorCode::NonConvergence:
    case ErrorCode::OutOfTrackBounds:
    case ErrorCode::NoZeroDoppler:
    case ErrorCode::NoIntersection:
    case ErrorCode::DegenerateGeometry:
    case ErrorCode::FootprintMiss:
        return "geometry";
    case ErrorCode::Timeout:
    case ErrorCode::MalformedResponse:
    case ErrorCode::SpawnFailure:
        return "matcher";
    case ErrorCode::EmptyFusion:
    case ErrorCode::InsufficientOverlap:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::NoOverlap:
        return "data";
    }
    return "other";
}

int exit_code(ErrorCode code)
{
    const std::string_view c = category(code);
    if (c == "config")
        return 2;
    if (c == "io")
        return 3;
    if (c == "geometry")
        return 4;
    if (c == "matcher")
        return 5;
    if (c == "data")
        return 6;
    return 1;
}

Error::Error(ErrorCode code, const std::string& message, std::string field)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code), message_(message), field_(std::move(field))
{}

void fail(ErrorCode code, const std::string& message, std::string field)
{
    throw Error(code, message, std::move(field));
}

} // namespace sarstereo
