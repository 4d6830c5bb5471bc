#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "sarstereo/errors.h"
#include "sarstereo/flow.h"
#include "sarstereo/tiling.h"

namespace sarstereo::bridge {

// Request directory: ref.srgr, src.srgr, request.json, then request.ready.
// Response: flow.srgr (drow, dcol, confidence) and response.json, then
// response.ready. A response.json carrying "error" reports a failed request.
inline constexpr const char* kRequestMarker = "request.ready";
inline constexpr const char* kResponseMarker = "response.ready";
inline constexpr const char* kRequestSidecar = "request.json";
inline constexpr const char* kResponseSidecar = "response.json";
inline constexpr const char* kShutdownMarker = "shutdown";

struct MatchRequest {
    std::string request_id;
    std::filesystem::path dir;
    std::filesystem::path ref_patch;
    std::filesystem::path src_patch;
    nlohmann::json sidecar;
};

/// Materializes a request. Every file is written to a temporary name and
/// renamed; the marker comes last.
MatchRequest write_request(const tiling::PatchPair& pair, const std::filesystem::path& dir,
                           const std::string& request_id, const std::string& ref_image_id = {},
                           const std::string& src_image_id = {});

/// Parses an existing request directory (consumer side).
MatchRequest read_request(const std::filesystem::path& dir);

/// Producer-side check: nullopt while no marker exists; otherwise the
/// validated flow. Throws MalformedResponse naming the violation.
std::optional<FlowGrid> try_read_response(const std::filesystem::path& dir);

/// Polls for the response marker. Throws Timeout or MalformedResponse.
FlowGrid read_response(const std::filesystem::path& dir, double timeout_s);

/// Consumer side.
void write_response(const std::filesystem::path& dir, const FlowGrid& flow);
void write_error_response(const std::filesystem::path& dir, const std::string& message);

struct MatchJob {
    std::string request_id;
    const tiling::PatchPair* pair = nullptr;
    std::string ref_image_id;
    std::string src_image_id;
};

struct MatcherOptions {
    std::filesystem::path work_dir; // empty: a fresh temporary directory
    double timeout_s = 600.0;       // per request, from the moment it is written
    double poll_interval_s = 0.002;
    double shutdown_grace_s = 2.0;
    bool keep_work_dir = false;
};

struct PairResult {
    std::optional<FlowGrid> flow;
    std::optional<ErrorCode> error;
    std::string message;

    bool ok() const { return flow.has_value(); }
};

struct MatcherRun {
    std::vector<PairResult> results; // input order
    std::size_t failures = 0;
    std::filesystem::path work_dir;
};

/// Starts `sh -c '<command> "$1"' sh <work_dir>` once and feeds it requests
/// under work_dir/<request_id>/, keeping at most `parallelism` outstanding.
/// Per-pair failures are recorded, not thrown. Throws SpawnFailure when the
/// process cannot start or exits before answering anything.
MatcherRun run_external_matcher(const std::string& command, std::span<const MatchJob> jobs,
                                std::size_t parallelism, const MatcherOptions& options = {});

} // namespace sarstereo::bridge
