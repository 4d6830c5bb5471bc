#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "sarstereo/errors.h"
#include "sarstereo/evalm.h"
#include "sarstereo/gtruth.h"
#include "sarstereo/poc.h"
#include "sarstereo/reconstruct.h"
#include "sarstereo/synth.h"
#include "sarstereo/tiling.h"

namespace sarstereo::pipeline {

enum class MatcherKind { Poc, External, Truth };

/// "poc", "truth" (ground-truth flow from the DSM) or "external:<command>".
struct MatcherSpec {
    MatcherKind kind = MatcherKind::Poc;
    std::string command;

    static MatcherSpec parse(const std::string& text);
    std::string str() const;
};

struct PipelineConfig {
    std::filesystem::path ref_manifest;
    std::filesystem::path src_manifest;
    std::filesystem::path dsm_manifest;
    std::filesystem::path out_dir;
    long patch_height = 560;
    long patch_width = 560;
    double overlap = 1.0 / 3.0;
    MatcherSpec matcher;
    reconstruct::ReconstructParams reconstruct;
    poc::PocParams poc;
    std::vector<double> thresholds{0.5, 1.0, 2.0, 4.0, 8.0};
    int jobs = 1;
    std::uint64_t seed = 1;
    bool calibrate = true;
    double timeout_s = 600.0;
    bool write_points = false;
    double color_limit = 5.0;

    /// Throws ConfigError naming the offending field ("reconstruct.cell_size").
    void validate() const;
};

nlohmann::json to_json(const PipelineConfig& c);
/// Overlays the keys present in `j` onto `base`. Unknown keys are rejected.
/// Relative paths are resolved against `base_dir`.
PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig base = {},
                                const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});

/// One structured log record: key=value pairs separated by spaces; values
/// containing spaces or quotes are quoted.
std::string format_log(const std::vector<std::pair<std::string, std::string>>& fields);
using LogSink = std::function<void(const std::string& line)>;

struct PlannedPatch {
    std::string id;
    tiling::PatchSpec spec;
    tiling::SrcLocation src;
};

struct TilePlan {
    tiling::PatchPlan plan;
    std::vector<PlannedPatch> patches;
    std::string ref_image_id;
    std::string src_image_id;
};

nlohmann::json to_json(const TilePlan& t);
TilePlan tile_plan_from_json(const nlohmann::json& j);

/// Stage runner. Outputs under out_dir:
///   plan.json, flows/<id>.srgr, points/<id>.txt, map.json (+ .srgr),
///   offsets.json, map_aligned.json, stats.json, stats.txt, thresholds.csv,
///   error_map.ppm and run_report.json.
class Pipeline {
public:
    explicit Pipeline(PipelineConfig config, LogSink log = {});

    TilePlan tile();
    void match();
    void triangulate();
    reconstruct::ElevationMap fuse();
    reconstruct::Offsets calibrate();
    evalm::ErrorStats eval();
    void render();
    /// All stages in order; points are kept in memory and written only with
    /// write_points.
    evalm::ErrorStats run_all();

    /// Records a failed stage in the run report without touching outputs of
    /// earlier stages.
    void record_failure(const std::string& stage, const Error& e);

    const nlohmann::json& report() const { return report_; }
    const PipelineConfig& config() const { return config_; }

    std::filesystem::path path(const std::string& name) const { return config_.out_dir / name; }
    /// Map used by eval and render: the aligned map when it exists.
    std::filesystem::path evaluated_map() const;

private:
    void log(const std::string& stage, const std::string& event,
             std::vector<std::pair<std::string, std::string>> fields = {}) const;
    void finish_stage(const std::string& stage, nlohmann::json summary, double seconds);
    void save_report() const;
    raster::GeoRaster load_dsm() const;

    PipelineConfig config_;
    LogSink log_;
    nlohmann::json report_;
    std::optional<std::vector<reconstruct::PointCloud>> clouds_;
    bool keep_points_in_memory_ = false;
};

/// Writes a rendered scene: ref/ and src/ image directories (manifest.json,
/// amplitude.srgr, layover mask), dsm/dsm.json, truth elevation rasters and
/// scene.json with the resolved spec and geometry.
nlohmann::json write_scene(const synth::RenderedScene& scene, const synth::SceneSpec& spec,
                           const std::filesystem::path& out_dir);

/// Reads a scene spec file (JSON); empty path gives the default scene.
synth::SceneSpec load_scene_spec(const std::filesystem::path& path);

} // namespace sarstereo::pipeline
