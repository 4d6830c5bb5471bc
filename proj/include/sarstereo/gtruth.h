#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "sarstereo/flow.h"
#include "sarstereo/geo.h"
#include "sarstereo/raster.h"
#include "sarstereo/tiling.h"

namespace sarstereo::gtruth {

struct ElevationReport {
    std::size_t pixels = 0;
    std::size_t converged = 0;
    std::size_t dsm_miss = 0;          // ground point outside the DSM or on nodata
    std::size_t nonconvergent = 0;
    std::size_t projection_failed = 0;
    std::size_t iterations = 0;        // summed over converged pixels
    int max_iterations = 0;

    double mean_iterations() const
    {
        return converged ? double(iterations) / double(converged) : 0.0;
    }
    ElevationReport& operator+=(const ElevationReport& o);
};

inline constexpr double kElevationTolerance = 0.05; // m
inline constexpr int kElevationMaxIterations = 20;

/// Per-pixel terrain height seen by the image, by the fixed point
/// h <- DSM(inverse_project(pixel, h)) started at the model's reference
/// elevation. Nodata where the DSM is missing or the iteration diverges.
raster::Raster elevation_in_image_geometry(const raster::GeoRaster& dsm,
                                           const geo::SarSensorModel& model,
                                           ElevationReport* report = nullptr);

/// Same over an image window; finite values of `seed` (window-sized) replace
/// the reference elevation as starting heights.
raster::Raster elevation_in_image_geometry(const raster::GeoRaster& dsm,
                                           const geo::SarSensorModel& model,
                                           const tiling::PatchSpec& window,
                                           const raster::Raster* seed,
                                           ElevationReport* report = nullptr);

/// Ground-truth disparity D (Ref patch pixel -> Src patch pixel, patch-local)
/// and its binary confidence C.
struct Disparity {
    raster::Raster D; // 2 channels, nodata where C = 0
    raster::Raster C; // 1 channel, 0 or 1
    std::size_t valid = 0;

    FlowGrid to_flow() const;
};

Disparity disparity_groundtruth(const raster::Raster& gt_elev, const tiling::PatchSpec& spec,
                                long src_row, long src_col, const geo::SarSensorModel& ref_model,
                                const geo::SarSensorModel& src_model);

struct PairInput {
    std::string name;
    raster::SarImage ref;
    raster::SarImage src;
};

struct SplitEntry {
    std::string split; // train | val | test
    std::string area;  // observation area label
};

/// Pair name -> assignment.
using SplitSpec = std::map<std::string, SplitEntry>;

SplitSpec split_from_json(const nlohmann::json& j);

/// Throws SplitLeakage naming the first train/val pair that shares an
/// observation area with a test pair, and ConfigError for unknown splits or
/// unassigned pairs.
void validate_split(const std::vector<std::string>& pair_names, const SplitSpec& split);

struct DatasetOptions {
    long patch_height = 560;
    long patch_width = 560;
    double overlap_fraction = 1.0 / 3.0;
};

struct DatasetReport {
    std::map<std::string, std::size_t> patches_per_split;
    std::size_t unmatchable = 0;
    ElevationReport elevation;
};

/// Writes dataset/{train,val,test}/<pair>/<patch_id>/{ref,src,D,C,elev}.srgr
/// plus meta.json, and a top-level split.json.
DatasetReport build_dataset(const std::vector<PairInput>& pairs, const raster::GeoRaster& dsm,
                            const DatasetOptions& options, const SplitSpec& split,
                            const std::filesystem::path& out_dir);

} // namespace sarstereo::gtruth
