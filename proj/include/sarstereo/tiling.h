#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "sarstereo/geo.h"
#include "sarstereo/raster.h"

namespace sarstereo::tiling {

/// Patch on the reference image: upper-left pixel and size.
struct PatchSpec {
    long row = 0;
    long col = 0;
    long height = 0;
    long width = 0;

    bool operator==(const PatchSpec&) const = default;
};

struct PatchPlan {
    std::vector<PatchSpec> patches; // row-major order
    long patch_height = 0;
    long patch_width = 0;
    double overlap_fraction = 0.0;
    long image_rows = 0;
    long image_cols = 0;
    long stride_rows = 0;
    long stride_cols = 0;

    bool operator==(const PatchPlan&) const = default;
};

/// Patch origins along one axis: multiples of the stride, with the last patch
/// shifted inward so it ends on the image edge.
std::vector<long> axis_origins(long image_extent, long patch_extent, long stride);

/// Throws PatchLargerThanImage when a patch dimension exceeds the image.
PatchPlan plan_patches(long image_rows, long image_cols, long patch_height, long patch_width,
                       double overlap_fraction);
PatchPlan plan_patches(const raster::SarImage& ref, long patch_height, long patch_width,
                       double overlap_fraction);

/// Where a reference patch lands on the source image.
struct SrcLocation {
    long row = 0;
    long col = 0;
    long clamp_row = 0;       // clamped minus unclamped origin
    long clamp_col = 0;
    bool out_of_bounds = false; // patch center projected outside the source
    bool unmatchable = false;   // projection failed; origin is meaningless
    std::string reason;
};

/// Projects the reference patch center at `h_ref` (default: the reference
/// model's reference elevation) into the source image and centers an
/// equally-sized patch there, clamped to the source bounds.
SrcLocation localize_src(const geo::SarSensorModel& ref_model,
                         const geo::SarSensorModel& src_model, const PatchSpec& spec,
                         std::optional<double> h_ref = std::nullopt);

struct PatchPair {
    PatchSpec spec;
    SrcLocation src;
    raster::Raster ref_pixels;
    raster::Raster src_pixels;
};

/// Copies both crops without resampling.
PatchPair extract_pair(const raster::SarImage& ref, const raster::SarImage& src,
                       const PatchSpec& spec, const SrcLocation& src_origin);

/// Stable identifier "r<row>_c<col>" used for files and request ids.
std::string patch_id(const PatchSpec& spec);

nlohmann::json to_json(const PatchPlan& plan);
PatchPlan plan_from_json(const nlohmann::json& j);

} // namespace sarstereo::tiling
