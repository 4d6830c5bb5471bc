#include "sarstereo/tiling.h"

#include <algorithm>
#include <cmath>

#include "sarstereo/errors.h"

namespace sarstereo::tiling {

using nlohmann::json;

std::vector<long> axis_origins(long image_extent, long patch_extent, long stride)
{
    std::vector<long> out;
    const long last = image_extent - patch_extent;
    for (long p = 0; p < last; p += stride)
        out.push_back(p);
    out.push_back(last);
    return out;
}

PatchPlan plan_patches(long image_rows, long image_cols, long patch_height, long patch_width,
                       double overlap_fraction)
{
    if (patch_height < 1 || patch_width < 1)
        fail(ErrorCode::InvalidArgument, "patch dimensions must be positive");
    if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0))
        fail(ErrorCode::InvalidArgument, "overlap fraction must lie in [0, 1)");
    if (patch_height > image_rows || patch_width > image_cols)
        fail(ErrorCode::PatchLargerThanImage,
             std::to_string(patch_height) + "x" + std::to_string(patch_width) +
                     " patch does not fit a " + std::to_string(image_rows) + "x" +
                     std::to_string(image_cols) + " image");

    PatchPlan plan;
    plan.patch_height = patch_height;
    plan.patch_width = patch_width;
    plan.overlap_fraction = overlap_fraction;
    plan.image_rows = image_rows;
    plan.image_cols = image_cols;
    plan.stride_rows = std::max(1L, static_cast<long>(std::floor(
                                            double(patch_height) * (1.0 - overlap_fraction))));
    plan.stride_cols = std::max(1L, static_cast<long>(std::floor(
                                            double(patch_width) * (1.0 - overlap_fraction))));

    const auto rows = axis_origins(image_rows, patch_height, plan.stride_rows);
    const auto cols = axis_origins(image_cols, patch_width, plan.stride_cols);
    plan.patches.reserve(rows.size() * cols.size());
    for (long r : rows)
        for (long c : cols)
            plan.patches.push_back({r, c, patch_height, patch_width});
    return plan;
}

PatchPlan plan_patches(const raster::SarImage& ref, long patch_height, long patch_width,
                       double overlap_fraction)
{
    return plan_patches(static_cast<long>(ref.model.rows), static_cast<long>(ref.model.cols),
                        patch_height, patch_width, overlap_fraction);
}

SrcLocation localize_src(const geo::SarSensorModel& ref_model,
                         const geo::SarSensorModel& src_model, const PatchSpec& spec,
                         std::optional<double> h_ref)
{
    SrcLocation loc;
    const double height = h_ref.value_or(ref_model.reference_elevation);
    const geo::ImageCoord center{spec.row + (spec.height - 1) / 2.0,
                                 spec.col + (spec.width - 1) / 2.0};
    geo::ImageCoord projected;
    try {
        const geo::GeodeticCoord ground = geo::inverse_project(ref_model, center, height);
        projected = geo::forward_project(
                src_model, geo::geodetic_to_ecef(ground, ref_model.ellipsoid));
    } catch (const Error& e) {
        loc.unmatchable = true;
        loc.reason = e.what();
        return loc;
    }

    const auto src_rows = static_cast<long>(src_model.rows);
    const auto src_cols = static_cast<long>(src_model.cols);
    loc.out_of_bounds = !(projected.row >= -0.5 && projected.row < src_rows - 0.5 &&
                          projected.col >= -0.5 && projected.col < src_cols - 0.5);
    if (spec.height > src_rows || spec.width > src_cols) {
        loc.unmatchable = true;
        loc.reason = "source image smaller than the patch";
        return loc;
    }

    const long row = std::lround(projected.row - (spec.height - 1) / 2.0);
    const long col = std::lround(projected.col - (spec.width - 1) / 2.0);
    loc.row = std::clamp(row, 0L, src_rows - spec.height);
    loc.col = std::clamp(col, 0L, src_cols - spec.width);
    loc.clamp_row = loc.row - row;
    loc.clamp_col = loc.col - col;
    return loc;
}

PatchPair extract_pair(const raster::SarImage& ref, const raster::SarImage& src,
                       const PatchSpec& spec, const SrcLocation& src_origin)
{
    PatchPair pair;
    pair.spec = spec;
    pair.src = src_origin;
    const auto h = static_cast<std::size_t>(spec.height);
    const auto w = static_cast<std::size_t>(spec.width);
    pair.ref_pixels = ref.amplitude.crop(static_cast<std::size_t>(spec.row),
                                         static_cast<std::size_t>(spec.col), h, w);
    if (!src_origin.unmatchable)
        pair.src_pixels = src.amplitude.crop(static_cast<std::size_t>(src_origin.row),
                                             static_cast<std::size_t>(src_origin.col), h, w);
    return pair;
}

std::string patch_id(const PatchSpec& spec)
{
    return "r" + std::to_string(spec.row) + "_c" + std::to_string(spec.col);
}

json to_json(const PatchPlan& plan)
{
    json patches = json::array();
    for (const auto& p : plan.patches)
        patches.push_back({{"row", p.row}, {"col", p.col}});
    return {{"image_rows", plan.image_rows},
            {"image_cols", plan.image_cols},
            {"patch_height", plan.patch_height},
            {"patch_width", plan.patch_width},
            {"overlap_fraction", plan.overlap_fraction},
            {"stride_rows", plan.stride_rows},
            {"stride_cols", plan.stride_cols},
            {"patches", std::move(patches)}};
}

PatchPlan plan_from_json(const json& j)
{
    PatchPlan plan;
    try {
        plan.image_rows = j.at("image_rows").get<long>();
        plan.image_cols = j.at("image_cols").get<long>();
        plan.patch_height = j.at("patch_height").get<long>();
        plan.patch_width = j.at("patch_width").get<long>();
        plan.overlap_fraction = j.at("overlap_fraction").get<double>();
        plan.stride_rows = j.at("stride_rows").get<long>();
        plan.stride_cols = j.at("stride_cols").get<long>();
        for (const json& p : j.at("patches"))
            plan.patches.push_back({p.at("row").get<long>(), p.at("col").get<long>(),
                                    plan.patch_height, plan.patch_width});
    } catch (const json::exception& e) {
        fail(ErrorCode::MissingField, std::string("invalid patch plan: ") + e.what());
    }
    return plan;
}

} // namespace sarstereo::tiling
