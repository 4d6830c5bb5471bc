#include "sarstereo/gtruth.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "sarstereo/errors.h"

namespace sarstereo::gtruth {

namespace fs = std::filesystem;
using nlohmann::json;

ElevationReport& ElevationReport::operator+=(const ElevationReport& o)
{
    pixels += o.pixels;
    converged += o.converged;
    dsm_miss += o.dsm_miss;
    nonconvergent += o.nonconvergent;
    projection_failed += o.projection_failed;
    iterations += o.iterations;
    max_iterations = std::max(max_iterations, o.max_iterations);
    return *this;
}

raster::Raster elevation_in_image_geometry(const raster::GeoRaster& dsm,
                                           const geo::SarSensorModel& model,
                                           ElevationReport* report)
{
    return elevation_in_image_geometry(
            dsm, model, {0, 0, long(model.rows), long(model.cols)}, nullptr, report);
}

raster::Raster elevation_in_image_geometry(const raster::GeoRaster& dsm,
                                           const geo::SarSensorModel& model,
                                           const tiling::PatchSpec& window,
                                           const raster::Raster* seed, ElevationReport* report)
{
    if (window.height < 1 || window.width < 1)
        fail(ErrorCode::InvalidArgument, "empty window");
    const auto rows = static_cast<std::size_t>(window.height);
    const auto cols = static_cast<std::size_t>(window.width);
    if (seed && (seed->rows() != rows || seed->cols() != cols))
        fail(ErrorCode::DimensionMismatch, "seed raster does not match the window");

    raster::Raster out(rows, cols, 1);
    std::vector<ElevationReport> reports(rows);

#pragma omp parallel for schedule(dynamic, 8)
    for (std::size_t r = 0; r < rows; ++r) {
        ElevationReport& rep = reports[r];
        for (std::size_t c = 0; c < cols; ++c) {
            ++rep.pixels;
            const geo::ImageCoord pix{double(window.row + long(r)), double(window.col + long(c))};
            double h = model.reference_elevation;
            if (seed && std::isfinite(seed->at(r, c)))
                h = seed->at(r, c);
            bool done = false;
            for (int it = 1; it <= kElevationMaxIterations; ++it) {
                geo::GeodeticCoord ground;
                try {
                    ground = geo::inverse_project(model, pix, h);
                } catch (const Error&) {
                    ++rep.projection_failed;
                    done = true;
                    break;
                }
                const auto v = raster::sample_bilinear(dsm, ground);
                if (!v) {
                    ++rep.dsm_miss;
                    done = true;
                    break;
                }
                const double step = *v - h;
                h = *v;
                if (std::abs(step) < kElevationTolerance) {
                    out.at(r, c) = static_cast<float>(h);
                    ++rep.converged;
                    rep.iterations += std::size_t(it);
                    rep.max_iterations = std::max(rep.max_iterations, it);
                    done = true;
                    break;
                }
            }
            if (!done)
                ++rep.nonconvergent;
        }
    }
    if (report)
        for (const auto& r : reports)
            *report += r;
    return out;
}

FlowGrid Disparity::to_flow() const
{
    FlowGrid flow(C.rows(), C.cols());
    for (std::size_t r = 0; r < C.rows(); ++r)
        for (std::size_t c = 0; c < C.cols(); ++c)
            if (C.at(r, c) > 0.5f)
                flow.set(r, c, D.at(r, c, 0), D.at(r, c, 1), 1.0f);
            else
                flow.set_unmatched(r, c);
    return flow;
}

Disparity disparity_groundtruth(const raster::Raster& gt_elev, const tiling::PatchSpec& spec,
                                long src_row, long src_col, const geo::SarSensorModel& ref_model,
                                const geo::SarSensorModel& src_model)
{
    if (gt_elev.rows() != std::size_t(spec.height) || gt_elev.cols() != std::size_t(spec.width))
        fail(ErrorCode::DimensionMismatch, "elevation raster does not match the patch");
    const auto rows = gt_elev.rows();
    const auto cols = gt_elev.cols();
    Disparity out;
    out.D = raster::Raster(rows, cols, 2);
    out.C = raster::Raster(rows, cols, 1, 0.0f);
    std::vector<std::size_t> valid(rows, 0);

#pragma omp parallel for schedule(dynamic, 8)
    for (std::size_t r = 0; r < rows; ++r) {
        std::optional<double> guess;
        for (std::size_t c = 0; c < cols; ++c) {
            if (!gt_elev.valid(r, c))
                continue;
            const geo::ImageCoord pix{double(spec.row + long(r)), double(spec.col + long(c))};
            geo::ImageCoord p;
            try {
                const auto ground = geo::inverse_project(ref_model, pix, gt_elev.at(r, c));
                p = geo::forward_project(src_model,
                                         geo::geodetic_to_ecef(ground, ref_model.ellipsoid), guess);
                guess = src_model.azimuth_time(p.row);
            } catch (const Error&) {
                continue;
            }
            const double local_r = p.row - double(src_row);
            const double local_c = p.col - double(src_col);
            if (!(local_r >= -0.5 && local_r < double(rows) - 0.5 && local_c >= -0.5 &&
                  local_c < double(cols) - 0.5))
                continue;
            out.D.at(r, c, 0) = static_cast<float>(local_r - double(r));
            out.D.at(r, c, 1) = static_cast<float>(local_c - double(c));
            out.C.at(r, c) = 1.0f;
            ++valid[r];
        }
    }
    for (auto v : valid)
        out.valid += v;
    return out;
}

namespace {

const std::set<std::string> kSplits{"train", "val", "test"};

} // namespace

SplitSpec split_from_json(const json& j)
{
    SplitSpec spec;
    try {
        const json& pairs = j.contains("pairs") ? j.at("pairs") : j;
        for (const auto& [name, entry] : pairs.items())
            spec[name] = {entry.at("split").get<std::string>(),
                          entry.value("area", std::string(name))};
    } catch (const json::exception& e) {
        fail(ErrorCode::ConfigError, std::string("invalid split specification: ") + e.what(),
             "split");
    }
    return spec;
}

void validate_split(const std::vector<std::string>& pair_names, const SplitSpec& split)
{
    std::map<std::string, std::string> test_areas; // area -> test pair
    for (const auto& name : pair_names) {
        const auto it = split.find(name);
        if (it == split.end())
            fail(ErrorCode::ConfigError, "pair '" + name + "' has no split assignment", "split");
        if (!kSplits.count(it->second.split))
            fail(ErrorCode::ConfigError,
                 "pair '" + name + "' has unknown split '" + it->second.split + "'", "split");
        if (it->second.split == "test")
            test_areas.emplace(it->second.area, name);
    }
    for (const auto& name : pair_names) {
        const auto& e = split.at(name);
        if (e.split == "test")
            continue;
        const auto t = test_areas.find(e.area);
        if (t != test_areas.end())
            fail(ErrorCode::SplitLeakage,
                 "pair '" + name + "' (" + e.split + ") shares observation area '" + e.area +
                         "' with test pair '" + t->second + "'",
                 name);
    }
}

DatasetReport build_dataset(const std::vector<PairInput>& pairs, const raster::GeoRaster& dsm,
                            const DatasetOptions& options, const SplitSpec& split,
                            const fs::path& out_dir)
{
    std::vector<std::string> names;
    for (const auto& p : pairs)
        names.push_back(p.name);
    if (std::set<std::string>(names.begin(), names.end()).size() != names.size())
        fail(ErrorCode::ConfigError, "pair names must be unique", "pairs");
    validate_split(names, split);
    dsm.validate();

    DatasetReport report;
    json listing = {{"train", json::array()}, {"val", json::array()}, {"test", json::array()}};
    json pair_meta = json::object();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec)
        fail(ErrorCode::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());

    for (const auto& pair : pairs) {
        pair.ref.validate();
        pair.src.validate();
        const auto& assign = split.at(pair.name);
        const tiling::PatchPlan plan = tiling::plan_patches(
                pair.ref, options.patch_height, options.patch_width, options.overlap_fraction);
        const raster::Raster elev =
                elevation_in_image_geometry(dsm, pair.ref.model, &report.elevation);

        json ids = json::array();
        json skipped = json::array();
        for (const auto& spec : plan.patches) {
            const std::string id = tiling::patch_id(spec);
            const auto loc = tiling::localize_src(pair.ref.model, pair.src.model, spec);
            if (loc.unmatchable) {
                ++report.unmatchable;
                skipped.push_back({{"patch_id", id}, {"reason", loc.reason}});
                continue;
            }
            const auto pp = tiling::extract_pair(pair.ref, pair.src, spec, loc);
            const raster::Raster patch_elev = elev.crop(std::size_t(spec.row),
                                                        std::size_t(spec.col),
                                                        std::size_t(spec.height),
                                                        std::size_t(spec.width));
            const Disparity d = disparity_groundtruth(patch_elev, spec, loc.row, loc.col,
                                                      pair.ref.model, pair.src.model);

            const fs::path dir = out_dir / assign.split / pair.name / id;
            fs::create_directories(dir, ec);
            if (ec)
                fail(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
            raster::write_raster(pp.ref_pixels, dir / "ref.srgr");
            raster::write_raster(pp.src_pixels, dir / "src.srgr");
            raster::write_raster(d.D, dir / "D.srgr");
            raster::write_raster(d.C, dir / "C.srgr");
            raster::write_raster(patch_elev, dir / "elev.srgr");
            const json meta = {
                    {"pair", pair.name},
                    {"patch_id", id},
                    {"split", assign.split},
                    {"area", assign.area},
                    {"ref_image_id", pair.ref.id},
                    {"src_image_id", pair.src.id},
                    {"rows", spec.height},
                    {"cols", spec.width},
                    {"ref_origin", {spec.row, spec.col}},
                    {"src_origin", {loc.row, loc.col}},
                    {"src_clamp", {loc.clamp_row, loc.clamp_col}},
                    {"out_of_bounds", loc.out_of_bounds},
                    {"valid_pixels", d.valid},
                    {"files",
                     {{"ref", "ref.srgr"},
                      {"src", "src.srgr"},
                      {"D", "D.srgr"},
                      {"C", "C.srgr"},
                      {"elev", "elev.srgr"}}}};
            raster::write_text(dir / "meta.json", meta.dump(2) + "\n");
            ids.push_back(id);
            ++report.patches_per_split[assign.split];
        }
        listing[assign.split].push_back(
                {{"pair", pair.name}, {"patches", std::move(ids)}, {"skipped", std::move(skipped)}});
        pair_meta[pair.name] = {{"split", assign.split},
                                {"area", assign.area},
                                {"ref_image_id", pair.ref.id},
                                {"src_image_id", pair.src.id}};
    }

    const json manifest = {{"patch_height", options.patch_height},
                           {"patch_width", options.patch_width},
                           {"overlap_fraction", options.overlap_fraction},
                           {"pairs", std::move(pair_meta)},
                           {"splits", std::move(listing)}};
    raster::write_text(out_dir / "split.json", manifest.dump(2) + "\n");
    return report;
}

} // namespace sarstereo::gtruth
