#include "sarstereo/reconstruct.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "sarstereo/errors.h"

namespace sarstereo::reconstruct {

namespace fs = std::filesystem;

namespace {

constexpr double kDeg = M_PI / 180.0;

} // namespace

void ReconstructParams::validate() const
{
    if (!(confidence_min >= 0.0 && confidence_min <= 1.0))
        fail(ErrorCode::ConfigError, "confidence_min must lie in [0, 1]", "confidence_min");
    if (!(residual_max > 0.0))
        fail(ErrorCode::ConfigError, "residual_max must be positive", "residual_max");
    if (!(cell_size > 0.0))
        fail(ErrorCode::ConfigError, "cell_size must be positive", "cell_size");
    if (sample_stride < 1)
        fail(ErrorCode::ConfigError, "sample_stride must be at least 1", "sample_stride");
}

PointReport& PointReport::operator+=(const PointReport& o)
{
    points_in += o.points_in;
    kept += o.kept;
    below_confidence += o.below_confidence;
    triangulation_failed += o.triangulation_failed;
    residual_exceeded += o.residual_exceeded;
    return *this;
}

PointCloud flow_to_points(const FlowGrid& flow, const PatchGeometry& geometry,
                          const geo::SarSensorModel& ref_model,
                          const geo::SarSensorModel& src_model, const ReconstructParams& params,
                          PointReport* report)
{
    params.validate();
    if (flow.rows() != static_cast<std::size_t>(geometry.spec.height) ||
        flow.cols() != static_cast<std::size_t>(geometry.spec.width))
        fail(ErrorCode::DimensionMismatch, "flow grid does not match the patch dimensions");

    const auto stride = static_cast<std::size_t>(params.sample_stride);
    const std::size_t nrows = (flow.rows() + stride - 1) / stride;
    std::vector<std::vector<CloudPoint>> rows(nrows);
    std::vector<PointReport> reports(nrows);

#pragma omp parallel for schedule(dynamic, 4)
    for (std::size_t k = 0; k < nrows; ++k) {
        const std::size_t r = k * stride;
        auto& out = rows[k];
        auto& rep = reports[k];
        for (std::size_t c = 0; c < flow.cols(); c += stride) {
            ++rep.points_in;
            const double conf = flow.conf(r, c);
            const double dr = flow.drow(r, c);
            const double dc = flow.dcol(r, c);
            if (!(conf >= params.confidence_min) || conf <= 0.0 || !std::isfinite(dr) ||
                !std::isfinite(dc)) {
                ++rep.below_confidence;
                continue;
            }
            const geo::ImageCoord ca{double(geometry.spec.row + long(r)),
                                     double(geometry.spec.col + long(c))};
            const geo::ImageCoord cb{double(geometry.src_row + long(r)) + dr,
                                     double(geometry.src_col + long(c)) + dc};
            geo::Triangulation t;
            try {
                t = geo::triangulate(ref_model, ca, src_model, cb);
            } catch (const Error&) {
                ++rep.triangulation_failed;
                continue;
            }
            if (!(t.residual <= params.residual_max)) {
                ++rep.residual_exceeded;
                continue;
            }
            CloudPoint p;
            p.position = t.point;
            try {
                p.geodetic = geo::ecef_to_geodetic(t.point, ref_model.ellipsoid);
            } catch (const Error&) {
                ++rep.triangulation_failed;
                continue;
            }
            p.confidence = conf;
            p.residual = t.residual;
            p.ref_pixel = ca;
            out.push_back(p);
            ++rep.kept;
        }
    }

    PointCloud cloud;
    std::size_t total = 0;
    for (const auto& v : rows)
        total += v.size();
    cloud.points.reserve(total);
    PointReport sum;
    for (std::size_t k = 0; k < nrows; ++k) {
        cloud.points.insert(cloud.points.end(), rows[k].begin(), rows[k].end());
        sum += reports[k];
    }
    if (report)
        *report += sum;
    return cloud;
}

GridDefinition ElevationMap::grid() const
{
    return {elevation.origin_lat, elevation.origin_lon, elevation.lat_spacing,
            elevation.lon_spacing, elevation.rows(), elevation.cols()};
}

std::pair<double, double> angular_spacing(double cell_size, double latitude,
                                          const geo::Ellipsoid& ellipsoid)
{
    const double dlat = cell_size / ellipsoid.meridian_radius(latitude);
    const double dlon =
            cell_size / (ellipsoid.prime_vertical_radius(latitude) * std::cos(latitude));
    return {dlat, dlon};
}

GridDefinition grid_for(const std::vector<PointCloud>& clouds, double cell_size,
                        const geo::Ellipsoid& ellipsoid)
{
    if (!(cell_size > 0.0))
        fail(ErrorCode::ConfigError, "cell_size must be positive", "cell_size");
    double lat_min = std::numeric_limits<double>::infinity();
    double lat_max = -lat_min;
    double lon_min = lat_min;
    double lon_max = -lat_min;
    std::size_t n = 0;
    for (const auto& cloud : clouds)
        for (const auto& p : cloud.points) {
            lat_min = std::min(lat_min, p.geodetic.latitude);
            lat_max = std::max(lat_max, p.geodetic.latitude);
            lon_min = std::min(lon_min, p.geodetic.longitude);
            lon_max = std::max(lon_max, p.geodetic.longitude);
            ++n;
        }
    if (n == 0)
        fail(ErrorCode::EmptyFusion, "no points to fuse");

    const auto [dlat, dlon] = angular_spacing(cell_size, 0.5 * (lat_min + lat_max), ellipsoid);
    GridDefinition g;
    g.origin_lat = lat_max;
    g.origin_lon = lon_min;
    g.lat_spacing = -dlat;
    g.lon_spacing = dlon;
    g.rows = static_cast<std::size_t>(std::floor((lat_max - lat_min) / dlat + 0.5)) + 1;
    g.cols = static_cast<std::size_t>(std::floor((lon_max - lon_min) / dlon + 0.5)) + 1;
    return g;
}

ElevationMap fuse_onto(const std::vector<PointCloud>& clouds, const GridDefinition& grid,
                       const ReconstructParams& params)
{
    if (grid.rows == 0 || grid.cols == 0 || grid.lat_spacing == 0.0 || grid.lon_spacing == 0.0)
        fail(ErrorCode::InvalidArgument, "empty fusion grid");

    // (cell, height) in input order; a stable sort keeps the per-cell order
    // deterministic.
    std::vector<std::pair<std::size_t, double>> entries;
    std::size_t total = 0;
    for (const auto& cloud : clouds)
        total += cloud.points.size();
    if (total == 0)
        fail(ErrorCode::EmptyFusion, "no points to fuse");
    entries.reserve(total);
    for (const auto& cloud : clouds)
        for (const auto& p : cloud.points) {
            const double i = std::round((p.geodetic.latitude - grid.origin_lat) / grid.lat_spacing);
            const double j =
                    std::round((p.geodetic.longitude - grid.origin_lon) / grid.lon_spacing);
            if (!(i >= 0 && j >= 0 && i < double(grid.rows) && j < double(grid.cols)))
                continue;
            entries.emplace_back(static_cast<std::size_t>(i) * grid.cols +
                                         static_cast<std::size_t>(j),
                                 p.geodetic.height);
        }
    std::stable_sort(entries.begin(), entries.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    ElevationMap map;
    map.elevation.raster = raster::Raster(grid.rows, grid.cols, 1);
    map.elevation.origin_lat = grid.origin_lat;
    map.elevation.origin_lon = grid.origin_lon;
    map.elevation.lat_spacing = grid.lat_spacing;
    map.elevation.lon_spacing = grid.lon_spacing;
    map.support = raster::Raster(grid.rows, grid.cols, 1, 0.0f);

    auto elev = map.elevation.raster.values();
    auto support = map.support.values();
    std::vector<double> heights;
    for (std::size_t a = 0; a < entries.size();) {
        std::size_t b = a;
        heights.clear();
        while (b < entries.size() && entries[b].first == entries[a].first)
            heights.push_back(entries[b++].second);
        double value;
        if (params.aggregator == Aggregator::Median) {
            const std::size_t mid = (heights.size() - 1) / 2;
            std::nth_element(heights.begin(), heights.begin() + long(mid), heights.end());
            value = heights[mid];
        } else {
            value = std::accumulate(heights.begin(), heights.end(), 0.0) / double(heights.size());
        }
        elev[entries[a].first] = static_cast<float>(value);
        support[entries[a].first] = static_cast<float>(heights.size());
        a = b;
    }
    return map;
}

ElevationMap fuse(const std::vector<PointCloud>& clouds, const ReconstructParams& params,
                  const geo::Ellipsoid& ellipsoid)
{
    params.validate();
    return fuse_onto(clouds, grid_for(clouds, params.cell_size, ellipsoid), params);
}

PointCloud map_points(const ElevationMap& map, const geo::Ellipsoid& ellipsoid)
{
    PointCloud cloud;
    const auto& g = map.elevation;
    for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) {
            if (!g.raster.valid(r, c))
                continue;
            CloudPoint p;
            p.geodetic = {g.cell_lat(double(r)), g.cell_lon(double(c)), g.raster.at(r, c)};
            p.position = geo::geodetic_to_ecef(p.geodetic, ellipsoid);
            p.confidence = 1.0;
            cloud.points.push_back(p);
        }
    return cloud;
}

namespace {

struct AlignSample {
    double lat;
    double lon;
    double height;
};

struct ShiftCost {
    double variance = std::numeric_limits<double>::infinity();
    double mean = 0.0;
    std::size_t count = 0;
};

ShiftCost shift_cost(const std::vector<AlignSample>& samples, const raster::GeoRaster& dsm,
                     double dlat, double dlon)
{
    // Two-pass over the same overlap set keeps the variance accurate.
    std::vector<double> diffs;
    diffs.reserve(samples.size());
    for (const auto& s : samples) {
        const auto v = raster::sample_bilinear(dsm, {s.lat - dlat, s.lon - dlon, 0.0});
        if (v)
            diffs.push_back(s.height - *v);
    }
    ShiftCost cost;
    cost.count = diffs.size();
    if (diffs.empty())
        return cost;
    cost.mean = std::accumulate(diffs.begin(), diffs.end(), 0.0) / double(diffs.size());
    double ss = 0.0;
    for (double d : diffs)
        ss += (d - cost.mean) * (d - cost.mean);
    cost.variance = ss / double(diffs.size());
    return cost;
}

constexpr std::size_t kMinOverlap = 100;
constexpr int kSearchHalfWidth = 20;  // m
constexpr std::size_t kSearchSamples = 20000;

double parabola_vertex(double cm, double c0, double cp)
{
    const double denom = cm - 2.0 * c0 + cp;
    if (!(denom > 0.0))
        return 0.0;
    return std::clamp(0.5 * (cm - cp) / denom, -0.5, 0.5);
}

} // namespace

Offsets calibrate_offsets(const ElevationMap& map, const raster::GeoRaster& dsm,
                          const geo::Ellipsoid& ellipsoid)
{
    const auto& g = map.elevation;
    std::vector<AlignSample> all;
    for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c)
            if (g.raster.valid(r, c))
                all.push_back({g.cell_lat(double(r)), g.cell_lon(double(c)), g.raster.at(r, c)});
    if (all.size() < kMinOverlap)
        fail(ErrorCode::InsufficientOverlap,
             "only " + std::to_string(all.size()) + " valid map cells");

    std::vector<AlignSample> sub;
    const std::size_t step = std::max<std::size_t>(1, all.size() / kSearchSamples);
    for (std::size_t k = 0; k < all.size(); k += step)
        sub.push_back(all[k]);

    const double lat_c = g.cell_lat(0.5 * double(g.rows() - 1));
    const auto [m_lat, m_lon] = angular_spacing(1.0, lat_c, ellipsoid); // radians per meter

    const std::size_t required = std::min(kMinOverlap, sub.size());
    const int w = 2 * kSearchHalfWidth + 1;
    std::vector<double> costs(std::size_t(w * w), std::numeric_limits<double>::infinity());
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < w * w; ++k) {
        const int de = k % w - kSearchHalfWidth;
        const int dn = k / w - kSearchHalfWidth;
        const ShiftCost sc = shift_cost(sub, dsm, dn * m_lat, de * m_lon);
        if (sc.count >= required)
            costs[std::size_t(k)] = sc.variance;
    }
    const auto best = std::min_element(costs.begin(), costs.end()) - costs.begin();
    if (!std::isfinite(costs[std::size_t(best)]))
        fail(ErrorCode::InsufficientOverlap, "map does not overlap the DSM");
    const int be = int(best % w);
    const int bn = int(best / w);
    auto cost_at = [&](int e, int n) { return costs[std::size_t(n * w + e)]; };

    double east = be - kSearchHalfWidth;
    double north = bn - kSearchHalfWidth;
    if (be > 0 && be < w - 1 && std::isfinite(cost_at(be - 1, bn)) &&
        std::isfinite(cost_at(be + 1, bn)))
        east += parabola_vertex(cost_at(be - 1, bn), cost_at(be, bn), cost_at(be + 1, bn));
    if (bn > 0 && bn < w - 1 && std::isfinite(cost_at(be, bn - 1)) &&
        std::isfinite(cost_at(be, bn + 1)))
        north += parabola_vertex(cost_at(be, bn - 1), cost_at(be, bn), cost_at(be, bn + 1));

    const ShiftCost final_cost = shift_cost(all, dsm, north * m_lat, east * m_lon);
    if (final_cost.count < kMinOverlap)
        fail(ErrorCode::InsufficientOverlap,
             "only " + std::to_string(final_cost.count) + " cells overlap the DSM");
    Offsets out;
    out.east = east;
    out.north = north;
    out.up = final_cost.mean;
    out.rms = std::sqrt(final_cost.variance);
    out.cells = final_cost.count;
    return out;
}

ElevationMap apply_offsets(const ElevationMap& map, const Offsets& offsets,
                           const geo::Ellipsoid& ellipsoid)
{
    ElevationMap out = map;
    auto& g = out.elevation;
    const double lat_c = g.cell_lat(0.5 * double(g.rows() - 1));
    const auto [m_lat, m_lon] = angular_spacing(1.0, lat_c, ellipsoid);
    g.origin_lat -= offsets.north * m_lat;
    g.origin_lon -= offsets.east * m_lon;
    for (float& v : g.raster.values())
        if (!g.raster.is_nodata(v))
            v = static_cast<float>(v - offsets.up);
    return out;
}

void write_points_ascii(const PointCloud& cloud, const fs::path& path)
{
    std::ofstream out(path);
    if (!out)
        fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
    char line[160];
    for (const auto& p : cloud.points) {
        const int n = std::snprintf(line, sizeof line, "%.12f %.12f %.6f %.6f %.6f\n",
                                    p.geodetic.latitude / kDeg, p.geodetic.longitude / kDeg,
                                    p.geodetic.height, p.confidence, p.residual);
        out.write(line, n);
    }
    if (!out)
        fail(ErrorCode::IoFailure, "failed writing " + path.string());
}

PointCloud read_points_ascii(const fs::path& path, const geo::Ellipsoid& ellipsoid)
{
    std::ifstream in(path);
    if (!in)
        fail(ErrorCode::IoFailure, "cannot open " + path.string());
    PointCloud cloud;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#')
            continue;
        double lat, lon, h, conf, res;
        if (std::sscanf(line.c_str(), "%lf %lf %lf %lf %lf", &lat, &lon, &h, &conf, &res) != 5)
            fail(ErrorCode::MalformedHeader,
                 path.string() + ":" + std::to_string(lineno) + ": expected 5 numbers");
        CloudPoint p;
        p.geodetic = {lat * kDeg, lon * kDeg, h};
        p.position = geo::geodetic_to_ecef(p.geodetic, ellipsoid);
        p.confidence = conf;
        p.residual = res;
        cloud.points.push_back(p);
    }
    return cloud;
}

void write_elevation_map(const ElevationMap& map, const fs::path& manifest)
{
    const std::string stem = manifest.stem().string();
    raster::write_georaster(map.elevation, manifest, stem + ".srgr");
    raster::write_raster(map.support, manifest.parent_path() / (stem + "_support.srgr"));
}

ElevationMap read_elevation_map(const fs::path& manifest)
{
    ElevationMap map;
    map.elevation = raster::read_georaster(manifest);
    const fs::path support = manifest.parent_path() / (manifest.stem().string() + "_support.srgr");
    if (fs::exists(support)) {
        map.support = raster::read_raster(support);
    } else {
        map.support = raster::Raster(map.elevation.rows(), map.elevation.cols(), 1, 0.0f);
        for (std::size_t r = 0; r < map.elevation.rows(); ++r)
            for (std::size_t c = 0; c < map.elevation.cols(); ++c)
                if (map.elevation.raster.valid(r, c))
                    map.support.at(r, c) = 1.0f;
    }
    return map;
}

} // namespace sarstereo::reconstruct
