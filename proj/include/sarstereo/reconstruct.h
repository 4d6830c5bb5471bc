#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "sarstereo/flow.h"
#include "sarstereo/geo.h"
#include "sarstereo/raster.h"
#include "sarstereo/tiling.h"

namespace sarstereo::reconstruct {

struct CloudPoint {
    geo::EcefPoint position = geo::EcefPoint::Zero();
    geo::GeodeticCoord geodetic;
    double confidence = 0.0;
    double residual = 0.0;
    geo::ImageCoord ref_pixel;
};

struct PointCloud {
    std::vector<CloudPoint> points;
};

enum class Aggregator { Median, Mean };

struct ReconstructParams {
    double confidence_min = 0.1;
    double residual_max = 5.0; // m
    double cell_size = 2.0;    // m
    Aggregator aggregator = Aggregator::Median;
    int sample_stride = 1;     // triangulate every n-th pixel in each axis

    void validate() const;
};

/// Per-pixel accounting: points_in == kept + below_confidence +
/// triangulation_failed + residual_exceeded.
struct PointReport {
    std::size_t points_in = 0;
    std::size_t kept = 0;
    std::size_t below_confidence = 0;
    std::size_t triangulation_failed = 0;
    std::size_t residual_exceeded = 0;

    std::size_t dropped() const
    {
        return below_confidence + triangulation_failed + residual_exceeded;
    }
    PointReport& operator+=(const PointReport& o);
};

/// Absolute placement of a patch pair in both images.
struct PatchGeometry {
    tiling::PatchSpec spec;
    long src_row = 0;
    long src_col = 0;
};

PointCloud flow_to_points(const FlowGrid& flow, const PatchGeometry& geometry,
                          const geo::SarSensorModel& ref_model,
                          const geo::SarSensorModel& src_model, const ReconstructParams& params,
                          PointReport* report = nullptr);

/// North-up latitude/longitude grid definition (cell centers).
struct GridDefinition {
    double origin_lat = 0.0;
    double origin_lon = 0.0;
    double lat_spacing = 0.0; // negative
    double lon_spacing = 0.0;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

struct ElevationMap {
    raster::GeoRaster elevation; // nodata where support is 0
    raster::Raster support;      // points per cell

    GridDefinition grid() const;
};

/// Angular spacings for a metric cell size at the given latitude.
std::pair<double, double> angular_spacing(double cell_size, double latitude,
                                          const geo::Ellipsoid& ellipsoid);

/// Grid over the geodetic bounding box of all points, with cells of
/// `cell_size` meters at the box's center latitude. Throws EmptyFusion when
/// there are no points.
GridDefinition grid_for(const std::vector<PointCloud>& clouds, double cell_size,
                        const geo::Ellipsoid& ellipsoid = {});

ElevationMap fuse(const std::vector<PointCloud>& clouds, const ReconstructParams& params,
                  const geo::Ellipsoid& ellipsoid = {});
/// Fuses onto a given grid; points outside it are ignored.
ElevationMap fuse_onto(const std::vector<PointCloud>& clouds, const GridDefinition& grid,
                       const ReconstructParams& params);

/// Cell centers of a map as points, one per valid cell.
PointCloud map_points(const ElevationMap& map, const geo::Ellipsoid& ellipsoid = {});

/// Translation of the map relative to the DSM, in local east/north/up meters.
struct Offsets {
    double east = 0.0;
    double north = 0.0;
    double up = 0.0;
    double rms = 0.0;          // RMS difference after alignment
    std::size_t cells = 0;     // overlapping cells used
};

/// Grid search over horizontal shifts (+-20 m, 1 m steps) followed by a
/// quadratic refinement; the vertical offset is the mean difference at the
/// best shift. Throws InsufficientOverlap with fewer than 100 common cells.
Offsets calibrate_offsets(const ElevationMap& map, const raster::GeoRaster& dsm,
                          const geo::Ellipsoid& ellipsoid = {});

/// Shifts the grid origin by -(east, north) and subtracts `up`.
ElevationMap apply_offsets(const ElevationMap& map, const Offsets& offsets,
                           const geo::Ellipsoid& ellipsoid = {});

/// "lat lon height confidence residual" per line, degrees and meters.
void write_points_ascii(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud read_points_ascii(const std::filesystem::path& path,
                             const geo::Ellipsoid& ellipsoid = {});

/// Writes `<stem>.json` (DSM-style manifest), `<stem>.srgr` and
/// `<stem>_support.srgr` next to each other.
void write_elevation_map(const ElevationMap& map, const std::filesystem::path& manifest);
ElevationMap read_elevation_map(const std::filesystem::path& manifest);

} // namespace sarstereo::reconstruct
