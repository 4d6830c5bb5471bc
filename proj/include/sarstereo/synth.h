#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "sarstereo/geo.h"
#include "sarstereo/raster.h"

namespace sarstereo::synth {

enum class DsmKind { Flat, Ramp, GaussianHills };

struct GaussianBump {
    double east = 0.0;  // m from scene center
    double north = 0.0; // m from scene center
    double amplitude = 0.0;
    double sigma = 1.0;
};

struct DsmSpec {
    DsmKind kind = DsmKind::GaussianHills;
    double spacing = 0.5;   // m
    double base = 600.0;    // m
    double ramp_from = 0.0; // m above base at the west edge
    double ramp_to = 50.0;  // m above base at the east edge
    std::vector<GaussianBump> bumps;
};

/// Straight, level flight line. The track passes abeam the scene center at
/// time 0, `offset` meters from it on the side opposite the look direction.
struct TrackSpec {
    double altitude = 8000.0; // m above the scene base
    double heading_deg = 0.0; // clockwise from north
    double speed = 100.0;     // m/s
    std::optional<double> offset; // m; solved from the intersection angle if absent
    geo::LookSide look_side = geo::LookSide::Right;
    double length = 0.0;          // m; 0 = long enough for the scene
};

struct SceneSpec {
    double center_lat_deg = 32.88;
    double center_lon_deg = 131.10;
    double extent_east = 2000.0;
    double extent_north = 2000.0;
    DsmSpec dsm;
    std::uint64_t texture_seed = 1;
    double texture_correlation = 1.0; // m, gaussian blur sigma
    double texture_contrast = 0.5;
    bool speckle = false;
    TrackSpec track_a;
    TrackSpec track_b;
    double intersection_angle_deg = 43.0;
    double ground_range_pixel = 1.0; // m, ground distance per range sample at the center
    double azimuth_pixel = 1.0;      // m
    int margin_px = 16;
    geo::Ellipsoid ellipsoid;

    void validate() const;
};

/// 2 km x 2 km gaussian-hills scene seen by two right-looking tracks at a 43
/// degree intersection angle.
SceneSpec default_scene();

nlohmann::json to_json(const SceneSpec& s);
SceneSpec scene_from_json(const nlohmann::json& j);

raster::GeoRaster make_dsm(const SceneSpec& spec);

struct SceneGeometry {
    geo::SarSensorModel model_a;
    geo::SarSensorModel model_b;
    double offset_a = 0.0;
    double offset_b = 0.0;
    double intersection_angle_deg = 0.0; // at the scene center
    double incidence_a_deg = 0.0;
    double incidence_b_deg = 0.0;
};

/// Sensor models sized so both images cover the DSM with `margin_px` to
/// spare. Throws FootprintMiss when a track cannot image the extent.
SceneGeometry make_geometry(const SceneSpec& spec, const raster::GeoRaster& dsm);

struct RenderedImage {
    raster::SarImage image;
    raster::Raster elevation; // weighted mean height of the cells rendered into each pixel
    raster::GeoRaster layover; // 1 where the range gradient reverses, on the DSM grid
};

struct RenderedScene {
    RenderedImage ref;
    RenderedImage src;
    raster::GeoRaster dsm;
    SceneGeometry geometry;
};

RenderedScene render_pair(const SceneSpec& spec);

/// Splats a textured DSM into one image. Exposed for tests.
RenderedImage render_image(const raster::GeoRaster& dsm, const raster::Raster& texture,
                           const geo::SarSensorModel& model, const std::string& id,
                           std::optional<std::uint64_t> speckle_seed);

/// Band-limited texture on the DSM grid: blurred white noise with mean 1.
raster::Raster make_texture(const SceneSpec& spec, std::size_t rows, std::size_t cols);

} // namespace sarstereo::synth
