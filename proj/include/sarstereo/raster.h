#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sarstereo/geo.h"

namespace sarstereo::raster {

/// Row-major grid of 32-bit floats with interleaved channels. NaN is always
/// treated as nodata; an explicit sentinel may be set in addition.
class Raster {
public:
    Raster() = default;
    Raster(std::size_t rows, std::size_t cols, std::size_t channels = 1,
           float fill = std::numeric_limits<float>::quiet_NaN(),
           std::optional<float> nodata = std::nullopt);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t channels() const { return channels_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    float& at(std::size_t r, std::size_t c, std::size_t ch = 0)
    {
        return values_[(r * cols_ + c) * channels_ + ch];
    }
    float at(std::size_t r, std::size_t c, std::size_t ch = 0) const
    {
        return values_[(r * cols_ + c) * channels_ + ch];
    }

    std::span<float> values() { return values_; }
    std::span<const float> values() const { return values_; }

    std::optional<float> nodata() const { return nodata_; }
    void set_nodata(std::optional<float> nodata) { nodata_ = nodata; }

    /// Value written into cells that carry no data.
    float nodata_value() const
    {
        return nodata_.value_or(std::numeric_limits<float>::quiet_NaN());
    }
    bool is_nodata(float v) const
    {
        return std::isnan(v) || (nodata_ && v == *nodata_);
    }
    bool valid(std::size_t r, std::size_t c, std::size_t ch = 0) const
    {
        return !is_nodata(at(r, c, ch));
    }

    /// Copy of one channel as a single-channel raster.
    Raster channel(std::size_t ch) const;

    /// Copy of a rectangular window; the window must lie inside the raster.
    Raster crop(std::size_t row0, std::size_t col0, std::size_t rows,
                std::size_t cols) const;

    bool operator==(const Raster& other) const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::size_t channels_ = 0;
    std::vector<float> values_;
    std::optional<float> nodata_;
};

/// `.srgr` layout: 64-byte little-endian header followed by the float32
/// payload.
///
///   0  char[4]  magic "SRGR"
///   4  u32      version (1)
///   8  u64      rows
///  16  u64      cols
///  24  u32      channels
///  28  u32      element type (1 = float32)
///  32  f64      nodata sentinel (NaN when unset)
///  40  u32      flags (bit 0: sentinel set)
///  44  u8[20]   reserved, zero
inline constexpr std::size_t kHeaderBytes = 64;
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::uint32_t kFloat32Code = 1;

Raster read_raster(const std::filesystem::path& path);
void write_raster(const Raster& r, const std::filesystem::path& path);

std::vector<std::uint8_t> encode_raster(const Raster& r);
Raster decode_raster(std::span<const std::uint8_t> bytes);

/// Whole-file text helpers; throw IoFailure.
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Single-channel raster on an axis-aligned latitude/longitude grid. `origin`
/// is the center of cell (0, 0); spacings are in radians per cell.
struct GeoRaster {
    Raster raster;
    double origin_lat = 0.0;
    double origin_lon = 0.0;
    double lat_spacing = 0.0;
    double lon_spacing = 0.0;

    std::size_t rows() const { return raster.rows(); }
    std::size_t cols() const { return raster.cols(); }

    double cell_lat(double row) const { return origin_lat + row * lat_spacing; }
    double cell_lon(double col) const { return origin_lon + col * lon_spacing; }

    void validate() const;
};

/// Bilinear interpolation of the four surrounding cells; nullopt when any of
/// them is nodata or the coordinate falls outside the grid.
std::optional<double> sample_bilinear(const GeoRaster& g, const geo::GeodeticCoord& coord);

/// DSM manifest: {origin_lat_deg, origin_lon_deg, lat_spacing_deg,
/// lon_spacing_deg, grid}. `grid` is resolved relative to the manifest.
GeoRaster read_georaster(const std::filesystem::path& manifest);
void write_georaster(const GeoRaster& g, const std::filesystem::path& manifest,
                     const std::string& grid_name = "grid.srgr");

struct SarImage {
    Raster amplitude;
    geo::SarSensorModel model;
    std::string id;

    void validate() const;
};

struct Manifest {
    std::string id;
    geo::SarSensorModel model;
    std::filesystem::path amplitude; // absolute or relative to the manifest
};

/// Parses a sensor manifest. Throws MissingField naming the absent key and
/// InconsistentTrajectory for non-monotone sample times.
Manifest read_manifest(const std::filesystem::path& path);
Manifest parse_manifest(const std::string& text);
std::string format_manifest(const Manifest& m);
void write_manifest(const Manifest& m, const std::filesystem::path& path);

/// Reads a manifest and its amplitude grid.
SarImage load_sar_image(const std::filesystem::path& manifest);

/// Writes `<dir>/manifest.json` and `<dir>/amplitude.srgr`.
std::filesystem::path save_sar_image(const SarImage& img, const std::filesystem::path& dir);

} // namespace sarstereo::raster
