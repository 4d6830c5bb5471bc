#include "sarstereo/raster.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "sarstereo/errors.h"

namespace sarstereo::raster {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "the .srgr codec assumes a little-endian host");

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr std::uint64_t kMaxPayloadBytes = std::uint64_t(1) << 40;

template <typename T>
void put(std::vector<std::uint8_t>& buf, std::size_t offset, T value)
{
    std::memcpy(buf.data() + offset, &value, sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> buf, std::size_t offset)
{
    T value;
    std::memcpy(&value, buf.data() + offset, sizeof(T));
    return value;
}

std::vector<std::uint8_t> read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCode::IoFailure, "cannot open " + path.string(), path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const json& require(const json& j, const char* key)
{
    const auto it = j.find(key);
    if (it == j.end() || it->is_null())
        fail(ErrorCode::MissingField, std::string("manifest is missing \"") + key + "\"", key);
    return *it;
}

double require_number(const json& j, const char* key)
{
    const json& v = require(j, key);
    if (!v.is_number())
        fail(ErrorCode::MissingField, std::string("\"") + key + "\" must be a number", key);
    return v.get<double>();
}

Vec3 require_vec3(const json& j, const char* key)
{
    const json& v = require(j, key);
    if (!v.is_array() || v.size() != 3)
        fail(ErrorCode::MissingField, std::string("\"") + key + "\" must be a 3-vector", key);
    return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

} // namespace

std::string read_text(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        fail(ErrorCode::IoFailure, "cannot open " + path.string(), path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text))
        fail(ErrorCode::IoFailure, "cannot write " + path.string(), path.string());
}

// ---------------------------------------------------------------------------
// Raster

Raster::Raster(std::size_t rows, std::size_t cols, std::size_t channels, float fill,
               std::optional<float> nodata)
    : rows_(rows), cols_(cols), channels_(channels),
      values_(rows * cols * channels, fill), nodata_(nodata)
{}

Raster Raster::channel(std::size_t ch) const
{
    Raster out(rows_, cols_, 1, 0.0f, nodata_);
    for (std::size_t i = 0; i < rows_ * cols_; ++i)
        out.values_[i] = values_[i * channels_ + ch];
    return out;
}

Raster Raster::crop(std::size_t row0, std::size_t col0, std::size_t rows,
                    std::size_t cols) const
{
    if (row0 + rows > rows_ || col0 + cols > cols_)
        fail(ErrorCode::InvalidArgument, "crop window exceeds raster bounds");
    Raster out(rows, cols, channels_, 0.0f, nodata_);
    const std::size_t run = cols * channels_;
    for (std::size_t r = 0; r < rows; ++r) {
        const float* src = values_.data() + ((row0 + r) * cols_ + col0) * channels_;
        std::copy(src, src + run, out.values_.data() + r * run);
    }
    return out;
}

bool Raster::operator==(const Raster& other) const
{
    if (rows_ != other.rows_ || cols_ != other.cols_ || channels_ != other.channels_)
        return false;
    if (nodata_.has_value() != other.nodata_.has_value())
        return false;
    if (nodata_ && std::bit_cast<std::uint32_t>(*nodata_) !=
                           std::bit_cast<std::uint32_t>(*other.nodata_))
        return false;
    return values_.size() == other.values_.size() &&
           std::memcmp(values_.data(), other.values_.data(),
                       values_.size() * sizeof(float)) == 0;
}

std::vector<std::uint8_t> encode_raster(const Raster& r)
{
    std::vector<std::uint8_t> buf(kHeaderBytes + r.size() * sizeof(float), 0);
    std::memcpy(buf.data(), "SRGR", 4);
    put<std::uint32_t>(buf, 4, kFormatVersion);
    put<std::uint64_t>(buf, 8, r.rows());
    put<std::uint64_t>(buf, 16, r.cols());
    put<std::uint32_t>(buf, 24, static_cast<std::uint32_t>(r.channels()));
    put<std::uint32_t>(buf, 28, kFloat32Code);
    put<double>(buf, 32, r.nodata() ? double(*r.nodata())
                                    : std::numeric_limits<double>::quiet_NaN());
    put<std::uint32_t>(buf, 40, r.nodata() ? 1u : 0u);
    if (r.size() > 0)
        std::memcpy(buf.data() + kHeaderBytes, r.values().data(), r.size() * sizeof(float));
    return buf;
}

Raster decode_raster(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < kHeaderBytes)
        fail(ErrorCode::MalformedHeader, "file shorter than the 64-byte header");
    if (std::memcmp(bytes.data(), "SRGR", 4) != 0)
        fail(ErrorCode::MalformedHeader, "bad magic");
    if (get<std::uint32_t>(bytes, 4) != kFormatVersion)
        fail(ErrorCode::MalformedHeader, "unsupported version");
    const auto rows = get<std::uint64_t>(bytes, 8);
    const auto cols = get<std::uint64_t>(bytes, 16);
    const auto channels = get<std::uint32_t>(bytes, 24);
    if (get<std::uint32_t>(bytes, 28) != kFloat32Code)
        fail(ErrorCode::MalformedHeader, "unsupported element type");
    if (rows == 0 || cols == 0 || channels == 0)
        fail(ErrorCode::MalformedHeader, "zero dimension");

    // Overflow-safe rows*cols*channels*4 against the payload limit.
    std::uint64_t count = rows;
    if (cols > kMaxPayloadBytes / count)
        fail(ErrorCode::DimensionOverflow, "grid dimensions overflow");
    count *= cols;
    if (channels > kMaxPayloadBytes / count)
        fail(ErrorCode::DimensionOverflow, "grid dimensions overflow");
    count *= channels;
    if (count > kMaxPayloadBytes / sizeof(float))
        fail(ErrorCode::DimensionOverflow, "grid payload exceeds 1 TiB");

    const std::uint64_t payload = count * sizeof(float);
    if (bytes.size() - kHeaderBytes < payload)
        fail(ErrorCode::TruncatedPayload,
             "payload has " + std::to_string(bytes.size() - kHeaderBytes) + " bytes, expected " +
                     std::to_string(payload));

    std::optional<float> nodata;
    if (get<std::uint32_t>(bytes, 40) & 1u)
        nodata = static_cast<float>(get<double>(bytes, 32));
    Raster r(rows, cols, channels, 0.0f, nodata);
    std::memcpy(r.values().data(), bytes.data() + kHeaderBytes, payload);
    return r;
}

Raster read_raster(const fs::path& path)
{
    const auto bytes = read_file(path);
    return decode_raster(bytes);
}

void write_raster(const Raster& r, const fs::path& path)
{
    const auto bytes = encode_raster(r);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorCode::IoFailure, "cannot write " + path.string(), path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out)
        fail(ErrorCode::IoFailure, "short write to " + path.string(), path.string());
}

// ---------------------------------------------------------------------------
// GeoRaster

void GeoRaster::validate() const
{
    if (raster.channels() != 1)
        fail(ErrorCode::InvalidArgument, "georaster must have one channel");
    if (!(lat_spacing != 0.0) || !(lon_spacing != 0.0))
        fail(ErrorCode::InvalidArgument, "georaster spacings must be nonzero");
    if (!(std::abs(origin_lat) <= std::numbers::pi / 2))
        fail(ErrorCode::InvalidArgument, "georaster origin latitude out of range");
}

std::optional<double> sample_bilinear(const GeoRaster& g, const geo::GeodeticCoord& coord)
{
    double fr = (coord.latitude - g.origin_lat) / g.lat_spacing;
    double fc = (coord.longitude - g.origin_lon) / g.lon_spacing;
    const auto rows = static_cast<double>(g.rows());
    const auto cols = static_cast<double>(g.cols());
    // Grid nodes computed from the origin and spacing round a few ulps off.
    constexpr double kSlack = 1e-9;
    if (!(fr >= -kSlack && fr <= rows - 1.0 + kSlack && fc >= -kSlack &&
          fc <= cols - 1.0 + kSlack))
        return std::nullopt;
    fr = std::clamp(fr, 0.0, rows - 1.0);
    fc = std::clamp(fc, 0.0, cols - 1.0);

    // Cells on the last row/column interpolate within the preceding cell.
    const auto r0 = std::min(static_cast<std::size_t>(fr),
                             g.rows() > 1 ? g.rows() - 2 : std::size_t(0));
    const auto c0 = std::min(static_cast<std::size_t>(fc),
                             g.cols() > 1 ? g.cols() - 2 : std::size_t(0));
    const std::size_t r1 = std::min(r0 + 1, g.rows() - 1);
    const std::size_t c1 = std::min(c0 + 1, g.cols() - 1);
    const double wr = fr - static_cast<double>(r0);
    const double wc = fc - static_cast<double>(c0);

    const Raster& ras = g.raster;
    const float v00 = ras.at(r0, c0), v01 = ras.at(r0, c1);
    const float v10 = ras.at(r1, c0), v11 = ras.at(r1, c1);
    if (ras.is_nodata(v00) || ras.is_nodata(v01) || ras.is_nodata(v10) || ras.is_nodata(v11))
        return std::nullopt;
    const double top = v00 + wc * (double(v01) - v00);
    const double bottom = v10 + wc * (double(v11) - v10);
    return top + wr * (bottom - top);
}

GeoRaster read_georaster(const fs::path& manifest)
{
    json j;
    try {
        j = json::parse(read_text(manifest));
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedHeader, "invalid DSM manifest: " + std::string(e.what()),
             manifest.string());
    }
    GeoRaster g;
    g.origin_lat = require_number(j, "origin_lat_deg") * kDeg;
    g.origin_lon = require_number(j, "origin_lon_deg") * kDeg;
    g.lat_spacing = require_number(j, "lat_spacing_deg") * kDeg;
    g.lon_spacing = require_number(j, "lon_spacing_deg") * kDeg;
    fs::path grid = require(j, "grid").get<std::string>();
    if (grid.is_relative())
        grid = manifest.parent_path() / grid;
    g.raster = read_raster(grid);
    g.validate();
    return g;
}

void write_georaster(const GeoRaster& g, const fs::path& manifest, const std::string& grid_name)
{
    json j;
    j["origin_lat_deg"] = g.origin_lat / kDeg;
    j["origin_lon_deg"] = g.origin_lon / kDeg;
    j["lat_spacing_deg"] = g.lat_spacing / kDeg;
    j["lon_spacing_deg"] = g.lon_spacing / kDeg;
    j["grid"] = grid_name;
    write_raster(g.raster, manifest.parent_path() / grid_name);
    write_text(manifest, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Sensor manifests

void SarImage::validate() const
{
    model.validate();
    if (amplitude.rows() != model.rows || amplitude.cols() != model.cols ||
        amplitude.channels() != 1)
        fail(ErrorCode::DimensionMismatch,
             "amplitude grid of image '" + id + "' does not match the manifest dimensions");
}

Manifest parse_manifest(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedHeader, "invalid manifest JSON: " + std::string(e.what()));
    }

    Manifest m;
    m.id = j.value("id", std::string{});
    geo::SarSensorModel& s = m.model;
    s.rows = static_cast<std::size_t>(require_number(j, "rows"));
    s.cols = static_cast<std::size_t>(require_number(j, "cols"));
    s.near_range = require_number(j, "near_range_m");
    s.range_spacing = require_number(j, "range_spacing_m");
    s.azimuth_start_time = require_number(j, "azimuth_start_time_s");
    s.azimuth_time_spacing = require_number(j, "azimuth_time_spacing_s");

    const std::string side = require(j, "look_side").get<std::string>();
    if (side == "left")
        s.look_side = geo::LookSide::Left;
    else if (side == "right")
        s.look_side = geo::LookSide::Right;
    else
        fail(ErrorCode::MissingField, "look_side must be \"left\" or \"right\"", "look_side");

    s.reference_elevation = j.value("reference_elevation_m", 0.0);
    if (const auto it = j.find("ellipsoid"); it != j.end() && !it->is_null()) {
        s.ellipsoid.semi_major_axis = require_number(*it, "a_m");
        s.ellipsoid.flattening = require_number(*it, "f");
    }

    auto interp = geo::TrajectoryInterpolation::PiecewiseLinearPosition;
    if (j.value("interpolation", std::string("piecewise-linear-position")) ==
        "piecewise-constant-velocity-refined")
        interp = geo::TrajectoryInterpolation::PiecewiseConstantVelocityRefined;

    const json& traj = require(j, "trajectory");
    if (!traj.is_array())
        fail(ErrorCode::MissingField, "\"trajectory\" must be an array", "trajectory");
    std::vector<geo::PlatformState> samples;
    for (const json& t : traj) {
        geo::PlatformState st;
        st.time = require_number(t, "t_s");
        st.position = require_vec3(t, "pos_ecef_m");
        st.velocity = require_vec3(t, "vel_ecef_mps");
        samples.push_back(st);
    }
    s.trajectory = geo::Trajectory(std::move(samples), interp);

    if (const auto it = j.find("amplitude"); it != j.end() && it->is_string())
        m.amplitude = it->get<std::string>();
    s.validate();
    return m;
}

Manifest read_manifest(const fs::path& path)
{
    Manifest m = parse_manifest(read_text(path));
    if (!m.amplitude.empty() && m.amplitude.is_relative())
        m.amplitude = path.parent_path() / m.amplitude;
    return m;
}

std::string format_manifest(const Manifest& m)
{
    const geo::SarSensorModel& s = m.model;
    json j;
    j["id"] = m.id;
    j["rows"] = s.rows;
    j["cols"] = s.cols;
    j["near_range_m"] = s.near_range;
    j["range_spacing_m"] = s.range_spacing;
    j["azimuth_start_time_s"] = s.azimuth_start_time;
    j["azimuth_time_spacing_s"] = s.azimuth_time_spacing;
    j["look_side"] = s.look_side == geo::LookSide::Left ? "left" : "right";
    j["reference_elevation_m"] = s.reference_elevation;
    j["ellipsoid"] = {{"a_m", s.ellipsoid.semi_major_axis}, {"f", s.ellipsoid.flattening}};
    if (s.trajectory.interpolation() ==
        geo::TrajectoryInterpolation::PiecewiseConstantVelocityRefined)
        j["interpolation"] = "piecewise-constant-velocity-refined";
    json traj = json::array();
    for (const auto& st : s.trajectory.samples()) {
        traj.push_back({{"t_s", st.time},
                        {"pos_ecef_m", {st.position.x(), st.position.y(), st.position.z()}},
                        {"vel_ecef_mps", {st.velocity.x(), st.velocity.y(), st.velocity.z()}}});
    }
    j["trajectory"] = std::move(traj);
    if (!m.amplitude.empty())
        j["amplitude"] = m.amplitude.generic_string();
    return j.dump(2) + "\n";
}

void write_manifest(const Manifest& m, const fs::path& path)
{
    write_text(path, format_manifest(m));
}

SarImage load_sar_image(const fs::path& manifest)
{
    Manifest m = read_manifest(manifest);
    if (m.amplitude.empty())
        fail(ErrorCode::MissingField, "manifest has no amplitude grid", "amplitude");
    SarImage img{read_raster(m.amplitude), m.model, m.id};
    img.validate();
    return img;
}

fs::path save_sar_image(const SarImage& img, const fs::path& dir)
{
    fs::create_directories(dir);
    write_raster(img.amplitude, dir / "amplitude.srgr");
    const fs::path manifest = dir / "manifest.json";
    write_manifest(Manifest{img.id, img.model, "amplitude.srgr"}, manifest);
    return manifest;
}

} // namespace sarstereo::raster
