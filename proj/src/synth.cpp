#include "sarstereo/synth.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "sarstereo/errors.h"

namespace sarstereo::synth {

using nlohmann::json;

namespace {

constexpr double kDeg = M_PI / 180.0;

double uniform01(std::mt19937_64& rng)
{
    return double(rng() >> 11) * 0x1.0p-53;
}

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

const char* kind_name(DsmKind k)
{
    switch (k) {
    case DsmKind::Flat: return "flat";
    case DsmKind::Ramp: return "ramp";
    case DsmKind::GaussianHills: return "gaussian-hills";
    }
    return "flat";
}

DsmKind kind_from(const std::string& s)
{
    if (s == "flat")
        return DsmKind::Flat;
    if (s == "ramp")
        return DsmKind::Ramp;
    if (s == "gaussian-hills")
        return DsmKind::GaussianHills;
    fail(ErrorCode::ConfigError, "unknown dsm kind '" + s + "'", "dsm.kind");
}

void validate_track(const TrackSpec& t, const std::string& name)
{
    if (!(t.altitude > 0.0))
        fail(ErrorCode::ConfigError, "altitude must be positive", name + ".altitude_m");
    if (!(t.speed > 0.0))
        fail(ErrorCode::ConfigError, "speed must be positive", name + ".speed_mps");
    if (!std::isfinite(t.heading_deg))
        fail(ErrorCode::ConfigError, "heading must be finite", name + ".heading_deg");
    if (t.offset && !std::isfinite(*t.offset))
        fail(ErrorCode::ConfigError, "offset must be finite", name + ".offset_m");
    if (!(t.length >= 0.0))
        fail(ErrorCode::ConfigError, "length must be non-negative", name + ".length_m");
}

json track_json(const TrackSpec& t)
{
    json j{{"altitude_m", t.altitude},
           {"heading_deg", t.heading_deg},
           {"speed_mps", t.speed},
           {"look_side", t.look_side == geo::LookSide::Left ? "left" : "right"},
           {"length_m", t.length}};
    j["offset_m"] = t.offset ? json(*t.offset) : json(nullptr);
    return j;
}

void track_from(const json& j, TrackSpec& t)
{
    t.altitude = j.value("altitude_m", t.altitude);
    t.heading_deg = j.value("heading_deg", t.heading_deg);
    t.speed = j.value("speed_mps", t.speed);
    t.length = j.value("length_m", t.length);
    if (j.contains("offset_m"))
        t.offset = j["offset_m"].is_null() ? std::nullopt
                                           : std::optional<double>(j["offset_m"].get<double>());
    if (j.contains("look_side")) {
        const auto s = j["look_side"].get<std::string>();
        if (s == "left")
            t.look_side = geo::LookSide::Left;
        else if (s == "right")
            t.look_side = geo::LookSide::Right;
        else
            fail(ErrorCode::ConfigError, "look_side must be \"left\" or \"right\"", "look_side");
    }
}

} // namespace

void SceneSpec::validate() const
{
    if (!(std::abs(center_lat_deg) < 89.0))
        fail(ErrorCode::ConfigError, "center latitude must lie within (-89, 89)",
             "center_lat_deg");
    if (!(extent_east > 0.0 && extent_north > 0.0))
        fail(ErrorCode::ConfigError, "extent must be positive", "extent_m");
    if (!(dsm.spacing > 0.0) || dsm.spacing > std::min(extent_east, extent_north))
        fail(ErrorCode::ConfigError, "dsm spacing must be positive and below the extent",
             "dsm.spacing_m");
    for (const auto& b : dsm.bumps)
        if (!(b.sigma > 0.0))
            fail(ErrorCode::ConfigError, "hill sigma must be positive", "dsm.hills");
    if (!(texture_correlation >= 0.0))
        fail(ErrorCode::ConfigError, "texture correlation must be non-negative",
             "texture.correlation_m");
    if (!(texture_contrast >= 0.0))
        fail(ErrorCode::ConfigError, "texture contrast must be non-negative",
             "texture.contrast");
    if (!(intersection_angle_deg > 5.0 && intersection_angle_deg < 90.0))
        fail(ErrorCode::ConfigError, "intersection angle must lie in (5, 90) degrees",
             "intersection_angle_deg");
    if (!(ground_range_pixel > 0.0 && azimuth_pixel > 0.0))
        fail(ErrorCode::ConfigError, "pixel spacings must be positive", "pixel_m");
    if (margin_px < 0)
        fail(ErrorCode::ConfigError, "margin must be non-negative", "margin_px");
    validate_track(track_a, "track_a");
    validate_track(track_b, "track_b");
    if (!track_a.offset)
        fail(ErrorCode::ConfigError, "track_a needs an explicit offset", "track_a.offset_m");
    ellipsoid.validate();
}

SceneSpec default_scene()
{
    SceneSpec s;
    s.dsm.kind = DsmKind::GaussianHills;
    s.dsm.bumps = {{-400.0, 300.0, 40.0, 400.0},
                   {500.0, -250.0, 30.0, 350.0},
                   {250.0, 550.0, -20.0, 300.0},
                   {-550.0, -550.0, 25.0, 350.0}};
    s.track_a.altitude = 8000.0;
    s.track_a.offset = 30000.0;
    s.track_b.altitude = 12000.0;
    s.track_b.offset = std::nullopt;
    return s;
}

json to_json(const SceneSpec& s)
{
    json hills = json::array();
    for (const auto& b : s.dsm.bumps)
        hills.push_back({{"east_m", b.east},
                         {"north_m", b.north},
                         {"amplitude_m", b.amplitude},
                         {"sigma_m", b.sigma}});
    return {{"center_lat_deg", s.center_lat_deg},
            {"center_lon_deg", s.center_lon_deg},
            {"extent_m", {s.extent_east, s.extent_north}},
            {"dsm",
             {{"kind", kind_name(s.dsm.kind)},
              {"spacing_m", s.dsm.spacing},
              {"base_m", s.dsm.base},
              {"ramp_from_m", s.dsm.ramp_from},
              {"ramp_to_m", s.dsm.ramp_to},
              {"hills", std::move(hills)}}},
            {"texture",
             {{"seed", s.texture_seed},
              {"correlation_m", s.texture_correlation},
              {"contrast", s.texture_contrast}}},
            {"speckle", s.speckle},
            {"track_a", track_json(s.track_a)},
            {"track_b", track_json(s.track_b)},
            {"intersection_angle_deg", s.intersection_angle_deg},
            {"ground_range_pixel_m", s.ground_range_pixel},
            {"azimuth_pixel_m", s.azimuth_pixel},
            {"margin_px", s.margin_px},
            {"ellipsoid", {{"a_m", s.ellipsoid.semi_major_axis}, {"f", s.ellipsoid.flattening}}}};
}

SceneSpec scene_from_json(const json& j)
{
    SceneSpec s = default_scene();
    try {
        s.center_lat_deg = j.value("center_lat_deg", s.center_lat_deg);
        s.center_lon_deg = j.value("center_lon_deg", s.center_lon_deg);
        if (j.contains("extent_m")) {
            const auto& e = j["extent_m"];
            if (e.is_number()) {
                s.extent_east = s.extent_north = e.get<double>();
            } else {
                s.extent_east = e.at(0).get<double>();
                s.extent_north = e.at(1).get<double>();
            }
        }
        if (j.contains("dsm")) {
            const auto& d = j["dsm"];
            if (d.contains("kind"))
                s.dsm.kind = kind_from(d["kind"].get<std::string>());
            s.dsm.spacing = d.value("spacing_m", s.dsm.spacing);
            s.dsm.base = d.value("base_m", s.dsm.base);
            s.dsm.ramp_from = d.value("ramp_from_m", s.dsm.ramp_from);
            s.dsm.ramp_to = d.value("ramp_to_m", s.dsm.ramp_to);
            if (d.contains("hills")) {
                s.dsm.bumps.clear();
                for (const auto& b : d["hills"])
                    s.dsm.bumps.push_back({b.at("east_m").get<double>(),
                                           b.at("north_m").get<double>(),
                                           b.at("amplitude_m").get<double>(),
                                           b.at("sigma_m").get<double>()});
            }
        }
        if (j.contains("texture")) {
            const auto& t = j["texture"];
            s.texture_seed = t.value("seed", s.texture_seed);
            s.texture_correlation = t.value("correlation_m", s.texture_correlation);
            s.texture_contrast = t.value("contrast", s.texture_contrast);
        }
        s.speckle = j.value("speckle", s.speckle);
        if (j.contains("track_a"))
            track_from(j["track_a"], s.track_a);
        if (j.contains("track_b"))
            track_from(j["track_b"], s.track_b);
        s.intersection_angle_deg = j.value("intersection_angle_deg", s.intersection_angle_deg);
        s.ground_range_pixel = j.value("ground_range_pixel_m", s.ground_range_pixel);
        s.azimuth_pixel = j.value("azimuth_pixel_m", s.azimuth_pixel);
        s.margin_px = j.value("margin_px", s.margin_px);
        if (j.contains("ellipsoid")) {
            s.ellipsoid.semi_major_axis = j["ellipsoid"].value("a_m", s.ellipsoid.semi_major_axis);
            s.ellipsoid.flattening = j["ellipsoid"].value("f", s.ellipsoid.flattening);
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::ConfigError, std::string("invalid scene: ") + e.what());
    }
    s.validate();
    return s;
}

raster::GeoRaster make_dsm(const SceneSpec& spec)
{
    spec.validate();
    const auto& d = spec.dsm;
    const auto rows = static_cast<std::size_t>(std::llround(spec.extent_north / d.spacing)) + 1;
    const auto cols = static_cast<std::size_t>(std::llround(spec.extent_east / d.spacing)) + 1;
    const double lat0 = spec.center_lat_deg * kDeg;
    const double lon0 = spec.center_lon_deg * kDeg;
    const double m_rad = spec.ellipsoid.meridian_radius(lat0);
    const double n_rad = spec.ellipsoid.prime_vertical_radius(lat0) * std::cos(lat0);
    const double half_e = 0.5 * double(cols - 1) * d.spacing;
    const double half_n = 0.5 * double(rows - 1) * d.spacing;

    raster::GeoRaster g;
    g.raster = raster::Raster(rows, cols, 1, 0.0f);
    g.origin_lat = lat0 + half_n / m_rad;
    g.origin_lon = lon0 - half_e / n_rad;
    g.lat_spacing = -d.spacing / m_rad;
    g.lon_spacing = d.spacing / n_rad;

    auto values = g.raster.values();
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < rows; ++i) {
        const double north = half_n - double(i) * d.spacing;
        for (std::size_t j = 0; j < cols; ++j) {
            const double east = -half_e + double(j) * d.spacing;
            double h = d.base;
            switch (d.kind) {
            case DsmKind::Flat:
                break;
            case DsmKind::Ramp:
                h += d.ramp_from + (d.ramp_to - d.ramp_from) * double(j) / double(cols - 1);
                break;
            case DsmKind::GaussianHills:
                for (const auto& b : d.bumps) {
                    const double de = east - b.east;
                    const double dn = north - b.north;
                    h += b.amplitude * std::exp(-(de * de + dn * dn) / (2.0 * b.sigma * b.sigma));
                }
                break;
            }
            values[i * cols + j] = static_cast<float>(h);
        }
    }
    return g;
}

raster::Raster make_texture(const SceneSpec& spec, std::size_t rows, std::size_t cols)
{
    std::mt19937_64 rng(splitmix64(spec.texture_seed));
    std::vector<float> noise(rows * cols);
    for (float& v : noise)
        v = static_cast<float>(2.0 * uniform01(rng) - 1.0);

    const double sigma = spec.texture_correlation / spec.dsm.spacing;
    if (sigma > 0.0) {
        const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
        std::vector<float> kernel(std::size_t(2 * radius + 1));
        double ksum = 0.0;
        for (int k = -radius; k <= radius; ++k)
            ksum += kernel[std::size_t(k + radius)] =
                    static_cast<float>(std::exp(-0.5 * k * k / (sigma * sigma)));
        for (float& k : kernel)
            k = static_cast<float>(k / ksum);
        auto reflect = [](long i, long n) {
            if (i < 0)
                i = -i;
            if (i >= n)
                i = 2 * n - 2 - i;
            return std::clamp(i, 0L, n - 1);
        };
        std::vector<float> tmp(rows * cols);
        const long R = long(rows), C = long(cols);
#pragma omp parallel for schedule(static)
        for (long i = 0; i < R; ++i)
            for (long j = 0; j < C; ++j) {
                float acc = 0.0f;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel[std::size_t(k + radius)] *
                           noise[std::size_t(i * C + reflect(j + k, C))];
                tmp[std::size_t(i * C + j)] = acc;
            }
#pragma omp parallel for schedule(static)
        for (long i = 0; i < R; ++i)
            for (long j = 0; j < C; ++j) {
                float acc = 0.0f;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel[std::size_t(k + radius)] *
                           tmp[std::size_t(reflect(i + k, R) * C + j)];
                noise[std::size_t(i * C + j)] = acc;
            }
    }

    double sum = 0.0, sum2 = 0.0;
    for (float v : noise) {
        sum += v;
        sum2 += double(v) * v;
    }
    const double n = double(noise.size());
    const double mean = sum / n;
    const double sd = std::sqrt(std::max(sum2 / n - mean * mean, 1e-30));
    raster::Raster out(rows, cols, 1, 0.0f);
    auto values = out.values();
    for (std::size_t k = 0; k < noise.size(); ++k)
        values[k] = static_cast<float>(
                std::max(0.05, 1.0 + spec.texture_contrast * (noise[k] - mean) / sd));
    return out;
}

namespace {

struct TrackFrame {
    geo::EcefPoint center; // scene center at base height
    Mat3 enu;
};

struct TrackLine {
    Vec3 abeam;    // position at time 0
    Vec3 velocity;
    Vec3 look;     // horizontal look direction, ECEF
};

TrackLine track_line(const TrackFrame& f, const TrackSpec& t, double offset)
{
    const double h = t.heading_deg * kDeg;
    const Vec3 along(std::sin(h), std::cos(h), 0.0);
    const Vec3 right(std::cos(h), -std::sin(h), 0.0);
    const Vec3 look = t.look_side == geo::LookSide::Right ? right : Vec3(-right);
    TrackLine line;
    line.abeam = f.center + f.enu * (-offset * look + Vec3(0.0, 0.0, t.altitude));
    line.velocity = f.enu * (t.speed * along);
    line.look = f.enu * look;
    return line;
}

Vec3 line_of_sight(const TrackLine& line, const geo::EcefPoint& ground)
{
    // Zero-Doppler position of a straight track.
    const Vec3 v = line.velocity.normalized();
    const Vec3 s = line.abeam + v * v.dot(ground - line.abeam);
    return (s - ground).normalized();
}

double angle_deg(const Vec3& a, const Vec3& b)
{
    return std::acos(std::clamp(a.dot(b), -1.0, 1.0)) / kDeg;
}

geo::SarSensorModel provisional_model(const TrackLine& line, const TrackSpec& t,
                                      double half_span_time, double range_spacing,
                                      double azimuth_pixel, const geo::Ellipsoid& e)
{
    std::vector<geo::PlatformState> samples;
    const int n = int(std::ceil(half_span_time));
    for (int k = -n; k <= n; ++k)
        samples.push_back({double(k), line.abeam + line.velocity * double(k), line.velocity});
    geo::SarSensorModel m;
    m.trajectory = geo::Trajectory(std::move(samples));
    m.near_range = 1.0;
    m.range_spacing = range_spacing;
    m.azimuth_start_time = 0.0;
    m.azimuth_time_spacing = azimuth_pixel / t.speed;
    m.rows = 1;
    m.cols = 1;
    m.look_side = t.look_side;
    m.ellipsoid = e;
    return m;
}

} // namespace

SceneGeometry make_geometry(const SceneSpec& spec, const raster::GeoRaster& dsm)
{
    spec.validate();
    const double lat0 = spec.center_lat_deg * kDeg;
    const double lon0 = spec.center_lon_deg * kDeg;
    TrackFrame frame;
    frame.center = geo::geodetic_to_ecef({lat0, lon0, spec.dsm.base}, spec.ellipsoid);
    frame.enu = geo::enu_basis(lat0, lon0);
    const Vec3 up = frame.enu.col(2);

    SceneGeometry out;
    out.offset_a = *spec.track_a.offset;
    const TrackLine line_a = track_line(frame, spec.track_a, out.offset_a);
    const Vec3 los_a = line_of_sight(line_a, frame.center);
    auto gamma = [&](double offset_b) {
        const TrackLine lb = track_line(frame, spec.track_b, offset_b);
        return angle_deg(los_a, line_of_sight(lb, frame.center));
    };

    if (spec.track_b.offset) {
        out.offset_b = *spec.track_b.offset;
    } else {
        // The intersection angle shrinks from the incidence of A (track B at
        // nadir) to zero (B's line of sight parallel to A's).
        double lo = 0.0;
        double hi = out.offset_a * spec.track_b.altitude / spec.track_a.altitude;
        const double target = spec.intersection_angle_deg;
        if (!(gamma(lo) > target && gamma(hi) < target))
            fail(ErrorCode::ConfigError,
                 "cannot place track_b for the requested intersection angle",
                 "intersection_angle_deg");
        for (int it = 0; it < 200 && hi - lo > 1e-9; ++it) {
            const double mid = 0.5 * (lo + hi);
            (gamma(mid) > target ? lo : hi) = mid;
        }
        out.offset_b = 0.5 * (lo + hi);
    }
    const TrackLine line_b = track_line(frame, spec.track_b, out.offset_b);
    const Vec3 los_b = line_of_sight(line_b, frame.center);
    out.intersection_angle_deg = angle_deg(los_a, los_b);
    out.incidence_a_deg = angle_deg(los_a, up);
    out.incidence_b_deg = angle_deg(los_b, up);

    double h_min = std::numeric_limits<double>::infinity();
    double h_max = -h_min;
    double h_sum = 0.0;
    std::size_t h_n = 0;
    for (float v : dsm.raster.values())
        if (!dsm.raster.is_nodata(v)) {
            h_min = std::min(h_min, double(v));
            h_max = std::max(h_max, double(v));
            h_sum += v;
            ++h_n;
        }
    if (h_n == 0)
        fail(ErrorCode::FootprintMiss, "DSM has no valid cells");

    // Probe points spread over the DSM at their own, minimum and maximum
    // heights.
    std::vector<geo::EcefPoint> probes;
    const std::size_t steps = 32;
    for (std::size_t a = 0; a <= steps; ++a)
        for (std::size_t b = 0; b <= steps; ++b) {
            const std::size_t r = (dsm.rows() - 1) * a / steps;
            const std::size_t c = (dsm.cols() - 1) * b / steps;
            const double lat = dsm.cell_lat(double(r));
            const double lon = dsm.cell_lon(double(c));
            for (double h : {double(dsm.raster.at(r, c)), h_min, h_max})
                if (std::isfinite(h))
                    probes.push_back(geo::geodetic_to_ecef({lat, lon, h}, spec.ellipsoid));
        }

    auto build = [&](const TrackSpec& t, const TrackLine& line, const Vec3& los,
                     const std::string& name) {
        const double incidence = angle_deg(los, up) * kDeg;
        const double rs = spec.ground_range_pixel * std::sin(incidence);
        double max_along = 0.0;
        const Vec3 vhat = line.velocity.normalized();
        for (const auto& p : probes)
            max_along = std::max(max_along, std::abs(vhat.dot(p - line.abeam)));
        double half_time = max_along / t.speed + 20.0;
        if (t.length > 0.0)
            half_time = 0.5 * t.length / t.speed;
        geo::SarSensorModel m =
                provisional_model(line, t, half_time, rs, spec.azimuth_pixel, spec.ellipsoid);

        double rmin = std::numeric_limits<double>::infinity(), rmax = -rmin;
        double cmin = rmin, cmax = -rmin;
        for (const auto& p : probes) {
            geo::RangeDoppler rd;
            try {
                rd = geo::zero_doppler(m, p);
            } catch (const Error& e) {
                fail(ErrorCode::FootprintMiss, name + " cannot image the scene: " + e.what());
            }
            if (rd.time < m.trajectory.start_time() || rd.time > m.trajectory.end_time())
                fail(ErrorCode::FootprintMiss, name + " is too short to image the scene");
            const auto s = m.trajectory.interpolate(rd.time);
            const Vec3 d = p - s.position;
            if (d.dot(line.look) <= 0.0)
                fail(ErrorCode::FootprintMiss, name + " looks away from the scene");
            const geo::GeodeticCoord g = geo::ecef_to_geodetic(p, spec.ellipsoid);
            const double inc =
                    angle_deg(-d.normalized(), geo::geodetic_up(g.latitude, g.longitude));
            if (inc >= 89.0)
                fail(ErrorCode::FootprintMiss, name + " sees the scene at grazing incidence");
            const double row = (rd.time - m.azimuth_start_time) / m.azimuth_time_spacing;
            const double col = (rd.range - m.near_range) / m.range_spacing;
            rmin = std::min(rmin, row);
            rmax = std::max(rmax, row);
            cmin = std::min(cmin, col);
            cmax = std::max(cmax, col);
        }
        const double margin = spec.margin_px;
        const double r0 = std::floor(rmin) - margin;
        const double c0 = std::floor(cmin) - margin;
        m.azimuth_start_time += r0 * m.azimuth_time_spacing;
        m.near_range += c0 * m.range_spacing;
        m.rows = static_cast<std::size_t>(std::ceil(rmax) - r0 + margin) + 1;
        m.cols = static_cast<std::size_t>(std::ceil(cmax) - c0 + margin) + 1;
        m.reference_elevation = h_sum / double(h_n);
        if (!(m.near_range > 0.0))
            fail(ErrorCode::FootprintMiss, name + " is too close to the scene");
        m.validate();
        return m;
    };
    out.model_a = build(spec.track_a, line_a, los_a, "track_a");
    out.model_b = build(spec.track_b, line_b, los_b, "track_b");
    return out;
}

RenderedImage render_image(const raster::GeoRaster& dsm, const raster::Raster& texture,
                           const geo::SarSensorModel& model, const std::string& id,
                           std::optional<std::uint64_t> speckle_seed)
{
    if (texture.rows() != dsm.rows() || texture.cols() != dsm.cols())
        fail(ErrorCode::DimensionMismatch, "texture does not match the DSM grid");
    const std::size_t R = dsm.rows(), C = dsm.cols();
    const std::size_t rows = model.rows, cols = model.cols;
    const auto& e = model.ellipsoid;

    std::vector<double> sin_lon(C), cos_lon(C);
    for (std::size_t j = 0; j < C; ++j) {
        sin_lon[j] = std::sin(dsm.cell_lon(double(j)));
        cos_lon[j] = std::cos(dsm.cell_lon(double(j)));
    }

    auto project_row = [&](std::size_t i, std::vector<geo::ImageCoord>& out) {
        const double lat = dsm.cell_lat(double(i));
        const double sl = std::sin(lat), cl = std::cos(lat);
        const double n = e.prime_vertical_radius(lat);
        std::optional<double> guess;
        for (std::size_t j = 0; j < C; ++j) {
            const float h = dsm.raster.at(i, j);
            if (dsm.raster.is_nodata(h)) {
                out[j] = {NAN, NAN};
                continue;
            }
            const geo::EcefPoint p((n + h) * cl * cos_lon[j], (n + h) * cl * sin_lon[j],
                                   (n * (1.0 - e.e2()) + h) * sl);
            try {
                out[j] = geo::forward_project(model, p, guess);
                guess = model.azimuth_time(out[j].row);
            } catch (const Error&) {
                out[j] = {NAN, NAN};
            }
        }
    };

    // Direction of increasing range on the DSM grid, from the center cell.
    std::size_t axis = 1; // 1: along columns, 0: along rows
    int dir = 1;
    {
        const std::size_t ic = R / 2, jc = C / 2;
        std::vector<geo::ImageCoord> a(C), b(C);
        project_row(ic, a);
        project_row(std::min(ic + 1, R - 1), b);
        const double dj = a[std::min(jc + 1, C - 1)].col - a[jc].col;
        const double di = b[jc].col - a[jc].col;
        if (std::abs(di) > std::abs(dj)) {
            axis = 0;
            dir = di >= 0.0 ? 1 : -1;
        } else {
            dir = dj >= 0.0 ? 1 : -1;
        }
    }

    std::vector<double> acc(rows * cols, 0.0), wsum(rows * cols, 0.0), hsum(rows * cols, 0.0);
    RenderedImage out;
    out.layover = dsm;
    out.layover.raster = raster::Raster(R, C, 1, 0.0f);

    constexpr std::size_t kChunk = 32;
    std::vector<std::vector<geo::ImageCoord>> proj(kChunk + 2, std::vector<geo::ImageCoord>(C));
    for (std::size_t i0 = 0; i0 < R; i0 += kChunk) {
        const std::size_t i1 = std::min(R, i0 + kChunk);
        // Rows i0-1 .. i1 so vertical neighbours are available.
        const long first = long(i0) - 1;
        const long last = long(std::min(R - 1, i1));
#pragma omp parallel for schedule(dynamic)
        for (long i = std::max(0L, first); i <= last; ++i)
            project_row(std::size_t(i), proj[std::size_t(i - first)]);

        for (std::size_t i = i0; i < i1; ++i) {
            const auto& row = proj[i - std::size_t(first)];
            for (std::size_t j = 0; j < C; ++j) {
                const geo::ImageCoord pc = row[j];
                if (!std::isfinite(pc.row))
                    continue;
                // Layover: the next cell away from the sensor is at shorter range.
                long ni = long(i), nj = long(j);
                (axis == 1 ? nj : ni) += dir;
                if (ni >= 0 && nj >= 0 && ni < long(R) && nj < long(C)) {
                    const geo::ImageCoord nb = proj[std::size_t(ni - first)][std::size_t(nj)];
                    if (std::isfinite(nb.col) && nb.col < pc.col)
                        out.layover.raster.at(i, j) = 1.0f;
                }

                const double r0f = std::floor(pc.row), c0f = std::floor(pc.col);
                const double fr = pc.row - r0f, fc = pc.col - c0f;
                const double t = texture.at(i, j);
                const double h = dsm.raster.at(i, j);
                const long r0 = long(r0f), c0 = long(c0f);
                const double w[4] = {(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc};
                const long rr[4] = {r0, r0, r0 + 1, r0 + 1};
                const long cc[4] = {c0, c0 + 1, c0, c0 + 1};
                for (int k = 0; k < 4; ++k) {
                    if (rr[k] < 0 || cc[k] < 0 || rr[k] >= long(rows) || cc[k] >= long(cols))
                        continue;
                    const std::size_t idx = std::size_t(rr[k]) * cols + std::size_t(cc[k]);
                    acc[idx] += w[k] * t;
                    wsum[idx] += w[k];
                    hsum[idx] += w[k] * h;
                }
            }
        }
    }

    out.image.id = id;
    out.image.model = model;
    out.image.amplitude = raster::Raster(rows, cols, 1, 0.0f);
    out.elevation = raster::Raster(rows, cols, 1);
    auto amp = out.image.amplitude.values();
    auto elev = out.elevation.values();
    std::optional<std::mt19937_64> rng;
    if (speckle_seed)
        rng.emplace(splitmix64(*speckle_seed));
    for (std::size_t k = 0; k < rows * cols; ++k) {
        if (wsum[k] > 1e-6) {
            double a = acc[k] / wsum[k];
            if (rng)
                a *= -std::log(1.0 - uniform01(*rng));
            amp[k] = static_cast<float>(a);
            elev[k] = static_cast<float>(hsum[k] / wsum[k]);
        } else if (rng) {
            (void)uniform01(*rng);
        }
    }
    return out;
}

RenderedScene render_pair(const SceneSpec& spec)
{
    RenderedScene scene;
    scene.dsm = make_dsm(spec);
    scene.geometry = make_geometry(spec, scene.dsm);
    const raster::Raster texture = make_texture(spec, scene.dsm.rows(), scene.dsm.cols());
    std::optional<std::uint64_t> seed_a, seed_b;
    if (spec.speckle) {
        seed_a = spec.texture_seed ^ 0xa5a5a5a5a5a5a5a5ULL;
        seed_b = spec.texture_seed ^ 0x5a5a5a5a5a5a5a5aULL;
    }
    scene.ref = render_image(scene.dsm, texture, scene.geometry.model_a, "ref", seed_a);
    scene.src = render_image(scene.dsm, texture, scene.geometry.model_b, "src", seed_b);
    return scene;
}

} // namespace sarstereo::synth
