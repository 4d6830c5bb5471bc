#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace sarstereo {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

} // namespace sarstereo

namespace sarstereo::geo {

/// Reference ellipsoid. Defaults to WGS84.
struct Ellipsoid {
    double semi_major_axis = 6378137.0;
    double flattening = 1.0 / 298.257223563;

    static Ellipsoid wgs84() { return {}; }

    double semi_minor_axis() const { return semi_major_axis * (1.0 - flattening); }
    double e2() const { return flattening * (2.0 - flattening); }

    /// Radius of curvature in the prime vertical.
    double prime_vertical_radius(double latitude) const;
    /// Radius of curvature in the meridian.
    double meridian_radius(double latitude) const;

    void validate() const;
};

/// Latitude and longitude in radians, height in meters above the ellipsoid.
struct GeodeticCoord {
    double latitude = 0.0;
    double longitude = 0.0;
    double height = 0.0;
};

/// Earth-centered earth-fixed position in meters.
using EcefPoint = Vec3;

EcefPoint geodetic_to_ecef(const GeodeticCoord& g, const Ellipsoid& e);

/// Iterative inversion; throws NonConvergence if the height update has not
/// dropped below 1e-6 m after 50 iterations.
GeodeticCoord ecef_to_geodetic(const EcefPoint& p, const Ellipsoid& e);

/// Unit ellipsoid normal (geodetic "up") at the given latitude/longitude.
Vec3 geodetic_up(double latitude, double longitude);

/// Columns are the east, north and up unit vectors at the given location.
Mat3 enu_basis(double latitude, double longitude);

/// Wraps a longitude into (-pi, pi].
double normalize_longitude(double lon);

struct PlatformState {
    double time = 0.0;
    Vec3 position = Vec3::Zero();
    Vec3 velocity = Vec3::Zero();
};

enum class TrajectoryInterpolation {
    /// Position linear between samples; velocity is the segment slope.
    PiecewiseLinearPosition,
    /// Position propagated from the segment's leading sample using that
    /// sample's recorded velocity.
    PiecewiseConstantVelocityRefined,
};

class Trajectory {
public:
    Trajectory() = default;
    /// Throws InconsistentTrajectory unless there are at least two samples with
    /// strictly increasing times and nonzero velocities.
    explicit Trajectory(std::vector<PlatformState> samples,
                        TrajectoryInterpolation interpolation =
                                TrajectoryInterpolation::PiecewiseLinearPosition);

    const std::vector<PlatformState>& samples() const { return samples_; }
    TrajectoryInterpolation interpolation() const { return interpolation_; }

    double start_time() const { return samples_.front().time; }
    double end_time() const { return samples_.back().time; }

    /// Range of times accepted by `interpolate`: the sampled span extended by
    /// one sample interval at each end.
    double earliest_time() const;
    double latest_time() const;

    /// Throws OutOfTrackBounds outside [earliest_time, latest_time].
    PlatformState interpolate(double time) const;

    /// Same model without the bounds check; the end segments are extended.
    PlatformState extrapolate(double time) const;

private:
    std::size_t segment(double time) const;

    std::vector<PlatformState> samples_;
    std::vector<double> times_;
    TrajectoryInterpolation interpolation_ =
            TrajectoryInterpolation::PiecewiseLinearPosition;
};

inline PlatformState interpolate_state(const Trajectory& t, double time)
{
    return t.interpolate(time);
}

enum class LookSide { Left, Right };

/// Slant-range image geometry of one SAR acquisition (zero-Doppler).
struct SarSensorModel {
    Trajectory trajectory;
    double near_range = 0.0;           // m, range of column 0
    double range_spacing = 0.0;        // m per column
    double azimuth_start_time = 0.0;   // s, time of row 0
    double azimuth_time_spacing = 0.0; // s per row
    std::size_t rows = 0;
    std::size_t cols = 0;
    LookSide look_side = LookSide::Right;
    double reference_elevation = 0.0;
    Ellipsoid ellipsoid;

    double azimuth_time(double row) const
    {
        return azimuth_start_time + row * azimuth_time_spacing;
    }
    double slant_range(double col) const { return near_range + col * range_spacing; }

    void validate() const;
};

/// Real-valued pixel position: row along azimuth, col along slant range.
struct ImageCoord {
    double row = 0.0;
    double col = 0.0;
};

/// Zero-Doppler projection of a ground point into the image. The returned
/// column is not clamped to the image. `initial_time` seeds the Newton solve.
ImageCoord forward_project(const SarSensorModel& m, const EcefPoint& p,
                           std::optional<double> initial_time = std::nullopt);

/// Zero-Doppler azimuth time and slant range of a point.
struct RangeDoppler {
    double time = 0.0;
    double range = 0.0;
};
RangeDoppler zero_doppler(const SarSensorModel& m, const EcefPoint& p,
                          std::optional<double> initial_time = std::nullopt);

/// Ground point with geodetic height `height` seen at pixel `c`.
GeodeticCoord inverse_project(const SarSensorModel& m, const ImageCoord& c,
                              double height);

struct Triangulation {
    EcefPoint point = EcefPoint::Zero();
    double residual = 0.0; // RMS of the four range-Doppler residuals, meters
    int iterations = 0;
};

/// Least-squares intersection of the range spheres and zero-Doppler planes of
/// two observations of the same ground point.
Triangulation triangulate(const SarSensorModel& ma, const ImageCoord& ca,
                          const SarSensorModel& mb, const ImageCoord& cb);

} // namespace sarstereo::geo
