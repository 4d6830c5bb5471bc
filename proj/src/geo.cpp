#include "sarstereo/geo.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "sarstereo/errors.h"

namespace sarstereo::geo {

namespace {

constexpr int kEcefMaxIterations = 50;
constexpr int kZeroDopplerMaxIterations = 100;
constexpr double kZeroDopplerTolerance = 1e-9; // s
constexpr int kInverseMaxIterations = 50;
constexpr double kInverseTolerance = 1e-6;     // m, well below the 1e-4 m contract
constexpr int kTriangulationMaxIterations = 50;
constexpr double kTriangulationStep = 1e-7;    // m
constexpr double kMaxConditionNumber = 1e8;

} // namespace

double Ellipsoid::prime_vertical_radius(double latitude) const
{
    const double s = std::sin(latitude);
    return semi_major_axis / std::sqrt(1.0 - e2() * s * s);
}

double Ellipsoid::meridian_radius(double latitude) const
{
    const double s = std::sin(latitude);
    const double w = 1.0 - e2() * s * s;
    return semi_major_axis * (1.0 - e2()) / (w * std::sqrt(w));
}

void Ellipsoid::validate() const
{
    if (!(semi_major_axis > 0.0) || !(flattening >= 0.0 && flattening < 1.0))
        fail(ErrorCode::InvalidArgument, "ellipsoid requires a > 0 and 0 <= f < 1");
}

double normalize_longitude(double lon)
{
    constexpr double pi = std::numbers::pi;
    lon = std::remainder(lon, 2.0 * pi);
    if (lon <= -pi)
        lon += 2.0 * pi;
    return lon;
}

EcefPoint geodetic_to_ecef(const GeodeticCoord& g, const Ellipsoid& e)
{
    const double sl = std::sin(g.latitude), cl = std::cos(g.latitude);
    const double n = e.semi_major_axis / std::sqrt(1.0 - e.e2() * sl * sl);
    return {(n + g.height) * cl * std::cos(g.longitude),
            (n + g.height) * cl * std::sin(g.longitude),
            (n * (1.0 - e.e2()) + g.height) * sl};
}

GeodeticCoord ecef_to_geodetic(const EcefPoint& p, const Ellipsoid& e)
{
    const double a = e.semi_major_axis;
    const double e2 = e.e2();
    const double rho = std::hypot(p.x(), p.y());
    if (!(rho > 0.0 || std::abs(p.z()) > 0.0) || !p.allFinite())
        fail(ErrorCode::NonConvergence, "cannot invert the earth center");

    GeodeticCoord g;
    g.longitude = rho > 0.0 ? normalize_longitude(std::atan2(p.y(), p.x())) : 0.0;

    double lat = std::atan2(p.z(), rho * (1.0 - e2));
    double h = 0.0;
    for (int it = 0; it < kEcefMaxIterations; ++it) {
        const double s = std::sin(lat), c = std::cos(lat);
        const double w = std::sqrt(1.0 - e2 * s * s);
        const double n = a / w;
        const double h_new = rho * c + p.z() * s - a * w;
        const double lat_new = std::atan2(p.z(), rho * (1.0 - e2 * n / (n + h_new)));
        const double dh = std::abs(h_new - h);
        const double dlat = std::abs(lat_new - lat);
        h = h_new;
        lat = lat_new;
        if (it > 0 && dh < 1e-7 && dlat < 1e-14) {
            const double s2 = std::sin(lat);
            g.latitude = lat;
            g.height = rho * std::cos(lat) + p.z() * s2 - a * std::sqrt(1.0 - e2 * s2 * s2);
            return g;
        }
    }
    fail(ErrorCode::NonConvergence, "ecef_to_geodetic did not converge");
}

Vec3 geodetic_up(double latitude, double longitude)
{
    const double cl = std::cos(latitude);
    return {cl * std::cos(longitude), cl * std::sin(longitude), std::sin(latitude)};
}

Mat3 enu_basis(double latitude, double longitude)
{
    const double sl = std::sin(latitude), cl = std::cos(latitude);
    const double so = std::sin(longitude), co = std::cos(longitude);
    Mat3 m;
    m.col(0) = Vec3(-so, co, 0.0);
    m.col(1) = Vec3(-sl * co, -sl * so, cl);
    m.col(2) = Vec3(cl * co, cl * so, sl);
    return m;
}

// ---------------------------------------------------------------------------
// Trajectory

Trajectory::Trajectory(std::vector<PlatformState> samples,
                       TrajectoryInterpolation interpolation)
    : samples_(std::move(samples)), interpolation_(interpolation)
{
    if (samples_.size() < 2)
        fail(ErrorCode::InconsistentTrajectory, "trajectory needs at least two samples");
    times_.reserve(samples_.size());
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        const auto& s = samples_[i];
        if (!std::isfinite(s.time) || !s.position.allFinite() || !s.velocity.allFinite())
            fail(ErrorCode::InconsistentTrajectory, "non-finite trajectory sample");
        if (i > 0 && !(s.time > samples_[i - 1].time))
            fail(ErrorCode::InconsistentTrajectory,
                 "trajectory sample times must be strictly increasing (sample " +
                         std::to_string(i) + ")");
        if (!(s.velocity.norm() > 0.0))
            fail(ErrorCode::InconsistentTrajectory, "trajectory velocity must be nonzero");
        times_.push_back(s.time);
    }
}

double Trajectory::earliest_time() const
{
    return times_[0] - (times_[1] - times_[0]);
}

double Trajectory::latest_time() const
{
    const std::size_t n = times_.size();
    return times_[n - 1] + (times_[n - 1] - times_[n - 2]);
}

std::size_t Trajectory::segment(double time) const
{
    const auto it = std::upper_bound(times_.begin(), times_.end(), time);
    const auto idx = static_cast<std::ptrdiff_t>(it - times_.begin()) - 1;
    return static_cast<std::size_t>(
            std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(times_.size()) - 2));
}

PlatformState Trajectory::extrapolate(double time) const
{
    const std::size_t k = segment(time);
    const PlatformState& s0 = samples_[k];
    PlatformState out;
    out.time = time;
    if (interpolation_ == TrajectoryInterpolation::PiecewiseLinearPosition) {
        const PlatformState& s1 = samples_[k + 1];
        out.velocity = (s1.position - s0.position) / (s1.time - s0.time);
    } else {
        out.velocity = s0.velocity;
    }
    out.position = s0.position + out.velocity * (time - s0.time);
    return out;
}

PlatformState Trajectory::interpolate(double time) const
{
    if (!(time >= earliest_time() && time <= latest_time()))
        fail(ErrorCode::OutOfTrackBounds,
             "time " + std::to_string(time) + " s is outside the trajectory");
    return extrapolate(time);
}

void SarSensorModel::validate() const
{
    if (trajectory.samples().size() < 2)
        fail(ErrorCode::InvalidArgument, "sensor model has no trajectory");
    if (!(near_range > 0.0))
        fail(ErrorCode::InvalidArgument, "near_range must be positive", "near_range_m");
    if (!(range_spacing > 0.0))
        fail(ErrorCode::InvalidArgument, "range_spacing must be positive", "range_spacing_m");
    if (!(azimuth_time_spacing != 0.0) || !std::isfinite(azimuth_time_spacing))
        fail(ErrorCode::InvalidArgument, "azimuth_time_spacing must be nonzero",
             "azimuth_time_spacing_s");
    if (rows < 1 || cols < 1)
        fail(ErrorCode::InvalidArgument, "image dimensions must be positive");
    ellipsoid.validate();
}

// ---------------------------------------------------------------------------
// Projection

RangeDoppler zero_doppler(const SarSensorModel& m, const EcefPoint& p,
                          std::optional<double> initial_time)
{
    if (!p.allFinite())
        fail(ErrorCode::InvalidArgument, "non-finite ground point");
    const Trajectory& track = m.trajectory;

    double t;
    if (initial_time) {
        t = *initial_time;
    } else {
        const PlatformState& s0 = track.samples().front();
        const PlatformState st = track.extrapolate(s0.time);
        t = s0.time + (p - st.position).dot(st.velocity) / st.velocity.squaredNorm();
    }

    for (int it = 0; it < kZeroDopplerMaxIterations; ++it) {
        const PlatformState st = track.extrapolate(t);
        const Vec3 d = p - st.position;
        // f(t) = d.V and f'(t) = -|V|^2 on a linear segment.
        const double dt = d.dot(st.velocity) / st.velocity.squaredNorm();
        t += dt;
        if (std::abs(dt) < kZeroDopplerTolerance) {
            if (t < track.earliest_time() || t > track.latest_time())
                fail(ErrorCode::NoZeroDoppler, "point has no zero-Doppler time on the track");
            return {t, (p - track.extrapolate(t).position).norm()};
        }
    }
    fail(ErrorCode::NonConvergence, "zero-Doppler Newton iteration did not converge");
}

ImageCoord forward_project(const SarSensorModel& m, const EcefPoint& p,
                           std::optional<double> initial_time)
{
    const RangeDoppler rd = zero_doppler(m, p, initial_time);
    return {(rd.time - m.azimuth_start_time) / m.azimuth_time_spacing,
            (rd.range - m.near_range) / m.range_spacing};
}

GeodeticCoord inverse_project(const SarSensorModel& m, const ImageCoord& c, double height)
{
    const PlatformState st = m.trajectory.interpolate(m.azimuth_time(c.row));
    const double range = m.slant_range(c.col);
    const Ellipsoid& ell = m.ellipsoid;

    // Orthonormal frame of the zero-Doppler plane: e1 points to nadir, e2 to
    // the illuminated side.
    const Vec3 vhat = st.velocity.normalized();
    const GeodeticCoord sensor = ecef_to_geodetic(st.position, ell);
    const Vec3 down = -geodetic_up(sensor.latitude, sensor.longitude);
    const Vec3 e1 = (down - down.dot(vhat) * vhat).normalized();
    Vec3 e2 = vhat.cross(e1); // velocity x nadir points left
    if (m.look_side == LookSide::Right)
        e2 = -e2;

    const double drop = sensor.height - height;
    if (drop > range)
        fail(ErrorCode::NoIntersection, "range sphere does not reach the requested height");
    double beta = std::acos(std::clamp(drop / range, -1.0, 1.0));

    constexpr double max_beta = std::numbers::pi / 2 + 0.35;
    for (int it = 0; it < kInverseMaxIterations; ++it) {
        const double cb = std::cos(beta), sb = std::sin(beta);
        const Vec3 x = st.position + range * (cb * e1 + sb * e2);
        const GeodeticCoord g = ecef_to_geodetic(x, ell);
        const double res = g.height - height;
        if (std::abs(res) < kInverseTolerance)
            return g;
        const Vec3 dx = range * (-sb * e1 + cb * e2);
        const double slope = geodetic_up(g.latitude, g.longitude).dot(dx);
        if (!(slope > 1e-9 * range))
            fail(ErrorCode::NoIntersection, "range circle is tangent to the height surface");
        double next = beta - res / slope;
        if (next < 0.0) {
            // Nadir is the lowest reachable point; if it is still above the
            // target the circle misses the surface.
            if (beta == 0.0)
                fail(ErrorCode::NoIntersection, "range sphere misses the height surface");
            next = 0.0;
        }
        if (next > max_beta)
            fail(ErrorCode::NoIntersection, "range sphere misses the height surface");
        beta = next;
    }
    fail(ErrorCode::NonConvergence, "inverse projection did not converge");
}

Triangulation triangulate(const SarSensorModel& ma, const ImageCoord& ca,
                          const SarSensorModel& mb, const ImageCoord& cb)
{
    struct Observation {
        Vec3 position;
        Vec3 vhat;
        double range;
    };
    const auto observe = [](const SarSensorModel& m, const ImageCoord& c) {
        const PlatformState st = m.trajectory.interpolate(m.azimuth_time(c.row));
        return Observation{st.position, st.velocity.normalized(), m.slant_range(c.col)};
    };
    const Observation obs[2] = {observe(ma, ca), observe(mb, cb)};

    Triangulation out;
    out.point = geodetic_to_ecef(inverse_project(ma, ca, ma.reference_elevation), ma.ellipsoid);

    Eigen::Matrix<double, 4, 3> jac;
    Eigen::Matrix<double, 4, 1> res;
    const auto evaluate = [&](const Vec3& x) {
        for (int k = 0; k < 2; ++k) {
            const Vec3 d = x - obs[k].position;
            const double n = d.norm();
            res(2 * k) = n - obs[k].range;
            jac.row(2 * k) = (d / n).transpose();
            // Doppler equation normalised then scaled by |X - S|: meters.
            res(2 * k + 1) = d.dot(obs[k].vhat);
            jac.row(2 * k + 1) = obs[k].vhat.transpose();
        }
    };
    const auto check_conditioning = [&]() {
        const Mat3 normal = jac.transpose() * jac;
        Eigen::SelfAdjointEigenSolver<Mat3> eig;
        eig.computeDirect(normal, Eigen::EigenvaluesOnly);
        const double lmin = eig.eigenvalues()(0), lmax = eig.eigenvalues()(2);
        if (!(lmin > 0.0) || std::sqrt(lmax / lmin) > kMaxConditionNumber)
            fail(ErrorCode::DegenerateGeometry,
                 "zero-Doppler planes and range spheres do not constrain the point");
    };

    for (int it = 0; it < kTriangulationMaxIterations; ++it) {
        evaluate(out.point);
        if (it == 0)
            check_conditioning();
        const Vec3 step = (jac.transpose() * jac).ldlt().solve(-jac.transpose() * res);
        out.point += step;
        out.iterations = it + 1;
        if (step.norm() < kTriangulationStep) {
            evaluate(out.point);
            out.residual = std::sqrt(res.squaredNorm() / 4.0);
            return out;
        }
    }
    fail(ErrorCode::NonConvergence, "triangulation did not converge");
}

} // namespace sarstereo::geo
