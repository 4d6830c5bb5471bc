#include "doctest.h"

#include <cmath>
#include <random>

#include "sarstereo/errors.h"
#include "sarstereo/geo.h"
#include "support.h"

using namespace sarstereo;
using namespace sarstereo::geo;
using testing::uniform;

namespace {

constexpr double kPi = M_PI;

// Independent range-Doppler residuals of X for one observation.
Eigen::Vector2d residuals(const SarSensorModel& m, const ImageCoord& c, const Vec3& x)
{
    const PlatformState s = m.trajectory.interpolate(m.azimuth_time(c.row));
    const Vec3 d = x - s.position;
    return {d.norm() - m.slant_range(c.col), d.dot(s.velocity.normalized())};
}

// Brute-force 3D search in local ENU around `center`, refined three times.
Vec3 grid_search(const SarSensorModel& ma, const ImageCoord& ca, const SarSensorModel& mb,
                 const ImageCoord& cb, const Vec3& center)
{
    const GeodeticCoord g = ecef_to_geodetic(center, ma.ellipsoid);
    const Mat3 enu = enu_basis(g.latitude, g.longitude);
    Vec3 best = center;
    double step = 1.0;
    for (int level = 0; level < 5; ++level) {
        double best_cost = INFINITY;
        Vec3 best_here = best;
        for (int i = -12; i <= 12; ++i)
            for (int j = -12; j <= 12; ++j)
                for (int k = -12; k <= 12; ++k) {
                    const Vec3 x = best + enu * Vec3(i * step, j * step, k * step);
                    const double cost = residuals(ma, ca, x).squaredNorm() +
                                        residuals(mb, cb, x).squaredNorm();
                    if (cost < best_cost) {
                        best_cost = cost;
                        best_here = x;
                    }
                }
        best = best_here;
        step /= 10.0;
    }
    return best;
}

Trajectory straight_track(Vec3 p0, Vec3 v, double t0, double t1, int n)
{
    std::vector<PlatformState> samples;
    for (int i = 0; i < n; ++i) {
        const double t = t0 + (t1 - t0) * i / (n - 1);
        samples.push_back({t, p0 + v * t, v});
    }
    return Trajectory(samples);
}

} // namespace

TEST_CASE("geodetic to ECEF closed form")
{
    const Ellipsoid e;
    const Vec3 eq = geodetic_to_ecef({0, 0, 0}, e);
    CHECK(eq.x() == doctest::Approx(6378137.0).epsilon(1e-15));
    CHECK(std::abs(eq.y()) < 1e-9);
    CHECK(std::abs(eq.z()) < 1e-9);
    const Vec3 pole = geodetic_to_ecef({kPi / 2, 0, 0}, e);
    CHECK(std::abs(pole.x()) < 1e-6);
    CHECK(std::abs(pole.y()) < 1e-9);
    CHECK(pole.z() == doctest::Approx(e.semi_major_axis * (1 - e.flattening)).epsilon(1e-15));
}

TEST_CASE("ECEF to geodetic special points")
{
    const Ellipsoid e;
    const auto g = ecef_to_geodetic({e.semi_major_axis, 0, 0}, e);
    CHECK(std::abs(g.latitude) < 1e-12);
    CHECK(std::abs(g.longitude) < 1e-12);
    CHECK(std::abs(g.height) < 1e-6);
    const auto s = ecef_to_geodetic({0, 0, -e.semi_minor_axis()}, e);
    CHECK(s.latitude == doctest::Approx(-kPi / 2).epsilon(1e-12));
    CHECK(s.longitude == 0.0);
    CHECK(std::abs(s.height) < 1e-6);
}

TEST_CASE("geodetic round trip on random coordinates")
{
    std::mt19937_64 rng(7);
    const Ellipsoid e;
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const GeodeticCoord g{uniform(rng, -kPi / 2 + 1e-6, kPi / 2 - 1e-6),
                              uniform(rng, -kPi + 1e-9, kPi), uniform(rng, -1000.0, 1e5)};
        const Vec3 p = geodetic_to_ecef(g, e);
        const GeodeticCoord back = ecef_to_geodetic(p, e);
        worst = std::max(worst, (geodetic_to_ecef(back, e) - p).norm());
        worst = std::max(worst, std::abs(back.height - g.height));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("longitude normalization")
{
    CHECK(normalize_longitude(kPi) == doctest::Approx(kPi));
    CHECK(normalize_longitude(-kPi) == doctest::Approx(kPi));
    CHECK(normalize_longitude(3 * kPi / 2) == doctest::Approx(-kPi / 2));
}

TEST_CASE("trajectory interpolation")
{
    const Vec3 p0(7e6, 0, 0), v(0, 100, 0);
    const Trajectory t = straight_track(p0, v, 0.0, 10.0, 11);
    const auto s3 = interpolate_state(t, 3.0);
    CHECK((s3.position - t.samples()[3].position).norm() == 0.0);
    const auto mid = interpolate_state(t, 3.5);
    CHECK((mid.position - 0.5 * (t.samples()[3].position + t.samples()[4].position)).norm() <
          1e-9);
    CHECK(interpolate_state(t, 10.5).position.y() == doctest::Approx(1050.0));
    CHECK(testing::error_code_of([&] { interpolate_state(t, 11.5); }) ==
          ErrorCode::OutOfTrackBounds);
    CHECK(testing::error_code_of([&] { interpolate_state(t, -1.01); }) ==
          ErrorCode::OutOfTrackBounds);

    // A dense and a coarse sampling of the same straight flight agree.
    const Trajectory dense = straight_track(p0, v, 0.0, 10.0, 1001);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        const double time = uniform(rng, 0.0, 10.0);
        CHECK((interpolate_state(dense, time).position - interpolate_state(t, time).position)
                      .norm() < 1e-3);
    }
}

TEST_CASE("trajectory validation")
{
    CHECK(testing::error_code_of([] {
              Trajectory({{0.0, Vec3(7e6, 0, 0), Vec3(0, 1, 0)}});
          }) == ErrorCode::InconsistentTrajectory);
    CHECK(testing::error_code_of([] {
              Trajectory({{1.0, Vec3(7e6, 0, 0), Vec3(0, 1, 0)},
                          {1.0, Vec3(7e6, 1, 0), Vec3(0, 1, 0)}});
          }) == ErrorCode::InconsistentTrajectory);
}

TEST_CASE("forward projection of a constructed broadside point")
{
    const SarSensorModel& m = testing::scene_geometry().model_a;
    for (double k : {0.0, 100.0, 977.0, double(m.rows - 1)}) {
        const PlatformState s = m.trajectory.interpolate(m.azimuth_time(k));
        const Vec3 v = s.velocity.normalized();
        Vec3 d = -s.position.normalized();
        d = (d - d.dot(v) * v).normalized();
        const Vec3 x = s.position + m.near_range * d;
        const ImageCoord c = forward_project(m, x);
        CHECK(c.row == doctest::Approx(k).epsilon(1e-9));
        CHECK(std::abs(c.col) < 1e-6);
        const ImageCoord c1 = forward_project(m, x + m.range_spacing * d);
        CHECK(std::abs(c1.col - 1.0) < 1e-6);
        CHECK(std::abs(c1.row - k) < 1e-6);
    }
}

TEST_CASE("forward projection errors")
{
    const SarSensorModel& m = testing::scene_geometry().model_a;
    const PlatformState end = m.trajectory.samples().back();
    const Vec3 far_ahead = end.position + end.velocity.normalized() * 1e6;
    CHECK(testing::error_code_of([&] { forward_project(m, far_ahead); }) ==
          ErrorCode::NoZeroDoppler);
}

TEST_CASE("inverse then forward projection is the identity")
{
    std::mt19937_64 rng(11);
    for (const SarSensorModel* m :
         {&testing::scene_geometry().model_a, &testing::scene_geometry().model_b}) {
        double worst = 0.0;
        for (int i = 0; i < 1000; ++i) {
            const ImageCoord c{uniform(rng, 0.0, double(m->rows - 1)),
                               uniform(rng, 0.0, double(m->cols - 1))};
            const double h = uniform(rng, -100.0, 3000.0);
            const GeodeticCoord g = inverse_project(*m, c, h);
            CHECK(std::abs(g.height - h) < 1e-6);
            const ImageCoord back = forward_project(*m, geodetic_to_ecef(g, m->ellipsoid));
            worst = std::max(worst, std::hypot(back.row - c.row, back.col - c.col));
        }
        CHECK(worst < 1e-3);
    }
}

TEST_CASE("higher points at the same pixel move away monotonically")
{
    const SarSensorModel& m = testing::scene_geometry().model_a;
    const ImageCoord c{500.3, 700.7};
    const Vec3 base = geodetic_to_ecef(inverse_project(m, c, 0.0), m.ellipsoid);
    double previous = 0.0;
    for (double dh : {1.0, 10.0, 100.0, 1000.0}) {
        const double sep = (geodetic_to_ecef(inverse_project(m, c, dh), m.ellipsoid) - base).norm();
        CHECK(sep > previous);
        previous = sep;
    }
}

TEST_CASE("look side selects the hemisphere on an equatorial east-bound track")
{
    const Ellipsoid e;
    const double altitude = 5000.0, near_range = 8000.0;
    for (LookSide side : {LookSide::Left, LookSide::Right}) {
        SarSensorModel m;
        m.trajectory = straight_track(Vec3(e.semi_major_axis + altitude, -1000.0, 0.0),
                                      Vec3(0, 100.0, 0), 0.0, 20.0, 21);
        m.near_range = near_range;
        m.range_spacing = 1.0;
        m.azimuth_start_time = 0.0;
        m.azimuth_time_spacing = 0.01;
        m.rows = 2000;
        m.cols = 1000;
        m.look_side = side;
        const GeodeticCoord g = inverse_project(m, {1000.0, 0.0}, 0.0);
        // Flat-earth ground distance, corrected to first order by curvature.
        const double ground = std::sqrt(near_range * near_range - altitude * altitude);
        const double expected = ground / e.semi_major_axis;
        if (side == LookSide::Right)
            CHECK(g.latitude < 0.0);
        else
            CHECK(g.latitude > 0.0);
        CHECK(std::abs(g.latitude) == doctest::Approx(expected).epsilon(0.01));
        CHECK(std::abs(g.longitude) < 1e-9);
    }
}

TEST_CASE("inverse projection misses the ground")
{
    SarSensorModel m = testing::scene_geometry().model_a;
    m.near_range = 10.0; // far shorter than the altitude
    CHECK(testing::error_code_of([&] { inverse_project(m, {10.0, 0.0}, 0.0); }) ==
          ErrorCode::NoIntersection);
}

TEST_CASE("triangulation recovers forward-projected points exactly")
{
    const auto& g = testing::scene_geometry();
    std::mt19937_64 rng(5);
    double worst = 0.0, worst_res = 0.0;
    for (int i = 0; i < 300; ++i) {
        const Vec3 x = geodetic_to_ecef(testing::scene_point(uniform(rng, -900.0, 900.0),
                                                             uniform(rng, -900.0, 900.0),
                                                             uniform(rng, 500.0, 800.0)),
                                        g.model_a.ellipsoid);
        const auto t = triangulate(g.model_a, forward_project(g.model_a, x), g.model_b,
                                   forward_project(g.model_b, x));
        worst = std::max(worst, (t.point - x).norm());
        worst_res = std::max(worst_res, t.residual);
    }
    CHECK(worst < 1e-3);
    CHECK(worst_res < 1e-6);
}

TEST_CASE("range perturbation agrees with a brute-force grid search")
{
    const auto& g = testing::scene_geometry();
    const Ellipsoid& e = g.model_a.ellipsoid;
    const Vec3 x = geodetic_to_ecef(testing::scene_point(120.0, -80.0, 640.0), e);
    const ImageCoord ca = forward_project(g.model_a, x);
    ImageCoord cb = forward_project(g.model_b, x);
    cb.col += 1.0;
    const auto t = triangulate(g.model_a, ca, g.model_b, cb);
    const Vec3 oracle = grid_search(g.model_a, ca, g.model_b, cb, x);
    CHECK((t.point - oracle).norm() < 1e-3);

    const double dh = ecef_to_geodetic(t.point, e).height - 640.0;
    const double expected = g.model_b.range_spacing / std::sin(43.0 * kPi / 180.0);
    CHECK(std::abs(std::abs(dh) - expected) < 0.2 * expected);
}

TEST_CASE("elevation error grows linearly with correspondence error")
{
    const auto& g = testing::scene_geometry();
    const Ellipsoid& e = g.model_a.ellipsoid;
    const Vec3 x = geodetic_to_ecef(testing::scene_point(-300.0, 250.0, 610.0), e);
    const ImageCoord ca = forward_project(g.model_a, x);
    const ImageCoord cb0 = forward_project(g.model_b, x);
    const double slope_ref = g.model_b.range_spacing / std::sin(43.0 * kPi / 180.0);
    double first_slope = 0.0;
    for (double d : {0.05, 0.1, 0.2, 0.4}) {
        ImageCoord cb = cb0;
        cb.col += d;
        const double dh =
                ecef_to_geodetic(triangulate(g.model_a, ca, g.model_b, cb).point, e).height - 610.0;
        const double slope = std::abs(dh) / d;
        CHECK(std::abs(slope - slope_ref) < 0.2 * slope_ref);
        if (first_slope == 0.0)
            first_slope = slope;
        CHECK(slope == doctest::Approx(first_slope).epsilon(0.01));
    }
}

TEST_CASE("identical observations are degenerate")
{
    const auto& m = testing::scene_geometry().model_a;
    const ImageCoord c{800.0, 900.0};
    CHECK(testing::error_code_of([&] { triangulate(m, c, m, c); }) ==
          ErrorCode::DegenerateGeometry);
}
