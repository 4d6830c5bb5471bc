// Acceptance suite: one PASS/FAIL line per headline criterion.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>

#include "sarstereo/bridge.h"
#include "sarstereo/evalm.h"
#include "sarstereo/geo.h"
#include "sarstereo/pipeline.h"
#include "sarstereo/poc.h"
#include "sarstereo/reconstruct.h"
#include "sarstereo/synth.h"
#include "sarstereo/tiling.h"
#include "support.h"

using namespace sarstereo;
using testing::uniform;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome projection_round_trip()
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto& g = testing::scene_geometry();
    std::mt19937_64 rng(101);
    double worst = 0.0;
    for (const geo::SarSensorModel* m : {&g.model_a, &g.model_b})
        for (int i = 0; i < 1000; ++i) {
            const geo::ImageCoord c{uniform(rng, 0.0, double(m->rows - 1)),
                                    uniform(rng, 0.0, double(m->cols - 1))};
            const double h = uniform(rng, -100.0, 3000.0);
            const auto back = geo::forward_project(
                    *m, geo::geodetic_to_ecef(geo::inverse_project(*m, c, h), m->ellipsoid));
            worst = std::max(worst, std::hypot(back.row - c.row, back.col - c.col));
        }
    const double t = seconds_since(t0);
    return {worst < 1e-3 && t < 5.0,
            fmt("max error %.3g px over 2x1000 pixels, %.2f s", worst, t)};
}

Outcome triangulation_exactness()
{
    const auto& g = testing::scene_geometry();
    std::mt19937_64 rng(102);
    double worst = 0.0, worst_res = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const auto x = geo::geodetic_to_ecef(
                testing::scene_point(uniform(rng, -900.0, 900.0), uniform(rng, -900.0, 900.0),
                                     uniform(rng, 500.0, 800.0)),
                g.model_a.ellipsoid);
        const auto t = geo::triangulate(g.model_a, geo::forward_project(g.model_a, x), g.model_b,
                                        geo::forward_project(g.model_b, x));
        worst = std::max(worst, (t.point - x).norm());
        worst_res = std::max(worst_res, t.residual);
    }
    return {worst < 1e-3 && worst_res < 1e-6,
            fmt("max 3D error %.3g m, max residual %.3g m", worst, worst_res)};
}

// Range-Doppler residuals of x for one observation, from first principles.
Eigen::Vector2d residuals(const geo::SarSensorModel& m, const geo::ImageCoord& c,
                          const Vec3& x)
{
    const auto s = m.trajectory.interpolate(m.azimuth_time(c.row));
    const Vec3 d = x - s.position;
    return {d.norm() - m.slant_range(c.col), d.dot(s.velocity.normalized())};
}

// Nested ENU grid search, 25^3 points per level, steps 1 m down to 0.1 mm.
Vec3 grid_search(const geo::SarSensorModel& ma, const geo::ImageCoord& ca,
                 const geo::SarSensorModel& mb, const geo::ImageCoord& cb, Vec3 best)
{
    const auto g = geo::ecef_to_geodetic(best, ma.ellipsoid);
    const Mat3 enu = geo::enu_basis(g.latitude, g.longitude);
    double step = 1.0;
    for (int level = 0; level < 5; ++level, step /= 10.0) {
        double best_cost = INFINITY;
        Vec3 here = best;
        for (int i = -12; i <= 12; ++i)
            for (int j = -12; j <= 12; ++j)
                for (int k = -12; k <= 12; ++k) {
                    const Vec3 x = best + enu * Vec3(i * step, j * step, k * step);
                    const double cost = residuals(ma, ca, x).squaredNorm() +
                                        residuals(mb, cb, x).squaredNorm();
                    if (cost < best_cost) {
                        best_cost = cost;
                        here = x;
                    }
                }
        best = here;
    }
    return best;
}

Outcome parallax_sensitivity()
{
    const auto& g = testing::scene_geometry();
    const auto& ell = g.model_a.ellipsoid;
    const double h0 = 640.0;
    const auto x = geo::geodetic_to_ecef(testing::scene_point(120.0, -80.0, h0), ell);
    const auto ca = geo::forward_project(g.model_a, x);
    auto cb = geo::forward_project(g.model_b, x);
    cb.col += 0.1;
    const auto t = geo::triangulate(g.model_a, ca, g.model_b, cb);
    const auto oracle = grid_search(g.model_a, ca, g.model_b, cb, x);
    const double dh = std::abs(geo::ecef_to_geodetic(t.point, ell).height - h0);
    const double dh_oracle = std::abs(geo::ecef_to_geodetic(oracle, ell).height - h0);
    const double expected = g.model_b.range_spacing * 0.1 / std::sin(43.0 * M_PI / 180.0);
    const double rel = std::abs(dh - expected) / expected;
    const double gap = (t.point - oracle).norm();
    return {rel < 0.2 && std::abs(dh_oracle - expected) < 0.2 * expected && gap < 1e-3,
            fmt("dh %.4f m, oracle %.4f m, expected %.4f m (%.1f%% off), solver vs oracle "
                "%.2g m, angle %.3f deg",
                dh, dh_oracle, expected, 100.0 * rel, gap, g.intersection_angle_deg)};
}

Outcome poc_suite(double noise)
{
    constexpr int n = 128, block = 32, at = 48;
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(noise > 0.0 ? 202 : 201);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> err;
    for (int seed = 0; seed < 100; ++seed) {
        double dr = 0.0, dc = 0.0;
        do {
            dr = uniform(rng, -8.0, 8.0);
            dc = uniform(rng, -8.0, 8.0);
        } while (std::hypot(dr, dc) > 8.0);
        const auto f = testing::speckle(n, n, std::uint64_t(seed));
        const auto g = testing::fourier_shift(f, n, n, dr, dc);
        auto a = testing::window(f, n, at, at, block);
        auto b = testing::window(g, n, at, at, block);
        // Unit-mean exponential speckle has unit standard deviation.
        for (double& v : a)
            v += noise * gauss(rng);
        for (double& v : b)
            v += noise * gauss(rng);
        const auto e = poc::estimate_shift(a, b, block, poc::PocParams{});
        err.push_back(std::hypot(e.drow - dr, e.dcol - dc));
    }
    const double t = seconds_since(t0);
    std::sort(err.begin(), err.end());
    const double median = 0.5 * (err[49] + err[50]);
    const double bound = noise > 0.0 ? 0.1 : 0.05;
    return {median < bound && t < 60.0,
            fmt("median error %.4f px (max %.4f) over 100 seeds, |v| <= 8, noise %.0f%%, %.2f s",
                median, err.back(), 100.0 * noise, t)};
}

struct Scene {
    testing::TempDir dir;
    fs::path ref, src, dsm;
};

const Scene& default_scene()
{
    static Scene s;
    static const bool ready = [] {
        const auto spec = synth::default_scene();
        pipeline::write_scene(synth::render_pair(spec), spec, s.dir / "scene");
        s.ref = s.dir / "scene/ref/manifest.json";
        s.src = s.dir / "scene/src/manifest.json";
        s.dsm = s.dir / "scene/dsm/dsm.json";
        return true;
    }();
    (void)ready;
    return s;
}

std::pair<evalm::ErrorStats, double> reconstruct_with(const std::string& matcher)
{
    const Scene& s = default_scene();
    pipeline::PipelineConfig c;
    c.ref_manifest = s.ref;
    c.src_manifest = s.src;
    c.dsm_manifest = s.dsm;
    c.out_dir = s.dir / ("run_" + matcher);
    c.matcher = pipeline::MatcherSpec::parse(matcher);
    c.calibrate = false;
    const auto t0 = std::chrono::steady_clock::now();
    pipeline::Pipeline p(c);
    const auto stats = p.run_all();
    return {stats, seconds_since(t0)};
}

Outcome end_to_end()
{
    const auto t0 = std::chrono::steady_clock::now();
    default_scene();
    const double t_render = seconds_since(t0);
    const auto [poc, t_poc] = reconstruct_with("poc");
    const auto [truth, t_truth] = reconstruct_with("truth");
    return {poc.rmse < 1.0 && poc.coverage >= 0.85 && truth.rmse < 0.1 && t_poc < 600.0,
            fmt("poc rmse %.3f m, coverage %.1f%%, %.0f s; truth flow rmse %.3f m, %.0f s; "
                "scene render %.0f s",
                poc.rmse, 100.0 * poc.coverage, t_poc, truth.rmse, t_truth, t_render)};
}

raster::Raster random_grid(std::size_t rows, std::size_t cols, std::size_t ch, double lo,
                           double hi, std::mt19937_64& rng, bool binary = false)
{
    raster::Raster r(rows, cols, ch, 0.0f);
    for (float& v : r.values())
        v = binary ? (uniform(rng, 0, 1) < 0.6 ? 1.0f : 0.0f) : float(uniform(rng, lo, hi));
    return r;
}

Outcome losses()
{
    raster::Raster d(2, 1, 2, 0.0f), dh(2, 1, 2, 0.0f), c(2, 1, 1, 1.0f);
    dh.at(0, 0, 0) = 3.0f;
    dh.at(0, 0, 1) = 4.0f;
    const double l345 = evalm::loss_disparity(dh, d, c);
    const raster::Raster half(2, 1, 1, 0.5f);
    const double lhalf = evalm::loss_confidence(half, c);
    const double lambda = evalm::LossConfig{}.lambda;

    std::mt19937_64 rng(103);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t rows = 1 + rng() % 40, cols = 1 + rng() % 40;
        const auto gd = random_grid(rows, cols, 2, -20, 20, rng);
        const auto gdh = random_grid(rows, cols, 2, -20, 20, rng);
        const auto gc = random_grid(rows, cols, 1, 0, 1, rng, true);
        const auto gch = random_grid(rows, cols, 1, 0, 1, rng);
        long double sd = 0.0L, sc = 0.0L;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t k = 0; k < cols; ++k) {
                const bool on = gc.at(r, k) == 1.0f;
                if (on) {
                    const long double a = (long double)gdh.at(r, k, 0) - gd.at(r, k, 0);
                    const long double b = (long double)gdh.at(r, k, 1) - gd.at(r, k, 1);
                    sd += std::sqrt(a * a + b * b);
                }
                const long double p = std::clamp<long double>(gch.at(r, k), 1e-7L, 1.0L - 1e-7L);
                sc += on ? std::log(p) : std::log(1.0L - p);
            }
        const long double count = (long double)(rows * cols);
        const double od = double(sd / count), oc = double(-sc / count);
        const double ld = evalm::loss_disparity(gdh, gd, gc);
        const double lc = evalm::loss_confidence(gch, gc);
        const double lt = evalm::loss_total(ld, lc);
        const auto rel = [](double x, double ref) { return std::abs(x - ref) / std::abs(ref); };
        worst = std::max({worst, rel(ld, od), rel(lc, oc), rel(lt, od + 0.01 * oc)});
    }
    const bool pass = l345 == 2.5 && std::abs(lhalf - std::log(2.0)) < 1e-12 &&
                      lambda == 0.01 && worst < 1e-12;
    return {pass, fmt("3-4-5 case %.17g, BCE at 0.5 minus ln 2 = %.3g, lambda %.2f, worst "
                      "oracle relative gap %.3g",
                      l345, lhalf - std::log(2.0), lambda, worst)};
}

Outcome metrics()
{
    raster::GeoRaster truth;
    truth.raster = raster::Raster(2, 2, 1, 0.0f);
    truth.origin_lat = 0.574;
    truth.origin_lon = 2.288;
    truth.lat_spacing = -3e-7;
    truth.lon_spacing = 3.7e-7;
    reconstruct::ElevationMap map;
    map.elevation = truth;
    map.support = raster::Raster(2, 2, 1, 1.0f);
    const float errors[4] = {1.0f, -1.0f, 3.0f, -3.0f};
    for (std::size_t i = 0; i < 4; ++i)
        map.elevation.raster.values()[i] = errors[i];
    const auto s = evalm::error_stats(map, truth, {2.0});
    const bool fixture = std::abs(s.mean_error) < 1e-12 &&
                         std::abs(s.std_error - std::sqrt(5.0)) < 1e-12 &&
                         s.pct_within[0].second == 50.0;

    // Monotonicity on random maps and thresholds.
    std::mt19937_64 rng(104);
    bool monotone = true;
    truth.raster = raster::Raster(40, 40, 1, 100.0f);
    for (int trial = 0; trial < 50; ++trial) {
        map.elevation = truth;
        map.support = raster::Raster(40, 40, 1, 1.0f);
        for (float& v : map.elevation.raster.values())
            v += float(uniform(rng, -10.0, 10.0));
        std::vector<double> tau(12);
        for (double& t : tau)
            t = uniform(rng, 0.0, 12.0);
        std::sort(tau.begin(), tau.end());
        const auto r = evalm::error_stats(map, truth, tau);
        for (std::size_t i = 1; i < r.pct_within.size(); ++i)
            monotone = monotone && r.pct_within[i].second >= r.pct_within[i - 1].second;
    }
    return {fixture && monotone,
            fmt("mean %.3g, std %.6f (sqrt 5 = %.6f), %.0f%% within 2 m, pct monotone on 50 "
                "random maps: %s",
                s.mean_error, s.std_error, std::sqrt(5.0), s.pct_within[0].second,
                monotone ? "yes" : "no")};
}

Outcome tiling_coverage()
{
    constexpr long n = 2240, patch = 560;
    const auto plan = tiling::plan_patches(n, n, patch, patch, 1.0 / 3.0);
    const bool deterministic = plan == tiling::plan_patches(n, n, patch, patch, 1.0 / 3.0);
    std::vector<long> rows, cols;
    for (const auto& p : plan.patches) {
        rows.push_back(p.row);
        cols.push_back(p.col);
    }
    std::vector<int> cover(n, 0);
    for (long o : tiling::axis_origins(n, patch, plan.stride_rows))
        for (long i = o; i < o + patch; ++i)
            ++cover[std::size_t(i)];
    // Interior: farther than one stride from either edge.
    long uncovered = 0, single = 0, interior = 0;
    for (long i = 0; i < n; ++i) {
        uncovered += cover[std::size_t(i)] == 0;
        if (i >= plan.stride_rows && i < n - plan.stride_rows) {
            ++interior;
            single += cover[std::size_t(i)] < 2;
        }
    }
    return {deterministic && uncovered == 0 && single == 0,
            fmt("%zu patches, stride %ld, full coverage %s, deterministic %s; %ld of %ld "
                "interior indices per axis lie in a single patch (e.g. index 600)",
                plan.patches.size(), plan.stride_rows, uncovered == 0 ? "yes" : "no",
                deterministic ? "yes" : "no", single, interior)};
}

reconstruct::ElevationMap map_from_dsm(const raster::GeoRaster& dsm)
{
    reconstruct::ElevationMap m;
    m.elevation = dsm;
    m.support = raster::Raster(dsm.rows(), dsm.cols(), 1, 1.0f);
    return m;
}

Outcome calibration()
{
    auto spec = synth::default_scene();
    spec.dsm.spacing = 2.0;
    const auto dsm = synth::make_dsm(spec);
    const auto id = reconstruct::calibrate_offsets(map_from_dsm(dsm), dsm);
    const auto [m_lat, m_lon] = reconstruct::angular_spacing(
            1.0, dsm.cell_lat(0.5 * double(dsm.rows() - 1)), geo::Ellipsoid{});
    raster::GeoRaster shifted = dsm;
    shifted.origin_lon += 4.0 * m_lon;
    shifted.origin_lat -= 3.0 * m_lat;
    for (float& v : shifted.raster.values())
        v += 2.0f;
    const auto off = reconstruct::calibrate_offsets(map_from_dsm(shifted), dsm);
    const bool pass = std::abs(id.east) < 0.1 && std::abs(id.north) < 0.1 &&
                      std::abs(id.up) < 0.1 && std::abs(off.east - 4.0) < 0.5 &&
                      std::abs(off.north + 3.0) < 0.5 && std::abs(off.up - 2.0) < 0.5;
    return {pass, fmt("identity (%.3f, %.3f, %.3f) m; shifted (4, -3, 2) -> (%.3f, %.3f, %.3f) m",
                      id.east, id.north, id.up, off.east, off.north, off.up)};
}

int run_cli(const std::string& args, const fs::path& log)
{
    const std::string cmd = std::string("'") + SARSTEREO_CLI + "' " + args + " >'" +
                            log.string() + "' 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Outcome bridge_protocol()
{
    testing::TempDir dir;
    constexpr int n = 128;
    bool exact = true;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto f = testing::speckle(n, n, seed);
        const auto g = testing::fourier_shift(f, n, n, 2.37 * double(seed), -1.61);
        tiling::PatchPair pair;
        pair.spec = {0, 0, n, n};
        pair.ref_pixels = raster::Raster(n, n, 1, 0.0f);
        pair.src_pixels = raster::Raster(n, n, 1, 0.0f);
        for (std::size_t i = 0; i < f.size(); ++i) {
            pair.ref_pixels.values()[i] = float(f[i]);
            pair.src_pixels.values()[i] = float(g[i]);
        }
        const FlowGrid flow = poc::match_patch(pair, poc::PocParams{});
        const auto id = "p" + std::to_string(seed);
        const auto req = bridge::write_request(pair, dir / id, id);
        bridge::write_response(req.dir, flow);
        const auto back = bridge::try_read_response(req.dir);
        exact = exact && back && raster::encode_raster(back->to_raster()) ==
                                         raster::encode_raster(flow.to_raster());
    }

    const Scene& s = default_scene();
    const int rc = run_cli("run-all --ref '" + s.ref.string() + "' --src '" + s.src.string() +
                                   "' --dsm '" + s.dsm.string() + "' -j 4 --matcher \"external:'" +
                                   FIXTURE_MATCHER + "'\" -o '" + (dir / "echo").string() + "'",
                           dir / "echo.log");
    return {exact && rc == 0,
            fmt("5 POC flows bit exact through the protocol: %s; echo matcher run-all exit %d",
                exact ? "yes" : "no", rc)};
}

} // namespace

int main()
{
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
            {"projection round trip", projection_round_trip},
            {"triangulation exactness", triangulation_exactness},
            {"parallax sensitivity", parallax_sensitivity},
            {"POC accuracy, noiseless", [] { return poc_suite(0.0); }},
            {"POC accuracy, 10% noise", [] { return poc_suite(0.1); }},
            {"end-to-end reconstruction", end_to_end},
            {"loss correctness", losses},
            {"metric correctness", metrics},
            {"tiling coverage", tiling_coverage},
            {"calibration", calibration},
            {"bridge protocol", bridge_protocol},
    };
    int failed = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria failed\n", failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
