#include "doctest.h"

#include <set>

#include "sarstereo/errors.h"
#include "sarstereo/gtruth.h"
#include "support.h"

using namespace sarstereo;
using namespace sarstereo::gtruth;
namespace fs = std::filesystem;

namespace {

raster::GeoRaster flat_dsm(double h)
{
    auto s = testing::coarse_scene();
    s.dsm.kind = synth::DsmKind::Flat;
    s.dsm.base = h;
    return synth::make_dsm(s);
}

const raster::GeoRaster& hills()
{
    static const auto dsm = synth::make_dsm(testing::coarse_scene());
    return dsm;
}

raster::SarImage blank_image(geo::SarSensorModel m, std::size_t rows, std::size_t cols,
                             const std::string& id)
{
    m.rows = rows;
    m.cols = cols;
    return {raster::Raster(rows, cols, 1, 1.0f), m, id};
}

// Window roughly at the scene center with 40 m of local relief.
const tiling::PatchSpec kWindow{1000, 1000, 64, 64};

} // namespace

TEST_CASE("flat DSM is a one step fixed point")
{
    const auto& g = testing::scene_geometry();
    ElevationReport report;
    const auto dsm = flat_dsm(g.model_a.reference_elevation);
    const auto e = elevation_in_image_geometry(dsm, g.model_a, kWindow, nullptr, &report);
    CHECK(report.pixels == 64 * 64);
    CHECK(report.converged == 64 * 64);
    CHECK(report.max_iterations == 1);
    for (float v : e.values())
        CHECK(v == doctest::Approx(g.model_a.reference_elevation).epsilon(1e-6));

    ElevationReport other;
    const auto e2 = elevation_in_image_geometry(flat_dsm(350.0), g.model_a, kWindow, nullptr,
                                                &other);
    CHECK(other.converged == 64 * 64);
    for (float v : e2.values())
        CHECK(std::abs(v - 350.0f) < 1e-3f);
}

TEST_CASE("DSM outside the footprint gives all nodata")
{
    const auto& g = testing::scene_geometry();
    raster::GeoRaster far = hills();
    far.origin_lat += 0.01; // about 64 km north
    ElevationReport report;
    const auto e = elevation_in_image_geometry(far, g.model_a, kWindow, nullptr, &report);
    CHECK(report.dsm_miss == 64 * 64);
    for (std::size_t r = 0; r < e.rows(); ++r)
        for (std::size_t c = 0; c < e.cols(); ++c)
            CHECK(!e.valid(r, c));
}

TEST_CASE("identity geometry gives zero disparity")
{
    const auto& g = testing::scene_geometry();
    const auto e = elevation_in_image_geometry(hills(), g.model_a, kWindow, nullptr);
    const Disparity d = disparity_groundtruth(e, kWindow, kWindow.row, kWindow.col, g.model_a,
                                              g.model_a);
    CHECK(d.valid == 64 * 64);
    for (std::size_t r = 0; r < 64; ++r)
        for (std::size_t c = 0; c < 64; ++c) {
            CHECK(d.C.at(r, c) == 1.0f);
            CHECK(std::abs(d.D.at(r, c, 0)) < 1e-4);
            CHECK(std::abs(d.D.at(r, c, 1)) < 1e-4);
        }
}

TEST_CASE("all-nodata elevation gives empty disparity")
{
    const auto& g = testing::scene_geometry();
    raster::Raster e(64, 64, 1);
    const Disparity d = disparity_groundtruth(e, kWindow, kWindow.row, kWindow.col, g.model_a,
                                              g.model_b);
    CHECK(d.valid == 0);
    for (std::size_t r = 0; r < 64; ++r)
        for (std::size_t c = 0; c < 64; ++c) {
            CHECK(d.C.at(r, c) == 0.0f);
            CHECK(!d.D.valid(r, c));
        }
    CHECK(testing::error_code_of([&] {
              disparity_groundtruth(raster::Raster(3, 3, 1), kWindow, 0, 0, g.model_a, g.model_b);
          }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("disparity agrees with forward projection")
{
    const auto& g = testing::scene_geometry();
    const geo::Ellipsoid ell;
    const auto loc = tiling::localize_src(g.model_a, g.model_b, kWindow);
    const auto e = elevation_in_image_geometry(hills(), g.model_a, kWindow, nullptr);
    const Disparity d = disparity_groundtruth(e, kWindow, loc.row, loc.col, g.model_a, g.model_b);
    REQUIRE(d.valid > 1000);
    std::size_t checked = 0;
    for (std::size_t r = 0; r < 64; ++r)
        for (std::size_t c = 0; c < 64; ++c) {
            // C and D validity are equivalent.
            REQUIRE((d.C.at(r, c) == 1.0f) == (d.D.valid(r, c) && d.D.valid(r, c, 1)));
            if (d.C.at(r, c) != 1.0f)
                continue;
            const geo::ImageCoord px{double(kWindow.row + long(r)), double(kWindow.col + long(c))};
            const auto ground = geo::inverse_project(g.model_a, px, e.at(r, c));
            const auto s = geo::forward_project(g.model_b, geo::geodetic_to_ecef(ground, ell));
            const double sr = double(r) + d.D.at(r, c, 0) + double(loc.row);
            const double sc = double(c) + d.D.at(r, c, 1) + double(loc.col);
            CHECK(std::abs(sr - s.row) < 1e-2);
            CHECK(std::abs(sc - s.col) < 1e-2);
            ++checked;
        }
    CHECK(checked == d.valid);
}

TEST_CASE("elevation fixed point is stable when reseeded")
{
    const auto& g = testing::scene_geometry();
    const auto e = elevation_in_image_geometry(hills(), g.model_a, kWindow, nullptr);
    ElevationReport report;
    const auto again = elevation_in_image_geometry(hills(), g.model_a, kWindow, &e, &report);
    for (std::size_t r = 0; r < 64; ++r)
        for (std::size_t c = 0; c < 64; ++c)
            if (e.valid(r, c)) {
                REQUIRE(again.valid(r, c));
                CHECK(std::abs(again.at(r, c) - e.at(r, c)) <= kElevationTolerance);
            }
    CHECK(report.mean_iterations() <= 2.0);
}

TEST_CASE("recovered heights match the rendering-time truth")
{
    auto spec = synth::default_scene();
    spec.extent_east = 400.0;
    spec.extent_north = 400.0;
    spec.dsm.spacing = 1.0;
    spec.dsm.bumps = {{0.0, 0.0, 30.0, 80.0}, {-90.0, 60.0, -12.0, 40.0}};
    const auto scene = synth::render_pair(spec);
    const auto& img = scene.ref;
    ElevationReport report;
    const auto e = elevation_in_image_geometry(scene.dsm, img.image.model, &report);
    std::size_t compared = 0;
    double worst = 0.0;
    // Pixels near the footprint edge average partially covered cells.
    for (std::size_t r = 8; r + 8 < e.rows(); ++r)
        for (std::size_t c = 8; c + 8 < e.cols(); ++c)
            if (e.valid(r, c) && img.elevation.valid(r, c) && e.valid(r - 4, c - 4) &&
                e.valid(r + 4, c + 4)) {
                worst = std::max(worst, double(std::abs(e.at(r, c) - img.elevation.at(r, c))));
                ++compared;
            }
    CHECK(compared > 10000);
    CHECK(worst < 0.1);
}

TEST_CASE("split validation")
{
    SplitSpec split = split_from_json(nlohmann::json::parse(R"({"pairs": {
        "a": {"split": "train", "area": "aso"},
        "b": {"split": "test", "area": "aso"},
        "c": {"split": "val", "area": "kuju"}}})"));
    try {
        validate_split({"a", "b", "c"}, split);
        FAIL("expected SplitLeakage");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SplitLeakage);
        CHECK(e.field() == "a");
        CHECK(std::string(e.what()).find("'a'") != std::string::npos);
    }
    split["a"].area = "unzen";
    CHECK_NOTHROW(validate_split({"a", "b", "c"}, split));
    CHECK(testing::error_code_of([&] { validate_split({"a", "d"}, split); }) ==
          ErrorCode::ConfigError);
    split["c"].split = "holdout";
    CHECK(testing::error_code_of([&] { validate_split({"c"}, split); }) ==
          ErrorCode::ConfigError);
}

TEST_CASE("dataset of one pair has a 6x6 patch grid and is reproducible")
{
    const auto& g = testing::scene_geometry();
    // 2240 / 560 scaled down by ten: same stride arithmetic and 6x6 grid.
    const std::vector<PairInput> pairs{{"p", blank_image(g.model_a, 224, 224, "ref"),
                                        blank_image(g.model_b, 224, 224, "src")}};
    const SplitSpec split{{"p", {"train", "aso"}}};
    const DatasetOptions options{56, 56, 1.0 / 3.0};
    testing::TempDir a, b;
    const auto report = build_dataset(pairs, hills(), options, split, a.path());
    CHECK(report.unmatchable == 0);
    CHECK(report.patches_per_split.at("train") == 36);
    build_dataset(pairs, hills(), options, split, b.path());

    const auto manifest = nlohmann::json::parse(raster::read_text(a / "split.json"));
    CHECK(manifest.at("splits").at("train").at(0).at("patches").size() ==
          report.patches_per_split.at("train"));
    CHECK(raster::read_text(a / "split.json") == raster::read_text(b / "split.json"));
    std::size_t dirs = 0;
    for (const auto& entry : fs::directory_iterator(a / "train" / "p")) {
        const auto id = entry.path().filename().string();
        std::set<std::string> names;
        for (const auto& f : fs::directory_iterator(entry.path()))
            names.insert(f.path().filename().string());
        CHECK(names == std::set<std::string>{"C.srgr", "D.srgr", "elev.srgr", "meta.json",
                                             "ref.srgr", "src.srgr"});
        CHECK(raster::read_text(entry.path() / "meta.json") ==
              raster::read_text(b / "train" / "p" / id / "meta.json"));
        ++dirs;
    }
    CHECK(dirs == report.patches_per_split.at("train"));
}
