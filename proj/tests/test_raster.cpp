#include "doctest.h"

#include <cmath>
#include <cstring>
#include <random>

#include "json.hpp"

#include "sarstereo/errors.h"
#include "sarstereo/raster.h"
#include "support.h"

using namespace sarstereo;
using namespace sarstereo::raster;
using nlohmann::json;

namespace {

Raster random_raster(std::size_t rows, std::size_t cols, std::size_t ch, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    Raster r(rows, cols, ch);
    for (float& v : r.values())
        v = static_cast<float>(testing::uniform(rng, -1e3, 1e3));
    return r;
}

json manifest_json()
{
    return json::parse(format_manifest({"img", testing::scene_geometry().model_a, {}}));
}

} // namespace

TEST_CASE("raster round trip is bit exact")
{
    testing::TempDir dir;
    Raster r = random_raster(17, 31, 3, 1);
    r.at(2, 3, 1) = std::numeric_limits<float>::quiet_NaN();
    r.at(4, 5, 0) = -0.0f;
    write_raster(r, dir / "a.srgr");
    const Raster back = read_raster(dir / "a.srgr");
    CHECK(back == r);
    CHECK(back.rows() == 17);
    CHECK(back.cols() == 31);
    CHECK(back.channels() == 3);
    CHECK(std::signbit(back.at(4, 5, 0)));

    Raster s(2, 2, 1, 5.0f, -9999.0f);
    s.at(0, 1) = -9999.0f;
    const Raster sb = decode_raster(encode_raster(s));
    REQUIRE(sb.nodata());
    CHECK(*sb.nodata() == -9999.0f);
    CHECK(!sb.valid(0, 1));
    CHECK(sb.valid(0, 0));
}

TEST_CASE("raster header is 64 bytes little endian")
{
    const auto bytes = encode_raster(Raster(2, 3, 1, 1.0f));
    REQUIRE(bytes.size() == kHeaderBytes + 6 * 4);
    CHECK(std::memcmp(bytes.data(), "SRGR", 4) == 0);
    CHECK(bytes[4] == 1);
    CHECK(bytes[8] == 2);
    CHECK(bytes[16] == 3);
    CHECK(bytes[24] == 1);
    CHECK(bytes[28] == 1);
}

TEST_CASE("corrupted rasters are rejected")
{
    auto bytes = encode_raster(Raster(4, 4, 1, 0.0f));
    CHECK(testing::error_code_of([&] {
              decode_raster(std::span(bytes.data(), 10));
          }) == ErrorCode::MalformedHeader);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK(testing::error_code_of([&] { decode_raster(bad_magic); }) ==
          ErrorCode::MalformedHeader);
    CHECK(testing::error_code_of([&] {
              decode_raster(std::span(bytes.data(), bytes.size() - 1));
          }) == ErrorCode::TruncatedPayload);
    auto huge = bytes;
    for (int i = 8; i < 24; ++i)
        huge[std::size_t(i)] = 0xff;
    CHECK(testing::error_code_of([&] { decode_raster(huge); }) == ErrorCode::DimensionOverflow);
    testing::TempDir dir;
    CHECK(testing::error_code_of([&] { read_raster(dir / "missing.srgr"); }) ==
          ErrorCode::IoFailure);
}

TEST_CASE("crop and channel copy")
{
    const Raster r = random_raster(10, 12, 2, 2);
    const Raster c = r.crop(3, 4, 5, 6);
    CHECK(c.rows() == 5);
    CHECK(c.cols() == 6);
    CHECK(c.at(0, 0, 1) == r.at(3, 4, 1));
    CHECK(c.at(4, 5, 0) == r.at(7, 9, 0));
    const Raster ch = r.channel(1);
    CHECK(ch.channels() == 1);
    CHECK(ch.at(9, 11) == r.at(9, 11, 1));
}

TEST_CASE("bilinear sampling on a geographic grid")
{
    GeoRaster g;
    g.raster = Raster(3, 4, 1, 0.0f);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 4; ++c)
            g.raster.at(r, c) = float(10 * r + c);
    g.origin_lat = 0.5;
    g.origin_lon = 1.0;
    g.lat_spacing = -1e-4;
    g.lon_spacing = 2e-4;
    const auto at = [&](double row, double col) {
        return sample_bilinear(g, {g.cell_lat(row), g.cell_lon(col), 0.0});
    };
    CHECK(*at(0, 0) == doctest::Approx(0.0));
    CHECK(*at(2, 3) == doctest::Approx(23.0));
    CHECK(*at(1.5, 2.25) == doctest::Approx(17.25));
    CHECK(!at(-0.1, 0));
    CHECK(!at(0, 3.1));
    g.raster.at(1, 1) = std::numeric_limits<float>::quiet_NaN();
    CHECK(!at(0.5, 0.5));
    CHECK(*at(0.5, 2.5) == doctest::Approx(7.5));
}

TEST_CASE("georaster manifest round trip")
{
    testing::TempDir dir;
    GeoRaster g;
    g.raster = random_raster(5, 7, 1, 3);
    g.origin_lat = 0.57;
    g.origin_lon = 2.28;
    g.lat_spacing = -7.8e-8;
    g.lon_spacing = 9.3e-8;
    write_georaster(g, dir / "dsm.json", "dsm.srgr");
    const GeoRaster back = read_georaster(dir / "dsm.json");
    CHECK(back.raster == g.raster);
    CHECK(back.origin_lat == doctest::Approx(g.origin_lat).epsilon(1e-15));
    CHECK(back.lon_spacing == doctest::Approx(g.lon_spacing).epsilon(1e-15));
}

TEST_CASE("sensor manifest round trip")
{
    const auto& model = testing::scene_geometry().model_b;
    const Manifest m = parse_manifest(format_manifest({"b", model, "amp.srgr"}));
    CHECK(m.id == "b");
    CHECK(m.amplitude == "amp.srgr");
    CHECK(m.model.rows == model.rows);
    CHECK(m.model.cols == model.cols);
    CHECK(m.model.near_range == model.near_range);
    CHECK(m.model.range_spacing == model.range_spacing);
    CHECK(m.model.azimuth_time_spacing == model.azimuth_time_spacing);
    CHECK(m.model.reference_elevation == model.reference_elevation);
    REQUIRE(m.model.trajectory.samples().size() == model.trajectory.samples().size());
    CHECK((m.model.trajectory.samples()[1].position - model.trajectory.samples()[1].position)
                  .norm() == 0.0);
}

TEST_CASE("manifest errors name the field")
{
    for (const char* key : {"rows", "near_range_m", "range_spacing_m", "trajectory", "look_side"}) {
        json j = manifest_json();
        j.erase(key);
        try {
            parse_manifest(j.dump());
            FAIL("expected MissingField");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::MissingField);
            CHECK(e.field() == key);
        }
    }
    json j = manifest_json();
    std::swap(j["trajectory"][0]["t_s"], j["trajectory"][1]["t_s"]);
    CHECK(testing::error_code_of([&] { parse_manifest(j.dump()); }) ==
          ErrorCode::InconsistentTrajectory);
    CHECK(testing::error_code_of([] { parse_manifest("{not json"); }) ==
          ErrorCode::MalformedHeader);
}

TEST_CASE("sar image save and load")
{
    testing::TempDir dir;
    const auto& model = testing::scene_geometry().model_a;
    SarImage img{random_raster(model.rows, model.cols, 1, 4), model, "ref"};
    const auto manifest = save_sar_image(img, dir / "ref");
    const SarImage back = load_sar_image(manifest);
    CHECK(back.amplitude == img.amplitude);
    CHECK(back.id == "ref");

    json j = json::parse(read_text(manifest));
    j["rows"] = model.rows + 1;
    write_text(manifest, j.dump());
    CHECK(testing::error_code_of([&] { load_sar_image(manifest); }) ==
          ErrorCode::DimensionMismatch);
}
