#pragma once

#include <stdlib.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sarstereo/errors.h"
#include "sarstereo/fft.h"
#include "sarstereo/geo.h"
#include "sarstereo/synth.h"

namespace testing {

namespace fs = std::filesystem;

/// Scratch directory removed on scope exit.
class TempDir {
public:
    TempDir()
    {
        std::string tmpl = (fs::temp_directory_path() / "sarstereo-test-XXXXXX").string();
        if (!mkdtemp(tmpl.data()))
            throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline double uniform(std::mt19937_64& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Default scene with a coarse DSM: the sensor models differ from the full
/// scene only through the DSM mean used as reference elevation.
inline sarstereo::synth::SceneSpec coarse_scene()
{
    auto s = sarstereo::synth::default_scene();
    s.dsm.spacing = 4.0;
    return s;
}

inline const sarstereo::synth::SceneGeometry& scene_geometry()
{
    static const auto g = [] {
        const auto s = coarse_scene();
        return sarstereo::synth::make_geometry(s, sarstereo::synth::make_dsm(s));
    }();
    return g;
}

/// Geodetic point at (east, north) meters from the default scene center.
inline sarstereo::geo::GeodeticCoord scene_point(double east, double north, double height)
{
    const auto s = sarstereo::synth::default_scene();
    const sarstereo::geo::Ellipsoid e;
    const double lat0 = s.center_lat_deg * M_PI / 180.0;
    const double lon0 = s.center_lon_deg * M_PI / 180.0;
    return {lat0 + north / e.meridian_radius(lat0),
            lon0 + east / (e.prime_vertical_radius(lat0) * std::cos(lat0)), height};
}

/// Row-major rows x cols field of unit-mean exponential speckle.
inline std::vector<double> speckle(int rows, int cols, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::exponential_distribution<double> exp1(1.0);
    std::vector<double> v(static_cast<std::size_t>(rows) * cols);
    for (double& x : v)
        x = exp1(rng);
    return v;
}

/// Periodic band-limited translation: out(x) = in(x - (drow, dcol)).
inline std::vector<double> fourier_shift(const std::vector<double>& in, int rows, int cols,
                                         double drow, double dcol)
{
    using sarstereo::fft::Complex;
    const std::size_t n = in.size();
    std::vector<Complex> a(in.begin(), in.end()), spec(n), out(n);
    sarstereo::fft::forward_2d(a, spec, rows, cols);
    for (int r = 0; r < rows; ++r) {
        const int kr = r <= rows / 2 ? r : r - rows;
        for (int c = 0; c < cols; ++c) {
            const int kc = c <= cols / 2 ? c : c - cols;
            double phase = -2.0 * M_PI * (kr * drow / rows + kc * dcol / cols);
            // Nyquist bins have no sign; keep them real so the result stays real.
            if ((rows % 2 == 0 && r == rows / 2) || (cols % 2 == 0 && c == cols / 2))
                phase = 0.0;
            spec[static_cast<std::size_t>(r) * cols + c] *= std::polar(1.0, phase);
        }
    }
    sarstereo::fft::inverse_2d(spec, out, rows, cols);
    std::vector<double> res(n);
    for (std::size_t i = 0; i < n; ++i)
        res[i] = out[i].real() / double(n);
    return res;
}

/// size x size window of a row-major image with `cols` columns.
inline std::vector<double> window(const std::vector<double>& img, int cols, int row, int col,
                                  int size)
{
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(size) * size);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c)
            w.push_back(img[static_cast<std::size_t>(row + r) * cols + col + c]);
    return w;
}

template <typename F>
sarstereo::ErrorCode error_code_of(F&& f)
{
    try {
        f();
    } catch (const sarstereo::Error& e) {
        return e.code();
    }
    throw std::runtime_error("expected a sarstereo::Error");
}

} // namespace testing
