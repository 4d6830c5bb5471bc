#include "sarstereo/evalm.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sarstereo/errors.h"

namespace sarstereo::evalm {

using nlohmann::json;

void LossConfig::validate() const
{
    if (!(lambda >= 0.0))
        fail(ErrorCode::InvalidArgument, "lambda must be non-negative", "lambda");
    if (!(epsilon > 0.0 && epsilon < 0.5))
        fail(ErrorCode::InvalidArgument, "epsilon must lie in (0, 0.5)", "epsilon");
}

namespace {

void require_same_grid(const raster::Raster& a, const raster::Raster& b, std::size_t a_channels,
                       std::size_t b_channels, const char* what)
{
    if (a.rows() != b.rows() || a.cols() != b.cols() || a.channels() != a_channels ||
        b.channels() != b_channels)
        fail(ErrorCode::DimensionMismatch, what);
}

bool binary_on(float v)
{
    if (v == 1.0f)
        return true;
    if (v == 0.0f)
        return false;
    fail(ErrorCode::InvalidArgument, "ground-truth confidence must be 0 or 1");
}

double normalizer(const raster::Raster& c, const LossConfig& cfg)
{
    if (cfg.normalization == Normalization::AllPixels)
        return double(c.rows() * c.cols());
    double n = 0.0;
    for (float v : c.values())
        n += binary_on(v) ? 1.0 : 0.0;
    return n;
}

} // namespace

double loss_disparity(const raster::Raster& d_hat, const raster::Raster& d, const raster::Raster& c,
                      const LossConfig& cfg)
{
    cfg.validate();
    require_same_grid(d_hat, d, 2, 2, "disparity grids differ in shape");
    require_same_grid(d, c, 2, 1, "confidence grid does not match the disparity grid");
    const double n = normalizer(c, cfg);
    if (n == 0.0)
        return 0.0;
    double sum = 0.0;
    for (std::size_t r = 0; r < c.rows(); ++r)
        for (std::size_t col = 0; col < c.cols(); ++col) {
            if (!binary_on(c.at(r, col)))
                continue;
            const double er = double(d_hat.at(r, col, 0)) - d.at(r, col, 0);
            const double ec = double(d_hat.at(r, col, 1)) - d.at(r, col, 1);
            if (!std::isfinite(er) || !std::isfinite(ec))
                fail(ErrorCode::InvalidArgument, "non-finite disparity where C = 1");
            sum += std::hypot(er, ec);
        }
    return sum / n;
}

double loss_confidence(const raster::Raster& c_hat, const raster::Raster& c, const LossConfig& cfg)
{
    cfg.validate();
    require_same_grid(c_hat, c, 1, 1, "confidence grids differ in shape");
    const double n = normalizer(c, cfg);
    if (n == 0.0)
        return 0.0;
    double sum = 0.0;
    const auto ph = c_hat.values();
    const auto pc = c.values();
    for (std::size_t i = 0; i < ph.size(); ++i) {
        double p = ph[i];
        if (std::isnan(p))
            p = 0.0;
        p = std::clamp(p, cfg.epsilon, 1.0 - cfg.epsilon);
        sum += binary_on(pc[i]) ? std::log(p) : std::log(1.0 - p);
    }
    const double value = sum / n;
    return cfg.bce_sign == BceSign::StandardNegated ? -value : value;
}

double loss_total(double ld, double lc, const LossConfig& cfg)
{
    cfg.validate();
    return ld + cfg.lambda * lc;
}

ErrorStats error_stats(const reconstruct::ElevationMap& map, const raster::GeoRaster& truth,
                       const std::vector<double>& thresholds)
{
    for (double t : thresholds)
        if (!(t >= 0.0))
            fail(ErrorCode::InvalidArgument, "thresholds must be non-negative", "thresholds");
    const auto& g = map.elevation;
    std::vector<double> errors;
    ErrorStats s;
    for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) {
            const auto t = raster::sample_bilinear(
                    truth, {g.cell_lat(double(r)), g.cell_lon(double(c)), 0.0});
            if (!t)
                continue;
            ++s.truth_cells;
            if (!g.raster.valid(r, c))
                continue;
            errors.push_back(double(g.raster.at(r, c)) - *t);
        }
    if (errors.empty())
        fail(ErrorCode::NoOverlap, "no measured cell overlaps the ground truth");

    const double n = double(errors.size());
    double sum = 0.0;
    for (double e : errors)
        sum += e;
    s.mean_error = sum / n;
    double ss = 0.0, sq = 0.0;
    for (double e : errors) {
        ss += (e - s.mean_error) * (e - s.mean_error);
        sq += e * e;
        s.max_abs_error = std::max(s.max_abs_error, std::abs(e));
    }
    s.std_error = std::sqrt(ss / n);
    s.rmse = std::sqrt(sq / n);
    s.n_points = errors.size();
    s.coverage = double(s.n_points) / double(s.truth_cells);

    std::vector<double> abs_err(errors.size());
    std::transform(errors.begin(), errors.end(), abs_err.begin(),
                   [](double e) { return std::abs(e); });
    std::sort(abs_err.begin(), abs_err.end());
    for (double t : thresholds) {
        const auto k = std::upper_bound(abs_err.begin(), abs_err.end(), t) - abs_err.begin();
        s.pct_within.emplace_back(t, 100.0 * double(k) / n);
    }
    return s;
}

json to_json(const ErrorStats& s)
{
    json pct = json::array();
    for (const auto& [t, p] : s.pct_within)
        pct.push_back({{"threshold_m", t}, {"percent", p}});
    return {{"mean_error_m", s.mean_error},
            {"std_error_m", s.std_error},
            {"rmse_m", s.rmse},
            {"max_abs_error_m", s.max_abs_error},
            {"n_points", s.n_points},
            {"truth_cells", s.truth_cells},
            {"coverage", s.coverage},
            {"pct_within", std::move(pct)}};
}

std::string format_table(const std::vector<std::pair<std::string, ErrorStats>>& rows)
{
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-16s %20s %10s %12s %10s %10s\n", "method",
                  "mean +- std [m]", "rmse [m]", "<= 2 m [%]", "coverage", "cells");
    out << line;
    for (const auto& [label, s] : rows) {
        double at2 = NAN;
        for (const auto& [t, p] : s.pct_within)
            if (t == 2.0)
                at2 = p;
        char ms[64];
        std::snprintf(ms, sizeof ms, "%.2f +- %.2f", s.mean_error, s.std_error);
        std::snprintf(line, sizeof line, "%-16s %20s %10.3f %12.2f %10.4f %10zu\n", label.c_str(),
                      ms, s.rmse, at2, s.coverage, s.n_points);
        out << line;
    }
    return out.str();
}

std::string threshold_csv(const ErrorStats& s)
{
    std::ostringstream out;
    out << "threshold_m,percent\n";
    char line[64];
    for (const auto& [t, p] : s.pct_within) {
        std::snprintf(line, sizeof line, "%.6g,%.6f\n", t, p);
        out << line;
    }
    return out.str();
}

Rgb error_color(double error, const ColorScale& scale)
{
    const double t = std::clamp(error / scale.limit, -1.0, 1.0);
    const auto fade = [](double x) { return static_cast<std::uint8_t>(std::lround(255.0 * x)); };
    if (t >= 0.0)
        return {255, fade(1.0 - t), fade(1.0 - t)};
    return {fade(1.0 + t), fade(1.0 + t), 255};
}

namespace {

// 3x5 glyphs, one row per entry, bit 2 = leftmost column.
const std::array<std::uint8_t, 5>* glyph(char ch)
{
    static const std::array<std::uint8_t, 5> digits[10] = {
            {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
            {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7}};
    static const std::array<std::uint8_t, 5> plus{0, 2, 7, 2, 0}, minus{0, 0, 7, 0, 0},
            dot{0, 0, 0, 0, 2}, m{0, 0, 7, 7, 5};
    if (ch >= '0' && ch <= '9')
        return &digits[ch - '0'];
    switch (ch) {
    case '+': return &plus;
    case '-': return &minus;
    case '.': return &dot;
    case 'm': return &m;
    default: return nullptr;
    }
}

struct Canvas {
    std::size_t width, height;
    std::vector<std::uint8_t> rgb;

    Canvas(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 255) {}

    void put(std::size_t x, std::size_t y, Rgb c)
    {
        if (x >= width || y >= height)
            return;
        const std::size_t i = (y * width + x) * 3;
        rgb[i] = c.r;
        rgb[i + 1] = c.g;
        rgb[i + 2] = c.b;
    }

    void text(std::size_t x, std::size_t y, const std::string& s, int scale)
    {
        for (char ch : s) {
            if (const auto* gl = glyph(ch))
                for (int gy = 0; gy < 5; ++gy)
                    for (int gx = 0; gx < 3; ++gx)
                        if ((*gl)[std::size_t(gy)] & (4 >> gx))
                            for (int sy = 0; sy < scale; ++sy)
                                for (int sx = 0; sx < scale; ++sx)
                                    put(x + std::size_t(gx * scale + sx),
                                        y + std::size_t(gy * scale + sy), {0, 0, 0});
            x += std::size_t(4 * scale);
        }
    }
};

std::string label(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+g", v);
    return v == 0.0 ? std::string("0") : std::string(buf);
}

} // namespace

std::vector<std::uint8_t> render_error_image(const reconstruct::ElevationMap& map,
                                             const raster::GeoRaster& truth,
                                             const ColorScale& scale)
{
    if (!(scale.limit > 0.0))
        fail(ErrorCode::InvalidArgument, "color scale limit must be positive", "limit");
    const auto& g = map.elevation;
    constexpr std::size_t kLegendWidth = 80, kMinHeight = 140, kPad = 8;
    const std::size_t width = g.cols() + kLegendWidth;
    const std::size_t height = std::max(g.rows(), kMinHeight);
    Canvas canvas(width, height);

    std::size_t overlap = 0;
    for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) {
            Rgb color = kUnmeasured;
            if (g.raster.valid(r, c)) {
                const auto t = raster::sample_bilinear(
                        truth, {g.cell_lat(double(r)), g.cell_lon(double(c)), 0.0});
                if (t) {
                    color = error_color(double(g.raster.at(r, c)) - *t, scale);
                    ++overlap;
                }
            }
            canvas.put(c, r, color);
        }
    if (overlap == 0)
        fail(ErrorCode::NoOverlap, "no measured cell overlaps the ground truth");

    // Color bar: +limit at the top, -limit at the bottom.
    const std::size_t bar_x = g.cols() + kPad;
    const std::size_t bar_top = kPad;
    const std::size_t bar_h = height - 2 * kPad;
    for (std::size_t y = 0; y < bar_h; ++y) {
        const double v = scale.limit * (1.0 - 2.0 * double(y) / double(bar_h - 1));
        for (std::size_t x = 0; x < 14; ++x)
            canvas.put(bar_x + x, bar_top + y, error_color(v, scale));
    }
    const std::size_t text_x = bar_x + 20;
    canvas.text(text_x, bar_top, label(scale.limit), 2);
    canvas.text(text_x, bar_top + bar_h / 2 - 5, "0", 2);
    canvas.text(text_x, bar_top + bar_h - 10, label(-scale.limit), 2);
    canvas.text(text_x, bar_top + bar_h / 4, "m", 2);

    const std::string header =
            "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), canvas.rgb.begin(), canvas.rgb.end());
    return out;
}

void render_error_map(const reconstruct::ElevationMap& map, const raster::GeoRaster& truth,
                      const ColorScale& scale, const std::filesystem::path& out)
{
    const auto bytes = render_error_image(map, truth, scale);
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    if (!f || !f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size())))
        fail(ErrorCode::IoFailure, "cannot write " + out.string(), out.string());
}

} // namespace sarstereo::evalm
