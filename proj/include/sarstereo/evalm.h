#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "sarstereo/raster.h"
#include "sarstereo/reconstruct.h"

namespace sarstereo::evalm {

enum class BceSign {
    StandardNegated, // -(1/|I|) sum{C log C^ + (1-C) log(1-C^)}
    AsPrinted,       // the same sum without the leading minus
};

enum class Normalization {
    AllPixels, // |I| = every reference pixel
    Support,   // |I| = number of pixels with C = 1
};

struct LossConfig {
    double lambda = 0.01;
    BceSign bce_sign = BceSign::StandardNegated;
    Normalization normalization = Normalization::AllPixels;
    double epsilon = 1e-7; // confidence clamp

    void validate() const;
};

/// (1/|I|) sum_i C_i ||D^_i - D_i||_2 over 2-channel disparity grids.
double loss_disparity(const raster::Raster& d_hat, const raster::Raster& d,
                      const raster::Raster& c, const LossConfig& cfg = {});

/// Binary cross-entropy between predicted confidence and binary C.
double loss_confidence(const raster::Raster& c_hat, const raster::Raster& c,
                       const LossConfig& cfg = {});

/// ld + lambda * lc.
double loss_total(double ld, double lc, const LossConfig& cfg = {});

struct ErrorStats {
    double mean_error = 0.0;  // m, measured - truth
    double std_error = 0.0;   // m, population
    double rmse = 0.0;        // m
    double max_abs_error = 0.0;
    std::vector<std::pair<double, double>> pct_within; // threshold (m) -> percent
    std::size_t n_points = 0;    // measured cells with truth
    std::size_t truth_cells = 0; // map-grid cells with truth
    double coverage = 0.0;       // n_points / truth_cells
};

/// Compares every map cell against the truth sampled bilinearly at the cell
/// center. Throws NoOverlap when no measured cell has truth.
ErrorStats error_stats(const reconstruct::ElevationMap& map, const raster::GeoRaster& truth,
                       const std::vector<double>& thresholds);

nlohmann::json to_json(const ErrorStats& s);
/// Aligned text table: label, mean +- std, rmse, pct at 2 m, coverage.
std::string format_table(const std::vector<std::pair<std::string, ErrorStats>>& rows);
/// "threshold_m,percent" lines.
std::string threshold_csv(const ErrorStats& s);

struct ColorScale {
    double limit = 5.0; // m; errors beyond +-limit saturate
};

/// Binary PPM (P6): signed-error map (blue negative, white zero, red
/// positive), gray where nothing was measured, with a labelled color bar.
std::vector<std::uint8_t> render_error_image(const reconstruct::ElevationMap& map,
                                             const raster::GeoRaster& truth,
                                             const ColorScale& scale = {});
void render_error_map(const reconstruct::ElevationMap& map, const raster::GeoRaster& truth,
                      const ColorScale& scale, const std::filesystem::path& out);

struct Rgb {
    std::uint8_t r, g, b;
    bool operator==(const Rgb&) const = default;
};
inline constexpr Rgb kUnmeasured{128, 128, 128};
Rgb error_color(double error, const ColorScale& scale);

} // namespace sarstereo::evalm
