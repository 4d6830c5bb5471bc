#pragma once

#include <span>
#include <vector>

#include "sarstereo/flow.h"
#include "sarstereo/raster.h"
#include "sarstereo/tiling.h"

namespace sarstereo::poc {

struct PocParams {
    int block_size = 32;              // power of two, >= 16
    int pyramid_levels = 3;
    int grid_stride = 8;              // pixels between block centers
    double spectral_band = 0.5;       // fraction of Nyquist kept per axis
    double peak_accept_threshold = 0.1;

    void validate() const;
};

/// Band-limited phase-only correlation of two n x n blocks. `at(dr, dc)` is
/// the correlation at displacement (dr, dc) in [-n/2, n/2); a block g equal to
/// f translated by v peaks at v. Normalised so identical blocks peak at 1.
class CorrelationSurface {
public:
    CorrelationSurface() = default;
    CorrelationSurface(int n, std::vector<double> values, bool zero_spectrum);

    int size() const { return n_; }
    bool zero_spectrum() const { return zero_spectrum_; }
    double at(int drow, int dcol) const;

    /// Displacement of the global maximum.
    std::pair<int, int> peak_location() const;
    double peak_value() const;

private:
    int n_ = 0;
    std::vector<double> values_; // FFT index order
    bool zero_spectrum_ = false;
};

/// Blocks are row-major n*n samples; they are mean-removed and Hann-windowed
/// internally. A constant block yields an all-zero surface flagged
/// zero_spectrum.
CorrelationSurface poc_surface(std::span<const double> f, std::span<const double> g, int n,
                               double spectral_band = 0.5);

struct ShiftEstimate {
    double drow = 0.0;
    double dcol = 0.0;
    double peak = 0.0; // fitted correlation peak, used as confidence
    double peak_ratio = 0.0; // main peak over the strongest peak outside its lobe
    bool accepted = false; // peak >= threshold
};

/// Sub-pixel displacement of g relative to f.
ShiftEstimate estimate_shift(std::span<const double> f, std::span<const double> g, int n,
                             const PocParams& params);

/// Normalised peak profile of the band-limited correlation along one axis.
double peak_model(double x, int n, double spectral_band);

/// Coarse-to-fine pyramid block matching. Throws PatchTooSmall when the
/// patch is smaller than block_size * 2^(levels-1).
FlowGrid match_patch(const raster::Raster& ref, const raster::Raster& src,
                     const PocParams& params);
FlowGrid match_patch(const tiling::PatchPair& pair, const PocParams& params);

} // namespace sarstereo::poc
