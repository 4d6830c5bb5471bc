#pragma once

#include <cstddef>

#include "sarstereo/raster.h"

namespace sarstereo {

/// Dense correspondence for one patch pair: Ref pixel (r, c) matches Src
/// pixel (r + drow, c + dcol) in patch-local coordinates. Confidence lies in
/// [0, 1]; displacement is nodata wherever confidence is 0.
struct FlowGrid {
    raster::Raster displacement; // 2 channels: drow, dcol
    raster::Raster confidence;   // 1 channel

    FlowGrid() = default;
    FlowGrid(std::size_t rows, std::size_t cols);

    std::size_t rows() const { return confidence.rows(); }
    std::size_t cols() const { return confidence.cols(); }

    float drow(std::size_t r, std::size_t c) const { return displacement.at(r, c, 0); }
    float dcol(std::size_t r, std::size_t c) const { return displacement.at(r, c, 1); }
    float conf(std::size_t r, std::size_t c) const { return confidence.at(r, c); }

    void set(std::size_t r, std::size_t c, float drow, float dcol, float conf);
    void set_unmatched(std::size_t r, std::size_t c);

    /// Three-channel (drow, dcol, confidence) raster: the wire format shared
    /// with external matchers.
    raster::Raster to_raster() const;
    /// Inverse of to_raster; validates channel count and confidence range,
    /// throwing MalformedResponse on violation.
    static FlowGrid from_raster(const raster::Raster& r);

    bool operator==(const FlowGrid& other) const;
};

} // namespace sarstereo
