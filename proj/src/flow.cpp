#include "sarstereo/flow.h"

#include <cmath>
#include <limits>

#include "sarstereo/errors.h"

namespace sarstereo {

namespace {
constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();
}

FlowGrid::FlowGrid(std::size_t rows, std::size_t cols)
    : displacement(rows, cols, 2, kNaN), confidence(rows, cols, 1, 0.0f)
{}

void FlowGrid::set(std::size_t r, std::size_t c, float drow, float dcol, float conf)
{
    displacement.at(r, c, 0) = drow;
    displacement.at(r, c, 1) = dcol;
    confidence.at(r, c) = conf;
}

void FlowGrid::set_unmatched(std::size_t r, std::size_t c)
{
    set(r, c, kNaN, kNaN, 0.0f);
}

raster::Raster FlowGrid::to_raster() const
{
    raster::Raster out(rows(), cols(), 3, kNaN);
    for (std::size_t r = 0; r < rows(); ++r)
        for (std::size_t c = 0; c < cols(); ++c) {
            out.at(r, c, 0) = drow(r, c);
            out.at(r, c, 1) = dcol(r, c);
            out.at(r, c, 2) = conf(r, c);
        }
    return out;
}

FlowGrid FlowGrid::from_raster(const raster::Raster& ras)
{
    if (ras.channels() != 3)
        fail(ErrorCode::MalformedResponse,
             "flow grid needs 3 channels, found " + std::to_string(ras.channels()));
    FlowGrid f(ras.rows(), ras.cols());
    for (std::size_t r = 0; r < ras.rows(); ++r)
        for (std::size_t c = 0; c < ras.cols(); ++c) {
            const float conf = ras.at(r, c, 2);
            if (!(conf >= 0.0f && conf <= 1.0f))
                fail(ErrorCode::MalformedResponse, "confidence out of range");
            const float dr = ras.at(r, c, 0), dc = ras.at(r, c, 1);
            if (conf > 0.0f && !(std::isfinite(dr) && std::isfinite(dc)))
                fail(ErrorCode::MalformedResponse,
                     "displacement not finite where confidence > 0");
            f.set(r, c, dr, dc, conf);
        }
    return f;
}

bool FlowGrid::operator==(const FlowGrid& other) const
{
    return displacement == other.displacement && confidence == other.confidence;
}

} // namespace sarstereo
