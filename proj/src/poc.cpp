#include "sarstereo/poc.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "sarstereo/errors.h"
#include "sarstereo/fft.h"

namespace sarstereo::poc {

using fft::Complex;

namespace {

constexpr double kPi = std::numbers::pi;
// A refined estimate that moves by more than this after re-centering the
// source block is treated as an unstable (spurious) peak.
constexpr double kStabilityTolerance = 1.0;
// Grid estimates further than this from the median of their neighbours are
// discarded as outliers (pixels of the current pyramid level).
constexpr double kOutlierTolerance = 2.0;
constexpr std::size_t kMinNeighbours = 2;
// Half-width of the correlation main lobe excluded when looking for the
// strongest competing peak, and the required margin over that peak.
constexpr int kMainLobe = 2;
constexpr double kMinPeakRatio = 1.5;

int wrap_index(int d, int n)
{
    return d < 0 ? d + n : d;
}

int signed_index(int i, int n)
{
    return i >= n / 2 ? i - n : i;
}

int band_halfwidth(int n, double band)
{
    return static_cast<int>(std::floor(band * n / 2.0 + 1e-9));
}

bool full_band(int n, double band)
{
    return 2 * band_halfwidth(n, band) + 1 >= n;
}

const std::vector<double>& hann(int n)
{
    thread_local std::vector<std::vector<double>> cache(1);
    if (static_cast<int>(cache.size()) <= n)
        cache.resize(n + 1);
    auto& w = cache[n];
    if (w.empty()) {
        w.resize(n);
        for (int i = 0; i < n; ++i)
            w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
    }
    return w;
}

/// Mean-removed, windowed spectrum of a block. Returns false for a constant
/// block.
bool windowed_spectrum(std::span<const double> block, int n, std::vector<Complex>& spectrum)
{
    const auto count = static_cast<std::size_t>(n) * n;
    double mean = 0.0;
    for (double v : block)
        mean += v;
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (double v : block)
        var += (v - mean) * (v - mean);
    var /= static_cast<double>(count);
    if (!(var > 1e-24 * (mean * mean + 1e-300)) || !std::isfinite(var)) {
        spectrum.assign(count, Complex(0.0));
        return false;
    }

    const auto& w = hann(n);
    thread_local std::vector<Complex> buf;
    buf.resize(count);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * n + c;
            buf[i] = Complex((block[i] - mean) * w[r] * w[c], 0.0);
        }
    spectrum.resize(count);
    fft::forward_2d(buf, spectrum, n, n);
    return true;
}

CorrelationSurface correlate(const std::vector<Complex>& f_spec, const std::vector<Complex>& g_spec,
                             int n, double band)
{
    const auto count = static_cast<std::size_t>(n) * n;
    const int k_max = band_halfwidth(n, band);
    const bool all = full_band(n, band);

    double max_mag = 0.0;
    thread_local std::vector<Complex> cross;
    cross.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        cross[i] = g_spec[i] * std::conj(f_spec[i]);
        max_mag = std::max(max_mag, std::abs(cross[i]));
    }

    std::size_t kept = 0;
    for (int r = 0; r < n; ++r) {
        const bool row_in = all || std::abs(signed_index(r, n)) <= k_max;
        for (int c = 0; c < n; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * n + c;
            const bool in_band = row_in && (all || std::abs(signed_index(c, n)) <= k_max);
            if (!in_band) {
                cross[i] = 0.0;
                continue;
            }
            ++kept;
            const double mag = std::abs(cross[i]);
            cross[i] = mag > 1e-14 * max_mag ? cross[i] / mag : Complex(0.0);
        }
    }

    thread_local std::vector<Complex> out;
    out.resize(count);
    fft::inverse_2d(cross, out, n, n);
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i)
        values[i] = out[i].real() / static_cast<double>(kept);
    return CorrelationSurface(n, std::move(values), false);
}

/// Solves for the sub-pixel offset along one axis from the samples left of,
/// at, and right of the integer peak.
double fit_axis(double left, double center, double right, int n, double band)
{
    const auto quadratic = [&]() {
        const double denom = left - 2.0 * center + right;
        if (!(denom < 0.0))
            return 0.0;
        return std::clamp(0.5 * (left - right) / denom, -0.5, 0.5);
    };
    if (!(center > 0.0))
        return quadratic();

    const double side = right >= left ? 1.0 : -1.0;
    const double q = std::max(left, right) / center;
    const auto ratio = [&](double d) {
        return peak_model(1.0 - d, n, band) / peak_model(d, n, band);
    };
    if (!(q > ratio(0.0)))
        return 0.0;
    if (q >= 1.0)
        return 0.5 * side;
    double lo = 0.0, hi = 0.5;
    for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (ratio(mid) < q)
            lo = mid;
        else
            hi = mid;
    }
    return side * 0.5 * (lo + hi);
}

struct SubPixelPeak {
    double drow, dcol, height;
};

SubPixelPeak refine_peak(const CorrelationSurface& s, int pr, int pc, double band)
{
    const int n = s.size();
    const double center = s.at(pr, pc);
    const auto wrap = [n](int d) { return signed_index(wrap_index(((d % n) + n) % n, n), n); };
    const double dr = fit_axis(s.at(wrap(pr - 1), pc), center, s.at(wrap(pr + 1), pc), n, band);
    const double dc = fit_axis(s.at(pr, wrap(pc - 1)), center, s.at(pr, wrap(pc + 1)), n, band);
    const double model = peak_model(dr, n, band) * peak_model(dc, n, band);
    const double height = model > 0.0 ? center / model : center;
    return {pr + dr, pc + dc, std::clamp(height, 0.0, 1.0)};
}

/// Highest correlation outside the main lobe around (pr, pc).
double secondary_peak(const CorrelationSurface& s, int pr, int pc)
{
    const int n = s.size();
    double best = 0.0;
    for (int r = -n / 2; r < n / 2; ++r) {
        const int dr = std::abs(signed_index(wrap_index(r - pr, n), n));
        for (int c = -n / 2; c < n / 2; ++c) {
            const int dc = std::abs(signed_index(wrap_index(c - pc, n), n));
            if (dr <= kMainLobe && dc <= kMainLobe)
                continue;
            best = std::max(best, s.at(r, c));
        }
    }
    return best;
}

} // namespace

void PocParams::validate() const
{
    if (block_size < 16 || (block_size & (block_size - 1)) != 0)
        fail(ErrorCode::InvalidArgument, "block_size must be a power of two >= 16", "block_size");
    if (pyramid_levels < 1)
        fail(ErrorCode::InvalidArgument, "pyramid_levels must be >= 1", "pyramid_levels");
    if (grid_stride < 1)
        fail(ErrorCode::InvalidArgument, "grid_stride must be >= 1", "grid_stride");
    if (!(spectral_band > 0.0 && spectral_band <= 1.0))
        fail(ErrorCode::InvalidArgument, "spectral_band must lie in (0, 1]", "spectral_band");
    if (!(peak_accept_threshold >= 0.0 && peak_accept_threshold <= 1.0))
        fail(ErrorCode::InvalidArgument, "peak_accept_threshold must lie in [0, 1]",
             "peak_accept_threshold");
}

CorrelationSurface::CorrelationSurface(int n, std::vector<double> values, bool zero_spectrum)
    : n_(n), values_(std::move(values)), zero_spectrum_(zero_spectrum)
{}

double CorrelationSurface::at(int drow, int dcol) const
{
    return values_[static_cast<std::size_t>(wrap_index(drow, n_)) * n_ + wrap_index(dcol, n_)];
}

std::pair<int, int> CorrelationSurface::peak_location() const
{
    const auto it = std::max_element(values_.begin(), values_.end());
    const auto idx = static_cast<int>(it - values_.begin());
    return {signed_index(idx / n_, n_), signed_index(idx % n_, n_)};
}

double CorrelationSurface::peak_value() const
{
    return values_.empty() ? 0.0 : *std::max_element(values_.begin(), values_.end());
}

double peak_model(double x, int n, double spectral_band)
{
    if (std::abs(x) < 1e-12)
        return 1.0;
    if (full_band(n, spectral_band))
        return std::sin(kPi * x) / (kPi * x);
    const double bins = 2.0 * band_halfwidth(n, spectral_band) + 1.0;
    return std::sin(kPi * bins * x / n) / (bins * std::sin(kPi * x / n));
}

CorrelationSurface poc_surface(std::span<const double> f, std::span<const double> g, int n,
                               double spectral_band)
{
    const auto count = static_cast<std::size_t>(n) * n;
    if (n < 2 || (n & (n - 1)) != 0 || f.size() != count || g.size() != count)
        fail(ErrorCode::InvalidArgument, "POC blocks must be equal power-of-two squares");
    std::vector<Complex> fs, gs;
    const bool fok = windowed_spectrum(f, n, fs);
    const bool gok = windowed_spectrum(g, n, gs);
    if (!fok || !gok)
        return CorrelationSurface(n, std::vector<double>(count, 0.0), true);
    return correlate(fs, gs, n, spectral_band);
}

ShiftEstimate estimate_shift(std::span<const double> f, std::span<const double> g, int n,
                             const PocParams& params)
{
    const auto count = static_cast<std::size_t>(n) * n;
    if (n < 2 || (n & (n - 1)) != 0 || f.size() != count || g.size() != count)
        fail(ErrorCode::InvalidArgument, "POC blocks must be equal power-of-two squares");

    thread_local std::vector<Complex> fs, gs;
    if (!windowed_spectrum(f, n, fs) || !windowed_spectrum(g, n, gs))
        return {};
    const CorrelationSurface coarse = correlate(fs, gs, n, params.spectral_band);
    const auto [pr, pc] = coarse.peak_location();
    const double secondary = secondary_peak(coarse, pr, pc);

    // Undo the integer shift circularly so the common content sits under the
    // same window weights, then fit the sub-pixel peak near the origin.
    thread_local std::vector<double> rolled;
    rolled.resize(count);
    for (int r = 0; r < n; ++r) {
        const int sr = ((r + pr) % n + n) % n;
        for (int c = 0; c < n; ++c) {
            const int sc = ((c + pc) % n + n) % n;
            rolled[static_cast<std::size_t>(r) * n + c] = g[static_cast<std::size_t>(sr) * n + sc];
        }
    }
    SubPixelPeak peak;
    if (windowed_spectrum(rolled, n, gs)) {
        const CorrelationSurface fine = correlate(fs, gs, n, params.spectral_band);
        const auto [qr, qc] = fine.peak_location();
        if (std::abs(qr) <= 1 && std::abs(qc) <= 1) {
            peak = refine_peak(fine, qr, qc, params.spectral_band);
            peak.drow += pr;
            peak.dcol += pc;
        } else {
            peak = refine_peak(coarse, pr, pc, params.spectral_band);
        }
    } else {
        peak = refine_peak(coarse, pr, pc, params.spectral_band);
    }

    const double half = n / 2.0;
    ShiftEstimate est;
    est.drow = std::clamp(peak.drow, -half, half);
    est.dcol = std::clamp(peak.dcol, -half, half);
    est.peak = peak.height;
    est.peak_ratio = secondary > 0.0 ? coarse.at(pr, pc) / secondary
                                     : std::numeric_limits<double>::infinity();
    est.accepted = est.peak >= params.peak_accept_threshold;
    return est;
}

// ---------------------------------------------------------------------------
// Pyramid block matching

namespace {

struct Image {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
};

Image to_image(const raster::Raster& r)
{
    Image img{static_cast<int>(r.rows()), static_cast<int>(r.cols()), {}};
    img.v.resize(r.rows() * r.cols());
    for (std::size_t i = 0; i < img.v.size(); ++i) {
        const float x = r.values()[i * r.channels()];
        img.v[i] = r.is_nodata(x) ? 0.0 : x;
    }
    return img;
}

Image downsample(const Image& in)
{
    Image out{in.rows / 2, in.cols / 2, {}};
    out.v.resize(static_cast<std::size_t>(out.rows) * out.cols);
    for (int r = 0; r < out.rows; ++r)
        for (int c = 0; c < out.cols; ++c)
            out.v[static_cast<std::size_t>(r) * out.cols + c] =
                    0.25 * (in.at(2 * r, 2 * c) + in.at(2 * r, 2 * c + 1) +
                            in.at(2 * r + 1, 2 * c) + in.at(2 * r + 1, 2 * c + 1));
    return out;
}

/// Block centers from n/2 to extent - n/2, so every block lies inside.
std::vector<int> grid_positions(int extent, int stride, int n)
{
    std::vector<int> pos;
    const int last = extent - n / 2;
    for (int p = n / 2; p < last; p += stride)
        pos.push_back(p);
    pos.push_back(last);
    return pos;
}

struct Grid {
    std::vector<int> rpos, cpos;
    std::vector<double> dr, dc, conf;
    std::vector<char> ok;

    std::size_t index(std::size_t i, std::size_t j) const { return i * cpos.size() + j; }
    std::size_t size() const { return rpos.size() * cpos.size(); }
};

Grid make_grid(int rows, int cols, int stride, int n)
{
    Grid g;
    g.rpos = grid_positions(rows, stride, n);
    g.cpos = grid_positions(cols, stride, n);
    g.dr.assign(g.size(), 0.0);
    g.dc.assign(g.size(), 0.0);
    g.conf.assign(g.size(), 0.0);
    g.ok.assign(g.size(), 0);
    return g;
}

/// Index of the lower bracketing grid position and the interpolation weight.
/// Outside the grid the weight leaves [0, 1] when `extrapolate` is set.
std::pair<std::size_t, double> bracket(const std::vector<int>& pos, double x,
                                       bool extrapolate = false)
{
    if (pos.size() == 1)
        return {0, 0.0};
    auto it = std::upper_bound(pos.begin(), pos.end(), x);
    std::size_t i = it == pos.begin() ? 0 : static_cast<std::size_t>(it - pos.begin()) - 1;
    i = std::min(i, pos.size() - 2);
    const double w = (x - pos[i]) / double(pos[i + 1] - pos[i]);
    return {i, extrapolate ? w : std::clamp(w, 0.0, 1.0)};
}

/// Bilinear interpolation, extended linearly past the outermost grid points
/// when all four neighbours are valid; otherwise a weighted mean of the valid
/// neighbours.
bool interpolate(const Grid& g, double r, double c, double& dr, double& dc)
{
    auto [i, wr] = bracket(g.rpos, r, true);
    auto [j, wc] = bracket(g.cpos, c, true);
    const std::size_t i1 = std::min(i + 1, g.rpos.size() - 1);
    const std::size_t j1 = std::min(j + 1, g.cpos.size() - 1);
    const std::size_t idx[4] = {g.index(i, j), g.index(i, j1), g.index(i1, j), g.index(i1, j1)};
    if (!(g.ok[idx[0]] && g.ok[idx[1]] && g.ok[idx[2]] && g.ok[idx[3]])) {
        wr = std::clamp(wr, 0.0, 1.0);
        wc = std::clamp(wc, 0.0, 1.0);
    }
    const double w[4] = {(1 - wr) * (1 - wc), (1 - wr) * wc, wr * (1 - wc), wr * wc};
    double sw = 0.0, sr = 0.0, sc = 0.0;
    for (int k = 0; k < 4; ++k)
        if (g.ok[idx[k]]) {
            sw += w[k];
            sr += w[k] * g.dr[idx[k]];
            sc += w[k] * g.dc[idx[k]];
        }
    if (!(std::abs(sw) > 1e-12))
        return false;
    dr = sr / sw;
    dc = sc / sw;
    return true;
}

/// Fallback initial displacement when no valid neighbour exists.
std::pair<double, double> grid_median(const Grid& g)
{
    std::vector<double> r, c;
    for (std::size_t k = 0; k < g.size(); ++k)
        if (g.ok[k]) {
            r.push_back(g.dr[k]);
            c.push_back(g.dc[k]);
        }
    if (r.empty())
        return {0.0, 0.0};
    const auto mid = r.size() / 2;
    std::nth_element(r.begin(), r.begin() + mid, r.end());
    std::nth_element(c.begin(), c.begin() + mid, c.end());
    return {r[mid], c[mid]};
}

struct BlockMatch {
    double dr, dc, peak, ratio;
    int clamp; // pixels the source block was pulled back inside the patch
};

BlockMatch match_block(const Image& ref, const Image& src, int pr, int pc, double init_r,
                       double init_c, const PocParams& params)
{
    const int n = params.block_size;
    const int ref_r = std::clamp(pr - n / 2, 0, ref.rows - n);
    const int ref_c = std::clamp(pc - n / 2, 0, ref.cols - n);
    const int want_r = ref_r + static_cast<int>(std::lround(init_r));
    const int want_c = ref_c + static_cast<int>(std::lround(init_c));
    const int src_r = std::clamp(want_r, 0, src.rows - n);
    const int src_c = std::clamp(want_c, 0, src.cols - n);

    thread_local std::vector<double> fb, gb;
    fb.resize(static_cast<std::size_t>(n) * n);
    gb.resize(fb.size());
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            fb[static_cast<std::size_t>(r) * n + c] = ref.at(ref_r + r, ref_c + c);
            gb[static_cast<std::size_t>(r) * n + c] = src.at(src_r + r, src_c + c);
        }
    const ShiftEstimate est = estimate_shift(fb, gb, n, params);
    return {src_r - ref_r + est.drow, src_c - ref_c + est.dcol, est.peak, est.peak_ratio,
            std::max(std::abs(src_r - want_r), std::abs(src_c - want_c))};
}

void reject_outliers(Grid& g)
{
    const std::vector<char> ok = g.ok;
    const auto nr = static_cast<long>(g.rpos.size());
    const auto nc = static_cast<long>(g.cpos.size());
    std::vector<double> nbr_r, nbr_c;
    for (long i = 0; i < nr; ++i)
        for (long j = 0; j < nc; ++j) {
            const std::size_t k = g.index(i, j);
            if (!ok[k])
                continue;
            nbr_r.clear();
            nbr_c.clear();
            for (long di = -1; di <= 1; ++di)
                for (long dj = -1; dj <= 1; ++dj) {
                    const long ii = i + di, jj = j + dj;
                    if ((di == 0 && dj == 0) || ii < 0 || jj < 0 || ii >= nr || jj >= nc)
                        continue;
                    const std::size_t kk = g.index(ii, jj);
                    if (ok[kk]) {
                        nbr_r.push_back(g.dr[kk]);
                        nbr_c.push_back(g.dc[kk]);
                    }
                }
            if (nbr_r.size() < kMinNeighbours) {
                g.ok[k] = 0; // isolated
                continue;
            }
            const auto mid = nbr_r.size() / 2;
            std::nth_element(nbr_r.begin(), nbr_r.begin() + mid, nbr_r.end());
            std::nth_element(nbr_c.begin(), nbr_c.begin() + mid, nbr_c.end());
            if (std::abs(g.dr[k] - nbr_r[mid]) > kOutlierTolerance ||
                std::abs(g.dc[k] - nbr_c[mid]) > kOutlierTolerance)
                g.ok[k] = 0;
        }
}

} // namespace

FlowGrid match_patch(const raster::Raster& ref, const raster::Raster& src,
                     const PocParams& params)
{
    params.validate();
    if (ref.rows() != src.rows() || ref.cols() != src.cols())
        fail(ErrorCode::DimensionMismatch, "reference and source patches differ in size");
    const long min_extent = static_cast<long>(params.block_size) << (params.pyramid_levels - 1);
    if (static_cast<long>(ref.rows()) < min_extent || static_cast<long>(ref.cols()) < min_extent)
        fail(ErrorCode::PatchTooSmall,
             "patch must be at least " + std::to_string(min_extent) + " pixels on each side");

    std::vector<Image> ref_pyr{to_image(ref)}, src_pyr{to_image(src)};
    for (int l = 1; l < params.pyramid_levels; ++l) {
        ref_pyr.push_back(downsample(ref_pyr.back()));
        src_pyr.push_back(downsample(src_pyr.back()));
    }

    Grid prev;
    for (int level = params.pyramid_levels - 1; level >= 0; --level) {
        const Image& rimg = ref_pyr[level];
        const Image& simg = src_pyr[level];
        Grid g = make_grid(rimg.rows, rimg.cols, params.grid_stride, params.block_size);
        const bool coarsest = level == params.pyramid_levels - 1;
        const auto fallback = coarsest ? std::pair{0.0, 0.0} : grid_median(prev);

        const auto nr = static_cast<long>(g.rpos.size());
        const auto nc = static_cast<long>(g.cpos.size());
#pragma omp parallel for schedule(dynamic)
        for (long i = 0; i < nr; ++i) {
            for (long j = 0; j < nc; ++j) {
                const int pr = g.rpos[i], pc = g.cpos[j];
                double init_r = 0.0, init_c = 0.0;
                if (!coarsest) {
                    if (interpolate(prev, pr / 2.0, pc / 2.0, init_r, init_c)) {
                        init_r *= 2.0;
                        init_c *= 2.0;
                    } else {
                        init_r = 2.0 * fallback.first;
                        init_c = 2.0 * fallback.second;
                    }
                }
                BlockMatch m = match_block(rimg, simg, pr, pc, init_r, init_c, params);
                bool stable = true;
                if (level == 0) {
                    const BlockMatch again = match_block(rimg, simg, pr, pc, m.dr, m.dc, params);
                    stable = std::abs(again.dr - m.dr) <= kStabilityTolerance &&
                             std::abs(again.dc - m.dc) <= kStabilityTolerance;
                    m = again;
                }
                const std::size_t k = g.index(i, j);
                g.dr[k] = m.dr;
                g.dc[k] = m.dc;
                g.conf[k] = m.peak;
                // A heavily clamped source block no longer holds the content
                // being searched for.
                g.ok[k] = stable && m.clamp <= params.block_size / 4 &&
                          m.ratio >= kMinPeakRatio &&
                          m.peak >= params.peak_accept_threshold && m.peak > 0.0;
            }
        }
        reject_outliers(g);
        prev = std::move(g);
    }

    // Densify the finest grid to every pixel.
    FlowGrid flow(ref.rows(), ref.cols());
    const auto rows = static_cast<long>(ref.rows());
    const auto cols = static_cast<long>(ref.cols());
#pragma omp parallel for schedule(static)
    for (long r = 0; r < rows; ++r) {
        const auto [i, wr] = bracket(prev.rpos, double(r));
        const std::size_t ni = (wr > 0.5 && i + 1 < prev.rpos.size()) ? i + 1 : i;
        for (long c = 0; c < cols; ++c) {
            const auto [j, wc] = bracket(prev.cpos, double(c));
            const std::size_t nj = (wc > 0.5 && j + 1 < prev.cpos.size()) ? j + 1 : j;
            const std::size_t nearest = prev.index(ni, nj);
            double dr = 0.0, dc = 0.0;
            if (!prev.ok[nearest] || !interpolate(prev, double(r), double(c), dr, dc)) {
                flow.set_unmatched(r, c);
                continue;
            }
            flow.set(r, c, static_cast<float>(dr), static_cast<float>(dc),
                     static_cast<float>(prev.conf[nearest]));
        }
    }
    return flow;
}

FlowGrid match_patch(const tiling::PatchPair& pair, const PocParams& params)
{
    if (pair.src.unmatchable || pair.src_pixels.empty()) {
        FlowGrid flow(pair.ref_pixels.rows(), pair.ref_pixels.cols());
        for (std::size_t r = 0; r < flow.rows(); ++r)
            for (std::size_t c = 0; c < flow.cols(); ++c)
                flow.set_unmatched(r, c);
        return flow;
    }
    return match_patch(pair.ref_pixels, pair.src_pixels, params);
}

} // namespace sarstereo::poc
