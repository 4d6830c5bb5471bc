#pragma once

#include <complex>
#include <span>

namespace sarstereo::fft {

using Complex = std::complex<double>;

/// Unnormalized 2D DFT of a row-major rows x cols array (out-of-place).
/// Plans are cached per thread, so concurrent calls are safe.
void forward_2d(std::span<const Complex> in, std::span<Complex> out, int rows, int cols);

/// Unnormalized inverse; divide by rows*cols to undo forward_2d.
void inverse_2d(std::span<const Complex> in, std::span<Complex> out, int rows, int cols);

} // namespace sarstereo::fft
