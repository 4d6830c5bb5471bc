#include "sarstereo/fft.h"

#include <map>
#include <mutex>
#include <utility>
#include <vector>

#include <fftw3.h>

#include "sarstereo/errors.h"

namespace sarstereo::fft {

namespace {

// The FFTW planner is not thread-safe; execution of distinct plans is.
std::mutex& planner_mutex()
{
    static std::mutex m;
    return m;
}

struct PlanPair {
    fftw_plan forward = nullptr;
    fftw_plan inverse = nullptr;
};

class PlanCache {
public:
    ~PlanCache()
    {
        std::lock_guard lock(planner_mutex());
        for (auto& [dims, p] : plans_) {
            fftw_destroy_plan(p.forward);
            fftw_destroy_plan(p.inverse);
        }
    }

    const PlanPair& get(int rows, int cols)
    {
        const auto key = std::make_pair(rows, cols);
        if (auto it = plans_.find(key); it != plans_.end())
            return it->second;
        std::vector<Complex> a(static_cast<std::size_t>(rows) * cols);
        std::vector<Complex> b(a.size());
        auto* pa = reinterpret_cast<fftw_complex*>(a.data());
        auto* pb = reinterpret_cast<fftw_complex*>(b.data());
        PlanPair p;
        {
            std::lock_guard lock(planner_mutex());
            const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
            p.forward = fftw_plan_dft_2d(rows, cols, pa, pb, FFTW_FORWARD, flags);
            p.inverse = fftw_plan_dft_2d(rows, cols, pa, pb, FFTW_BACKWARD, flags);
        }
        if (!p.forward || !p.inverse)
            fail(ErrorCode::InvalidArgument, "FFT planning failed");
        return plans_.emplace(key, p).first->second;
    }

private:
    std::map<std::pair<int, int>, PlanPair> plans_;
};

void execute(bool fwd, std::span<const Complex> in, std::span<Complex> out, int rows, int cols)
{
    const auto n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    if (in.size() != n || out.size() != n || in.data() == out.data())
        fail(ErrorCode::InvalidArgument, "FFT buffer size mismatch");
    thread_local PlanCache cache;
    const PlanPair& p = cache.get(rows, cols);
    // Out-of-place complex transforms preserve their input.
    auto* src = reinterpret_cast<fftw_complex*>(const_cast<Complex*>(in.data()));
    auto* dst = reinterpret_cast<fftw_complex*>(out.data());
    fftw_execute_dft(fwd ? p.forward : p.inverse, src, dst);
}

} // namespace

void forward_2d(std::span<const Complex> in, std::span<Complex> out, int rows, int cols)
{
    execute(true, in, out, rows, cols);
}

void inverse_2d(std::span<const Complex> in, std::span<Complex> out, int rows, int cols)
{
    execute(false, in, out, rows, cols);
}

} // namespace sarstereo::fft
