// numerics.hpp
//
// Shared numerical substrate: uniform grids, the forward Fourier transform
// (convention e^{-i 2 pi f t}), trapezoidal quadrature, generalized Laguerre
// polynomials and reproducible random streams.
#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace oscspec {

using complex = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Uniform grid of `count` points spanning [start, end] inclusive.
/// Used for both time (seconds) and frequency (Hz) axes.
class UniformGrid {
public:
    UniformGrid() = default;
    UniformGrid(double start, double end, std::size_t count) : start_(start), end_(end), count_(count) {
        if (count < 2) throw std::invalid_argument("UniformGrid: need at least 2 samples");
        if (!(end > start)) throw std::invalid_argument("UniformGrid: end must exceed start");
    }

    /// Grid with a prescribed spacing starting at `start`.
    static UniformGrid with_step(double start, double step, std::size_t count) {
        return UniformGrid(start, start + step * static_cast<double>(count - 1), count);
    }

    double start() const { return start_; }
    double end() const { return end_; }
    std::size_t size() const { return count_; }
    double step() const { return (end_ - start_) / static_cast<double>(count_ - 1); }
    double operator[](std::size_t i) const {
        return i + 1 == count_ ? end_ : start_ + step() * static_cast<double>(i);
    }
    double span() const { return end_ - start_; }

    std::vector<double> points() const {
        std::vector<double> out(count_);
        for (std::size_t i = 0; i < count_; ++i) out[i] = (*this)[i];
        return out;
    }

    bool operator==(const UniformGrid&) const = default;

private:
    double start_ = 0.0;
    double end_ = 1.0;
    std::size_t count_ = 2;
};

using TimeGrid = UniformGrid;
using FrequencyGrid = UniformGrid;

/// Samples of a function on a uniform grid.
template <class T>
struct Series {
    UniformGrid grid;
    std::vector<T> values;

    Series() = default;
    Series(UniformGrid g, std::vector<T> v) : grid(g), values(std::move(v)) {
        if (values.size() != grid.size()) throw std::invalid_argument("Series: value count must match grid");
    }

    std::size_t size() const { return values.size(); }
    const T& operator[](std::size_t i) const { return values[i]; }
    T& operator[](std::size_t i) { return values[i]; }
};

using RealSeries = Series<double>;
using ComplexSeries = Series<complex>;

template <class F>
RealSeries sample(const UniformGrid& grid, F&& fn) {
    std::vector<double> v(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) v[i] = fn(grid[i]);
    return RealSeries(grid, std::move(v));
}

/// Pairwise (cascade) summation; result is independent of thread scheduling
/// when applied to an ordered array of per-item results.
template <class T>
T pairwise_sum(std::span<const T> v) {
    if (v.empty()) return T{};
    if (v.size() <= 16) {
        T acc{};
        for (const auto& x : v) acc += x;
        return acc;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

template <class T>
T pairwise_sum(const std::vector<T>& v) {
    return pairwise_sum(std::span<const T>(v));
}

// ---------------------------------------------------------------------------
// Quadrature

/// Composite trapezoid over uniformly spaced samples.
inline double trapezoid(std::span<const double> values, double step) {
    if (values.size() < 2) return 0.0;
    double acc = 0.5 * (values.front() + values.back());
    for (std::size_t i = 1; i + 1 < values.size(); ++i) acc += values[i];
    return acc * step;
}

inline double quadrature(const RealSeries& s) { return trapezoid(s.values, s.grid.step()); }

inline double quadrature(std::span<const double> values, const UniformGrid& grid) {
    if (values.size() != grid.size()) throw std::invalid_argument("quadrature: size mismatch");
    return trapezoid(values, grid.step());
}

/// Running trapezoid integral, out[0] = 0.
inline std::vector<double> cumulative_trapezoid(std::span<const double> values, double step) {
    std::vector<double> out(values.size(), 0.0);
    for (std::size_t i = 1; i < values.size(); ++i) out[i] = out[i - 1] + 0.5 * step * (values[i - 1] + values[i]);
    return out;
}

/// Linear interpolation of a series at t (clamped to the grid).
inline double interpolate(const RealSeries& s, double t) {
    const auto& g = s.grid;
    const double x = (t - g.start()) / g.step();
    if (x <= 0.0) return s.values.front();
    const auto n = s.size();
    if (x >= static_cast<double>(n - 1)) return s.values.back();
    const auto i = static_cast<std::size_t>(x);
    const double w = x - static_cast<double>(i);
    return (1.0 - w) * s.values[i] + w * s.values[i + 1];
}

/// Exact integral of the piecewise-linear interpolant of `s` over [a, b].
inline double integrate_linear(const RealSeries& s, double a, double b) {
    if (b <= a) return 0.0;
    const auto& g = s.grid;
    const double h = g.step();
    const auto n = s.size();
    auto cell = [&](double t) {
        const double x = std::clamp((t - g.start()) / h, 0.0, static_cast<double>(n - 1));
        return std::min(static_cast<std::size_t>(x), n - 2);
    };
    const std::size_t ia = cell(a);
    const std::size_t ib = cell(b);
    auto seg = [&](double lo, double hi) { return 0.5 * (hi - lo) * (interpolate(s, lo) + interpolate(s, hi)); };
    if (ia == ib) return seg(a, b);
    double acc = seg(a, g[ia + 1]);
    for (std::size_t i = ia + 1; i < ib; ++i) acc += 0.5 * h * (s.values[i] + s.values[i + 1]);
    acc += seg(g[ib], b);
    return acc;
}

/// Running integral of a piecewise-linear series; integral(a, b) is exact for
/// the linear interpolant and O(1) per query. Values are clamped outside the grid.
class CumulativeIntegral {
public:
    explicit CumulativeIntegral(const RealSeries& s)
        : series_(s), cumulative_(cumulative_trapezoid(s.values, s.grid.step())) {}

    double at(double t) const {
        const auto& g = series_.grid;
        const double h = g.step();
        const auto n = series_.size();
        if (t <= g.start()) return (t - g.start()) * series_.values.front();
        if (t >= g.end()) return cumulative_.back() + (t - g.end()) * series_.values.back();
        const double x = (t - g.start()) / h;
        const auto i = std::min(static_cast<std::size_t>(x), n - 2);
        const double u = (t - g[i]);
        const double y0 = series_.values[i];
        const double slope = (series_.values[i + 1] - y0) / h;
        return cumulative_[i] + u * (y0 + 0.5 * slope * u);
    }

    double integral(double a, double b) const { return at(b) - at(a); }

private:
    RealSeries series_;
    std::vector<double> cumulative_;
};

// ---------------------------------------------------------------------------
// Special functions

/// Generalized Laguerre polynomial L_n^a(x) by upward three-term recurrence.
inline double laguerre(unsigned n, unsigned a, double x) {
    double prev = 1.0;
    if (n == 0) return prev;
    double cur = 1.0 + a - x;
    for (unsigned k = 1; k < n; ++k) {
        const double next = ((2.0 * k + 1.0 + a - x) * cur - (k + a) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    return cur;
}

/// sin(x)/x with the removable singularity filled in.
inline double sinc(double x) {
    if (std::abs(x) < 1e-4) {
        const double x2 = x * x;
        return 1.0 - x2 / 6.0 + x2 * x2 / 120.0;
    }
    return std::sin(x) / x;
}

// ---------------------------------------------------------------------------
// FFT (FFTW backend)

namespace detail {

class FftPlans {
public:
    enum class Kind { forward, backward, c2r };

    static FftPlans& instance() {
        static FftPlans plans;
        return plans;
    }

    // Planning is not thread-safe in FFTW; execution through the new-array
    // interface is.
    fftw_plan get(Kind kind, int n) {
        std::lock_guard lock(mutex_);
        auto key = std::make_pair(kind, n);
        if (auto it = plans_.find(key); it != plans_.end()) return it->second;
        auto* in = fftw_alloc_complex(static_cast<std::size_t>(n));
        auto* out = fftw_alloc_complex(static_cast<std::size_t>(n));
        fftw_plan p = nullptr;
        const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
        switch (kind) {
        // Complex transforms run in place, so their plans must be in-place too.
        case Kind::forward: p = fftw_plan_dft_1d(n, in, in, FFTW_FORWARD, flags); break;
        case Kind::backward: p = fftw_plan_dft_1d(n, in, in, FFTW_BACKWARD, flags); break;
        case Kind::c2r: p = fftw_plan_dft_c2r_1d(n, in, reinterpret_cast<double*>(out), flags); break;
        }
        fftw_free(in);
        fftw_free(out);
        if (p == nullptr) throw std::runtime_error("FFTW planning failed");
        plans_.emplace(key, p);
        return p;
    }

    FftPlans(const FftPlans&) = delete;
    FftPlans& operator=(const FftPlans&) = delete;

private:
    FftPlans() = default;
    ~FftPlans() {
        for (auto& [key, p] : plans_) fftw_destroy_plan(p);
    }

    std::mutex mutex_;
    std::map<std::pair<Kind, int>, fftw_plan> plans_;
};

}  // namespace detail

/// Unnormalized in-place DFT, sign -1 (forward) or +1 (backward).
inline void dft(std::vector<complex>& data, bool forward = true) {
    const int n = static_cast<int>(data.size());
    if (n == 0) return;
    auto kind = forward ? detail::FftPlans::Kind::forward : detail::FftPlans::Kind::backward;
    auto plan = detail::FftPlans::instance().get(kind, n);
    auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
    fftw_execute_dft(plan, ptr, ptr);
}

/// Real output of the unnormalized inverse DFT from the n/2+1 non-negative
/// frequency coefficients of a Hermitian spectrum.
inline std::vector<double> inverse_real_dft(std::vector<complex> half_spectrum, std::size_t n) {
    if (half_spectrum.size() != n / 2 + 1) throw std::invalid_argument("inverse_real_dft: bad spectrum length");
    std::vector<double> out(n + 2);
    auto plan = detail::FftPlans::instance().get(detail::FftPlans::Kind::c2r, static_cast<int>(n));
    fftw_execute_dft_c2r(plan, reinterpret_cast<fftw_complex*>(half_spectrum.data()), out.data());
    out.resize(n);
    return out;
}

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

/// Continuous Fourier transform s~(f) = \int s(t) e^{-i 2 pi f t} dt, approximated
/// by a trapezoid-weighted DFT zero-padded to at least `pad_factor` times the
/// input length. The result lives on the conjugate frequency grid
/// f_m = m / (M dt), m = -M/2 .. M/2-1.
inline ComplexSeries fourier_transform(const ComplexSeries& s, std::size_t pad_factor = 4) {
    const std::size_t n = s.size();
    const double dt = s.grid.step();
    const std::size_t m = next_pow2(std::max<std::size_t>(n * std::max<std::size_t>(pad_factor, 1), 2));
    std::vector<complex> buf(m, complex{});
    for (std::size_t j = 0; j < n; ++j) {
        const double w = (j == 0 || j + 1 == n) ? 0.5 : 1.0;
        buf[j] = w * s.values[j];
    }
    dft(buf, true);
    const double df = 1.0 / (static_cast<double>(m) * dt);
    const auto half = static_cast<std::ptrdiff_t>(m / 2);
    auto fgrid = UniformGrid::with_step(-static_cast<double>(half) * df, df, m);
    std::vector<complex> out(m);
    const double t0 = s.grid.start();
    for (std::size_t i = 0; i < m; ++i) {
        const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(i) - half;
        const std::size_t src = static_cast<std::size_t>((k + static_cast<std::ptrdiff_t>(m)) % static_cast<std::ptrdiff_t>(m));
        const double f = static_cast<double>(k) * df;
        out[i] = dt * buf[src] * std::polar(1.0, -kTwoPi * f * t0);
    }
    return ComplexSeries(fgrid, std::move(out));
}

inline ComplexSeries fourier_transform(const RealSeries& s, std::size_t pad_factor = 4) {
    std::vector<complex> v(s.values.begin(), s.values.end());
    return fourier_transform(ComplexSeries(s.grid, std::move(v)), pad_factor);
}

// ---------------------------------------------------------------------------
// Random streams

/// splitmix64 finalizer.
inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Deterministic substream identified by (seed, stream_index). Different
/// indices seed independent mt19937_64 engines through a finalizing hash.
class RandomStream {
public:
    RandomStream(std::uint64_t seed, std::uint64_t stream_index)
        : seed_(seed), index_(stream_index), engine_(derive(seed, stream_index)) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_index() const { return index_; }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; the second variate of each pair is
    /// kept for the next call.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(kTwoPi * u2);
        has_spare_ = true;
        return r * std::cos(kTwoPi * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::uint64_t next_u64() { return engine_(); }

private:
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t index) {
        return mix64(mix64(seed) ^ mix64(index + 0x632be59bd9b4e019ULL));
    }

    std::uint64_t seed_;
    std::uint64_t index_;
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline RandomStream rng_stream(std::uint64_t seed, std::uint64_t stream_index) { return {seed, stream_index}; }

}  // namespace oscspec
