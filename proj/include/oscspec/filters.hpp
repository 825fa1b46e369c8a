// filters.hpp
//
// Sensitivity functions s(t) and their frequency filters |s~(f)|^2: the
// Blackman-windowed sinusoid, piecewise-constant staircases, resolution
// bandwidth (FWHM of |s~|^2) and amplification (integral of |s~|^2 over rbw).
#pragma once

#include "oscspec/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace oscspec {

namespace blackman {
inline constexpr double b0 = 21.0 / 50.0;
inline constexpr double b1 = 1.0 / 2.0;
inline constexpr double b2 = 2.0 / 25.0;
}  // namespace blackman

/// Sinusoid with k oscillations per half-duration t_w under a Blackman
/// envelope on [-t_w, t_w], peak amplitude s0. Center frequency f0 = k / t_w.
struct BlackmanFilterSpec {
    double t_w = 0.0;  // seconds
    int k = 1;
    double s0 = 1.0;

    double f0() const { return static_cast<double>(k) / t_w; }

    void validate() const {
        if (!(t_w > 0.0)) throw std::invalid_argument("filter: t_w must be > 0");
        if (k < 1) throw std::invalid_argument("filter: k must be >= 1");
        if (!(s0 > 0.0)) throw std::invalid_argument("filter: s0 must be > 0");
    }
};

inline double blackman_envelope(double t_w, double t) {
    using namespace blackman;
    return b0 + b1 * std::cos(kPi * t / t_w) + b2 * std::cos(kTwoPi * t / t_w);
}

/// s(t), including the rect factor that takes the value 1/2 at |t| = t_w.
inline double blackman_sensitivity(const BlackmanFilterSpec& spec, double t) {
    const double at = std::abs(t);
    if (at > spec.t_w) return 0.0;
    const double rect = at == spec.t_w ? 0.5 : 1.0;
    return spec.s0 * rect * blackman_envelope(spec.t_w, t) * std::sin(kTwoPi * spec.k * t / spec.t_w);
}

/// Analytic s~(f) as a sum of six sinc pairs; purely imaginary since s(t) is odd.
inline complex blackman_transform(const BlackmanFilterSpec& spec, double f) {
    using namespace blackman;
    const double tw = spec.t_w;
    const double k = spec.k;
    auto S = [&](double shift) { return sinc(kTwoPi * tw * (f + shift / tw)); };
    const double v = b0 * (S(k) - S(-k)) +
                     0.5 * b1 * (S(k + 0.5) + S(k - 0.5) - S(-(k + 0.5)) - S(-(k - 0.5))) +
                     0.5 * b2 * (S(k + 1.0) + S(k - 1.0) - S(-(k + 1.0)) - S(-(k - 1.0)));
    return {0.0, tw * spec.s0 * v};
}

inline double blackman_mag_sq(const BlackmanFilterSpec& spec, double f) { return std::norm(blackman_transform(spec, f)); }

/// Piecewise-constant s(t): value values[i] on [breakpoints[i], breakpoints[i+1]),
/// zero outside [breakpoints.front(), breakpoints.back()].
struct PiecewiseSensitivity {
    std::vector<double> breakpoints;
    std::vector<double> values;

    void validate() const {
        if (breakpoints.size() != values.size() + 1)
            throw std::invalid_argument("piecewise: need exactly one more breakpoint than values");
        if (values.empty()) throw std::invalid_argument("piecewise: no intervals");
        for (std::size_t i = 1; i < breakpoints.size(); ++i)
            if (!(breakpoints[i] > breakpoints[i - 1]))
                throw std::invalid_argument("piecewise: breakpoints must be strictly increasing");
    }

    double start() const { return breakpoints.front(); }
    double end() const { return breakpoints.back(); }

    double operator()(double t) const {
        if (t < breakpoints.front() || t >= breakpoints.back()) return 0.0;
        auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), t);
        return values[static_cast<std::size_t>(it - breakpoints.begin()) - 1];
    }

    /// \int s(t) dt
    double area() const {
        double a = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) a += values[i] * (breakpoints[i + 1] - breakpoints[i]);
        return a;
    }

    /// Merge neighbouring intervals that carry the same value.
    PiecewiseSensitivity simplified() const {
        PiecewiseSensitivity out;
        out.breakpoints.push_back(breakpoints.front());
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!out.values.empty() && out.values.back() == values[i]) {
                out.breakpoints.back() = breakpoints[i + 1];
            } else {
                out.values.push_back(values[i]);
                out.breakpoints.push_back(breakpoints[i + 1]);
            }
        }
        return out;
    }
};

/// Exact s~(f) of a staircase. Each interval contributes
/// s_i dt_i e^{-i 2 pi f t_mid} sinc(pi f dt_i), which stays accurate as f -> 0
/// where the jump-sum form 1/(2 pi f)^2 |sum (s_{i-1} - s_i) e^{i 2 pi f t_i}|^2
/// cancels catastrophically.
inline complex piecewise_transform(const PiecewiseSensitivity& pw, double f) {
    complex acc{};
    const double w = kTwoPi * f;
    for (std::size_t i = 0; i < pw.values.size(); ++i) {
        if (pw.values[i] == 0.0) continue;
        const double a = pw.breakpoints[i];
        const double b = pw.breakpoints[i + 1];
        const double len = b - a;
        acc += pw.values[i] * len * sinc(0.5 * w * len) * std::polar(1.0, -w * 0.5 * (a + b));
    }
    return acc;
}

inline double piecewise_mag_sq(const PiecewiseSensitivity& pw, double f) { return std::norm(piecewise_transform(pw, f)); }

// ---------------------------------------------------------------------------
// Sampled filters

struct FrequencyFilter {
    FrequencyGrid grid;
    std::vector<double> magnitude_sq;
    double f0 = 0.0;             // Hz, location of the positive-frequency maximum
    double rbw = 0.0;            // Hz, FWHM of the main lobe
    double amplification = 0.0;  // integral of |s~|^2 df / rbw
    double integral = 0.0;       // integral of |s~|^2 df
};

/// Index of the largest sample with f > 0.
inline std::size_t positive_peak_index(const FrequencyGrid& grid, std::span<const double> mag_sq) {
    std::size_t best = grid.size();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid[i] <= 0.0) continue;
        if (best == grid.size() || mag_sq[i] > mag_sq[best]) best = i;
    }
    if (best == grid.size()) throw std::runtime_error("filter: grid has no positive frequencies");
    return best;
}

/// FWHM of the positive-frequency main lobe with linear interpolation of the
/// half-maximum crossings.
inline double fwhm(const FrequencyGrid& grid, std::span<const double> mag_sq) {
    if (mag_sq.size() != grid.size()) throw std::invalid_argument("fwhm: size mismatch");
    const std::size_t peak = positive_peak_index(grid, mag_sq);
    const double half = 0.5 * mag_sq[peak];
    if (!(half > 0.0)) throw std::runtime_error("fwhm: degenerate filter (zero peak)");
    std::size_t lo = peak;
    while (lo > 0 && mag_sq[lo] > half) --lo;
    std::size_t hi = peak;
    while (hi + 1 < grid.size() && mag_sq[hi] > half) ++hi;
    if (mag_sq[lo] > half || mag_sq[hi] > half) throw std::runtime_error("fwhm: no half-maximum crossing found");
    auto cross = [&](std::size_t a, std::size_t b) {
        const double ya = mag_sq[a], yb = mag_sq[b];
        return grid[a] + (half - ya) / (yb - ya) * (grid[b] - grid[a]);
    };
    return cross(hi - 1, hi) - cross(lo, lo + 1);
}

inline FrequencyFilter make_filter(FrequencyGrid grid, std::vector<double> mag_sq) {
    FrequencyFilter out;
    out.grid = grid;
    const std::size_t p = positive_peak_index(grid, mag_sq);
    out.f0 = grid[p];
    if (p > 0 && p + 1 < grid.size()) {
        const double ym = mag_sq[p - 1], y0 = mag_sq[p], yp = mag_sq[p + 1];
        const double denom = ym - 2.0 * y0 + yp;
        if (denom < 0.0) out.f0 += 0.5 * (ym - yp) / denom * grid.step();
    }
    out.rbw = fwhm(grid, mag_sq);
    out.integral = trapezoid(mag_sq, grid.step());
    out.amplification = out.integral / out.rbw;
    out.magnitude_sq = std::move(mag_sq);
    return out;
}

/// Symmetric grid [-f_max, f_max] with at least `per_hz_density` points per Hz.
inline FrequencyGrid symmetric_grid(double f_max, double points_per_hz) {
    auto n = static_cast<std::size_t>(std::ceil(2.0 * f_max * points_per_hz)) + 1;
    if (n % 2 == 0) ++n;
    return FrequencyGrid(-f_max, f_max, n);
}

/// Analytic Blackman filter on [-(4 f0 + 8/t_w), 4 f0 + 8/t_w] with
/// `points_per_inv_tw` samples per 1/t_w.
inline FrequencyFilter blackman_frequency_filter(const BlackmanFilterSpec& spec, double points_per_inv_tw = 64.0) {
    spec.validate();
    const double f_max = 4.0 * spec.f0() + 8.0 / spec.t_w;
    auto grid = symmetric_grid(f_max, points_per_inv_tw * spec.t_w);
    std::vector<double> m(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) m[i] = blackman_mag_sq(spec, grid[i]);
    return make_filter(grid, std::move(m));
}

/// Integral of |s~|^2 df for the Blackman family, from Parseval in closed form:
/// t_w s0^2 (b0^2 + b1^2/2 + b2^2/2 (1 - delta_{k,1}/2)).
inline double blackman_filter_power(const BlackmanFilterSpec& spec) {
    using namespace blackman;
    const double k1 = spec.k == 1 ? 0.5 : 0.0;
    return spec.t_w * spec.s0 * spec.s0 * (b0 * b0 + 0.5 * b1 * b1 + 0.5 * b2 * b2 * (1.0 - k1));
}

inline double amplification(const FrequencyFilter& filter) { return filter.integral / filter.rbw; }
inline double amplification(const BlackmanFilterSpec& spec) { return blackman_frequency_filter(spec).amplification; }

/// Sampled filter of a staircase. With f_max <= 0 the range is
/// chosen from the staircase: four times the dominant frequency (estimated
/// from sign changes) plus 8 / t_w, t_w being half the total duration.
inline FrequencyFilter piecewise_frequency_filter(const PiecewiseSensitivity& pw, double f_max = 0.0,
                                                  double points_per_inv_tw = 64.0) {
    pw.validate();
    const double tw = 0.5 * (pw.end() - pw.start());
    if (f_max <= 0.0) {
        int sign_changes = 0;
        double last = 0.0;
        for (double v : pw.values) {
            if (v == 0.0) continue;
            if (last != 0.0 && (v > 0.0) != (last > 0.0)) ++sign_changes;
            last = v;
        }
        const double f_est = static_cast<double>(sign_changes + 1) / (2.0 * (pw.end() - pw.start()));
        f_max = 4.0 * f_est + 8.0 / tw;
    }
    auto grid = symmetric_grid(f_max, points_per_inv_tw * tw);
    std::vector<double> m(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) m[i] = piecewise_mag_sq(pw, grid[i]);
    return make_filter(grid, std::move(m));
}

}  // namespace oscspec
