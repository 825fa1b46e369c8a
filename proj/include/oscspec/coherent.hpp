// coherent.hpp
//
// Coherent-displacement analyzer: drive synthesis Omega_d = ds/dt, trajectory
// integration of d(alpha)/dt = Omega_d e^{-i phi_d} - i alpha Delta, the
// small-angle and fourth-order analytic responses, displaced-thermal sideband
// readout and RC-lowpass predistortion of the drive.
#pragma once

#include "oscspec/errors.hpp"
#include "oscspec/filters.hpp"
#include "oscspec/noise.hpp"
#include "oscspec/numerics.hpp"

#include <array>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace oscspec {

/// Omega_d(t) = sum_i amplitude_i cos(angular_i t) on [-t_w, t_w], zero outside
/// (half value at the boundary).
struct DriveWaveform {
    std::vector<double> amplitude;  // rad/s
    std::vector<double> angular;    // rad/s
    double t_w = 0.0;
    double phase = 0.0;  // phi_d

    double operator()(double t) const {
        const double at = std::abs(t);
        if (at > t_w) return 0.0;
        double v = 0.0;
        for (std::size_t i = 0; i < amplitude.size(); ++i) v += amplitude[i] * std::cos(angular[i] * t);
        return at == t_w ? 0.5 * v : v;
    }

    double max_amplitude() const {
        double v = 0.0;
        for (double a : amplitude) v += a;
        return std::abs(v);
    }
};

/// Drive whose noise-free trajectory is the Blackman sensitivity s(t).
/// Peak amplitude Omega_d(0) = 2 pi f0 s0.
inline DriveWaveform drive_from_filter(const BlackmanFilterSpec& spec, double phase = 0.0) {
    spec.validate();
    using namespace blackman;
    const double k = spec.k;
    const double scale = kTwoPi / spec.t_w;
    DriveWaveform d;
    d.t_w = spec.t_w;
    d.phase = phase;
    d.amplitude = {scale * b0 * k * spec.s0, scale * 0.5 * b1 * (k - 0.5) * spec.s0, scale * 0.5 * b1 * (k + 0.5) * spec.s0,
                   scale * 0.5 * b2 * (k - 1.0) * spec.s0, scale * 0.5 * b2 * (k + 1.0) * spec.s0};
    d.angular = {scale * k, scale * (k - 0.5), scale * (k + 0.5), scale * (k - 1.0), scale * (k + 1.0)};
    return d;
}

/// Integration grid on [-t_w, t_w] with dt <= min(1/(200 f0), 1/(20 f_noise_max)).
inline TimeGrid trajectory_grid(const BlackmanFilterSpec& spec, double f_noise_max = 0.0) {
    double dt = 1.0 / (200.0 * spec.f0());
    if (f_noise_max > 0.0) dt = std::min(dt, 1.0 / (20.0 * f_noise_max));
    const auto intervals = static_cast<std::size_t>(std::ceil(2.0 * spec.t_w / dt));
    return TimeGrid(-spec.t_w, spec.t_w, intervals + 1);
}

struct Trajectory {
    TimeGrid grid;
    std::vector<complex> alpha;

    complex final() const { return alpha.back(); }
};

/// Exact step alpha -> e^{-i theta(dt)} [alpha + \int_0^dt Omega_d(s) e^{i theta(s)} ds] with
/// Delta linear between samples; the kick integral is Simpson's rule, so the
/// drive term is fourth order in dt and |alpha| is invariant under pure rotation.
class TrajectoryIntegrator {
public:
    TrajectoryIntegrator(const DriveWaveform& drive, const TimeGrid& grid) : grid_(grid) {
        const double dt = grid.step();
        const complex rot = std::polar(1.0, -drive.phase) * (dt / 6.0);
        kicks_.resize(grid.size() - 1);
        for (std::size_t m = 0; m + 1 < grid.size(); ++m) {
            kicks_[m] = {drive(grid[m]) * rot, 4.0 * drive(grid[m] + 0.5 * dt) * rot, drive(grid[m + 1]) * rot};
        }
    }

    const TimeGrid& grid() const { return grid_; }

    template <class Visit>
    complex run(std::span<const double> noise, complex alpha, Visit&& visit) const {
        if (noise.size() != grid_.size()) throw std::invalid_argument("integrate_trajectory: noise not on trajectory grid");
        const double dt = grid_.step();
        visit(std::size_t{0}, alpha);
        for (std::size_t m = 0; m < kicks_.size(); ++m) {
            const double d0 = noise[m], d1 = noise[m + 1];
            const complex end = std::polar(1.0, -0.5 * dt * (d0 + d1));       // e^{-i theta(dt)}
            const complex mid = std::polar(1.0, -0.125 * dt * (d0 + 3.0 * d1));  // e^{i (theta(dt/2) - theta(dt))}
            const auto& k = kicks_[m];
            alpha = (alpha + k[0]) * end + k[1] * mid + k[2];
            visit(m + 1, alpha);
        }
        return alpha;
    }

    complex final_alpha(std::span<const double> noise, complex alpha) const {
        return run(noise, alpha, [](std::size_t, const complex&) {});
    }

    Trajectory trajectory(std::span<const double> noise, complex alpha) const {
        Trajectory tr{grid_, std::vector<complex>(grid_.size())};
        run(noise, alpha, [&](std::size_t i, const complex& a) { tr.alpha[i] = a; });
        return tr;
    }

private:
    TimeGrid grid_;
    std::vector<std::array<complex, 3>> kicks_;
};

inline Trajectory integrate_trajectory(const DriveWaveform& drive, const RealSeries& noise, complex alpha_init) {
    return TrajectoryIntegrator(drive, noise.grid).trajectory(noise.values, alpha_init);
}

// ---------------------------------------------------------------------------
// Analytic responses

struct SmallAngleResponse {
    double response = 0.0;   // <|alpha(t_w)|^2>
    double phase_rms = 0.0;  // rms of the accumulated rotation over the window
    bool small_angle = true;
};

/// <|alpha(t_w)|^2> to lowest order: integral of |s~|^2 S df with the analytic
/// Blackman filter. Flags the result when the rms accumulated rotation over
/// the window exceeds 0.3 rad.
inline SmallAngleResponse small_angle_response(const BlackmanFilterSpec& spec, const NoiseModel& model) {
    spec.validate();
    const double res = 1.0 / (64.0 * spec.t_w);
    SmallAngleResponse out;
    out.response = filtered_power(model, [&](double f) { return blackman_mag_sq(spec, f); }, res);
    const double T = 2.0 * spec.t_w;
    const double rot = filtered_power(
        model,
        [&](double f) {
            const double v = T * sinc(kPi * f * T);
            return v * v;
        },
        res);
    out.phase_rms = std::sqrt(rot);
    out.small_angle = out.phase_rms <= 0.3;
    return out;
}

enum class Symmetry { odd, even };

/// Phase-averaged fourth-order correction to <|alpha(t_w)|^2> for sinusoidal
/// noise Delta0 cos(2 pi f_n t + phi). `symmetry` selects the sign pattern for
/// an odd (Blackman sinusoid) or even trajectory alpha_0(t).
inline double fourth_order_response(const BlackmanFilterSpec& spec, double delta0, double f_n,
                                    Symmetry symmetry = Symmetry::odd) {
    if (f_n == 0.0) return 0.0;
    const double w = kTwoPi * f_n;
    const complex a1 = blackman_transform(spec, f_n);
    const complex a2 = blackman_transform(spec, 2.0 * f_n);
    const double sign = symmetry == Symmetry::odd ? 1.0 : -1.0;
    const double tw = spec.t_w;
    const double bracket = std::norm(a1) * (1.0 + sign * 0.5 * std::cos(2.0 * w * tw)) + 0.5 * std::norm(a2) +
                           sign * (a1 * a2).real() * std::cos(w * tw);
    const double d2 = delta0 * delta0;
    return d2 * d2 / (4.0 * w * w) * bracket;
}

// ---------------------------------------------------------------------------
// Sideband readout

/// Omega_{n,m} / Omega for a motional transition n <-> m at Lamb-Dicke
/// parameter eta: e^{-eta^2/2} eta^{|n-m|} sqrt(n<!/n>!) L_{n<}^{|n-m|}(eta^2).
inline double rabi_ratio(unsigned n, unsigned m, double eta) {
    const unsigned lo = std::min(n, m);
    const unsigned hi = std::max(n, m);
    const unsigned d = hi - lo;
    const double e2 = eta * eta;
    const double log_fact = 0.5 * (std::lgamma(lo + 1.0) - std::lgamma(hi + 1.0));
    const double pow_eta = d == 0 ? 1.0 : std::pow(eta, static_cast<double>(d));
    return std::exp(-0.5 * e2 + log_fact) * pow_eta * laguerre(lo, d, e2);
}

/// Number distribution P_n, n = 0..n_max, of a thermal state (mean nbar)
/// displaced by |alpha|. Throws if the truncated tail exceeds `tail_tolerance`.
inline std::vector<double> displaced_thermal_populations(double alpha_mag, double nbar, unsigned n_max,
                                                         double tail_tolerance = 1e-6) {
    if (!(nbar >= 0.0)) throw std::invalid_argument("populations: nbar must be >= 0");
    const double x = alpha_mag * alpha_mag;
    std::vector<double> p(n_max + 1, 0.0);
    if (nbar == 0.0) {
        // Poisson
        double term = std::exp(-x);
        for (unsigned n = 0; n <= n_max; ++n) {
            p[n] = term;
            term *= x / (n + 1.0);
        }
    } else if (nbar >= 1e-3) {
        // n̄^n / (1+n̄)^{n+1} e^{-x/(1+n̄)} L_n(-x / (n̄ (1+n̄)))
        const double y = -x / (nbar * (1.0 + nbar));
        const double lr = std::log(nbar) - std::log1p(nbar);
        for (unsigned n = 0; n <= n_max; ++n)
            p[n] = std::exp(n * lr - std::log1p(nbar) - x / (1.0 + nbar)) * laguerre(n, 0, y);
    } else {
        // Same closed form expanded term by term; stays finite for tiny n̄.
        const double l1 = std::log1p(nbar);
        const double lnb = std::log(nbar);
        const double lx = x > 0.0 ? std::log(x) : 0.0;
        for (unsigned n = 0; n <= n_max; ++n) {
            double acc = 0.0;
            for (unsigned j = 0; j <= n; ++j) {
                if (x == 0.0 && j > 0) break;
                const double lt = std::lgamma(n + 1.0) - std::lgamma(j + 1.0) - std::lgamma(n - j + 1.0) -
                                  std::lgamma(j + 1.0) + j * lx + (n - j) * lnb - (n + j) * l1;
                acc += std::exp(lt);
            }
            p[n] = acc * std::exp(-x / (1.0 + nbar) - l1);
        }
    }
    double total = 0.0;
    for (double v : p) total += v;
    if (1.0 - total > tail_tolerance)
        throw NumericalError("populations: truncation at n_max=" + std::to_string(n_max) + " leaves tail " +
                                 std::to_string(1.0 - total));
    return p;
}

inline std::vector<double> displaced_thermal_populations(complex alpha, double nbar, unsigned n_max,
                                                         double tail_tolerance = 1e-6) {
    return displaced_thermal_populations(std::abs(alpha), nbar, n_max, tail_tolerance);
}

struct ReadoutModel {
    double eta = 0.357;
    double nbar = 0.0;
    unsigned n_max = 40;

    void validate() const {
        if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("readout: eta must be in (0, 1)");
        if (!(nbar >= 0.0)) throw std::invalid_argument("readout: nbar must be >= 0");
        if (n_max < 2) throw std::invalid_argument("readout: n_max must be >= 2");
    }
};

/// Red-sideband readout with pulse area pi on |up,1> <-> |down,0>:
/// P_down = 1/2 [1 - sum_n P_n cos(pi Omega_{n,n-1} / Omega_{1,0})], the n = 0
/// term entering with cos(0) since the ground state cannot flip.
class SidebandReadout {
public:
    explicit SidebandReadout(ReadoutModel model) : model_(model) {
        model_.validate();
        cosines_.resize(model_.n_max + 1);
        cosines_[0] = 1.0;
        const double ref = rabi_ratio(1, 0, model_.eta);
        for (unsigned n = 1; n <= model_.n_max; ++n)
            cosines_[n] = std::cos(kPi * rabi_ratio(n, n - 1, model_.eta) / ref);
    }

    const ReadoutModel& model() const { return model_; }

    double spin_flip_probability(double alpha_mag) const {
        const auto p = displaced_thermal_populations(alpha_mag, model_.nbar, model_.n_max);
        double acc = 0.0;
        for (std::size_t n = 0; n < p.size(); ++n) acc += p[n] * cosines_[n];
        return std::clamp(0.5 * (1.0 - acc), 0.0, 1.0);
    }

private:
    ReadoutModel model_;
    std::vector<double> cosines_;
};

inline double spin_flip_probability(double alpha_mag, const ReadoutModel& readout) {
    return SidebandReadout(readout).spin_flip_probability(alpha_mag);
}

struct QuadraticReadout {
    double p0 = 0.0;  // P_down at zero displacement
    double p2 = 0.0;  // slope in |alpha|^2
};

/// Least-squares p2 of P_down ~ p0 + p2 |alpha|^2 over |alpha| in [0, 0.4],
/// with p0 = P_down(0) held fixed.
inline QuadraticReadout quadratic_fit(const ReadoutModel& readout, double alpha_max = 0.4, std::size_t points = 401) {
    SidebandReadout r(readout);
    QuadraticReadout q;
    q.p0 = r.spin_flip_probability(0.0);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < points; ++i) {
        const double a = alpha_max * static_cast<double>(i) / static_cast<double>(points - 1);
        const double a2 = a * a;
        num += (r.spin_flip_probability(a) - q.p0) * a2;
        den += a2 * a2;
    }
    q.p2 = num / den;
    return q;
}

struct ReadoutRange {
    double alpha_turnover = 0.0;  // first local maximum of P_down(|alpha|)
    double p_max = 0.0;
};

/// End of the first monotonic rise of P_down(|alpha|).
inline ReadoutRange readout_monotonic_range(const ReadoutModel& readout, double step = 1e-3) {
    SidebandReadout r(readout);
    double prev = r.spin_flip_probability(0.0);
    double a = 0.0;
    while (a < 10.0) {
        const double next = r.spin_flip_probability(a + step);
        if (next < prev) break;
        prev = next;
        a += step;
    }
    return {a, prev};
}

// ---------------------------------------------------------------------------
// RC lowpass predistortion

/// H(i 2 pi f) = 1 / (1 + i 2 pi f c1 - (2 pi f)^2 c2), the transfer function
/// of a two-stage RC ladder with c1 = R1 C1 + (R1 + R2) C2 and c2 = R1 C1 R2 C2.
inline complex lowpass_response(double c1, double c2, double f) {
    const double w = kTwoPi * f;
    return 1.0 / complex(1.0 - w * w * c2, w * c1);
}

struct PredistortedDrive {
    RealSeries omega_i;  // in-phase envelope (multiplies cos(2 pi f_c t))
    RealSeries omega_q;  // quadrature envelope (multiplies sin(2 pi f_c t))
};

/// Quadrature envelopes that, after the lowpass, reproduce Omega_d(t) cos(2 pi f_c t).
inline PredistortedDrive predistort(const DriveWaveform& drive, double c1, double c2, double f_carrier,
                                    const TimeGrid& grid) {
    const double w = kTwoPi * f_carrier;
    std::vector<double> vi(grid.size()), vq(grid.size());
    for (std::size_t j = 0; j < grid.size(); ++j) {
        const double t = grid[j];
        const double at = std::abs(t);
        if (at > drive.t_w) continue;
        const double rect = at == drive.t_w ? 0.5 : 1.0;
        double si = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < drive.amplitude.size(); ++i) {
            const double a = drive.amplitude[i];
            const double b = drive.angular[i];
            const double cb = std::cos(b * t);
            const double sb = std::sin(b * t);
            si += ((1.0 - c2 * w * w) * a - c2 * a * b * b) * cb - c1 * a * b * sb;
            sq += -c1 * w * a * cb + 2.0 * c2 * w * a * b * sb;
        }
        vi[j] = rect * si;
        vq[j] = rect * sq;
    }
    return {RealSeries(grid, std::move(vi)), RealSeries(grid, std::move(vq))};
}

/// Passes a real signal through the lowpass by multiplying its spectrum with
/// H(f). The record is zero padded `pad_factor` times so the causal tail of
/// the response does not wrap around.
inline RealSeries apply_lowpass(const RealSeries& in, double c1, double c2, std::size_t pad_factor = 4) {
    const std::size_t n = in.values.size();
    const std::size_t m = next_pow2(n * std::max<std::size_t>(pad_factor, 1));
    std::vector<complex> buf(m, complex{});
    std::copy(in.values.begin(), in.values.end(), buf.begin());
    dft(buf, true);
    const double df = 1.0 / (static_cast<double>(m) * in.grid.step());
    for (std::size_t k = 0; k < m; ++k) {
        const double f = (k <= m / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(m)) * df;
        buf[k] *= lowpass_response(c1, c2, f);
    }
    dft(buf, false);
    std::vector<double> out(n);
    for (std::size_t j = 0; j < n; ++j) out[j] = buf[j].real() / static_cast<double>(m);
    return RealSeries(in.grid, std::move(out));
}

/// Carrier-frequency signal omega_i cos(2 pi f_c t) + omega_q sin(2 pi f_c t).
inline RealSeries modulate(const PredistortedDrive& d, double f_carrier) {
    const double w = kTwoPi * f_carrier;
    const auto& g = d.omega_i.grid;
    std::vector<double> v(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) v[j] = d.omega_i.values[j] * std::cos(w * g[j]) + d.omega_q.values[j] * std::sin(w * g[j]);
    return RealSeries(g, std::move(v));
}

/// max |lowpass(predistorted) - Omega_d cos(2 pi f_c t)| / max |Omega_d| on the grid.
inline double predistortion_roundtrip_error(const DriveWaveform& drive, double c1, double c2, double f_carrier,
                                            const TimeGrid& grid) {
    const auto out = apply_lowpass(modulate(predistort(drive, c1, c2, f_carrier, grid), f_carrier), c1, c2);
    double err = 0.0, ref = 0.0;
    for (std::size_t j = 0; j < grid.size(); ++j) {
        const double target = drive(grid[j]) * std::cos(kTwoPi * f_carrier * grid[j]);
        err = std::max(err, std::abs(out.values[j] - target));
        ref = std::max(ref, std::abs(drive(grid[j])));
    }
    return ref > 0.0 ? err / ref : err;
}

}  // namespace oscspec
