// noise.hpp
//
// Two-sided PSD models S(f) for the oscillator frequency fluctuation Delta(t)
// and synthesis of stationary time-domain realizations consistent with them.
#pragma once

#include "oscspec/numerics.hpp"

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace oscspec {

/// Delta0 cos(2 pi f t + phi). Without a fixed phase, phi is drawn uniformly
/// once per realization.
struct SinusoidalNoise {
    double delta0_rad_s = 0.0;
    double f_noise_hz = 0.0;
    std::optional<double> phase_rad;
};

/// Flat two-sided density `level` for f_min <= |f| <= f_max.
struct WhiteBandNoise {
    double level = 0.0;  // (rad/s)^2/Hz
    double f_min_hz = 0.0;
    double f_max_hz = 0.0;
};

/// amplitude * |f|^exponent for f_min <= |f| <= f_max.
struct PowerLawNoise {
    double amplitude = 0.0;  // (rad/s)^2 Hz^(-1-exponent)
    double exponent = -1.0;
    double f_min_hz = 0.0;
    double f_max_hz = 0.0;
};

struct NoiseModel;

struct CompositeNoise {
    std::vector<NoiseModel> parts;
};

struct NoiseModel {
    std::variant<SinusoidalNoise, WhiteBandNoise, PowerLawNoise, CompositeNoise> kind;

    NoiseModel() : kind(WhiteBandNoise{}) {}
    NoiseModel(SinusoidalNoise s) : kind(std::move(s)) {}
    NoiseModel(WhiteBandNoise s) : kind(std::move(s)) {}
    NoiseModel(PowerLawNoise s) : kind(std::move(s)) {}
    NoiseModel(CompositeNoise s) : kind(std::move(s)) {}

    static NoiseModel none() { return WhiteBandNoise{0.0, 0.0, 1.0}; }
};

/// A delta line weight * delta(f - frequency) of a two-sided PSD.
struct SpectralLine {
    double frequency_hz;
    double weight;  // (rad/s)^2
};

namespace detail {
template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;
}  // namespace detail

inline void validate(const NoiseModel& model) {
    std::visit(detail::overloaded{
                   [](const SinusoidalNoise& s) {
                       if (!(s.delta0_rad_s >= 0.0)) throw std::invalid_argument("noise: delta0 must be >= 0");
                       if (!(s.f_noise_hz >= 0.0)) throw std::invalid_argument("noise: f_noise must be >= 0");
                   },
                   [](const WhiteBandNoise& w) {
                       if (!(w.level >= 0.0)) throw std::invalid_argument("noise: white level must be >= 0");
                       if (!(w.f_min_hz >= 0.0 && w.f_max_hz > w.f_min_hz))
                           throw std::invalid_argument("noise: need 0 <= f_min < f_max");
                   },
                   [](const PowerLawNoise& p) {
                       if (!(p.amplitude >= 0.0)) throw std::invalid_argument("noise: power-law amplitude must be >= 0");
                       if (!(p.f_min_hz > 0.0 && p.f_max_hz > p.f_min_hz))
                           throw std::invalid_argument("noise: power law needs 0 < f_min < f_max");
                   },
                   [](const CompositeNoise& c) {
                       for (const auto& part : c.parts) validate(part);
                   },
               },
               model.kind);
}

/// Pointwise two-sided density, excluding delta lines. Even in f.
inline double psd_density(const NoiseModel& model, double f) {
    const double af = std::abs(f);
    return std::visit(detail::overloaded{
                          [](const SinusoidalNoise&) { return 0.0; },
                          [af](const WhiteBandNoise& w) {
                              return (af >= w.f_min_hz && af <= w.f_max_hz) ? w.level : 0.0;
                          },
                          [af](const PowerLawNoise& p) {
                              return (af >= p.f_min_hz && af <= p.f_max_hz) ? p.amplitude * std::pow(af, p.exponent) : 0.0;
                          },
                          [f](const CompositeNoise& c) {
                              double acc = 0.0;
                              for (const auto& part : c.parts) acc += psd_density(part, f);
                              return acc;
                          },
                      },
                      model.kind);
}

/// Delta lines of the PSD: a sinusoid contributes (Delta0^2/4) at +f and -f.
inline std::vector<SpectralLine> psd_lines(const NoiseModel& model) {
    std::vector<SpectralLine> out;
    std::visit(detail::overloaded{
                   [&](const SinusoidalNoise& s) {
                       const double w = 0.25 * s.delta0_rad_s * s.delta0_rad_s;
                       if (s.f_noise_hz == 0.0) {
                           out.push_back({0.0, 2.0 * w});
                       } else {
                           out.push_back({s.f_noise_hz, w});
                           out.push_back({-s.f_noise_hz, w});
                       }
                   },
                   [](const WhiteBandNoise&) {},
                   [](const PowerLawNoise&) {},
                   [&](const CompositeNoise& c) {
                       for (const auto& part : c.parts) {
                           auto sub = psd_lines(part);
                           out.insert(out.end(), sub.begin(), sub.end());
                       }
                   },
               },
               model.kind);
    return out;
}

/// Frequency bands [f_min, f_max] (positive side) carrying continuous density.
inline std::vector<std::pair<double, double>> psd_bands(const NoiseModel& model) {
    std::vector<std::pair<double, double>> out;
    std::visit(detail::overloaded{
                   [](const SinusoidalNoise&) {},
                   [&](const WhiteBandNoise& w) {
                       if (w.level > 0.0) out.emplace_back(w.f_min_hz, w.f_max_hz);
                   },
                   [&](const PowerLawNoise& p) {
                       if (p.amplitude > 0.0) out.emplace_back(p.f_min_hz, p.f_max_hz);
                   },
                   [&](const CompositeNoise& c) {
                       for (const auto& part : c.parts) {
                           auto sub = psd_bands(part);
                           out.insert(out.end(), sub.begin(), sub.end());
                       }
                   },
               },
               model.kind);
    return out;
}

/// Highest frequency with nonzero spectral content.
inline double max_frequency(const NoiseModel& model) {
    double fmax = 0.0;
    for (const auto& [lo, hi] : psd_bands(model)) fmax = std::max(fmax, hi);
    for (const auto& line : psd_lines(model)) fmax = std::max(fmax, std::abs(line.frequency_hz));
    return fmax;
}

namespace detail {

// Simpson rule of g over [a, b] with at least `min_intervals` intervals and
// spacing no larger than `max_step`.
template <class G>
double simpson(G&& g, double a, double b, double max_step, std::size_t min_intervals = 2000) {
    if (!(b > a)) return 0.0;
    auto n = static_cast<std::size_t>(std::ceil((b - a) / max_step));
    n = std::max(n, min_intervals);
    if (n % 2) ++n;
    const double h = (b - a) / static_cast<double>(n);
    double acc = g(a) + g(b);
    for (std::size_t i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * g(a + h * static_cast<double>(i));
    return acc * h / 3.0;
}

}  // namespace detail

/// Total variance: integral of the PSD over all frequencies.
inline double total_power(const NoiseModel& model) {
    double acc = 0.0;
    for (const auto& line : psd_lines(model)) acc += line.weight;
    return std::visit(detail::overloaded{
                          [acc](const SinusoidalNoise&) { return acc; },
                          [](const WhiteBandNoise& w) { return 2.0 * w.level * (w.f_max_hz - w.f_min_hz); },
                          [](const PowerLawNoise& p) {
                              const double q = p.exponent + 1.0;
                              if (std::abs(q) < 1e-12) return 2.0 * p.amplitude * std::log(p.f_max_hz / p.f_min_hz);
                              return 2.0 * p.amplitude * (std::pow(p.f_max_hz, q) - std::pow(p.f_min_hz, q)) / q;
                          },
                          [](const CompositeNoise& c) {
                              double s = 0.0;
                              for (const auto& part : c.parts) s += total_power(part);
                              return s;
                          },
                      },
                      model.kind);
}

/// Integral of |s~(f)|^2 S(f) df over the whole real line. `filter_mag_sq`
/// evaluates |s~(f)|^2; `resolution_hz` bounds the quadrature spacing inside
/// noise bands (pick a small fraction of the filter bandwidth).
inline double filtered_power(const NoiseModel& model, const std::function<double(double)>& filter_mag_sq,
                             double resolution_hz) {
    double acc = 0.0;
    for (const auto& line : psd_lines(model)) acc += line.weight * filter_mag_sq(line.frequency_hz);
    std::function<void(const NoiseModel&)> add_bands = [&](const NoiseModel& m) {
        std::visit(detail::overloaded{
                       [](const SinusoidalNoise&) {},
                       [&](const WhiteBandNoise& w) {
                           if (w.level == 0.0) return;
                           auto g = [&](double f) { return filter_mag_sq(f) + filter_mag_sq(-f); };
                           acc += w.level * detail::simpson(g, w.f_min_hz, w.f_max_hz, resolution_hz);
                       },
                       [&](const PowerLawNoise& p) {
                           if (p.amplitude == 0.0) return;
                           auto g = [&](double f) {
                               return p.amplitude * std::pow(f, p.exponent) * (filter_mag_sq(f) + filter_mag_sq(-f));
                           };
                           acc += detail::simpson(g, p.f_min_hz, p.f_max_hz, resolution_hz);
                       },
                       [&](const CompositeNoise& c) {
                           for (const auto& part : c.parts) add_bands(part);
                       },
                   },
                   m.kind);
    };
    add_bands(model);
    return acc;
}

/// Draws realizations of a model on a fixed grid. Continuous-density parts are
/// synthesized in the frequency domain on a circular record `oversample` times
/// longer than the grid (independent complex Gaussian bins of variance S df,
/// Hermitian symmetric, no DC), so the process is stationary and its bin
/// spacing is fine compared to any filter resolved on the grid. Lines are
/// added as cosines with their own phases.
class NoiseSynthesizer {
public:
    NoiseSynthesizer(NoiseModel model, TimeGrid grid, std::size_t oversample = 8)
        : model_(std::move(model)), grid_(grid) {
        validate(model_);
        const double dt = grid_.step();
        const double nyquist = 0.5 / dt;
        for (const auto& [lo, hi] : psd_bands(model_)) {
            if (hi > nyquist * (1.0 + 1e-12))
                throw std::invalid_argument("noise: band edge " + std::to_string(hi) + " Hz exceeds Nyquist " +
                                            std::to_string(nyquist) + " Hz of the sampling grid");
        }
        collect_lines(model_);
        if (!psd_bands(model_).empty()) {
            record_ = next_pow2(grid_.size() * std::max<std::size_t>(oversample, 1));
            const double df = 1.0 / (static_cast<double>(record_) * dt);
            // Nyquist bin left empty.
            for (std::size_t k = 1; k < record_ / 2; ++k) {
                const double s = psd_density(model_, static_cast<double>(k) * df);
                if (s > 0.0) bins_.push_back({k, std::sqrt(0.5 * s * df)});
            }
        }
    }

    const TimeGrid& grid() const { return grid_; }
    const NoiseModel& model() const { return model_; }

    RealSeries draw(RandomStream& stream) const {
        std::vector<double> values(grid_.size(), 0.0);
        if (!bins_.empty()) {
            std::vector<complex> spectrum(record_ / 2 + 1, complex{});
            for (const auto& b : bins_) {
                const double re = stream.normal();
                const double im = stream.normal();
                spectrum[b.index] = b.amplitude * complex(re, im);
            }
            auto full = inverse_real_dft(std::move(spectrum), record_);
            std::copy_n(full.begin(), values.size(), values.begin());
        }
        for (const auto& line : lines_) {
            const double phase = line.phase ? *line.phase : kTwoPi * stream.uniform();
            const double w = kTwoPi * line.frequency;
            for (std::size_t j = 0; j < values.size(); ++j) values[j] += line.amplitude * std::cos(w * grid_[j] + phase);
        }
        return RealSeries(grid_, std::move(values));
    }

private:
    struct Bin {
        std::size_t index;
        double amplitude;
    };
    struct Line {
        double amplitude;
        double frequency;
        std::optional<double> phase;
    };

    void collect_lines(const NoiseModel& m) {
        std::visit(detail::overloaded{
                       [&](const SinusoidalNoise& s) { lines_.push_back({s.delta0_rad_s, s.f_noise_hz, s.phase_rad}); },
                       [](const WhiteBandNoise&) {},
                       [](const PowerLawNoise&) {},
                       [&](const CompositeNoise& c) {
                           for (const auto& part : c.parts) collect_lines(part);
                       },
                   },
                   m.kind);
    }

    NoiseModel model_;
    TimeGrid grid_;
    std::size_t record_ = 0;
    std::vector<Bin> bins_;
    std::vector<Line> lines_;
};

inline RealSeries sample_realization(const NoiseModel& model, const TimeGrid& grid, RandomStream& stream) {
    return NoiseSynthesizer(model, grid).draw(stream);
}

/// Ensemble- and time-averaged autocorrelation R(tau_m) = <x(t) x(t + tau_m)>
/// for lags m = 0 .. n-1 on the common grid. R(0) is the mean square.
inline RealSeries autocorrelation_estimate(std::span<const RealSeries> realizations) {
    if (realizations.empty()) throw std::invalid_argument("autocorrelation_estimate: no realizations");
    const auto& grid = realizations.front().grid;
    const std::size_t n = grid.size();
    for (const auto& r : realizations)
        if (!(r.grid == grid)) throw std::invalid_argument("autocorrelation_estimate: grids differ");
    const std::size_t m = next_pow2(2 * n);
    std::vector<double> acc(n, 0.0);
    std::vector<complex> buf(m);
    for (const auto& r : realizations) {
        std::fill(buf.begin(), buf.end(), complex{});
        std::copy(r.values.begin(), r.values.end(), buf.begin());
        dft(buf, true);
        for (auto& z : buf) z = std::norm(z);
        dft(buf, false);
        for (std::size_t lag = 0; lag < n; ++lag) acc[lag] += buf[lag].real() / static_cast<double>(m);
    }
    const double count = static_cast<double>(realizations.size());
    for (std::size_t lag = 0; lag < n; ++lag) acc[lag] /= count * static_cast<double>(n - lag);
    return RealSeries(UniformGrid::with_step(0.0, grid.step(), n), std::move(acc));
}

}  // namespace oscspec
