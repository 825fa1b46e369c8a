// analyzer.hpp
//
// Measurement campaigns: Monte Carlo repetitions with shot noise, scans over
// noise frequency and filter center, PSD reconstruction from the mean signal
// and the shot-noise-limited sensitivity floor.
//
// Every repetition r of row i draws from RandomStream(seed, i * N + r), so
// results do not depend on the thread count or schedule.
#pragma once

#include "oscspec/coherent.hpp"
#include "oscspec/errors.hpp"
#include "oscspec/filters.hpp"
#include "oscspec/fock.hpp"
#include "oscspec/noise.hpp"
#include "oscspec/numerics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace oscspec {

enum class Method { coherent, fock };

struct ExperimentConfig {
    Method method = Method::coherent;
    BlackmanFilterSpec filter{250e-6, 2, 1.0};
    std::optional<PulseSequence> sequence;  // fock method
    NoiseModel noise = NoiseModel::none();
    std::size_t repetitions = 200;
    std::uint64_t seed = 1;
    ReadoutModel readout;                 // coherent method; nbar is derived
    double nbar_base = 0.0;
    double heating_rate = 0.0;            // quanta / s
    std::optional<double> sigma_p;        // detection noise floor override
    std::optional<double> drive_limit;    // rad/s cap on |Omega_d|
    unsigned threads = 0;                 // 0 -> hardware concurrency
    bool fock_numeric = false;            // full propagation instead of the ideal phase path

    double sequence_duration() const {
        if (method == Method::coherent) return 2.0 * filter.t_w;
        return sequence ? sequence->duration() : 0.0;
    }

    double nbar() const { return nbar_base + heating_rate * sequence_duration(); }

    ReadoutModel effective_readout() const {
        ReadoutModel r = readout;
        r.nbar = nbar();
        return r;
    }

    void validate() const {
        if (repetitions < 1) throw ConfigError("experiment: repetitions must be >= 1");
        if (nbar_base < 0.0 || heating_rate < 0.0) throw ConfigError("experiment: nbar_base and heating_rate must be >= 0");
        if (sigma_p && !(*sigma_p >= 0.0)) throw ConfigError("experiment: sigma_p must be >= 0");
        oscspec::validate(noise);
        if (method == Method::coherent) {
            filter.validate();
            effective_readout().validate();
            if (drive_limit) {
                const double need = kTwoPi * filter.f0() * filter.s0;
                if (need > *drive_limit * (1.0 + 1e-12))
                    throw InfeasibleError("experiment: drive amplitude 2 pi f0 s0 = " + std::to_string(need) +
                                          " rad/s exceeds drive_limit; s0 must be <= " +
                                          std::to_string(*drive_limit / (kTwoPi * filter.f0())));
            }
        } else {
            if (!sequence) throw ConfigError("experiment: fock method needs a pulse sequence");
            oscspec::validate(*sequence);
        }
    }
};

struct MonteCarloResult {
    double signal_mean = 0.0;       // fraction of bright outcomes
    double signal_sigma = 0.0;      // standard error of signal_mean
    double probability_mean = 0.0;  // mean pre-measurement probability
    double response_mean = 0.0;     // mean |alpha|^2 (coherent) or phi^2 (fock)
};

namespace detail {

template <class Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
    unsigned n = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
    n = static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(count, 1)));
    if (n <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n);
    for (unsigned w = 0; w < n; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < count; i += n) body(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Forward model for one repetition: probability of a bright outcome and the
/// underlying response (|alpha|^2 or phi^2).
class ForwardModel {
public:
    explicit ForwardModel(const ExperimentConfig& cfg) : cfg_(cfg) {
        if (cfg.method == Method::coherent) {
            const auto grid = trajectory_grid(cfg.filter, max_frequency(cfg.noise));
            integrator_.emplace(drive_from_filter(cfg.filter), grid);
            synth_.emplace(cfg.noise, grid);
            readout_.emplace(cfg.effective_readout());
        } else {
            const auto& seq = *cfg.sequence;
            sensitivity_ = sensitivity_from_sequence(seq);
            const double f_ref = piecewise_frequency_filter(*sensitivity_).f0;
            const double f_max = std::max(max_frequency(cfg.noise), f_ref);
            synth_.emplace(cfg.noise, sequence_noise_grid(seq, f_max, f_ref));
            n_max_ = default_n_max(seq);
        }
    }

    std::pair<double, double> operator()(RandomStream& rs) const {
        const auto noise = synth_->draw(rs);
        if (cfg_.method == Method::coherent) {
            const double a = std::abs(integrator_->final_alpha(noise.values, complex{}));
            return {readout_->spin_flip_probability(a), a * a};
        }
        const double phi = phase_accumulation(*sensitivity_, noise);
        if (cfg_.fock_numeric) return {propagate_sequence_numeric(*cfg_.sequence, noise, n_max_), phi * phi};
        return {readout_probability(phi), phi * phi};
    }

private:
    const ExperimentConfig& cfg_;
    std::optional<TrajectoryIntegrator> integrator_;
    std::optional<NoiseSynthesizer> synth_;
    std::optional<SidebandReadout> readout_;
    std::optional<PiecewiseSensitivity> sensitivity_;
    unsigned n_max_ = 0;
};

}  // namespace detail

/// One campaign of N repetitions; `row` selects the substream block.
inline MonteCarloResult run_monte_carlo(const ExperimentConfig& cfg, std::size_t row = 0) {
    cfg.validate();
    const std::size_t N = cfg.repetitions;
    detail::ForwardModel model(cfg);
    std::vector<double> outcome(N), prob(N), resp(N);
    detail::parallel_for(N, cfg.threads, [&](std::size_t r) {
        RandomStream rs(cfg.seed, row * N + r);
        const auto [p, x] = model(rs);
        prob[r] = p;
        resp[r] = x;
        outcome[r] = rs.bernoulli(p) ? 1.0 : 0.0;
    });
    MonteCarloResult out;
    const double n = static_cast<double>(N);
    out.signal_mean = pairwise_sum(outcome) / n;
    out.probability_mean = pairwise_sum(prob) / n;
    out.response_mean = pairwise_sum(resp) / n;
    if (N > 1) {
        std::vector<double> dev(N);
        for (std::size_t r = 0; r < N; ++r) dev[r] = (outcome[r] - out.signal_mean) * (outcome[r] - out.signal_mean);
        out.signal_sigma = std::sqrt(pairwise_sum(dev) / (n - 1.0) / n);
    }
    return out;
}

// ---------------------------------------------------------------------------
// PSD estimate and floor

struct PsdEstimate {
    double phi_sq = 0.0;  // <|alpha|^2> (coherent) or <phi^2> (fock)
    double psd = 0.0;     // (rad/s)^2/Hz
    bool below_floor = false;
};

/// \int |s~|^2 df of the configured filter.
inline double filter_power(const ExperimentConfig& cfg) {
    if (cfg.method == Method::coherent) return blackman_filter_power(cfg.filter);
    return piecewise_frequency_filter(sensitivity_from_sequence(*cfg.sequence)).integral;
}

inline double filter_rbw(const ExperimentConfig& cfg) {
    if (cfg.method == Method::coherent) return blackman_frequency_filter(cfg.filter).rbw;
    return piecewise_frequency_filter(sensitivity_from_sequence(*cfg.sequence)).rbw;
}

/// S(f0) ~ <phi^2> / (a rbw) = <phi^2> / \int |s~|^2 df. The coherent signal is
/// first mapped through P = p0 + p2 |alpha|^2; the fock signal through
/// P = phi^2 / 4. Negative responses clamp to zero with below_floor set.
inline PsdEstimate estimate_psd(double signal_mean, const ExperimentConfig& cfg) {
    PsdEstimate e;
    if (cfg.method == Method::coherent) {
        const auto ro = cfg.effective_readout();
        const auto range = readout_monotonic_range(ro);
        if (signal_mean > range.p_max)
            throw NumericalError("estimate_psd: signal " + std::to_string(signal_mean) +
                                 " beyond the monotonic readout range (max " + std::to_string(range.p_max) + ")");
        const auto q = quadratic_fit(ro);
        e.phi_sq = (signal_mean - q.p0) / q.p2;
    } else {
        if (signal_mean > 0.5) throw NumericalError("estimate_psd: signal beyond the monotonic readout range");
        e.phi_sq = 4.0 * signal_mean;
    }
    if (e.phi_sq <= 0.0) {
        e.phi_sq = 0.0;
        e.below_floor = true;
    }
    e.psd = e.phi_sq / filter_power(cfg);
    return e;
}

struct SensitivityFloor {
    double p0 = 0.0;
    double p2 = 0.0;
    double sigma_p = 0.0;
    double alpha_min = 0.0;
    double s0 = 0.0;
    double floor = 0.0;        // (rad/s)^2/Hz at f0
    double coefficient = 0.0;  // floor / f0^2, (rad/s)^2/Hz^3
};

/// Minimum detectable density at f0 with the drive-limited amplitude
/// s0 = drive_limit / (2 pi f0): |alpha_min|^2 = sigma_P / p2 inserted into
/// the PSD estimate. Without an explicit sigma_P the binomial error of N
/// repetitions at p0 is used.
inline SensitivityFloor sensitivity_floor(const ExperimentConfig& cfg, double f0) {
    if (cfg.method != Method::coherent) throw ConfigError("sensitivity_floor: coherent method only");
    if (!cfg.drive_limit) throw ConfigError("sensitivity_floor: drive_limit must be set");
    if (!(f0 > 0.0)) throw ConfigError("sensitivity_floor: f0 must be > 0");
    SensitivityFloor out;
    const auto q = quadratic_fit(cfg.effective_readout());
    out.p0 = q.p0;
    out.p2 = q.p2;
    out.sigma_p = cfg.sigma_p ? *cfg.sigma_p : std::sqrt(q.p0 * (1.0 - q.p0) / static_cast<double>(cfg.repetitions));
    out.alpha_min = std::sqrt(out.sigma_p / q.p2);
    out.s0 = *cfg.drive_limit / (kTwoPi * f0);
    BlackmanFilterSpec spec{cfg.filter.t_w, std::max(1, static_cast<int>(std::lround(f0 * cfg.filter.t_w))), out.s0};
    out.floor = out.alpha_min * out.alpha_min / blackman_filter_power(spec);
    out.coefficient = out.floor / (f0 * f0);
    return out;
}

// ---------------------------------------------------------------------------
// Scans

struct ScanRow {
    double x_hz = 0.0;
    double signal_mean = 0.0;
    double signal_sigma = 0.0;
    double phi_sq = 0.0;
    double psd = 0.0;  // NaN when the signal left the readout range
    double rbw_hz = 0.0;
    std::vector<std::string> flags;
};

struct ScanResult {
    std::string kind;  // "noise_frequency" or "filters"
    std::vector<ScanRow> rows;
    nlohmann::json config;
    std::string note;

    static constexpr const char* csv_header = "x_hz,signal_mean,signal_sigma,phi_sq,psd_rad2_per_hz,rbw_hz,flags";

    std::string to_csv() const {
        std::ostringstream os;
        os << csv_header << '\n';
        os.precision(10);
        for (const auto& r : rows) {
            std::string flags;
            for (const auto& f : r.flags) flags += (flags.empty() ? "" : ";") + f;
            os << r.x_hz << ',' << r.signal_mean << ',' << r.signal_sigma << ',' << r.phi_sq << ',';
            if (std::isnan(r.psd)) os << "nan";
            else os << r.psd;
            os << ',' << r.rbw_hz << ',' << flags << '\n';
        }
        return os.str();
    }

    nlohmann::json to_json() const {
        nlohmann::json rows_j = nlohmann::json::array();
        for (const auto& r : rows) {
            rows_j.push_back({{"x_hz", r.x_hz},
                              {"signal_mean", r.signal_mean},
                              {"signal_sigma", r.signal_sigma},
                              {"phi_sq", r.phi_sq},
                              {"psd_rad2_per_hz", std::isnan(r.psd) ? nlohmann::json(nullptr) : nlohmann::json(r.psd)},
                              {"rbw_hz", r.rbw_hz},
                              {"flags", r.flags}});
        }
        return {{"kind", kind}, {"note", note}, {"config", config}, {"rows", rows_j}};
    }
};

inline nlohmann::json noise_to_json(const NoiseModel& m) {
    return std::visit(detail::overloaded{
                          [](const SinusoidalNoise& s) {
                              nlohmann::json j{{"type", "sinusoidal"}, {"delta0_rad_s", s.delta0_rad_s}, {"f_noise_hz", s.f_noise_hz}};
                              if (s.phase_rad) j["phase_rad"] = *s.phase_rad;
                              else j["phase_rad"] = "random";
                              return j;
                          },
                          [](const WhiteBandNoise& w) {
                              return nlohmann::json{{"type", "white"}, {"level_rad2_per_hz", w.level}, {"f_min_hz", w.f_min_hz}, {"f_max_hz", w.f_max_hz}};
                          },
                          [](const PowerLawNoise& p) {
                              return nlohmann::json{{"type", "power_law"}, {"amplitude_rad2_per_hz", p.amplitude}, {"exponent", p.exponent},
                                                    {"f_min_hz", p.f_min_hz}, {"f_max_hz", p.f_max_hz}};
                          },
                          [](const CompositeNoise& c) {
                              nlohmann::json parts = nlohmann::json::array();
                              for (const auto& p : c.parts) parts.push_back(noise_to_json(p));
                              return nlohmann::json{{"type", "composite"}, {"parts", parts}};
                          },
                      },
                      m.kind);
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j{{"method", cfg.method == Method::coherent ? "coherent" : "fock"},
                     {"repetitions", cfg.repetitions},
                     {"seed", cfg.seed},
                     {"noise", noise_to_json(cfg.noise)},
                     {"nbar_base", cfg.nbar_base},
                     {"heating_rate_per_s", cfg.heating_rate},
                     {"nbar_effective", cfg.nbar()}};
    if (cfg.method == Method::coherent) {
        j["filter"] = {{"t_w_s", cfg.filter.t_w}, {"k", cfg.filter.k}, {"s0", cfg.filter.s0}};
        j["readout"] = {{"eta", cfg.readout.eta}, {"n_max", cfg.readout.n_max}};
    } else if (cfg.sequence) {
        j["sequence"] = to_json(*cfg.sequence);
        j["fock_numeric"] = cfg.fock_numeric;
    }
    j["sigma_p"] = cfg.sigma_p ? nlohmann::json(*cfg.sigma_p) : nlohmann::json(nullptr);
    j["drive_limit_rad_s"] = cfg.drive_limit ? nlohmann::json(*cfg.drive_limit) : nlohmann::json(nullptr);
    return j;
}

namespace detail {

/// Detection threshold on the response: sigma_P / p2 (coherent) or 4 sigma_P (fock).
inline double response_threshold(const ExperimentConfig& cfg) {
    if (cfg.method == Method::coherent) {
        const auto q = quadratic_fit(cfg.effective_readout());
        const double sp = cfg.sigma_p ? *cfg.sigma_p : std::sqrt(q.p0 * (1.0 - q.p0) / static_cast<double>(cfg.repetitions));
        return sp / q.p2;
    }
    const double sp = cfg.sigma_p ? *cfg.sigma_p : 1.0 / static_cast<double>(cfg.repetitions);
    return 4.0 * sp;
}

inline ScanRow make_row(double x, const MonteCarloResult& mc, const ExperimentConfig& cfg, double rbw, bool line) {
    ScanRow row;
    row.x_hz = x;
    row.signal_mean = mc.signal_mean;
    row.signal_sigma = mc.signal_sigma;
    row.rbw_hz = rbw;
    try {
        const auto e = estimate_psd(mc.signal_mean, cfg);
        row.phi_sq = e.phi_sq;
        row.psd = e.psd;
        if (e.below_floor || e.phi_sq <= response_threshold(cfg)) row.flags.push_back("below_floor");
    } catch (const NumericalError&) {
        row.psd = std::numeric_limits<double>::quiet_NaN();
        row.phi_sq = std::numeric_limits<double>::quiet_NaN();
        row.flags.push_back("readout_saturated");
    }
    if (line) row.flags.push_back("line_power_over_rbw");
    return row;
}

inline bool has_lines(const NoiseModel& m) { return !psd_lines(m).empty(); }

}  // namespace detail

/// Response to Delta0 cos(2 pi f t + phi), random phi per repetition, for each
/// f in f_list; config.noise must be sinusoidal and supplies Delta0.
/// `delta0_per_row` overrides the amplitude row by row.
inline ScanResult scan_noise_frequency(const ExperimentConfig& cfg, std::span<const double> f_list,
                                       std::span<const double> delta0_per_row = {}) {
    const auto* tone = std::get_if<SinusoidalNoise>(&cfg.noise.kind);
    if (!tone) throw ConfigError("scan_noise_frequency: noise must be sinusoidal");
    if (!delta0_per_row.empty() && delta0_per_row.size() != f_list.size())
        throw ConfigError("scan_noise_frequency: one delta0 per frequency required");
    ScanResult out;
    out.kind = "noise_frequency";
    out.config = config_to_json(cfg);
    out.note = "psd_rad2_per_hz of a sinusoidal line is line power divided by rbw, not a density";
    const double rbw = filter_rbw(cfg);
    for (std::size_t i = 0; i < f_list.size(); ++i) {
        ExperimentConfig c = cfg;
        SinusoidalNoise s = *tone;
        s.f_noise_hz = f_list[i];
        if (!delta0_per_row.empty()) s.delta0_rad_s = delta0_per_row[i];
        c.noise = s;
        const auto mc = run_monte_carlo(c, i);
        out.rows.push_back(detail::make_row(f_list[i], mc, c, rbw, true));
    }
    return out;
}

/// One Blackman filter per k at fixed t_w. `s0_per_row` overrides the filter
/// amplitude row by row; with a drive limit and no override, s0 is set to
/// drive_limit / (2 pi f0). Rows carry f0 and the filter rbw.
inline ScanResult scan_filters(const ExperimentConfig& cfg, std::span<const int> k_list,
                               std::span<const double> s0_per_row = {}) {
    if (cfg.method != Method::coherent) throw ConfigError("scan_filters: coherent method only");
    if (!s0_per_row.empty() && s0_per_row.size() != k_list.size())
        throw ConfigError("scan_filters: one s0 per k required");
    ScanResult out;
    out.kind = "filters";
    out.config = config_to_json(cfg);
    const bool line = detail::has_lines(cfg.noise);
    if (line) out.note = "line components reconstruct as line power divided by rbw";
    for (std::size_t i = 0; i < k_list.size(); ++i) {
        ExperimentConfig c = cfg;
        c.filter.k = k_list[i];
        if (!s0_per_row.empty()) c.filter.s0 = s0_per_row[i];
        else if (cfg.drive_limit) c.filter.s0 = *cfg.drive_limit / (kTwoPi * c.filter.f0());
        const auto mc = run_monte_carlo(c, i);
        out.rows.push_back(detail::make_row(c.filter.f0(), mc, c, blackman_frequency_filter(c.filter).rbw, line));
    }
    return out;
}

struct AmplificationRow {
    double s0 = 0.0;
    double amplification = 0.0;  // \int |s~|^2 df / rbw, s^2
    double signal_mean = 0.0;
    double signal_sigma = 0.0;
    double model = 0.0;  // phase-averaged P_down(Delta0 |s~(f_n)| |cos phi|)
};

/// Signal versus filter amplitude for a sinusoidal line, with the linear-response
/// model curve: alpha(t_w) = Delta0 |s~(f_n)| |cos phi| averaged over phi.
inline std::vector<AmplificationRow> amplification_sweep(const ExperimentConfig& cfg, std::span<const double> s0_list,
                                                         std::size_t model_phases = 256) {
    const auto* tone = std::get_if<SinusoidalNoise>(&cfg.noise.kind);
    if (!tone || cfg.method != Method::coherent) throw ConfigError("amplification_sweep: coherent method with sinusoidal noise");
    std::vector<AmplificationRow> rows;
    for (std::size_t i = 0; i < s0_list.size(); ++i) {
        ExperimentConfig c = cfg;
        c.filter.s0 = s0_list[i];
        const auto mc = run_monte_carlo(c, i);
        SidebandReadout ro(c.effective_readout());
        const double peak = tone->delta0_rad_s * std::abs(blackman_transform(c.filter, tone->f_noise_hz));
        double model = 0.0;
        for (std::size_t k = 0; k < model_phases; ++k) {
            const double ph = kPi * (static_cast<double>(k) + 0.5) / static_cast<double>(model_phases);
            model += ro.spin_flip_probability(peak * std::abs(std::cos(ph)));
        }
        model /= static_cast<double>(model_phases);
        rows.push_back({c.filter.s0, amplification(c.filter), mc.signal_mean, mc.signal_sigma, model});
    }
    return rows;
}

}  // namespace oscspec
