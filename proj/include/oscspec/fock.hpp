// fock.hpp
//
// Number-state superposition analyzer. A pulse sequence on the levels
// |state, n>, state in {down, up, aux}, splits |up,0> into two branches whose
// phonon numbers n1, n2 are stepped by sideband pulses; the relative phase
// accumulates as (n1 - n2) \int Delta dt and a final pi/2 pulse maps it onto
// the bright (down) population, P_bright = sin^2(phi/2).
//
// Transition families:
//   RSB  |up,n>   <-> |down,n+1>
//   BSB  |down,n> <-> |up,n+1>
//   MW   |up,n>   <-> |aux,n>
// Every pulse drives all pairs of its family; sideband rates scale with
// rabi_ratio(n, n+1, eta) relative to the 0 <-> 1 pair.
#pragma once

#include "oscspec/coherent.hpp"
#include "oscspec/errors.hpp"
#include "oscspec/filters.hpp"
#include "oscspec/noise.hpp"
#include "oscspec/numerics.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace oscspec {

enum class PulseKind { rsb, bsb, mw, delay };
enum class Internal { down, up, aux };

struct Level {
    Internal state = Internal::up;
    int n = 0;

    bool operator==(const Level&) const = default;
};

struct Pulse {
    PulseKind kind = PulseKind::delay;
    double duration = 0.0;  // s
    double phase = 0.0;     // rad
    Level from{};
    Level to{};
};

/// Calibrated Rabi rates Omega (area = Omega * duration) for the |up,0>-|down,1>
/// sideband pairs and the microwave carrier, plus the Lamb-Dicke parameter
/// that sets the n dependence of the sideband rates.
struct RabiRates {
    double rsb = 0.0;  // rad/s
    double bsb = 0.0;  // rad/s
    double mw = 0.0;   // rad/s
    double eta = 0.25;
};

struct PulseSequence {
    double t_start = 0.0;
    std::vector<Pulse> pulses;
    RabiRates rabi;

    double duration() const {
        double d = 0.0;
        for (const auto& p : pulses) d += p.duration;
        return d;
    }
    double t_end() const { return t_start + duration(); }

    int max_phonon() const {
        int m = 0;
        for (const auto& p : pulses)
            if (p.kind != PulseKind::delay) m = std::max({m, p.from.n, p.to.n});
        return m;
    }
};

inline const char* to_string(PulseKind k) {
    switch (k) {
        case PulseKind::rsb: return "rsb";
        case PulseKind::bsb: return "bsb";
        case PulseKind::mw: return "mw";
        case PulseKind::delay: return "delay";
    }
    return "?";
}

inline const char* to_string(Internal s) {
    switch (s) {
        case Internal::down: return "down";
        case Internal::up: return "up";
        case Internal::aux: return "aux";
    }
    return "?";
}

inline bool is_sideband(PulseKind k) { return k == PulseKind::rsb || k == PulseKind::bsb; }

/// Level coupled to `l` by a pulse of kind `k`, if any.
inline std::optional<Level> partner(PulseKind k, Level l) {
    using I = Internal;
    switch (k) {
        case PulseKind::rsb:
            if (l.state == I::up) return Level{I::down, l.n + 1};
            if (l.state == I::down && l.n >= 1) return Level{I::up, l.n - 1};
            return std::nullopt;
        case PulseKind::bsb:
            if (l.state == I::down) return Level{I::up, l.n + 1};
            if (l.state == I::up && l.n >= 1) return Level{I::down, l.n - 1};
            return std::nullopt;
        case PulseKind::mw:
            if (l.state == I::up) return Level{I::aux, l.n};
            if (l.state == I::aux) return Level{I::up, l.n};
            return std::nullopt;
        case PulseKind::delay: return std::nullopt;
    }
    return std::nullopt;
}

/// Canonical (first, second) ordering of a pair: the first member is |up,n>
/// for RSB and MW and |down,n> for BSB.
inline std::pair<Level, Level> canonical_pair(PulseKind k, Level a, Level b) {
    const Internal first = k == PulseKind::bsb ? Internal::down : Internal::up;
    if (a.state == first && !(k == PulseKind::mw && b.state == first)) return {a, b};
    return {b, a};
}

/// Rabi rate of the pair whose canonical first member is `first`.
inline double pair_rate(const RabiRates& r, PulseKind k, Level first, double sideband_scale = 1.0) {
    switch (k) {
        case PulseKind::rsb:
        case PulseKind::bsb: {
            const double base = k == PulseKind::rsb ? r.rsb : r.bsb;
            const auto lo = static_cast<unsigned>(first.n);
            return sideband_scale * base * rabi_ratio(lo, lo + 1, r.eta) / rabi_ratio(0, 1, r.eta);
        }
        case PulseKind::mw: return r.mw;
        case PulseKind::delay: return 0.0;
    }
    return 0.0;
}

/// Duration of a pulse of area `area` on the pair starting at `first`; zero
/// when the family rate is not positive (instantaneous pulses).
inline double pulse_time(const RabiRates& r, PulseKind k, Level first, double area) {
    const double rate = pair_rate(r, k, first);
    return rate > 0.0 ? area / rate : 0.0;
}

// ---------------------------------------------------------------------------
// Validation and ideal branch tracking

struct SequenceError : ConfigError {
    using ConfigError::ConfigError;
};

namespace detail {

inline std::vector<std::size_t> active_pulses(const PulseSequence& seq) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < seq.pulses.size(); ++i)
        if (seq.pulses[i].kind != PulseKind::delay) idx.push_back(i);
    return idx;
}

inline std::string describe(Level l) { return std::string("|") + to_string(l.state) + "," + std::to_string(l.n) + ">"; }

}  // namespace detail

/// Structural checks: durations, pair consistency, pi/2 sideband pulses at
/// both ends.
inline void validate(const PulseSequence& seq) {
    if (!std::isfinite(seq.t_start)) throw SequenceError("sequence: t_start must be finite");
    for (std::size_t i = 0; i < seq.pulses.size(); ++i) {
        const auto& p = seq.pulses[i];
        const std::string where = "sequence: pulse " + std::to_string(i);
        if (!(p.duration >= 0.0) || !std::isfinite(p.duration)) throw SequenceError(where + " has invalid duration");
        if (p.kind == PulseKind::delay) continue;
        if (p.from.n < 0 || p.to.n < 0) throw SequenceError(where + " references a negative phonon number");
        auto q = partner(p.kind, p.from);
        if (!q || !(*q == p.to))
            throw SequenceError(where + ": " + detail::describe(p.from) + " -> " + detail::describe(p.to) +
                                " is not a " + to_string(p.kind) + " transition");
    }
    const auto act = detail::active_pulses(seq);
    if (act.size() < 2) throw SequenceError("sequence: needs at least the two pi/2 pulses");
    if (!is_sideband(seq.pulses[act.front()].kind) || !is_sideband(seq.pulses[act.back()].kind))
        throw SequenceError("sequence: first and last pulses must be sideband pi/2 pulses");
    for (const auto& p : seq.pulses)
        if (p.kind != PulseKind::delay && p.duration > 0.0 && pair_rate(seq.rabi, p.kind, canonical_pair(p.kind, p.from, p.to).first) <= 0.0)
            throw SequenceError(std::string("sequence: finite ") + to_string(p.kind) + " pulse without a Rabi rate");
}

/// Nominal area: pi/2 for the first and last active pulses, pi otherwise.
inline double nominal_area(const PulseSequence& seq, std::size_t index) {
    const auto act = detail::active_pulses(seq);
    return (index == act.front() || index == act.back()) ? 0.5 * kPi : kPi;
}

/// delta n = n1 - n2 after each pulse for the ideal sequence, n1 being the
/// branch moved by the first pi/2 pulse. Throws SequenceError when a pulse
/// drives a populated level outside its addressed pair or branches merge.
inline std::vector<double> delta_n_profile(const PulseSequence& seq) {
    validate(seq);
    const auto act = detail::active_pulses(seq);
    std::vector<double> dn(seq.pulses.size(), 0.0);
    Level b1{}, b2{};
    bool split = false;
    double current = 0.0;
    for (std::size_t i = 0; i < seq.pulses.size(); ++i) {
        const auto& p = seq.pulses[i];
        const std::string where = "sequence: pulse " + std::to_string(i) + " (" + to_string(p.kind) + ")";
        if (p.kind == PulseKind::delay) {
            dn[i] = current;
            continue;
        }
        if (i == act.front()) {
            b2 = p.from;
            b1 = p.to;
            split = true;
        } else {
            auto move = [&](Level& b) {
                if (b == p.from) {
                    b = p.to;
                } else if (b == p.to) {
                    b = p.from;
                } else if (partner(p.kind, b)) {
                    throw SequenceError(where + " drives populated level " + detail::describe(b) +
                                        " outside its addressed pair");
                }
            };
            if (i == act.back()) {
                const bool on_pair = (b1 == p.from || b1 == p.to) && (b2 == p.from || b2 == p.to);
                if (!on_pair) throw SequenceError(where + ": final pi/2 pulse does not address both branches");
                split = false;
            } else {
                move(b1);
                move(b2);
                if (b1 == b2) throw SequenceError(where + " merges the two branches");
            }
        }
        current = split ? static_cast<double>(b1.n - b2.n) : 0.0;
        dn[i] = current;
    }
    return dn;
}

enum class PulseConvention { ignore, half_value };

/// delta n(t) as a staircase. With half_value each pulse interval carries the
/// mean of the values before and after it; with ignore the switch happens at
/// the pulse midpoint. Zero-length intervals are dropped.
inline PiecewiseSensitivity sensitivity_from_sequence(const PulseSequence& seq,
                                                      PulseConvention convention = PulseConvention::half_value) {
    const auto dn = delta_n_profile(seq);
    const auto act = detail::active_pulses(seq);
    std::vector<double> bp;
    std::vector<double> val;
    auto push = [&](double a, double b, double v) {
        if (!(b > a)) return;
        if (bp.empty()) bp.push_back(a);
        bp.back() = std::min(bp.back(), a);
        val.push_back(v);
        bp.push_back(b);
    };
    double t = seq.t_start;
    double prev = 0.0;
    // Sequence span runs from the start of the first pi/2 to the end of the last.
    for (std::size_t i = 0; i < seq.pulses.size(); ++i) {
        const auto& p = seq.pulses[i];
        const double a = t;
        const double b = t + p.duration;
        t = b;
        if (i < act.front() || i > act.back()) continue;
        if (p.kind == PulseKind::delay) {
            push(a, b, dn[i]);
        } else if (convention == PulseConvention::half_value) {
            push(a, b, 0.5 * (prev + dn[i]));
        } else {
            const double mid = 0.5 * (a + b);
            push(a, mid, prev);
            push(mid, b, dn[i]);
        }
        prev = dn[i];
    }
    if (val.empty()) throw SequenceError("sequence: zero total duration between the pi/2 pulses");
    // The ignore convention emits zero-valued halves of the outer pi/2 pulses;
    // keep them so both conventions span the same interval.
    PiecewiseSensitivity pw{std::move(bp), std::move(val)};
    pw.validate();
    return pw;
}

/// Contiguous intervals with constant branch phonon numbers (n1, n2), switching
/// at pulse midpoints.
struct PathInterval {
    double t_start;
    double t_end;
    int n1;
    int n2;
};

struct SuperpositionPath {
    std::vector<PathInterval> intervals;

    PiecewiseSensitivity sensitivity() const {
        PiecewiseSensitivity pw;
        for (const auto& iv : intervals) {
            if (pw.breakpoints.empty()) pw.breakpoints.push_back(iv.t_start);
            pw.values.push_back(static_cast<double>(iv.n1 - iv.n2));
            pw.breakpoints.push_back(iv.t_end);
        }
        pw.validate();
        return pw;
    }
};

inline SuperpositionPath superposition_path(const PulseSequence& seq) {
    delta_n_profile(seq);  // validates
    const auto act = detail::active_pulses(seq);
    SuperpositionPath path;
    Level b1{}, b2{};
    double t = seq.t_start;
    double open = 0.0;
    for (std::size_t i = 0; i < seq.pulses.size(); ++i) {
        const auto& p = seq.pulses[i];
        const double mid = t + 0.5 * p.duration;
        t += p.duration;
        if (p.kind == PulseKind::delay || i < act.front() || i > act.back()) continue;
        if (i == act.front()) {
            b1 = p.to;
            b2 = p.from;
            open = mid;
            continue;
        }
        if (mid > open) path.intervals.push_back({open, mid, b1.n, b2.n});
        open = mid;
        if (i == act.back()) break;
        for (Level* b : {&b1, &b2}) {
            if (*b == p.from)
                *b = p.to;
            else if (*b == p.to)
                *b = p.from;
        }
    }
    return path;
}

/// phi = \int s(t) Delta(t) dt over the staircase, the noise taken as its
/// piecewise-linear interpolant.
inline double phase_accumulation(const PiecewiseSensitivity& pw, const RealSeries& noise) {
    pw.validate();
    const double tol = 1e-9 * (pw.end() - pw.start());
    if (noise.grid.start() > pw.start() + tol || noise.grid.end() < pw.end() - tol)
        throw std::invalid_argument("phase_accumulation: noise does not cover the sequence span");
    CumulativeIntegral cum(noise);
    double phi = 0.0;
    for (std::size_t i = 0; i < pw.values.size(); ++i)
        if (pw.values[i] != 0.0) phi += pw.values[i] * cum.integral(pw.breakpoints[i], pw.breakpoints[i + 1]);
    return phi;
}

inline double phase_accumulation(const SuperpositionPath& path, const RealSeries& noise) {
    return phase_accumulation(path.sensitivity(), noise);
}

inline double readout_probability(double phi) {
    const double s = std::sin(0.5 * phi);
    return std::clamp(s * s, 0.0, 1.0);
}

/// Readout leaves the quadratic regime P ~ phi^2/4 beyond |phi| = pi/4.
inline bool quadratic_regime(double phi) { return std::abs(phi) <= 0.25 * kPi; }

// ---------------------------------------------------------------------------
// Numerical propagation

/// State vector over {down, up, aux} x {0 .. n_max}.
class FockState {
public:
    explicit FockState(unsigned n_max) : n_max_(n_max), amp_(3 * (n_max + 1), complex{}) {}

    unsigned n_max() const { return n_max_; }
    complex& operator()(Internal s, int n) { return amp_[index(s, n)]; }
    complex operator()(Internal s, int n) const { return amp_[index(s, n)]; }
    complex& operator()(Level l) { return (*this)(l.state, l.n); }
    complex operator()(Level l) const { return (*this)(l.state, l.n); }

    double norm_sq() const {
        double acc = 0.0;
        for (const auto& a : amp_) acc += std::norm(a);
        return acc;
    }

    double population(Internal s) const {
        double acc = 0.0;
        for (unsigned n = 0; n <= n_max_; ++n) acc += std::norm((*this)(s, static_cast<int>(n)));
        return acc;
    }

    double top_population() const {
        double acc = 0.0;
        for (Internal s : {Internal::down, Internal::up, Internal::aux}) acc += std::norm((*this)(s, static_cast<int>(n_max_)));
        return acc;
    }

private:
    std::size_t index(Internal s, int n) const { return static_cast<std::size_t>(s) * (n_max_ + 1) + static_cast<std::size_t>(n); }

    unsigned n_max_;
    std::vector<complex> amp_;
};

struct PropagationOptions {
    double sideband_scale = 1.0;   // global factor on RSB/BSB Rabi rates
    double max_substep = 0.0;      // s; 0 -> noise grid step
    double leakage_tolerance = 1e-4;
    bool stop_before_last = false;  // leave the final pi/2 pulse unapplied
};

namespace detail {

struct PairBlock {
    Level first;
    Level second;
    double rate;
};

inline std::vector<PairBlock> family_pairs(const RabiRates& r, PulseKind k, unsigned n_max, double scale) {
    std::vector<PairBlock> out;
    for (int n = 0; n <= static_cast<int>(n_max); ++n) {
        const Level first{k == PulseKind::bsb ? Internal::down : Internal::up, n};
        auto second = partner(k, first);
        if (!second || second->n > static_cast<int>(n_max)) continue;
        out.push_back({first, *second, pair_rate(r, k, first, is_sideband(k) ? scale : 1.0)});
    }
    return out;
}

/// exp(-i h H) on one pair, H = diag(n_a d, n_b d) + (Omega/2)(e^{-i phi} |a><b| + h.c.).
inline void evolve_pair(FockState& psi, const PairBlock& pb, double omega, double phase, double delta, double h) {
    complex& a = psi(pb.first);
    complex& b = psi(pb.second);
    const double ea = pb.first.n * delta;
    const double eb = pb.second.n * delta;
    const double mean = 0.5 * (ea + eb);
    const double d = 0.5 * (ea - eb);
    const complex g = 0.5 * omega * std::polar(1.0, -phase);
    const double lam = std::sqrt(d * d + std::norm(g));
    const complex global = std::polar(1.0, -mean * h);
    const double c = std::cos(lam * h);
    const double s_over = lam > 0.0 ? std::sin(lam * h) / lam : h;
    const complex mi(0.0, -1.0);
    const complex na = global * ((c + mi * d * s_over) * a + mi * s_over * g * b);
    const complex nb = global * (mi * s_over * std::conj(g) * a + (c - mi * d * s_over) * b);
    a = na;
    b = nb;
}

inline void free_phase(FockState& psi, double theta, const std::vector<char>* skip = nullptr) {
    const unsigned nm = psi.n_max();
    for (Internal s : {Internal::down, Internal::up, Internal::aux}) {
        for (unsigned n = 1; n <= nm; ++n) {
            if (skip && (*skip)[static_cast<std::size_t>(s) * (nm + 1) + n]) continue;
            psi(s, static_cast<int>(n)) *= std::polar(1.0, -static_cast<double>(n) * theta);
        }
    }
}

}  // namespace detail

/// Full propagation through the sequence: free evolution |s,n> -> e^{-i n \int Delta}
/// during delays and exact 2x2 detuned rotations for every pair of the pulse
/// family during pulses (Delta held at its sub-step mean). Zero-duration
/// pulses are ideal rotations of nominal area. Starts in |up,0>.
inline FockState propagate_state(const PulseSequence& seq, const RealSeries& noise, unsigned n_max,
                                 const PropagationOptions& opt = {}) {
    validate(seq);
    if (static_cast<int>(n_max) < seq.max_phonon() + 1)
        throw std::invalid_argument("propagate: n_max below the highest referenced phonon number");
    const auto act = detail::active_pulses(seq);
    FockState psi(n_max);
    psi(seq.pulses[act.front()].from) = 1.0;
    CumulativeIntegral cum(noise);
    const double dt_max = opt.max_substep > 0.0 ? opt.max_substep : noise.grid.step();
    double t = seq.t_start;
    const std::size_t n_levels = 3 * (n_max + 1);
    for (std::size_t i = 0; i < seq.pulses.size(); ++i) {
        const auto& p = seq.pulses[i];
        if (opt.stop_before_last && i == act.back()) break;
        const double t0 = t;
        t += p.duration;
        if (p.kind == PulseKind::delay) {
            detail::free_phase(psi, cum.integral(t0, t));
            continue;
        }
        const auto pairs = detail::family_pairs(seq.rabi, p.kind, n_max, opt.sideband_scale);
        const auto [first, second] = canonical_pair(p.kind, p.from, p.to);
        // The pulse phase is referenced to the addressed pair orientation from -> to.
        const double phase = (first == p.from) ? p.phase : -p.phase;
        std::vector<char> paired(n_levels, 0);
        for (const auto& pb : pairs) {
            paired[static_cast<std::size_t>(pb.first.state) * (n_max + 1) + static_cast<std::size_t>(pb.first.n)] = 1;
            paired[static_cast<std::size_t>(pb.second.state) * (n_max + 1) + static_cast<std::size_t>(pb.second.n)] = 1;
        }
        if (p.duration == 0.0) {
            const double area = nominal_area(seq, i);
            const double ref = pair_rate(seq.rabi, p.kind, first);
            for (const auto& pb : pairs) {
                double ratio = 1.0;
                if (is_sideband(p.kind) && ref > 0.0) ratio = pb.rate / (ref * opt.sideband_scale);
                else if (is_sideband(p.kind))
                    ratio = rabi_ratio(pb.first.n, pb.second.n, seq.rabi.eta) / rabi_ratio(first.n, second.n, seq.rabi.eta);
                detail::evolve_pair(psi, pb, area * ratio, phase, 0.0, 1.0);
            }
            continue;
        }
        const auto steps = static_cast<std::size_t>(std::max(1.0, std::ceil(p.duration / dt_max - 1e-9)));
        const double h = p.duration / static_cast<double>(steps);
        for (std::size_t k = 0; k < steps; ++k) {
            const double a = t0 + static_cast<double>(k) * h;
            const double mean = cum.integral(a, a + h) / h;
            for (const auto& pb : pairs) detail::evolve_pair(psi, pb, pb.rate, phase, mean, h);
            detail::free_phase(psi, mean * h, &paired);
        }
    }
    if (std::abs(psi.norm_sq() - 1.0) > 1e-8) throw NumericalError("propagate: norm drifted beyond 1e-8");
    if (psi.top_population() > opt.leakage_tolerance)
        throw NumericalError("propagate: truncation leakage " + std::to_string(psi.top_population()) +
                             " at n_max=" + std::to_string(n_max));
    return psi;
}

/// Bright-state (down) population after the full sequence.
inline double propagate_sequence_numeric(const PulseSequence& seq, const RealSeries& noise, unsigned n_max,
                                         const PropagationOptions& opt = {}) {
    return std::clamp(propagate_state(seq, noise, n_max, opt).population(Internal::down), 0.0, 1.0);
}

/// Two-sample zero series covering the sequence.
inline RealSeries quiet_noise(const PulseSequence& seq) {
    const double a = seq.t_start;
    const double b = std::max(seq.t_end(), a + 1e-9);
    return RealSeries(TimeGrid(a, b, 2), {0.0, 0.0});
}

inline unsigned default_n_max(const PulseSequence& seq) { return static_cast<unsigned>(seq.max_phonon() + 3); }

/// Sets the phase of the final pi/2 pulse so the noise-free sequence ends
/// with zero bright population.
inline void calibrate_final_phase(PulseSequence& seq) {
    const auto act = detail::active_pulses(seq);
    const unsigned nm = default_n_max(seq);
    PropagationOptions opt;
    opt.stop_before_last = true;
    const auto psi = propagate_state(seq, quiet_noise(seq), nm, opt);
    auto& last = seq.pulses[act.back()];
    const auto [first, second] = canonical_pair(last.kind, last.from, last.to);
    const complex a = psi(first);
    const complex b = psi(second);
    // U = [[c, -i e^{-i phi} s], [-i e^{i phi} s, c]] with c = s; null the down member.
    double phi;
    if (second.state == Internal::down)
        phi = std::arg(complex(0.0, -1.0) * b / a);  // -i e^{i phi} a + b = 0
    else
        phi = -std::arg(complex(0.0, -1.0) * a / b);  // a - i e^{-i phi} b = 0
    last.phase = (first == last.from) ? phi : -phi;
    last.phase = std::remainder(last.phase, kTwoPi);
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json level_to_json(Level l) { return nlohmann::json::array({to_string(l.state), l.n}); }

inline Level level_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 2) throw SequenceError("sequence JSON: level must be [state, n]");
    const auto s = j.at(0).get<std::string>();
    Level l;
    if (s == "down") l.state = Internal::down;
    else if (s == "up") l.state = Internal::up;
    else if (s == "aux") l.state = Internal::aux;
    else throw SequenceError("sequence JSON: unknown internal state '" + s + "'");
    l.n = j.at(1).get<int>();
    return l;
}

inline nlohmann::json to_json(const PulseSequence& seq) {
    nlohmann::json pulses = nlohmann::json::array();
    for (const auto& p : seq.pulses) {
        nlohmann::json j{{"kind", to_string(p.kind)}, {"duration_s", p.duration}, {"phase_rad", p.phase}};
        if (p.kind != PulseKind::delay) {
            j["from"] = level_to_json(p.from);
            j["to"] = level_to_json(p.to);
        }
        pulses.push_back(std::move(j));
    }
    return {{"t_start_s", seq.t_start},
            {"rabi",
             {{"rsb_rad_s", seq.rabi.rsb}, {"bsb_rad_s", seq.rabi.bsb}, {"mw_rad_s", seq.rabi.mw}, {"eta", seq.rabi.eta}}},
            {"pulses", std::move(pulses)}};
}

inline PulseSequence sequence_from_json(const nlohmann::json& j) {
    auto check_keys = [](const nlohmann::json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
        if (!obj.is_object()) throw SequenceError("sequence JSON: " + where + " must be an object");
        for (const auto& [key, _] : obj.items()) {
            bool ok = false;
            for (const char* a : allowed) ok = ok || key == a;
            if (!ok) throw SequenceError("sequence JSON: unknown key '" + where + "." + key + "'");
        }
    };
    try {
        check_keys(j, {"t_start_s", "rabi", "pulses"}, "sequence");
        PulseSequence seq;
        seq.t_start = j.value("t_start_s", 0.0);
        if (j.contains("rabi")) {
            const auto& r = j.at("rabi");
            check_keys(r, {"rsb_rad_s", "bsb_rad_s", "mw_rad_s", "eta"}, "rabi");
            seq.rabi.rsb = r.value("rsb_rad_s", 0.0);
            seq.rabi.bsb = r.value("bsb_rad_s", 0.0);
            seq.rabi.mw = r.value("mw_rad_s", 0.0);
            seq.rabi.eta = r.value("eta", 0.25);
        }
        for (const auto& pj : j.at("pulses")) {
            check_keys(pj, {"kind", "duration_s", "phase_rad", "from", "to"}, "pulses[]");
            Pulse p;
            const auto kind = pj.at("kind").get<std::string>();
            if (kind == "rsb") p.kind = PulseKind::rsb;
            else if (kind == "bsb") p.kind = PulseKind::bsb;
            else if (kind == "mw") p.kind = PulseKind::mw;
            else if (kind == "delay") p.kind = PulseKind::delay;
            else throw SequenceError("sequence JSON: unknown pulse kind '" + kind + "'");
            p.duration = pj.at("duration_s").get<double>();
            p.phase = pj.value("phase_rad", 0.0);
            if (p.kind != PulseKind::delay) {
                p.from = level_from_json(pj.at("from"));
                p.to = level_from_json(pj.at("to"));
            }
            seq.pulses.push_back(p);
        }
        validate(seq);
        return seq;
    } catch (const nlohmann::json::exception& e) {
        throw SequenceError(std::string("sequence JSON: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Optimizer

/// Smooth target A hann(t) sin(2 pi f0 t), hann = (1 + cos(pi t / t_w)) / 2 on
/// [-t_w, t_w], and the constraints under which it is approximated.
struct SequenceTarget {
    double f0 = 0.0;          // Hz
    double t_w = 0.0;         // s
    double amplitude = 1.0;   // peak |delta n| scale
    unsigned max_n = 1;
    RabiRates rabi;           // non-positive family rate: instantaneous pulses

    double value(double t) const {
        if (std::abs(t) > t_w) return 0.0;
        return amplitude * 0.5 * (1.0 + std::cos(kPi * t / t_w)) * std::sin(kTwoPi * f0 * t);
    }

    /// \int_{-t_w}^{t} value.
    double antiderivative(double t) const {
        const double tc = std::clamp(t, -t_w, t_w);
        const double w = kTwoPi * f0;
        const double kap = kPi / t_w;
        auto prim = [&](double x) {
            double v = -std::cos(w * x) / w;
            v -= 0.5 * std::cos((w + kap) * x) / (w + kap);
            if (std::abs(w - kap) > 1e-12 * w) v -= 0.5 * std::cos((w - kap) * x) / (w - kap);
            return 0.5 * amplitude * v;
        };
        return prim(tc) - prim(-t_w);
    }

    /// \int value^2 over the window.
    double energy() const {
        // Fine Simpson quadrature of a smooth integrand.
        const std::size_t n = 4096;
        const double h = 2.0 * t_w / n;
        double acc = 0.0;
        for (std::size_t i = 0; i <= n; ++i) {
            const double t = -t_w + h * static_cast<double>(i);
            const double v = value(t);
            const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
            acc += w * v * v;
        }
        return acc * h / 3.0;
    }

    void validate() const {
        if (!(f0 > 0.0)) throw ConfigError("target: f0 must be > 0");
        if (!(t_w > 0.0)) throw ConfigError("target: t_w must be > 0");
        if (f0 * 2.0 * t_w < 1.0) throw ConfigError("target: f0 * 2 t_w must be >= 1 (one full oscillation)");
        if (max_n < 1) throw ConfigError("target: max_n must be >= 1");
        if (!(amplitude > 0.0) || amplitude > static_cast<double>(max_n))
            throw ConfigError("target: amplitude must be in (0, max_n]");
        if (!(rabi.eta > 0.0 && rabi.eta < 1.0)) throw ConfigError("target: eta must be in (0, 1)");
    }
};

struct OptimizedSequence {
    PulseSequence sequence;
    double residual = 0.0;   // relative L2 distance to the target
    double f0_hz = 0.0;      // achieved passband center
    double rbw_hz = 0.0;
    std::vector<int> lobe_peaks;
};

namespace detail {

struct PlannedPulse {
    PulseKind kind;
    Level from;
    Level to;
    double duration;
    double phase;
    double dn_after;  // relative to the first lobe's sign
};

struct Plan {
    std::vector<PlannedPulse> pulses;
    std::vector<double> centers;
};

class SequencePlanner {
public:
    explicit SequencePlanner(const SequenceTarget& target) : tg_(target) {
        const double half = 0.5 / tg_.f0;
        // Lobes are delimited by the zeros of sin(2 pi f0 t) inside the window.
        zeros_.push_back(-tg_.t_w);
        const auto m_lo = static_cast<long>(std::floor(-tg_.t_w / half)) + 1;
        for (long m = m_lo; static_cast<double>(m) * half < tg_.t_w; ++m) {
            const double z = static_cast<double>(m) * half;
            if (z > -tg_.t_w + 1e-12 * tg_.t_w) zeros_.push_back(z);
        }
        zeros_.push_back(tg_.t_w);
        for (std::size_t j = 0; j + 1 < zeros_.size(); ++j) {
            const double a = zeros_[j], b = zeros_[j + 1];
            double best = a, best_v = 0.0;
            for (int s = 0; s <= 400; ++s) {
                const double t = a + (b - a) * s / 400.0;
                const double v = std::abs(tg_.value(t));
                if (v > best_v) best_v = v, best = t;
            }
            peak_time_.push_back(best);
            peak_value_.push_back(best_v);
            sign_.push_back(tg_.value(best) >= 0.0 ? 1.0 : -1.0);
        }
        const Level u0{Internal::up, 0};
        t_half_ = pulse_time(tg_.rabi, PulseKind::rsb, u0, 0.5 * kPi);
        t_swap_ = pulse_time(tg_.rabi, PulseKind::rsb, u0, kPi);
    }

    std::size_t lobes() const { return peak_value_.size(); }
    double lobe_peak(std::size_t j) const { return peak_value_[j]; }

    std::vector<int> seed_peaks() const {
        std::vector<int> p(lobes());
        for (std::size_t j = 0; j < lobes(); ++j)
            p[j] = std::clamp(static_cast<int>(std::lround(peak_value_[j])), 0, static_cast<int>(tg_.max_n));
        const auto jmax = static_cast<std::size_t>(std::max_element(peak_value_.begin(), peak_value_.end()) - peak_value_.begin());
        if (p[jmax] == 0) p[jmax] = 1;
        normalize(p);
        return p;
    }

    /// Interior lobes need at least one rung; only leading/trailing lobes may vanish.
    void normalize(std::vector<int>& p) const {
        std::size_t first = 0;
        while (first < p.size() && p[first] == 0) ++first;
        std::size_t last = p.size();
        while (last > first && p[last - 1] == 0) --last;
        for (std::size_t j = first; j < last; ++j) p[j] = std::max(p[j], 1);
    }

    Plan build(const std::vector<int>& peaks) const {
        Plan plan;
        std::size_t first = 0;
        while (peaks[first] == 0) ++first;
        std::size_t last = peaks.size() - 1;
        while (peaks[last] == 0) --last;
        const double global = sign_[first];
        const Level u0{Internal::up, 0}, d1{Internal::down, 1}, a0{Internal::aux, 0};
        const double t_mw = pulse_time(tg_.rabi, PulseKind::mw, u0, kPi);
        double sigma = 1.0;
        auto add = [&](PulseKind k, Level from, Level to, double dur, double phase, double dn, double center) {
            plan.pulses.push_back({k, from, to, dur, phase, dn});
            plan.centers.push_back(center);
        };
        for (std::size_t j = first; j <= last; ++j) {
            const int peak = peaks[j];
            const double scale = std::min(1.0, 0.98 * peak_value_[j] / (peak - 0.5));
            auto rise = [&](double level) { return crossing(j, level * scale, true); };
            auto fall = [&](double level) { return crossing(j, level * scale, false); };
            if (j == first) {
                add(PulseKind::rsb, u0, d1, t_half_, 0.0, 1.0, rise(0.5));
            } else {
                sigma = -sigma;
                add(PulseKind::rsb, u0, d1, t_swap_, 0.5 * kPi, sigma, zeros_[j]);
            }
            const bool shelve = peak >= 3;
            if (shelve) add(PulseKind::mw, u0, a0, t_mw, 0.0, sigma, plan.centers.back());
            for (int L = 1; L < peak; ++L) {
                const bool odd = L % 2 == 1;
                const Level from = odd ? Level{Internal::down, L} : Level{Internal::up, L};
                const Level to = odd ? Level{Internal::up, L + 1} : Level{Internal::down, L + 1};
                const PulseKind k = odd ? PulseKind::bsb : PulseKind::rsb;
                const Level first_member = canonical_pair(k, from, to).first;
                add(k, from, to, pulse_time(tg_.rabi, k, first_member, kPi), 0.0, sigma * (L + 1), rise(L + 0.5));
            }
            for (int L = peak; L > 1; --L) {
                const bool even = L % 2 == 0;
                const Level from = even ? Level{Internal::up, L} : Level{Internal::down, L};
                const Level to = even ? Level{Internal::down, L - 1} : Level{Internal::up, L - 1};
                const PulseKind k = even ? PulseKind::bsb : PulseKind::rsb;
                const Level first_member = canonical_pair(k, from, to).first;
                add(k, from, to, pulse_time(tg_.rabi, k, first_member, kPi), kPi, sigma * (L - 1), fall(L - 0.5));
            }
            if (shelve) {
                const double next = j == last ? fall(0.5) : zeros_[j + 1];
                add(PulseKind::mw, a0, u0, t_mw, 0.0, sigma, next);
            }
            if (j == last) add(PulseKind::rsb, d1, u0, t_half_, 0.0, 0.0, fall(0.5));
        }
        enforce_spacing(plan);
        return plan;
    }

    static double gap(const Plan& p, std::size_t i) { return 0.5 * (p.pulses[i].duration + p.pulses[i + 1].duration); }

    static void enforce_spacing(Plan& p) {
        for (std::size_t i = 1; i < p.centers.size(); ++i)
            p.centers[i] = std::max(p.centers[i], p.centers[i - 1] + gap(p, i - 1));
    }

    /// \int (s - g)^2 dt minus the constant \int g^2, with the half-value
    /// convention inside pulses and g's sign aligned to the first lobe.
    double objective(const Plan& p, double global) const {
        double acc = 0.0;
        double prev = 0.0;
        auto seg = [&](double a, double b, double v) {
            if (!(b > a) || v == 0.0) return;
            acc += v * v * (b - a) - 2.0 * v * global * (tg_.antiderivative(b) - tg_.antiderivative(a));
        };
        for (std::size_t i = 0; i < p.pulses.size(); ++i) {
            const auto& q = p.pulses[i];
            const double a = p.centers[i] - 0.5 * q.duration;
            const double b = p.centers[i] + 0.5 * q.duration;
            seg(a, b, 0.5 * (prev + q.dn_after));
            if (i + 1 < p.pulses.size()) seg(b, p.centers[i + 1] - 0.5 * p.pulses[i + 1].duration, q.dn_after);
            prev = q.dn_after;
        }
        return acc;
    }

    double global_sign(const std::vector<int>& peaks) const {
        std::size_t first = 0;
        while (peaks[first] == 0) ++first;
        return sign_[first];
    }

    /// Coordinate descent on pulse centers at fixed structure.
    double descend(Plan& p, double global) const {
        double best = objective(p, global);
        double step = 0.05 / tg_.f0;
        const double tol = 1e-5 / tg_.f0;
        while (step > tol) {
            bool improved = false;
            for (std::size_t i = 0; i < p.centers.size(); ++i) {
                for (double dir : {-1.0, 1.0}) {
                    const double old = p.centers[i];
                    const double c = old + dir * step;
                    if (i > 0 && c < p.centers[i - 1] + gap(p, i - 1)) continue;
                    if (i + 1 < p.centers.size() && c > p.centers[i + 1] - gap(p, i)) continue;
                    p.centers[i] = c;
                    const double v = objective(p, global);
                    if (v < best - 1e-15 * std::abs(best)) {
                        best = v;
                        improved = true;
                        break;
                    }
                    p.centers[i] = old;
                }
            }
            if (!improved) step *= 0.5;
        }
        return best;
    }

    double shortest_half_period_pulse() const { return t_swap_; }

private:
    /// Time in lobe j where |g| crosses `level`, on the rising or falling flank.
    double crossing(std::size_t j, double level, bool rising) const {
        double a = rising ? zeros_[j] : peak_time_[j];
        double b = rising ? peak_time_[j] : zeros_[j + 1];
        auto f = [&](double t) { return std::abs(tg_.value(t)) - level; };
        if ((f(a) >= 0.0) == (f(b) >= 0.0)) return rising ? a : b;
        for (int it = 0; it < 80; ++it) {
            const double m = 0.5 * (a + b);
            if ((f(m) >= 0.0) == (f(a) >= 0.0)) a = m;
            else b = m;
        }
        return 0.5 * (a + b);
    }

    SequenceTarget tg_;
    std::vector<double> zeros_;
    std::vector<double> peak_time_;
    std::vector<double> peak_value_;
    std::vector<double> sign_;
    double t_half_ = 0.0;
    double t_swap_ = 0.0;
};

inline PulseSequence materialize(const Plan& plan, const RabiRates& rabi) {
    PulseSequence seq;
    seq.rabi = rabi;
    seq.t_start = plan.centers.front() - 0.5 * plan.pulses.front().duration;
    for (std::size_t i = 0; i < plan.pulses.size(); ++i) {
        const auto& q = plan.pulses[i];
        if (i > 0) {
            const double gap = (plan.centers[i] - 0.5 * q.duration) -
                               (plan.centers[i - 1] + 0.5 * plan.pulses[i - 1].duration);
            if (gap > 0.0) seq.pulses.push_back({PulseKind::delay, gap, 0.0, {}, {}});
        }
        seq.pulses.push_back({q.kind, q.duration, q.phase, q.from, q.to});
    }
    return seq;
}

}  // namespace detail

/// Deterministic staircase fit to the target. Lobe rung counts start from the
/// rounded target; pulse centers are refined by coordinate descent and rung
/// counts by +-1 moves per lobe, ties going to fewer pulses.
inline OptimizedSequence optimize_sequence(const SequenceTarget& target) {
    target.validate();
    detail::SequencePlanner planner(target);
    const double half_period = 0.5 / target.f0;
    if (planner.shortest_half_period_pulse() > half_period)
        throw InfeasibleError("sequence: rsb pi time " + std::to_string(planner.shortest_half_period_pulse()) +
                              " s exceeds the half period " + std::to_string(half_period) + " s of f0");

    auto evaluate = [&](const std::vector<int>& peaks, detail::Plan& plan) {
        plan = planner.build(peaks);
        return planner.descend(plan, planner.global_sign(peaks));
    };

    std::vector<int> peaks = planner.seed_peaks();
    detail::Plan best_plan;
    double best = evaluate(peaks, best_plan);
    const double scale = target.energy();
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t j = 0; j < peaks.size(); ++j) {
            for (int d : {-1, 1}) {
                auto cand = peaks;
                cand[j] += d;
                if (cand[j] < 0 || cand[j] > static_cast<int>(target.max_n)) continue;
                planner.normalize(cand);
                if (cand == peaks || std::all_of(cand.begin(), cand.end(), [](int v) { return v == 0; })) continue;
                detail::Plan plan;
                const double v = evaluate(cand, plan);
                const bool better = v < best - 1e-9 * scale;
                const bool tie_fewer = std::abs(v - best) <= 1e-9 * scale && plan.pulses.size() < best_plan.pulses.size();
                if (better || tie_fewer) {
                    best = v;
                    peaks = cand;
                    best_plan = std::move(plan);
                    changed = true;
                }
            }
        }
    }

    OptimizedSequence out;
    out.sequence = detail::materialize(best_plan, target.rabi);
    calibrate_final_phase(out.sequence);
    out.residual = std::sqrt(std::max(0.0, best + scale) / scale);
    out.lobe_peaks = peaks;
    const auto filter = piecewise_frequency_filter(sensitivity_from_sequence(out.sequence));
    out.f0_hz = filter.f0;
    out.rbw_hz = filter.rbw;
    return out;
}

// ---------------------------------------------------------------------------
// Noise studies with the numerical propagator

/// Noise grid covering the sequence with dt <= 1/(20 f_max) and <= 1/(200 f_ref).
inline TimeGrid sequence_noise_grid(const PulseSequence& seq, double f_max, double f_ref) {
    double dt = 1.0 / (200.0 * f_ref);
    if (f_max > 0.0) dt = std::min(dt, 1.0 / (20.0 * f_max));
    const double span = std::max(seq.duration(), dt);
    const auto n = static_cast<std::size_t>(std::ceil(span / dt)) + 1;
    return TimeGrid(seq.t_start, seq.t_start + span, std::max<std::size_t>(n, 2));
}

struct FilterScanPoint {
    double f_hz;
    double numeric_mag_sq;   // 2 <phi^2> / Delta0^2 from the propagator, phi^2 = 4 P
    double analytic_mag_sq;  // |s~(f)|^2 of the half-value staircase
};

/// Phase-averaged response to Delta0 cos(2 pi f t + phi) with `phases`
/// equally spaced phases per frequency.
inline std::vector<FilterScanPoint> numeric_filter_scan(const PulseSequence& seq, std::span<const double> f_list,
                                                        double delta0, std::size_t phases = 16) {
    const auto pw = sensitivity_from_sequence(seq);
    const unsigned nm = default_n_max(seq);
    std::vector<FilterScanPoint> out;
    for (double f : f_list) {
        const auto grid = sequence_noise_grid(seq, f, f);
        double acc = 0.0;
        for (std::size_t k = 0; k < phases; ++k) {
            const double ph = kTwoPi * static_cast<double>(k) / static_cast<double>(phases);
            auto noise = sample(grid, [&](double t) { return delta0 * std::cos(kTwoPi * f * t + ph); });
            acc += propagate_sequence_numeric(seq, noise, nm);
        }
        const double p = acc / static_cast<double>(phases);
        out.push_back({f, 2.0 * 4.0 * p / (delta0 * delta0), piecewise_mag_sq(pw, f)});
    }
    return out;
}

struct MismatchOptions {
    double f_lo = 0.0;                // Hz; 0 -> 0.2 f0
    double f_hi = 0.0;                // Hz; 0 -> 2 f0
    std::optional<double> level;      // white two-sided density, (rad/s)^2/Hz
    double phi_sq = 0.1;              // without `level`: target <phi^2> of this sequence
    std::size_t realizations = 200;
    double offset = 0.05;             // fractional sideband Rabi offset
    std::uint64_t seed = 1;
};

struct MismatchResult {
    double sensitivity = 0.0;   // (P(+d) + P(-d) - 2 P(0)) / (2 d P(0))
    double odd = 0.0;           // (P(+d) - P(-d)) / (2 d P(0))
    double p_nominal = 0.0;
    double level = 0.0;         // white density used
};

/// Relative change of the mean bright population per fractional offset of the
/// sideband Rabi rates, over common white-noise realizations. P(eps) is even in
/// eps to first order, so the symmetric secant at a finite offset carries the
/// effect and `odd` only reports the residual antisymmetric part.
inline MismatchResult rabi_mismatch_study(const PulseSequence& seq, const MismatchOptions& opt = {}) {
    const auto pw = sensitivity_from_sequence(seq);
    const auto filt = piecewise_frequency_filter(pw);
    const double f0 = filt.f0;
    const double lo = opt.f_lo > 0.0 ? opt.f_lo : 0.2 * f0;
    const double hi = opt.f_hi > 0.0 ? opt.f_hi : 2.0 * f0;
    if (!(hi > lo)) throw std::invalid_argument("mismatch: empty band");
    if (!(opt.offset > 0.0 && opt.offset < 1.0)) throw std::invalid_argument("mismatch: offset must be in (0, 1)");
    MismatchResult out;
    if (opt.level) {
        out.level = *opt.level;
    } else {
        const double gain = filtered_power(WhiteBandNoise{1.0, lo, hi},
                                           [&](double f) { return piecewise_mag_sq(pw, f); }, filt.rbw / 64.0);
        out.level = opt.phi_sq / gain;
    }
    const NoiseModel model = WhiteBandNoise{out.level, lo, hi};
    const auto grid = sequence_noise_grid(seq, hi, f0);
    NoiseSynthesizer synth(model, grid);
    const unsigned nm = default_n_max(seq);
    std::vector<double> p0(opt.realizations), pp(opt.realizations), pm(opt.realizations);
    for (std::size_t r = 0; r < opt.realizations; ++r) {
        RandomStream rs(opt.seed, r);
        const auto noise = synth.draw(rs);
        PropagationOptions o;
        p0[r] = propagate_sequence_numeric(seq, noise, nm, o);
        o.sideband_scale = 1.0 + opt.offset;
        pp[r] = propagate_sequence_numeric(seq, noise, nm, o);
        o.sideband_scale = 1.0 - opt.offset;
        pm[r] = propagate_sequence_numeric(seq, noise, nm, o);
    }
    const double n = static_cast<double>(opt.realizations);
    const double m0 = pairwise_sum(p0) / n, mp = pairwise_sum(pp) / n, mm = pairwise_sum(pm) / n;
    out.p_nominal = m0;
    if (!(m0 > 0.0)) return out;
    out.sensitivity = (mp + mm - 2.0 * m0) / (2.0 * opt.offset * m0);
    out.odd = (mp - mm) / (2.0 * opt.offset * m0);
    return out;
}

inline double rabi_mismatch_sensitivity(const PulseSequence& seq, const MismatchOptions& opt = {}) {
    return rabi_mismatch_study(seq, opt).sensitivity;
}

}  // namespace oscspec
