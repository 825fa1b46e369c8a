#include "oscspec/fock.hpp"
#include "oscspec/noise.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace oscspec;

namespace {

constexpr Level up0{Internal::up, 0};
constexpr Level down1{Internal::down, 1};

RabiRates instant() { return RabiRates{0.0, 0.0, 0.0, 0.25}; }

RabiRates lab_rates() {
    const double r = kPi / 14e-6;
    return RabiRates{r, r, 0.0, 0.25};
}

PulseSequence ramsey(double T, const RabiRates& rates) {
    PulseSequence seq;
    seq.rabi = rates;
    const double half = pulse_time(rates, PulseKind::rsb, up0, 0.5 * kPi);
    seq.pulses = {{PulseKind::rsb, half, 0.0, up0, down1}, {PulseKind::delay, T}, {PulseKind::rsb, half, kPi, up0, down1}};
    return seq;
}

// +1 lobe, swap, -1 lobe of equal length: zero net area.
PulseSequence echo(double T) {
    PulseSequence seq;
    seq.rabi = instant();
    seq.pulses = {{PulseKind::rsb, 0.0, 0.0, up0, down1},
                  {PulseKind::delay, T},
                  {PulseKind::rsb, 0.0, 0.5 * kPi, up0, down1},
                  {PulseKind::delay, T},
                  {PulseKind::rsb, 0.0, kPi, up0, down1}};
    return seq;
}

SequenceTarget target_5k() {
    SequenceTarget t;
    t.f0 = 5000.0;
    t.t_w = 400e-6;
    t.amplitude = 3.0;
    t.max_n = 3;
    t.rabi = lab_rates();
    return t;
}

const OptimizedSequence& seq_5k() {
    static const OptimizedSequence s = optimize_sequence(target_5k());
    return s;
}

double mean(const std::vector<double>& v, double* sem = nullptr) {
    double s = 0.0, s2 = 0.0;
    for (double x : v) s += x, s2 += x * x;
    const double n = static_cast<double>(v.size());
    const double m = s / n;
    if (sem) *sem = std::sqrt(std::max(0.0, s2 / n - m * m) / (n - 1.0));
    return m;
}

}  // namespace

TEST(Sensitivity, RamseyLimitIsSingleInterval) {
    const double T = 100e-6;
    const auto pw = sensitivity_from_sequence(ramsey(T, instant()));
    ASSERT_EQ(pw.values.size(), 1u);
    EXPECT_EQ(pw.values[0], 1.0);
    EXPECT_DOUBLE_EQ(pw.end() - pw.start(), T);
}

TEST(Sensitivity, FinitePulsesCarryHalfValues) {
    const double T = 100e-6;
    const auto seq = ramsey(T, lab_rates());
    const double half = seq.pulses[0].duration;
    EXPECT_NEAR(half, 7e-6, 1e-15);
    const auto hv = sensitivity_from_sequence(seq, PulseConvention::half_value);
    ASSERT_EQ(hv.values.size(), 3u);
    EXPECT_EQ(hv.values[0], 0.5);
    EXPECT_EQ(hv.values[1], 1.0);
    EXPECT_EQ(hv.values[2], 0.5);
    EXPECT_NEAR(hv.area(), T + half, 1e-15);
    const auto ig = sensitivity_from_sequence(seq, PulseConvention::ignore);
    EXPECT_NEAR(ig.area(), T + half, 1e-15);
    EXPECT_DOUBLE_EQ(ig.start(), hv.start());
    EXPECT_DOUBLE_EQ(ig.end(), hv.end());
}

TEST(Sensitivity, ZeroNetAreaHasNoDcResponse) {
    const auto pw = sensitivity_from_sequence(echo(80e-6));
    EXPECT_NEAR(pw.area(), 0.0, 1e-18);
    EXPECT_NEAR(piecewise_mag_sq(pw, 0.0), 0.0, 1e-30);
    EXPECT_GT(piecewise_mag_sq(pw, 1.0 / 160e-6), 0.0);
    EXPECT_EQ(pw.values.front(), 1.0);
    EXPECT_EQ(pw.values.back(), -1.0);
}

TEST(Sensitivity, PathMatchesIgnoreConvention) {
    const auto& seq = seq_5k().sequence;
    const auto a = superposition_path(seq).sensitivity();
    const auto b = sensitivity_from_sequence(seq, PulseConvention::ignore);
    for (double t = b.start(); t < b.end(); t += 1.37e-6) EXPECT_EQ(a(t), b(t)) << t;
}

TEST(Phase, ConstantDetuning) {
    const double T = 50e-6, delta = 300.0;
    PiecewiseSensitivity pw{{0.0, T}, {2.0}};
    const TimeGrid g(-1e-5, 1e-4, 11);
    EXPECT_NEAR(phase_accumulation(pw, sample(g, [&](double) { return delta; })), 2.0 * delta * T, 1e-12);
    EXPECT_EQ(phase_accumulation(pw, sample(g, [](double) { return 0.0; })), 0.0);
    const TimeGrid short_grid(0.0, 2e-5, 3);
    EXPECT_THROW(phase_accumulation(pw, sample(short_grid, [](double) { return 0.0; })), std::invalid_argument);
}

TEST(Phase, SinusoidAtCenterMatchesFilter) {
    const auto& opt = seq_5k();
    const auto pw = sensitivity_from_sequence(opt.sequence);
    const double f = opt.f0_hz, d0 = 400.0;
    const auto grid = sequence_noise_grid(opt.sequence, f, f);
    std::vector<double> phi2;
    for (int k = 0; k < 64; ++k) {
        const double ph = kTwoPi * (k + 0.5) / 64.0;
        const double phi = phase_accumulation(pw, sample(grid, [&](double t) { return d0 * std::cos(kTwoPi * f * t + ph); }));
        phi2.push_back(phi * phi);
    }
    EXPECT_NEAR(mean(phi2) / (0.5 * d0 * d0 * piecewise_mag_sq(pw, f)), 1.0, 0.02);
}

TEST(Phase, EnsembleMatchesFilteredPower) {
    const auto& opt = seq_5k();
    const auto pw = sensitivity_from_sequence(opt.sequence);
    const NoiseModel m = WhiteBandNoise{20.0, 500.0, 20e3};
    const auto grid = sequence_noise_grid(opt.sequence, 20e3, opt.f0_hz);
    NoiseSynthesizer synth(m, grid);
    std::vector<double> phi2;
    for (std::uint64_t r = 0; r < 3000; ++r) {
        RandomStream rs(41, r);
        const double phi = phase_accumulation(pw, synth.draw(rs));
        phi2.push_back(phi * phi);
    }
    double sem = 0.0;
    const double got = mean(phi2, &sem);
    const double expect = filtered_power(m, [&](double f) { return piecewise_mag_sq(pw, f); }, opt.rbw_hz / 64.0);
    EXPECT_NEAR(got, expect, 3.0 * sem);
}

TEST(Readout, Probability) {
    EXPECT_EQ(readout_probability(0.0), 0.0);
    EXPECT_NEAR(readout_probability(kPi), 1.0, 1e-15);
    for (double phi = -0.35; phi <= 0.35; phi += 0.01) {
        EXPECT_EQ(readout_probability(phi), readout_probability(-phi));
        if (phi != 0.0) EXPECT_NEAR(readout_probability(phi) / (0.25 * phi * phi), 1.0 - phi * phi / 12.0, 1e-4);
    }
    for (double phi = -10.0; phi <= 10.0; phi += 0.1) {
        ASSERT_GE(readout_probability(phi), 0.0);
        ASSERT_LE(readout_probability(phi), 1.0);
    }
    EXPECT_TRUE(quadratic_regime(0.5));
    EXPECT_FALSE(quadratic_regime(0.8));
}

TEST(Validation, RejectsMalformedSequences) {
    auto seq = ramsey(1e-4, instant());
    seq.pulses[0].to = Level{Internal::down, 2};
    EXPECT_THROW(validate(seq), SequenceError);

    seq = ramsey(1e-4, instant());
    seq.pulses[0].kind = PulseKind::mw;
    seq.pulses[0].to = Level{Internal::aux, 0};
    EXPECT_THROW(validate(seq), SequenceError);

    seq = ramsey(1e-4, instant());
    seq.pulses[1].duration = -1.0;
    EXPECT_THROW(validate(seq), SequenceError);

    seq = ramsey(1e-4, instant());
    seq.pulses[0].duration = 1e-6;  // finite pulse without a rate
    EXPECT_THROW(validate(seq), SequenceError);

    // A BSB on |down,1> drives the populated branch outside the addressed pair.
    seq = ramsey(1e-4, instant());
    seq.pulses.insert(seq.pulses.begin() + 2, Pulse{PulseKind::bsb, 0.0, 0.0, Level{Internal::down, 0}, Level{Internal::up, 1}});
    EXPECT_THROW(delta_n_profile(seq), SequenceError);
}

TEST(Json, RoundTripAndUnknownKeys) {
    const auto& seq = seq_5k().sequence;
    const auto j = to_json(seq);
    const auto back = sequence_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(to_json(back).dump(), j.dump());
    auto bad = j;
    bad["pulses"][0]["durration_s"] = 1.0;
    EXPECT_THROW(sequence_from_json(bad), SequenceError);
    auto bad2 = j;
    bad2["extra"] = 1;
    EXPECT_THROW(sequence_from_json(bad2), SequenceError);
}

TEST(Propagation, IdealSequenceRecombines) {
    for (const auto* seq : {&seq_5k().sequence}) {
        EXPECT_LT(propagate_sequence_numeric(*seq, quiet_noise(*seq), default_n_max(*seq)), 1e-10);
    }
    const auto e = echo(80e-6);
    EXPECT_LT(propagate_sequence_numeric(e, quiet_noise(e), default_n_max(e)), 1e-12);
}

TEST(Propagation, PreservesNorm) {
    const auto& seq = seq_5k().sequence;
    const auto grid = sequence_noise_grid(seq, 30e3, 5000.0);
    RandomStream rs(2, 0);
    const auto noise = sample_realization(WhiteBandNoise{200.0, 100.0, 30e3}, grid, rs);
    for (double scale : {0.9, 1.0, 1.1}) {
        PropagationOptions o;
        o.sideband_scale = scale;
        const auto psi = propagate_state(seq, noise, default_n_max(seq) + 2, o);
        EXPECT_NEAR(psi.norm_sq(), 1.0, 1e-8);
    }
    EXPECT_THROW(propagate_state(seq, noise, static_cast<unsigned>(seq.max_phonon())), std::invalid_argument);
}

TEST(Propagation, InstantaneousPulsesReproduceIdealPhase) {
    const auto seq = echo(100e-6);
    const auto grid = sequence_noise_grid(seq, 8e3, 5e3);
    for (double ph : {0.0, 1.0, 2.5}) {
        const auto noise = sample(grid, [&](double t) { return 2000.0 * std::cos(kTwoPi * 5e3 * t + ph); });
        const double ideal = readout_probability(phase_accumulation(sensitivity_from_sequence(seq), noise));
        EXPECT_NEAR(propagate_sequence_numeric(seq, noise, default_n_max(seq)), ideal, 1e-9);
    }
}

TEST(Propagation, SmallSinusoidMatchesIdealPath) {
    const auto& opt = seq_5k();
    const auto& seq = opt.sequence;
    const auto pw = sensitivity_from_sequence(seq);
    const double f = opt.f0_hz, d0 = 150.0;
    const auto grid = sequence_noise_grid(seq, f, f);
    double num = 0.0, ideal = 0.0;
    for (int k = 0; k < 16; ++k) {
        const double ph = kTwoPi * k / 16.0;
        const auto noise = sample(grid, [&](double t) { return d0 * std::cos(kTwoPi * f * t + ph); });
        num += propagate_sequence_numeric(seq, noise, default_n_max(seq));
        ideal += readout_probability(phase_accumulation(pw, noise));
    }
    EXPECT_NEAR(num / ideal, 1.0, 0.05);
}

TEST(Optimizer, FiveKilohertzReachesThirdRung) {
    const auto& opt = seq_5k();
    EXPECT_EQ(*std::max_element(opt.lobe_peaks.begin(), opt.lobe_peaks.end()), 3);
    EXPECT_NEAR(opt.f0_hz, 5000.0, 0.05 * 5000.0);
    EXPECT_LT(opt.residual, 0.5);
    const auto pw = sensitivity_from_sequence(opt.sequence, PulseConvention::ignore);
    double peak = 0.0;
    for (double v : pw.values) peak = std::max(peak, std::abs(v));
    EXPECT_EQ(peak, 3.0);
}

TEST(Optimizer, DeltaNClimbsOneRungAtATimeAndClosesAtZero) {
    for (unsigned max_n : {1u, 2u, 3u}) {
        auto t = target_5k();
        t.max_n = max_n;
        t.amplitude = max_n;
        const auto opt = optimize_sequence(t);
        const auto dn = delta_n_profile(opt.sequence);
        double prev = 0.0;
        for (std::size_t i = 0; i < dn.size(); ++i) {
            const auto& p = opt.sequence.pulses[i];
            // A sideband either moves one rung or swaps the branches (sign flip).
            if (is_sideband(p.kind) && dn[i] != -prev) EXPECT_LE(std::abs(dn[i] - prev), 1.0);
            if (p.kind == PulseKind::mw || p.kind == PulseKind::delay) EXPECT_EQ(dn[i], prev);
            EXPECT_LE(std::abs(dn[i]), max_n);
            prev = dn[i];
        }
        EXPECT_EQ(dn.back(), 0.0);
        const auto pw = sensitivity_from_sequence(opt.sequence, PulseConvention::ignore);
        const auto first = std::find_if(pw.values.begin(), pw.values.end(), [](double v) { return v != 0.0; });
        ASSERT_NE(first, pw.values.end());
        EXPECT_EQ(std::abs(*first), 1.0);
    }
}

TEST(Optimizer, Deterministic) {
    const auto a = optimize_sequence(target_5k());
    const auto b = optimize_sequence(target_5k());
    EXPECT_EQ(to_json(a.sequence).dump(), to_json(b.sequence).dump());
    EXPECT_EQ(a.residual, b.residual);
}

TEST(Optimizer, LongerPulsesDoNotImproveResidual) {
    auto slow = target_5k();
    slow.rabi.rsb *= 0.5;
    slow.rabi.bsb *= 0.5;
    EXPECT_GE(optimize_sequence(slow).residual, seq_5k().residual - 1e-12);
}

TEST(Optimizer, InfeasibleTargetNamesTheConstraint) {
    auto t = target_5k();
    t.f0 = 50e3;
    t.t_w = 40e-6;
    try {
        optimize_sequence(t);
        FAIL() << "expected InfeasibleError";
    } catch (const InfeasibleError& e) {
        EXPECT_NE(std::string(e.what()).find("pi time"), std::string::npos);
    }
}

TEST(Mismatch, InstantaneousPulsesAreInsensitive) {
    auto t = target_5k();
    t.rabi = instant();
    const auto opt = optimize_sequence(t);
    MismatchOptions o;
    o.realizations = 40;
    const auto r = rabi_mismatch_study(opt.sequence, o);
    EXPECT_GT(r.p_nominal, 0.0);
    EXPECT_NEAR(r.sensitivity, 0.0, 1e-9);
    EXPECT_NEAR(r.odd, 0.0, 1e-9);
}
