// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Each criterion also has a wall-clock budget; exceeding it is a failure.

#include "oscspec/analyzer.hpp"
#include "oscspec/coherent.hpp"
#include "oscspec/filters.hpp"
#include "oscspec/fock.hpp"
#include "oscspec/noise.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace oscspec;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void criterion(int id, const char* name, double budget_s, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (dt > budget_s) {
        o.pass = false;
        o.detail += "; over the " + std::to_string(static_cast<int>(budget_s)) + " s budget";
    }
    if (!o.pass) ++failures;
    std::printf("%s %2d %s: %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), dt);
    std::fflush(stdout);
}

std::string num(double v, int prec = 4) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

double mean_of(const std::vector<double>& v, double* sem = nullptr) {
    const double n = static_cast<double>(v.size());
    const double m = pairwise_sum(v) / n;
    if (sem) {
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        *sem = std::sqrt(s / (n - 1.0) / n);
    }
    return m;
}

// Dense complex matrix exponential (scaling and squaring, Taylor), oracle only.
using Mat = std::vector<complex>;

Mat matmul(const Mat& a, const Mat& b, std::size_t n) {
    Mat c(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) {
            const complex v = a[i * n + k];
            if (v == complex{}) continue;
            for (std::size_t j = 0; j < n; ++j) c[i * n + j] += v * b[k * n + j];
        }
    return c;
}

Mat expm(Mat m, std::size_t n) {
    double norm = 0.0;
    for (const auto& v : m) norm = std::max(norm, std::abs(v));
    int s = 0;
    while (norm * static_cast<double>(n) > 0.5) norm *= 0.5, ++s;
    for (auto& v : m) v *= std::ldexp(1.0, -s);
    Mat out(n * n), term(n * n);
    for (std::size_t i = 0; i < n; ++i) out[i * n + i] = term[i * n + i] = 1.0;
    for (int k = 1; k <= 30; ++k) {
        term = matmul(term, m, n);
        for (auto& v : term) v /= static_cast<double>(k);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += term[i];
    }
    for (int i = 0; i < s; ++i) out = matmul(out, out, n);
    return out;
}

std::vector<double> displaced_thermal_oracle(double alpha, double nbar, std::size_t dim) {
    Mat gen(dim * dim);
    for (std::size_t k = 0; k + 1 < dim; ++k) {
        const double s = std::sqrt(static_cast<double>(k + 1));
        gen[(k + 1) * dim + k] += alpha * s;
        gen[k * dim + k + 1] -= alpha * s;
    }
    const Mat D = expm(gen, dim);
    std::vector<double> p(dim, 0.0);
    for (std::size_t n = 0; n < dim; ++n)
        for (std::size_t m = 0; m < dim; ++m) {
            const double th = nbar == 0.0 ? (m == 0 ? 1.0 : 0.0) : std::pow(nbar, m) / std::pow(1.0 + nbar, m + 1.0);
            p[n] += std::norm(D[n * dim + m]) * th;
        }
    return p;
}

RabiRates lab_rates() {
    const double r = kPi / 14e-6;
    return RabiRates{r, r, 0.0, 0.25};
}

OptimizedSequence sequence_for(double f0, double tw) {
    SequenceTarget t;
    t.f0 = f0;
    t.t_w = tw;
    t.amplitude = 3.0;
    t.max_n = 3;
    t.rabi = lab_rates();
    return optimize_sequence(t);
}

double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) mx += x[i] / n, my += y[i] / n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) sxy += (x[i] - mx) * (y[i] - my), sxx += (x[i] - mx) * (x[i] - mx);
    return sxy / sxx;
}

}  // namespace

int main() {
    criterion(1, "Blackman bandwidth", 1.0, [] {
        Outcome o{true, ""};
        for (auto [tw, k] : {std::pair{250e-6, 2}, {1e-3, 7}, {1e-3, 35}}) {
            const double x = blackman_frequency_filter({tw, k, 1.0}).rbw * tw;
            o.detail += "rbw*t_w(k=" + std::to_string(k) + ")=" + num(x, 5) + " ";
            o.pass &= std::abs(x / 0.822 - 1.0) <= 0.01;
        }
        return o;
    });

    criterion(2, "Amplification constant", 1.0, [] {
        Outcome o{true, ""};
        for (int k : {1, 2, 5, 20}) {
            const BlackmanFilterSpec spec{1e-3, k, 2.0};
            const double a = amplification(spec) / (spec.t_w * spec.t_w * spec.s0 * spec.s0);
            const double expect = k == 1 ? 0.369 : 0.371;
            o.pass &= std::abs(a - expect) <= 0.002;
            o.detail += "a(k=" + std::to_string(k) + ")=" + num(a) + " ";
        }
        const BlackmanFilterSpec spec{250e-6, 2, 3.0};
        const double p = blackman_frequency_filter(spec, 128.0).integral / (spec.t_w * spec.s0 * spec.s0);
        o.pass &= std::abs(p - 0.305) <= 0.003;
        o.detail += "power=" + num(p);
        return o;
    });

    criterion(3, "Filtered-power identity (coherent, white band)", 60.0, [] {
        const BlackmanFilterSpec spec{500e-6, 10, 1.0};
        const NoiseModel noise = WhiteBandNoise{2000.0, 5e3, 40e3};
        const auto sa = small_angle_response(spec, noise);
        const auto grid = trajectory_grid(spec, 40e3);
        const TrajectoryIntegrator integ(drive_from_filter(spec), grid);
        NoiseSynthesizer synth(noise, grid);
        std::vector<double> r(2000);
        for (std::size_t i = 0; i < r.size(); ++i) {
            RandomStream rs(3, i);
            r[i] = std::norm(integ.final_alpha(synth.draw(rs).values, complex{}));
        }
        double sem = 0.0;
        const double m = mean_of(r, &sem);
        const double z = (m - sa.response) / sem;
        return Outcome{std::abs(z) <= 3.0 && sa.small_angle,
                       "MC " + num(m) + " +- " + num(sem) + " vs " + num(sa.response) + " (" + num(z, 3) + " SE, rotation rms " +
                           num(sa.phase_rms, 3) + ")"};
    });

    criterion(4, "Readout linearity below |alpha| = 0.47", 1.0, [] {
        ReadoutModel ro;
        ro.eta = 0.357;
        ro.nbar = 0.0;
        const SidebandReadout r(ro);
        const double p2 = quadratic_fit(ro).p2;
        double worst = 0.0, at = 0.0;
        for (int i = 1; i < 470; ++i) {
            const double a = 1e-3 * i;
            const double p = r.spin_flip_probability(a);
            const double dev = std::abs(p - p2 * a * a) / p;
            if (dev > worst) worst = dev, at = a;
        }
        return Outcome{worst <= 0.05, "max relative deviation " + num(worst, 3) + " at |alpha| = " + num(at, 3) + " (p2 = " + num(p2) + ")"};
    });

    criterion(5, "Quadratic-fit constants", 1.0, [] {
        ReadoutModel ro;
        ro.eta = 0.357;
        ro.nbar = 0.17;
        const auto q = quadratic_fit(ro);
        return Outcome{std::abs(q.p0 - 0.14) <= 0.014 && std::abs(q.p2 - 0.64) <= 0.064,
                       "p0 = " + num(q.p0) + ", p2 = " + num(q.p2)};
    });

    criterion(6, "Sensitivity floor", 1.0, [] {
        ExperimentConfig c;
        c.filter = {1e-3, 7, 1.0};
        c.readout.eta = 0.357;
        c.nbar_base = 0.17;
        c.sigma_p = 0.006;
        c.drive_limit = kTwoPi * 2.1e6;
        const auto fl = sensitivity_floor(c, 20e3);
        return Outcome{std::abs(fl.alpha_min - 0.10) <= 0.005 && std::abs(fl.coefficient / 7.1e-12 - 1.0) <= 0.05,
                       "alpha_min = " + num(fl.alpha_min) + ", coefficient = " + num(fl.coefficient) + " (rad/s)^2/Hz^3"};
    });

    criterion(7, "Fourth-order subharmonic", 300.0, [] {
        const BlackmanFilterSpec spec{500e-6, 25, 1.0};
        const double f_n = 25e3;
        const auto grid = trajectory_grid(spec, f_n);
        const TrajectoryIntegrator integ(drive_from_filter(spec), grid);
        auto ensemble = [&](double d0) {
            const int phases = 256;  // stratified over [0, 2 pi)
            double acc = 0.0;
            for (int p = 0; p < phases; ++p) {
                const double ph = kTwoPi * (p + 0.5) / phases;
                const auto noise = sample(grid, [&](double t) { return d0 * std::cos(kTwoPi * f_n * t + ph); });
                acc += std::norm(integ.final_alpha(noise.values, complex{}));
            }
            return acc / phases;
        };
        const double d_hi = kTwoPi * 2000.0, d_lo = kTwoPi * 900.0;
        const double hi = ensemble(d_hi), lo = ensemble(d_lo);
        const double model =
            small_angle_response(spec, SinusoidalNoise{d_hi, f_n, std::nullopt}).response + fourth_order_response(spec, d_hi, f_n);
        const double rel = hi / model - 1.0;
        const double ratio = lo / hi, expect = std::pow(0.45, 4);
        return Outcome{std::abs(rel) <= 0.10 && std::abs(ratio / expect - 1.0) <= 0.20,
                       "ensemble " + num(hi) + " vs closed form " + num(model) + " (" + num(100 * rel, 3) +
                           "%); 900 Hz / 2 kHz = " + num(ratio) + " vs " + num(expect) + " (" +
                           num(-10.0 * std::log10(ratio), 3) + " dB)"};
    });

    criterion(8, "Number-state filter, analytic vs numeric", 120.0, [] {
        const auto opt = sequence_for(5000.0, 400e-6);
        const auto pw = sensitivity_from_sequence(opt.sequence);
        const auto filt = piecewise_frequency_filter(pw);
        std::vector<double> f;
        for (double x = filt.f0 - 1500.0; x <= filt.f0 + 1500.0; x += 10.0) f.push_back(x);
        const auto scan = numeric_filter_scan(opt.sequence, f, 100.0);
        std::size_t ip = 0;
        for (std::size_t i = 1; i < scan.size(); ++i)
            if (scan[i].numeric_mag_sq > scan[ip].numeric_mag_sq) ip = i;
        const double dc = std::abs(scan[ip].f_hz - filt.f0);
        const double peak_an = piecewise_mag_sq(pw, filt.f0);
        const double rel = scan[ip].numeric_mag_sq / peak_an - 1.0;
        return Outcome{dc <= filt.rbw / 10.0 && std::abs(rel) <= 0.15,
                       "centers " + num(scan[ip].f_hz, 6) + " / " + num(filt.f0, 6) + " Hz (rbw " + num(filt.rbw, 5) +
                           " Hz), peak ratio " + num(1.0 + rel)};
    });

    criterion(9, "Closed-loop PSD reconstruction", 600.0, [] {
        const std::vector<int> ks{7, 10, 14, 20, 25, 30, 35};
        const double tw = 1e-3, target = 0.04;  // mean |alpha|^2 per filter, where the inversion is unbiased
        auto campaign = [&](const NoiseModel& noise) {
            ExperimentConfig c;
            c.method = Method::coherent;
            c.filter = {tw, 7, 1.0};
            c.noise = noise;
            c.repetitions = 2000;
            c.seed = 1;
            c.readout.eta = 0.357;
            // Amplitude per filter keeps the expected response at `target`.
            std::vector<double> s0;
            for (int k : ks) s0.push_back(std::sqrt(target / small_angle_response({tw, k, 1.0}, noise).response));
            return scan_filters(c, ks, s0);
        };
        const PowerLawNoise pl{2e5, -1.0, 2e3, 60e3};
        const auto a = campaign(pl);
        std::vector<double> lx, ly;
        for (const auto& r : a.rows) {
            if (!(r.psd > 0.0)) continue;
            lx.push_back(std::log(r.x_hz));
            ly.push_back(std::log(r.psd));
        }
        const double slope = lx.size() >= 2 ? ols_slope(lx, ly) : 0.0;
        const double level = 10.0;
        const auto b = campaign(WhiteBandNoise{level, 2e3, 60e3});
        double worst = 0.0;
        std::string pts;
        for (const auto& r : b.rows) {
            const double dev = r.psd / level - 1.0;
            if (std::abs(dev) > std::abs(worst) || std::isnan(dev)) worst = dev;
            pts += num(r.psd / level, 3) + " ";
        }
        const bool ok_slope = lx.size() == ks.size() && std::abs(slope + 1.0) <= 0.15;
        const bool ok_flat = std::abs(worst) <= 0.10;
        return Outcome{ok_slope && ok_flat, "1/f slope " + num(slope, 4) + "; white estimate / injected: " + pts +
                                                "(worst " + num(100 * worst, 3) + "%)"};
    });

    criterion(10, "Rabi-mismatch sensitivity", 300.0, [] {
        const auto fast = sequence_for(5000.0, 400e-6);
        const auto slow = sequence_for(500.0, 4e-3);
        MismatchOptions mo;
        mo.phi_sq = 0.065;
        const auto a = rabi_mismatch_study(fast.sequence, mo);
        MismatchOptions ms = mo;
        ms.level = a.level;
        const auto b = rabi_mismatch_study(slow.sequence, ms);
        const bool ok = a.sensitivity >= 3.0 && a.sensitivity <= 7.0 && b.sensitivity >= 0.4 && b.sensitivity <= 1.0;
        return Outcome{ok, "5 kHz: " + num(a.sensitivity) + " (odd " + num(a.odd, 2) + "), 500 Hz: " + num(b.sensitivity) +
                               " (odd " + num(b.odd, 2) + "), white level " + num(a.level) + " (rad/s)^2/Hz"};
    });

    criterion(11, "Property suites", 120.0, [] {
        Outcome o{true, ""};
        // Norm of the Fock propagation under noise and Rabi offsets.
        const auto opt = sequence_for(5000.0, 400e-6);
        const auto grid = sequence_noise_grid(opt.sequence, 30e3, 5000.0);
        NoiseSynthesizer synth(WhiteBandNoise{300.0, 500.0, 30e3}, grid);
        double norm_err = 0.0;
        for (std::size_t r = 0; r < 5; ++r) {
            RandomStream rs(5, r);
            const auto noise = synth.draw(rs);
            for (double sc : {0.9, 1.0, 1.1}) {
                PropagationOptions po;
                po.sideband_scale = sc;
                norm_err = std::max(norm_err, std::abs(propagate_state(opt.sequence, noise, default_n_max(opt.sequence) + 2, po).norm_sq() - 1.0));
            }
        }
        o.pass &= norm_err <= 1e-8;
        o.detail += "norm " + num(norm_err, 2);
        // Probability bounds.
        bool bounds = true;
        for (double nb : {0.0, 0.17, 1.0}) {
            ReadoutModel ro;
            ro.nbar = nb;
            ro.n_max = 80;
            const SidebandReadout r(ro);
            for (double a = 0.0; a <= 4.0; a += 0.05) {
                const double p = r.spin_flip_probability(a);
                bounds &= p >= 0.0 && p <= 1.0;
            }
        }
        for (double phi = -10.0; phi <= 10.0; phi += 0.01) bounds &= readout_probability(phi) >= 0.0 && readout_probability(phi) <= 1.0;
        o.pass &= bounds;
        o.detail += ", bounds " + std::string(bounds ? "ok" : "violated");
        // Displaced-thermal populations against the matrix exponential.
        double pop_err = 0.0;
        for (double a : {0.3, 1.2, 2.0})
            for (double nb : {0.0, 0.17, 0.5}) {
                const auto lib = displaced_thermal_populations(a, nb, 29);
                const auto ref = displaced_thermal_oracle(a, nb, 48);
                for (std::size_t n = 0; n < lib.size(); ++n) pop_err = std::max(pop_err, std::abs(lib[n] - ref[n]));
            }
        o.pass &= pop_err <= 1e-6;
        o.detail += ", populations " + num(pop_err, 2);
        // Predistortion round trip.
        const BlackmanFilterSpec spec{250e-6, 2, 1.0};
        const auto drive = drive_from_filter(spec);
        const TimeGrid g(-spec.t_w, spec.t_w, 8193);
        const double rt = std::max(predistortion_roundtrip_error(drive, 1e-6, 0.0, 0.0, g),
                                   predistortion_roundtrip_error(drive, 2e-6, 1e-12, 0.0, g));
        o.pass &= rt <= 1e-3;
        o.detail += ", round trip " + num(rt, 2);
        // Byte-identical reruns.
        ExperimentConfig c;
        c.filter = {500e-6, 10, 5.0};
        c.noise = WhiteBandNoise{5.0, 10e3, 30e3};
        c.repetitions = 100;
        c.nbar_base = 0.05;
        const int ks[] = {8, 10, 12};
        const bool same = scan_filters(c, ks).to_json().dump() == scan_filters(c, ks).to_json().dump();
        o.pass &= same;
        o.detail += ", reruns " + std::string(same ? "identical" : "differ");
        return o;
    });

    std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
