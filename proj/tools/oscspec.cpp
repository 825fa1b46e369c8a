// oscspec command-line front end.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 infeasible request,
// 4 numerical failure, 1 anything else.

#include "oscspec/analyzer.hpp"
#include "oscspec/coherent.hpp"
#include "oscspec/config.hpp"
#include "oscspec/errors.hpp"
#include "oscspec/filters.hpp"
#include "oscspec/fock.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace oscspec;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitNumerical = 4;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

fs::path output_dir(const std::string& flag) {
    fs::path dir = ".";
    if (!flag.empty()) dir = flag;
    else if (const char* env = std::getenv("OSCSPEC_OUT_DIR"); env && *env) dir = env;
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
    std::cerr << "wrote " << path.string() << '\n';
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

PulseSequence read_sequence(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open sequence file '" + path.string() + "'");
    try {
        return sequence_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// filter

struct FilterArgs {
    std::optional<double> tw_s;
    std::optional<int> k;
    double s0 = 1.0;
    std::string piecewise;
    std::string out;
    std::string prefix = "filter";
};

int cmd_filter(const FilterArgs& a, const CLI::App& app) {
    FrequencyFilter filt;
    std::ostringstream ts;
    ts << "t_s,s\n";
    json summary;
    if (!a.piecewise.empty()) {
        if (a.tw_s || a.k) throw UsageError("--piecewise excludes --tw-s and --k\n" + app.help());
        const auto seq = read_sequence(a.piecewise);
        const auto pw = sensitivity_from_sequence(seq);
        filt = piecewise_frequency_filter(pw);
        for (std::size_t i = 0; i < pw.values.size(); ++i) {
            ts << fmt(pw.breakpoints[i]) << ',' << fmt(pw.values[i]) << '\n';
            ts << fmt(pw.breakpoints[i + 1]) << ',' << fmt(pw.values[i]) << '\n';
        }
        summary["source"] = {{"piecewise", a.piecewise}, {"duration_s", pw.end() - pw.start()}};
    } else {
        if (!a.tw_s || !a.k) throw UsageError("filter needs --tw-s and --k (or --piecewise FILE)\n" + app.help());
        BlackmanFilterSpec spec{*a.tw_s, *a.k, a.s0};
        spec.validate();
        filt = blackman_frequency_filter(spec);
        const std::size_t n = 40 * static_cast<std::size_t>(spec.k) + 201;
        const TimeGrid g(-spec.t_w, spec.t_w, n);
        for (std::size_t i = 0; i < g.size(); ++i) ts << fmt(g[i]) << ',' << fmt(blackman_sensitivity(spec, g[i])) << '\n';
        summary["source"] = {{"t_w_s", spec.t_w}, {"k", spec.k}, {"s0", spec.s0}};
    }
    std::ostringstream fs_;
    fs_ << "f_hz,mag_sq_s2\n";
    for (std::size_t i = 0; i < filt.grid.size(); ++i)
        if (filt.grid[i] >= 0.0) fs_ << fmt(filt.grid[i]) << ',' << fmt(filt.magnitude_sq[i]) << '\n';
    summary["f0_hz"] = filt.f0;
    summary["rbw_hz"] = filt.rbw;
    summary["amplification"] = filt.amplification;
    summary["filter_power"] = filt.integral;

    const auto dir = output_dir(a.out);
    write_file(dir / (a.prefix + "_time.csv"), ts.str());
    write_file(dir / (a.prefix + "_freq.csv"), fs_.str());
    write_file(dir / (a.prefix + "_summary.json"), summary.dump(2) + "\n");
    std::cout << summary.dump(2) << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::string out;
};

std::string amplification_csv(const std::vector<AmplificationRow>& rows) {
    std::ostringstream os;
    os << "s0,amplification_s2,signal_mean,signal_sigma,model_probability\n";
    for (const auto& r : rows)
        os << fmt(r.s0) << ',' << fmt(r.amplification) << ',' << fmt(r.signal_mean) << ',' << fmt(r.signal_sigma) << ','
           << fmt(r.model) << '\n';
    return os.str();
}

int cmd_simulate(const SimulateArgs& a) {
    auto spec = parse_config_file(a.config);
    auto& cfg = spec.experiment;
    if (a.seed) cfg.seed = *a.seed;
    if (a.threads) cfg.threads = *a.threads;
    const auto dir = output_dir(a.out);
    const std::string stem = fs::path(a.config).stem().string();

    auto emit_scan = [&](const ScanResult& r, const std::string& name, const json& extra) {
        json j = r.to_json();
        j["run"] = spec.echo;
        for (const auto& [k, v] : extra.items()) j["run"][k] = v;
        write_file(dir / (name + ".csv"), r.to_csv());
        write_file(dir / (name + ".json"), j.dump(2) + "\n");
    };

    switch (spec.mode) {
        case ScanMode::noise_frequency: {
            if (spec.recipe) {
                const bool many = spec.recipe->f0_hz.size() > 1;
                for (double f0 : spec.recipe->f0_hz) {
                    const auto opt = optimize_sequence(spec.recipe->target(f0));
                    ExperimentConfig c = cfg;
                    c.sequence = opt.sequence;
                    const std::string name = many ? stem + "_f0_" + fmt(f0) : stem;
                    json extra{{"target_f0_hz", f0},
                               {"sequence_f0_hz", opt.f0_hz},
                               {"sequence_rbw_hz", opt.rbw_hz},
                               {"sequence_residual", opt.residual}};
                    emit_scan(scan_noise_frequency(c, spec.f_noise_hz, spec.delta0_rad_s), name, extra);
                }
            } else {
                emit_scan(scan_noise_frequency(cfg, spec.f_noise_hz, spec.delta0_rad_s), stem, json::object());
            }
            break;
        }
        case ScanMode::filters: {
            auto r = scan_filters(cfg, spec.k, spec.s0);
            json extra = json::object();
            if (cfg.drive_limit) {
                json floors = json::array();
                for (const auto& row : r.rows) floors.push_back(sensitivity_floor(cfg, row.x_hz).floor);
                extra["sensitivity_floor_rad2_per_hz"] = floors;
            }
            emit_scan(r, stem, extra);
            break;
        }
        case ScanMode::amplification: {
            const auto rows = amplification_sweep(cfg, spec.s0);
            json j{{"kind", "amplification"}, {"config", config_to_json(cfg)}, {"run", spec.echo}};
            json rj = json::array();
            for (const auto& r : rows)
                rj.push_back({{"s0", r.s0},
                              {"amplification_s2", r.amplification},
                              {"signal_mean", r.signal_mean},
                              {"signal_sigma", r.signal_sigma},
                              {"model_probability", r.model}});
            j["rows"] = rj;
            write_file(dir / (stem + ".csv"), amplification_csv(rows));
            write_file(dir / (stem + ".json"), j.dump(2) + "\n");
            break;
        }
    }
    return 0;
}

// ---------------------------------------------------------------------------
// sequence

struct OptimizeArgs {
    double f0_hz = 0.0;
    std::optional<double> tw_s;
    std::optional<double> tw_cycles;
    double amplitude = 1.0;
    unsigned max_n = 1;
    double rsb_pi_s = 0.0;
    double bsb_pi_s = 0.0;
    double mw_pi_s = 0.0;
    double eta = 0.25;
    std::string out;
};

int cmd_sequence_optimize(const OptimizeArgs& a, const CLI::App& app) {
    if (a.tw_s.has_value() == a.tw_cycles.has_value())
        throw UsageError("give exactly one of --tw-s and --tw-cycles\n" + app.help());
    SequenceTarget t;
    t.f0 = a.f0_hz;
    t.t_w = a.tw_s ? *a.tw_s : *a.tw_cycles / a.f0_hz;
    t.amplitude = a.amplitude;
    t.max_n = a.max_n;
    t.rabi.rsb = a.rsb_pi_s > 0.0 ? kPi / a.rsb_pi_s : 0.0;
    t.rabi.bsb = a.bsb_pi_s > 0.0 ? kPi / a.bsb_pi_s : 0.0;
    t.rabi.mw = a.mw_pi_s > 0.0 ? kPi / a.mw_pi_s : 0.0;
    t.rabi.eta = a.eta;
    const auto opt = optimize_sequence(t);
    json report{{"target",
                 {{"f0_hz", t.f0},
                  {"t_w_s", t.t_w},
                  {"amplitude", t.amplitude},
                  {"max_n", t.max_n},
                  {"rsb_pi_time_s", a.rsb_pi_s},
                  {"bsb_pi_time_s", a.bsb_pi_s},
                  {"mw_pi_time_s", a.mw_pi_s},
                  {"eta", t.rabi.eta}}},
                {"residual", opt.residual},
                {"f0_hz", opt.f0_hz},
                {"rbw_hz", opt.rbw_hz},
                {"lobe_peaks", opt.lobe_peaks},
                {"pulse_count", detail::active_pulses(opt.sequence).size()},
                {"duration_s", opt.sequence.duration()}};
    const std::string seq_text = to_json(opt.sequence).dump(2) + "\n";
    if (!a.out.empty()) {
        const fs::path p = a.out;
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        write_file(p, seq_text);
        std::cout << report.dump(2) << '\n';
    } else {
        std::cout << seq_text;
        std::cerr << report.dump(2) << '\n';
    }
    return 0;
}

int cmd_sequence_show(const std::string& path, const std::string& out) {
    const auto seq = read_sequence(path);
    const auto pw = sensitivity_from_sequence(seq, PulseConvention::ignore).simplified();
    std::ostringstream os;
    os << "t_s,delta_n\n";
    for (std::size_t i = 0; i < pw.values.size(); ++i) {
        os << fmt(pw.breakpoints[i]) << ',' << fmt(pw.values[i]) << '\n';
        os << fmt(pw.breakpoints[i + 1]) << ',' << fmt(pw.values[i]) << '\n';
    }
    if (out.empty()) std::cout << os.str();
    else write_file(out, os.str());
    return 0;
}

// ---------------------------------------------------------------------------
// predistort

struct PredistortArgs {
    double tw_s = 0.0;
    int k = 0;
    double s0 = 1.0;
    double r1_ohm = 0.0, c1_farad = 0.0, r2_ohm = 0.0, c2_farad = 0.0;
    double f_carrier_hz = 0.0;
    std::size_t points = 0;
    std::string out;
};

int cmd_predistort(const PredistortArgs& a) {
    BlackmanFilterSpec spec{a.tw_s, a.k, a.s0};
    spec.validate();
    if (a.r1_ohm < 0 || a.c1_farad < 0 || a.r2_ohm < 0 || a.c2_farad < 0)
        throw ConfigError("predistort: component values must be >= 0");
    const double c1 = a.r1_ohm * a.c1_farad + (a.r1_ohm + a.r2_ohm) * a.c2_farad;
    const double c2 = a.r1_ohm * a.c1_farad * a.r2_ohm * a.c2_farad;
    const auto drive = drive_from_filter(spec);
    std::size_t n = a.points;
    if (n == 0) {
        // 64 samples per period of the fastest component.
        const double f_top = a.f_carrier_hz + (spec.k + 1.0) / spec.t_w;
        n = static_cast<std::size_t>(std::ceil(2.0 * spec.t_w * f_top * 64.0)) + 1;
    }
    const TimeGrid grid(-spec.t_w, spec.t_w, n);
    const auto pd = predistort(drive, c1, c2, a.f_carrier_hz, grid);
    std::ostringstream os;
    os << "t,omega_i,omega_q\n";
    for (std::size_t j = 0; j < grid.size(); ++j)
        os << fmt(grid[j]) << ',' << fmt(pd.omega_i.values[j]) << ',' << fmt(pd.omega_q.values[j]) << '\n';
    const double err = predistortion_roundtrip_error(drive, c1, c2, a.f_carrier_hz, grid);
    json report{{"c1_s", c1},
                {"c2_s2", c2},
                {"f_carrier_hz", a.f_carrier_hz},
                {"points", n},
                {"peak_drive_rad_s", drive.max_amplitude()},
                {"roundtrip_max_rel_error", err}};
    const auto dir = output_dir(a.out);
    write_file(dir / "predistort.csv", os.str());
    write_file(dir / "predistort_report.json", report.dump(2) + "\n");
    std::cout << report.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Oscillator frequency-noise spectroscopy toolkit"};
    app.require_subcommand(1);

    FilterArgs fa;
    auto* filter = app.add_subcommand("filter", "Blackman or sequence filter: s(t), |s~(f)|^2, summary");
    filter->add_option("--tw-s", fa.tw_s, "half-duration t_w in seconds");
    filter->add_option("--k", fa.k, "oscillations per t_w");
    filter->add_option("--s0", fa.s0, "peak amplitude")->capture_default_str();
    filter->add_option("--piecewise", fa.piecewise, "sequence JSON; filter of its delta-n staircase");
    filter->add_option("--prefix", fa.prefix, "output file prefix")->capture_default_str();
    filter->add_option("--out", fa.out, "output directory (default $OSCSPEC_OUT_DIR or .)");

    SimulateArgs sa;
    std::uint64_t seed_flag = 0;
    unsigned threads_flag = 0;
    auto* simulate = app.add_subcommand("simulate", "Run a scan from a TOML config");
    simulate->add_option("config", sa.config, "config file")->required()->check(CLI::ExistingFile);
    auto* seed_opt = simulate->add_option("--seed", seed_flag, "override the config seed");
    auto* threads_opt = simulate->add_option("--threads", threads_flag, "worker threads (0 = all cores)");
    simulate->add_option("--out", sa.out, "output directory (default $OSCSPEC_OUT_DIR or .)");

    auto* sequence = app.add_subcommand("sequence", "Number-state pulse sequences");
    sequence->require_subcommand(1);
    OptimizeArgs oa;
    auto* optimize = sequence->add_subcommand("optimize", "Fit a pulse sequence to a Hann-windowed sinusoid");
    optimize->add_option("--f0-hz", oa.f0_hz, "passband center")->required();
    optimize->add_option("--tw-s", oa.tw_s, "window half-duration in seconds");
    optimize->add_option("--tw-cycles", oa.tw_cycles, "window half-duration in periods of f0");
    optimize->add_option("--amplitude", oa.amplitude, "peak |delta n| of the target")->capture_default_str();
    optimize->add_option("--max-n", oa.max_n, "largest phonon number")->capture_default_str();
    optimize->add_option("--rsb-pi-s", oa.rsb_pi_s, "RSB pi time on |up,0>-|down,1> (0 = instantaneous)")->capture_default_str();
    optimize->add_option("--bsb-pi-s", oa.bsb_pi_s, "BSB pi time on |down,0>-|up,1> (0 = instantaneous)")->capture_default_str();
    optimize->add_option("--mw-pi-s", oa.mw_pi_s, "carrier pi time (0 = instantaneous)")->capture_default_str();
    optimize->add_option("--eta", oa.eta, "Lamb-Dicke parameter")->capture_default_str();
    optimize->add_option("--out", oa.out, "write the sequence JSON here (report to stdout)");
    std::string show_path, show_out;
    auto* show = sequence->add_subcommand("show", "delta-n staircase of a sequence as CSV");
    show->add_option("file", show_path, "sequence JSON")->required()->check(CLI::ExistingFile);
    show->add_option("--out", show_out, "CSV path (default stdout)");

    PredistortArgs pa;
    auto* predist = app.add_subcommand("predistort", "Drive envelopes compensating the RC lowpass");
    predist->add_option("--tw-s", pa.tw_s, "half-duration t_w in seconds")->required();
    predist->add_option("--k", pa.k, "oscillations per t_w")->required();
    predist->add_option("--s0", pa.s0, "filter amplitude")->capture_default_str();
    predist->add_option("--r1-ohm", pa.r1_ohm, "first-stage resistance (0 for a single stage)")->capture_default_str();
    predist->add_option("--c1-farad", pa.c1_farad, "first-stage capacitance (0 for a single stage)")->capture_default_str();
    predist->add_option("--r2-ohm", pa.r2_ohm, "second-stage resistance")->capture_default_str();
    predist->add_option("--c2-farad", pa.c2_farad, "second-stage capacitance")->capture_default_str();
    predist->add_option("--f-carrier-hz", pa.f_carrier_hz, "carrier frequency")->capture_default_str();
    predist->add_option("--points", pa.points, "grid points (0 = automatic)")->capture_default_str();
    predist->add_option("--out", pa.out, "output directory (default $OSCSPEC_OUT_DIR or .)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return kExitUsage;
    }

    try {
        if (*filter) return cmd_filter(fa, *filter);
        if (*simulate) {
            if (*seed_opt) sa.seed = seed_flag;
            if (*threads_opt) sa.threads = threads_flag;
            return cmd_simulate(sa);
        }
        if (*optimize) return cmd_sequence_optimize(oa, *optimize);
        if (*show) return cmd_sequence_show(show_path, show_out);
        if (*predist) return cmd_predistort(pa);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const InfeasibleError& e) {
        std::cerr << "infeasible: " << e.what() << '\n';
        return kExitInfeasible;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return kExitUsage;
}
