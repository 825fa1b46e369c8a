#include "oscspec/config.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Invocation {
    int code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / (std::string("oscspec_cli_") + info->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    // Runs the CLI with `args`; `env` is prepended to the command line.
    Invocation run(const std::string& args, const std::string& env = "") const {
        const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
        const std::string cmd = env + " '" OSCSPEC_CLI_PATH "' " + args + " >'" + out.string() + "' 2>'" + err.string() + "'";
        const int status = std::system(cmd.c_str());
        Invocation r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(out);
        r.err = slurp(err);
        return r;
    }

    fs::path write(const std::string& name, const std::string& text) const {
        const auto p = dir_ / name;
        std::ofstream(p) << text;
        return p;
    }

    fs::path dir_;
};

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

const char* kSmallScan = R"(
mode = "noise_frequency"
method = "coherent"
seed = 3
repetitions = 50

[filter]
t_w_s = 250e-6
k = 2
s0 = 1.0

[noise]
type = "sinusoidal"
delta0_rad_s = 3000.0
f_noise_hz = 8000.0

[readout]
nbar_base = 0.055

[scan]
f_noise_hz = [6000.0, 8000.0, 10000.0]
)";

}  // namespace

TEST_F(Cli, FilterSummaryBandwidth) {
    const auto r = run("filter --tw-s 1e-3 --k 7 --s0 1 --out '" + dir_.string() + "'");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = json::parse(slurp(dir_ / "filter_summary.json"));
    EXPECT_NEAR(j["rbw_hz"].get<double>(), 822.0, 8.22);
    EXPECT_NEAR(j["f0_hz"].get<double>(), 7000.0, 20.0);
    EXPECT_NEAR(j["amplification"].get<double>() / 1e-6, 0.371, 0.002);
    EXPECT_EQ(first_line(slurp(dir_ / "filter_time.csv")), "t_s,s");
    EXPECT_EQ(first_line(slurp(dir_ / "filter_freq.csv")), "f_hz,mag_sq_s2");
}

TEST_F(Cli, MissingKIsAUsageError) {
    const auto r = run("filter --tw-s 1e-3 --out '" + dir_.string() + "'");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("--k"), std::string::npos);
    EXPECT_NE(r.err.find("Usage"), std::string::npos);
    EXPECT_EQ(run("no-such-command").code, 2);
}

TEST_F(Cli, InvalidSpecExitsNonzero) {
    const auto r = run("filter --tw-s -1 --k 3 --out '" + dir_.string() + "'");
    EXPECT_EQ(r.code, 2);
    EXPECT_FALSE(r.err.empty());
}

TEST_F(Cli, OutputDirectoryFromEnvironment) {
    const auto r = run("filter --tw-s 250e-6 --k 2 --prefix envtest", "OSCSPEC_OUT_DIR='" + dir_.string() + "'");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir_ / "envtest_summary.json"));
}

TEST_F(Cli, SequenceOptimizeShowAndPiecewiseFilter) {
    const auto seq = dir_ / "seq5k.json";
    const auto r = run("sequence optimize --f0-hz 5000 --tw-s 400e-6 --amplitude 3 --max-n 3 --rsb-pi-s 14e-6 "
                       "--bsb-pi-s 14e-6 --eta 0.25 --out '" + seq.string() + "'");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto report = json::parse(r.out);
    EXPECT_LT(report["residual"].get<double>(), 0.5);
    EXPECT_NEAR(report["f0_hz"].get<double>(), 5000.0, 250.0);

    const auto show = run("sequence show '" + seq.string() + "'");
    ASSERT_EQ(show.code, 0) << show.err;
    EXPECT_EQ(first_line(show.out), "t_s,delta_n");
    EXPECT_NE(show.out.find(",3\n"), std::string::npos);

    const auto pf = run("filter --piecewise '" + seq.string() + "' --prefix seq --out '" + dir_.string() + "'");
    ASSERT_EQ(pf.code, 0) << pf.err;
    const auto j = json::parse(slurp(dir_ / "seq_summary.json"));
    EXPECT_NEAR(j["f0_hz"].get<double>(), report["f0_hz"].get<double>(), 1.0);
}

TEST_F(Cli, InfeasibleSequenceNamesConstraint) {
    const auto r = run("sequence optimize --f0-hz 50000 --tw-s 400e-6 --max-n 1 --rsb-pi-s 14e-6 --bsb-pi-s 14e-6");
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("pi time"), std::string::npos) << r.err;
}

TEST_F(Cli, PredistortReports) {
    auto rep = [&](const std::string& extra) {
        const auto r = run("predistort --tw-s 250e-6 --k 2 --out '" + dir_.string() + "' " + extra);
        EXPECT_EQ(r.code, 0) << r.err;
        return json::parse(slurp(dir_ / "predistort_report.json"));
    };
    const auto identity = rep("");
    EXPECT_EQ(identity["c1_s"].get<double>(), 0.0);
    EXPECT_LT(identity["roundtrip_max_rel_error"].get<double>(), 1e-12);
    EXPECT_EQ(first_line(slurp(dir_ / "predistort.csv")), "t,omega_i,omega_q");
    // Single stage: R1 = C1 = 0 leaves c1 = R2 C2 and c2 = 0.
    const auto single = rep("--r2-ohm 1000 --c2-farad 1e-9");
    EXPECT_NEAR(single["c1_s"].get<double>(), 1e-6, 1e-18);
    EXPECT_EQ(single["c2_s2"].get<double>(), 0.0);
    EXPECT_LT(single["roundtrip_max_rel_error"].get<double>(), 1e-3);
    const auto two = rep("--r1-ohm 500 --c1-farad 2e-9 --r2-ohm 1000 --c2-farad 1e-9 --f-carrier-hz 1e6");
    EXPECT_LT(two["roundtrip_max_rel_error"].get<double>(), 1e-3);
}

TEST_F(Cli, SimulateIsDeterministic) {
    const auto cfg = write("scan.toml", kSmallScan);
    const auto a = dir_ / "a", b = dir_ / "b", c = dir_ / "c";
    ASSERT_EQ(run("simulate '" + cfg.string() + "' --out '" + a.string() + "'").code, 0);
    ASSERT_EQ(run("simulate '" + cfg.string() + "' --threads 3 --out '" + b.string() + "'").code, 0);
    ASSERT_EQ(run("simulate '" + cfg.string() + "' --seed 4 --out '" + c.string() + "'").code, 0);
    EXPECT_EQ(slurp(a / "scan.csv"), slurp(b / "scan.csv"));
    EXPECT_NE(slurp(a / "scan.csv"), slurp(c / "scan.csv"));
    EXPECT_EQ(first_line(slurp(a / "scan.csv")), "x_hz,signal_mean,signal_sigma,phi_sq,psd_rad2_per_hz,rbw_hz,flags");
    const auto j = json::parse(slurp(a / "scan.json"));
    EXPECT_EQ(j["rows"].size(), 3u);
    EXPECT_EQ(j["config"]["seed"].get<std::uint64_t>(), 3u);
    EXPECT_TRUE(j.contains("note"));
}

TEST_F(Cli, UnknownConfigKeysAreEnumerated) {
    std::string text = kSmallScan;
    text.replace(text.find("s0 = 1.0"), 8, "s_0 = 1.0");
    text += "\n[readout2]\neta = 0.3\n";
    const auto cfg = write("typo.toml", text);
    const auto r = run("simulate '" + cfg.string() + "' --out '" + dir_.string() + "'");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("config has 2 errors"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("filter.s_0"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("readout2"), std::string::npos) << r.err;
}

TEST_F(Cli, NumericalFailureExitCode) {
    // A two-level readout basis cannot hold the displaced state.
    std::string text = kSmallScan;
    text.replace(text.find("nbar_base = 0.055"), 17, "nbar_base = 0.055\nn_max = 2");
    text.replace(text.find("delta0_rad_s = 3000.0"), 21, "delta0_rad_s = 30000.0");
    const auto cfg = write("trunc.toml", text);
    const auto r = run("simulate '" + cfg.string() + "' --out '" + dir_.string() + "'");
    EXPECT_EQ(r.code, 4) << r.err;
}

TEST_F(Cli, DriveLimitIsInfeasible) {
    std::string text = kSmallScan;
    text += "\n[drive]\nlimit_rad_s = 1000.0\n";
    const auto cfg = write("drive.toml", text);
    const auto r = run("simulate '" + cfg.string() + "' --out '" + dir_.string() + "'");
    EXPECT_EQ(r.code, 3) << r.err;
    EXPECT_NE(r.err.find("drive_limit"), std::string::npos);
}

TEST_F(Cli, AmplificationPresetRunsAndRises) {
    const auto r = run("simulate '" OSCSPEC_PRESET_DIR "/fig3a.toml' --out '" + dir_.string() + "'");
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream csv(slurp(dir_ / "fig3a.csv"));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "s0,amplification_s2,signal_mean,signal_sigma,model_probability");
    double first = -1.0, peak = 0.0, last = 0.0;
    while (std::getline(csv, line)) {
        double v[5];
        ASSERT_EQ(std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf", &v[0], &v[1], &v[2], &v[3], &v[4]), 5);
        if (first < 0.0) first = v[4];
        peak = std::max(peak, v[4]);
        last = v[4];
    }
    // Model curve: rises from the thermal baseline, then turns over.
    EXPECT_GT(peak, 3.0 * first);
    EXPECT_LT(last, peak);
}

TEST(Presets, AllParse) {
    for (const char* name : {"fig2b", "fig3a", "fig3b", "fig4", "figS4"}) {
        const fs::path p = fs::path(OSCSPEC_PRESET_DIR) / (std::string(name) + ".toml");
        EXPECT_NO_THROW(oscspec::parse_config_file(p)) << name;
    }
    const auto fig4 = oscspec::parse_config_file(fs::path(OSCSPEC_PRESET_DIR) / "fig4.toml");
    ASSERT_TRUE(fig4.recipe.has_value());
    EXPECT_EQ(fig4.recipe->f0_hz.size(), 10u);
    EXPECT_EQ(fig4.recipe->f0_hz.front(), 500.0);
    EXPECT_EQ(fig4.recipe->f0_hz.back(), 5000.0);
}
