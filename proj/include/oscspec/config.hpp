// config.hpp
//
// TOML experiment files. Every physical key carries its unit in the name;
// unknown keys and type mismatches are collected with their full key path
// and reported together in one ConfigError.
#pragma once

#include "oscspec/analyzer.hpp"
#include "oscspec/errors.hpp"
#include "oscspec/fock.hpp"
#include "oscspec/noise.hpp"

#include <json.hpp>
#include <toml.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace oscspec {

enum class ScanMode { noise_frequency, filters, amplification };

inline const char* to_string(ScanMode m) {
    switch (m) {
        case ScanMode::noise_frequency: return "noise_frequency";
        case ScanMode::filters: return "filters";
        case ScanMode::amplification: return "amplification";
    }
    return "?";
}

/// Parameters for building a sequence with the optimizer. Exactly one of
/// t_w_s and t_w_cycles (t_w = cycles / f0) is set.
struct SequenceRecipe {
    std::vector<double> f0_hz;
    std::optional<double> t_w_s;
    std::optional<double> t_w_cycles;
    double amplitude = 1.0;
    unsigned max_n = 1;
    RabiRates rabi;

    SequenceTarget target(double f0) const {
        SequenceTarget t;
        t.f0 = f0;
        t.t_w = t_w_s ? *t_w_s : *t_w_cycles / f0;
        t.amplitude = amplitude;
        t.max_n = max_n;
        t.rabi = rabi;
        return t;
    }
};

struct RunSpec {
    ScanMode mode = ScanMode::noise_frequency;
    ExperimentConfig experiment;
    std::vector<double> f_noise_hz;
    std::vector<double> delta0_rad_s;  // optional per-row amplitudes
    std::vector<int> k;
    std::vector<double> s0;
    std::optional<SequenceRecipe> recipe;  // fock method without a sequence file
    nlohmann::json echo;                   // resolved settings that are not part of ExperimentConfig
};

namespace detail {

class TableReader {
public:
    TableReader(const toml::table& table, std::string path, std::vector<std::string>& errors)
        : table_(table), path_(std::move(path)), errors_(errors) {}

    std::string key_path(std::string_view key) const {
        return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
    }

    bool has(std::string_view key) {
        seen_.insert(std::string(key));
        return table_.contains(key);
    }

    std::optional<double> number(std::string_view key) {
        if (!has(key)) return std::nullopt;
        const auto* node = table_.get(key);
        if (auto v = node->as_floating_point()) return v->get();
        if (auto v = node->as_integer()) return static_cast<double>(v->get());
        errors_.push_back(key_path(key) + ": expected a number");
        return std::nullopt;
    }

    std::optional<std::int64_t> integer(std::string_view key) {
        if (!has(key)) return std::nullopt;
        if (auto v = table_.get(key)->as_integer()) return v->get();
        errors_.push_back(key_path(key) + ": expected an integer");
        return std::nullopt;
    }

    std::optional<bool> boolean(std::string_view key) {
        if (!has(key)) return std::nullopt;
        if (auto v = table_.get(key)->as_boolean()) return v->get();
        errors_.push_back(key_path(key) + ": expected true or false");
        return std::nullopt;
    }

    std::optional<std::string> string(std::string_view key) {
        if (!has(key)) return std::nullopt;
        if (auto v = table_.get(key)->as_string()) return v->get();
        errors_.push_back(key_path(key) + ": expected a string");
        return std::nullopt;
    }

    const toml::table* table(std::string_view key) {
        if (!has(key)) return nullptr;
        if (auto t = table_.get(key)->as_table()) return t;
        errors_.push_back(key_path(key) + ": expected a table");
        return nullptr;
    }

    const toml::array* array(std::string_view key) {
        if (!has(key)) return nullptr;
        if (auto a = table_.get(key)->as_array()) return a;
        errors_.push_back(key_path(key) + ": expected an array");
        return nullptr;
    }

    std::vector<double> numbers(std::string_view key) {
        std::vector<double> out;
        const auto* a = array(key);
        if (!a) return out;
        for (std::size_t i = 0; i < a->size(); ++i) {
            const auto& node = (*a)[i];
            if (auto v = node.as_floating_point()) out.push_back(v->get());
            else if (auto w = node.as_integer()) out.push_back(static_cast<double>(w->get()));
            else errors_.push_back(key_path(key) + "[" + std::to_string(i) + "]: expected a number");
        }
        return out;
    }

    std::vector<std::int64_t> integers(std::string_view key) {
        std::vector<std::int64_t> out;
        const auto* a = array(key);
        if (!a) return out;
        for (std::size_t i = 0; i < a->size(); ++i) {
            if (auto v = (*a)[i].as_integer()) out.push_back(v->get());
            else errors_.push_back(key_path(key) + "[" + std::to_string(i) + "]: expected an integer");
        }
        return out;
    }

    void error(std::string_view key, const std::string& msg) { errors_.push_back(key_path(key) + ": " + msg); }

    /// Reports every key that was never looked up.
    void finish() {
        for (const auto& [k, v] : table_)
            if (!seen_.count(std::string(k.str()))) errors_.push_back(key_path(k.str()) + ": unknown key");
    }

private:
    const toml::table& table_;
    std::string path_;
    std::vector<std::string>& errors_;
    std::set<std::string> seen_;
};

inline NoiseModel read_noise(const toml::table& t, const std::string& path, std::vector<std::string>& errors) {
    TableReader r(t, path, errors);
    const auto type = r.string("type");
    NoiseModel out = NoiseModel::none();
    if (!type) {
        errors.push_back(r.key_path("type") + ": missing (sinusoidal | white | power_law | composite | none)");
    } else if (*type == "none") {
    } else if (*type == "sinusoidal") {
        SinusoidalNoise s;
        s.delta0_rad_s = r.number("delta0_rad_s").value_or(0.0);
        s.f_noise_hz = r.number("f_noise_hz").value_or(0.0);
        s.phase_rad = r.number("phase_rad");
        out = s;
    } else if (*type == "white") {
        WhiteBandNoise w;
        if (auto v = r.number("level_rad2_per_hz")) w.level = *v;
        else r.error("level_rad2_per_hz", "missing");
        w.f_min_hz = r.number("f_min_hz").value_or(0.0);
        if (auto v = r.number("f_max_hz")) w.f_max_hz = *v;
        else r.error("f_max_hz", "missing");
        out = w;
    } else if (*type == "power_law") {
        PowerLawNoise p;
        if (auto v = r.number("amplitude_rad2_per_hz")) p.amplitude = *v;
        else r.error("amplitude_rad2_per_hz", "missing");
        p.exponent = r.number("exponent").value_or(-1.0);
        if (auto v = r.number("f_min_hz")) p.f_min_hz = *v;
        else r.error("f_min_hz", "missing");
        if (auto v = r.number("f_max_hz")) p.f_max_hz = *v;
        else r.error("f_max_hz", "missing");
        out = p;
    } else if (*type == "composite") {
        CompositeNoise c;
        if (const auto* parts = r.array("parts")) {
            for (std::size_t i = 0; i < parts->size(); ++i) {
                const std::string sub = r.key_path("parts") + "[" + std::to_string(i) + "]";
                if (const auto* pt = (*parts)[i].as_table()) c.parts.push_back(read_noise(*pt, sub, errors));
                else errors.push_back(sub + ": expected a table");
            }
        }
        out = c;
    } else {
        r.error("type", "unknown noise type '" + *type + "'");
    }
    r.finish();
    if (errors.empty()) {
        try {
            validate(out);
        } catch (const std::exception& e) {
            errors.push_back(path + ": " + e.what());
        }
    }
    return out;
}

inline RabiRates read_rabi(TableReader& r) {
    // Pi times on |up,0>-|down,1> (sidebands) and |up,n>-|aux,n> (carrier); 0 means instantaneous.
    RabiRates rates;
    auto rate = [&](std::string_view key) {
        const double t = r.number(key).value_or(0.0);
        if (t < 0.0) r.error(key, "must be >= 0");
        return t > 0.0 ? kPi / t : 0.0;
    };
    rates.rsb = rate("rsb_pi_time_s");
    rates.bsb = rate("bsb_pi_time_s");
    rates.mw = rate("mw_pi_time_s");
    rates.eta = r.number("eta").value_or(rates.eta);
    return rates;
}

}  // namespace detail

/// Parses a config document. `base_dir` resolves relative file references.
inline RunSpec parse_config(const toml::table& root, const std::filesystem::path& base_dir = {}) {
    std::vector<std::string> errors;
    detail::TableReader top(root, "", errors);
    RunSpec spec;
    auto& cfg = spec.experiment;

    if (auto m = top.string("mode")) {
        if (*m == "noise_frequency") spec.mode = ScanMode::noise_frequency;
        else if (*m == "filters") spec.mode = ScanMode::filters;
        else if (*m == "amplification") spec.mode = ScanMode::amplification;
        else top.error("mode", "expected noise_frequency | filters | amplification");
    } else {
        top.error("mode", "missing");
    }
    if (auto m = top.string("method")) {
        if (*m == "coherent") cfg.method = Method::coherent;
        else if (*m == "fock") cfg.method = Method::fock;
        else top.error("method", "expected coherent | fock");
    }
    if (auto v = top.integer("seed")) {
        if (*v < 0) top.error("seed", "must be >= 0");
        else cfg.seed = static_cast<std::uint64_t>(*v);
    }
    if (auto v = top.integer("repetitions")) {
        if (*v < 1) top.error("repetitions", "must be >= 1");
        else cfg.repetitions = static_cast<std::size_t>(*v);
    }
    if (auto v = top.integer("threads")) {
        if (*v < 0) top.error("threads", "must be >= 0");
        else cfg.threads = static_cast<unsigned>(*v);
    }
    if (auto v = top.boolean("fock_numeric")) cfg.fock_numeric = *v;

    if (const auto* t = top.table("filter")) {
        detail::TableReader r(*t, "filter", errors);
        if (auto v = r.number("t_w_s")) cfg.filter.t_w = *v;
        if (auto v = r.integer("k")) cfg.filter.k = static_cast<int>(*v);
        if (auto v = r.number("s0")) cfg.filter.s0 = *v;
        r.finish();
    }

    if (const auto* t = top.table("noise")) {
        cfg.noise = detail::read_noise(*t, "noise", errors);
    }

    if (const auto* t = top.table("readout")) {
        detail::TableReader r(*t, "readout", errors);
        if (auto v = r.number("eta")) cfg.readout.eta = *v;
        if (auto v = r.integer("n_max")) cfg.readout.n_max = static_cast<unsigned>(std::max<std::int64_t>(*v, 0));
        if (auto v = r.number("nbar_base")) cfg.nbar_base = *v;
        if (auto v = r.number("heating_rate_per_s")) cfg.heating_rate = *v;
        cfg.sigma_p = r.number("sigma_p");
        r.finish();
    }

    if (const auto* t = top.table("drive")) {
        detail::TableReader r(*t, "drive", errors);
        cfg.drive_limit = r.number("limit_rad_s");
        r.finish();
    }

    if (const auto* t = top.table("sequence")) {
        detail::TableReader r(*t, "sequence", errors);
        const auto file = r.string("file");
        const auto* opt = r.table("optimize");
        if (file && opt) r.error("file", "give either file or optimize, not both");
        if (file) {
            const auto p = std::filesystem::path(*file).is_absolute() ? std::filesystem::path(*file) : base_dir / *file;
            std::ifstream in(p);
            if (!in) {
                r.error("file", "cannot open '" + p.string() + "'");
            } else {
                try {
                    cfg.sequence = sequence_from_json(nlohmann::json::parse(in));
                } catch (const std::exception& e) {
                    r.error("file", e.what());
                }
            }
            spec.echo["sequence_file"] = p.string();
        }
        if (opt) {
            detail::TableReader o(*opt, "sequence.optimize", errors);
            SequenceRecipe rec;
            if (const auto* a = opt->get("f0_hz"); a && a->is_array()) rec.f0_hz = o.numbers("f0_hz");
            else if (auto v = o.number("f0_hz")) rec.f0_hz = {*v};
            else o.error("f0_hz", "missing");
            rec.t_w_s = o.number("t_w_s");
            rec.t_w_cycles = o.number("t_w_cycles");
            if (rec.t_w_s.has_value() == rec.t_w_cycles.has_value()) o.error("t_w_s", "set exactly one of t_w_s and t_w_cycles");
            rec.amplitude = o.number("amplitude").value_or(1.0);
            if (auto v = o.integer("max_n")) rec.max_n = static_cast<unsigned>(std::max<std::int64_t>(*v, 0));
            rec.rabi = detail::read_rabi(o);
            o.finish();
            spec.recipe = rec;
        }
        r.finish();
    }

    if (const auto* t = top.table("scan")) {
        detail::TableReader r(*t, "scan", errors);
        spec.f_noise_hz = r.numbers("f_noise_hz");
        if (r.has("f_start_hz") || r.has("f_stop_hz") || r.has("f_points")) {
            if (!spec.f_noise_hz.empty()) r.error("f_start_hz", "give either f_noise_hz or a start/stop/points range");
            const auto a = r.number("f_start_hz"), b = r.number("f_stop_hz");
            const auto n = r.integer("f_points");
            if (!a || !b || !n || *n < 2) {
                r.error("f_points", "a range needs f_start_hz, f_stop_hz and f_points >= 2");
            } else {
                for (std::int64_t i = 0; i < *n; ++i)
                    spec.f_noise_hz.push_back(*a + (*b - *a) * static_cast<double>(i) / static_cast<double>(*n - 1));
            }
        }
        spec.delta0_rad_s = r.numbers("delta0_rad_s");
        for (auto v : r.integers("k")) spec.k.push_back(static_cast<int>(v));
        spec.s0 = r.numbers("s0");
        r.finish();
    }
    top.finish();

    // Cross-field checks, only when the fields themselves parsed.
    if (errors.empty()) {
        if (cfg.method == Method::fock && !cfg.sequence && !spec.recipe)
            errors.push_back("sequence: fock method needs sequence.file or sequence.optimize");
        if (cfg.method == Method::coherent && (cfg.sequence || spec.recipe))
            errors.push_back("sequence: only used with method = \"fock\"");
        switch (spec.mode) {
            case ScanMode::noise_frequency:
                if (spec.f_noise_hz.empty()) errors.push_back("scan.f_noise_hz: required for mode noise_frequency");
                if (!std::holds_alternative<SinusoidalNoise>(cfg.noise.kind))
                    errors.push_back("noise.type: mode noise_frequency needs sinusoidal noise");
                if (!spec.delta0_rad_s.empty() && spec.delta0_rad_s.size() != spec.f_noise_hz.size())
                    errors.push_back("scan.delta0_rad_s: needs one entry per frequency");
                break;
            case ScanMode::filters:
                if (spec.k.empty()) errors.push_back("scan.k: required for mode filters");
                if (cfg.method != Method::coherent) errors.push_back("method: mode filters needs the coherent method");
                if (!spec.s0.empty() && spec.s0.size() != spec.k.size())
                    errors.push_back("scan.s0: needs one entry per k");
                break;
            case ScanMode::amplification:
                if (spec.s0.empty()) errors.push_back("scan.s0: required for mode amplification");
                if (cfg.method != Method::coherent) errors.push_back("method: mode amplification needs the coherent method");
                if (!std::holds_alternative<SinusoidalNoise>(cfg.noise.kind))
                    errors.push_back("noise.type: mode amplification needs sinusoidal noise");
                break;
        }
        if (spec.recipe && spec.recipe->f0_hz.size() > 1 && spec.mode != ScanMode::noise_frequency)
            errors.push_back("sequence.optimize.f0_hz: several sequences only with mode noise_frequency");
    }
    if (errors.empty() && cfg.method == Method::coherent) {
        try {
            cfg.filter.validate();
            cfg.readout.validate();
        } catch (const std::exception& e) {
            errors.push_back(std::string("filter/readout: ") + e.what());
        }
    }

    if (!errors.empty()) {
        std::ostringstream os;
        os << "config has " << errors.size() << " error" << (errors.size() > 1 ? "s" : "") << ":";
        for (const auto& e : errors) os << "\n  " << e;
        throw ConfigError(os.str());
    }

    spec.echo["mode"] = to_string(spec.mode);
    if (!spec.f_noise_hz.empty()) spec.echo["scan"]["f_noise_hz"] = spec.f_noise_hz;
    if (!spec.delta0_rad_s.empty()) spec.echo["scan"]["delta0_rad_s"] = spec.delta0_rad_s;
    if (!spec.k.empty()) spec.echo["scan"]["k"] = spec.k;
    if (!spec.s0.empty()) spec.echo["scan"]["s0"] = spec.s0;
    if (spec.recipe) {
        auto& j = spec.echo["sequence_optimize"];
        j["f0_hz"] = spec.recipe->f0_hz;
        if (spec.recipe->t_w_s) j["t_w_s"] = *spec.recipe->t_w_s;
        if (spec.recipe->t_w_cycles) j["t_w_cycles"] = *spec.recipe->t_w_cycles;
        j["amplitude"] = spec.recipe->amplitude;
        j["max_n"] = spec.recipe->max_n;
        j["rabi"] = {{"rsb_rad_s", spec.recipe->rabi.rsb},
                     {"bsb_rad_s", spec.recipe->rabi.bsb},
                     {"mw_rad_s", spec.recipe->rabi.mw},
                     {"eta", spec.recipe->rabi.eta}};
    }
    return spec;
}

inline RunSpec parse_config_string(std::string_view text, const std::filesystem::path& base_dir = {}) {
    try {
        return parse_config(toml::parse(text), base_dir);
    } catch (const toml::parse_error& e) {
        std::ostringstream os;
        os << "config: " << e.description() << " at line " << e.source().begin.line << ", column "
           << e.source().begin.column;
        throw ConfigError(os.str());
    }
}

inline RunSpec parse_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_string(buf.str(), path.parent_path());
}

}  // namespace oscspec
