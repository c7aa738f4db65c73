#pragma once

// Command dispatch for the cosmoe tool. Every subcommand writes only to its
// declared output path; exit codes are 0 (ok), 1 (check failed), 2 (config/IO).

#include "json.hpp"

#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "cosmoe/calculus.hpp"
#include "cosmoe/experiments.hpp"
#include "cosmoe/metrics.hpp"
#include "cosmoe/report.hpp"
#include "cosmoe/verification.hpp"

namespace cosmoe {

enum class ExitCode : int { Ok = 0, CheckFailed = 1, ConfigError = 2 };

struct CliInvocation {
    std::string subcommand;
    std::string config_path; // optional; defaults apply when empty
    std::string out_path;
    std::string input_path;
    std::size_t jobs = 1;
    bool desk = false;
    bool timing = false;
    std::optional<std::uint64_t> seed;
};

inline std::size_t default_jobs()
{
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

// ---------------------------------------------------------------------------
// config

namespace detail {

inline std::size_t line_of_offset(const std::string& text, std::size_t offset)
{
    offset = std::min(offset, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

// Line of the first occurrence of "key" in the document (best effort).
inline std::size_t line_of_key(const std::string& text, const std::string& key)
{
    const auto pos = text.find('"' + key + '"');
    return pos == std::string::npos ? 0 : line_of_offset(text, pos);
}

inline Setting parse_setting(const std::string& s)
{
    for (Setting v : {Setting::ExactSpecified, Setting::OverSpecified, Setting::MisspecF1, Setting::MisspecF2})
        if (setting_name(v) == s)
            return v;
    throw ConfigurationError("unknown setting '" + s + "' (exact, over, misspec-f1, misspec-f2)");
}

inline RouterKind parse_router(const std::string& s)
{
    if (s == "linear")
        return RouterKind::Linear;
    if (s == "cosine")
        return RouterKind::Cosine;
    if (s == "perturbed")
        return RouterKind::PerturbedCosine;
    throw ConfigurationError("unknown router '" + s + "' (linear, cosine, perturbed)");
}

} // namespace detail

inline ExpertFamily parse_family(const std::string& s)
{
    if (s == "linear")
        return ExpertFamily::linear();
    if (s.rfind("poly", 0) == 0 && s.size() > 4) {
        const int p = std::stoi(s.substr(4));
        if (p < 2)
            throw ConfigurationError("polynomial degree must be >= 2");
        return ExpertFamily::polynomial(p);
    }
    for (Activation a : {Activation::ReLU, Activation::GELU, Activation::Tanh, Activation::Sigmoid})
        if (s == "ffn-" + activation_name(a))
            return ExpertFamily::ffn(a);
    throw ConfigurationError("unknown expert family '" + s + "'");
}

// JSON object with exactly the SweepConfig keys; every key is optional and
// unknown keys are rejected. Errors carry the offending line.
inline SweepConfig parse_sweep_config(const std::string& text)
{
    using nlohmann::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw IoError("line " + std::to_string(detail::line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1)) +
                          ": malformed JSON: " + e.what(),
                      detail::line_of_offset(text, e.byte));
    }
    if (!j.is_object())
        throw IoError("line 1: config must be a JSON object", 1);

    static const std::set<std::string> top_keys{"master_seed", "d",        "k_star",       "sigma2",
                                                "tau",         "settings", "routers",      "family",
                                                "sample_sizes", "replicates", "sgd",       "mc_samples"};
    static const std::set<std::string> sgd_keys{"epochs", "learning_rate", "batch_size", "init_scale", "seed"};

    SweepConfig cfg;
    std::string current;
    try {
        for (const auto& [key, value] : j.items()) {
            current = key;
            if (!top_keys.contains(key))
                throw ConfigurationError("unknown key '" + key + "'");
            if (key == "master_seed")
                cfg.master_seed = value.get<std::uint64_t>();
            else if (key == "d")
                cfg.d = value.get<std::size_t>();
            else if (key == "k_star")
                cfg.k_star = value.get<std::size_t>();
            else if (key == "sigma2")
                cfg.sigma2 = value.get<double>();
            else if (key == "tau")
                cfg.tau = value.get<double>();
            else if (key == "settings") {
                cfg.settings.clear();
                for (const auto& s : value)
                    cfg.settings.push_back(detail::parse_setting(s.get<std::string>()));
            } else if (key == "routers") {
                cfg.routers.clear();
                for (const auto& s : value)
                    cfg.routers.push_back(detail::parse_router(s.get<std::string>()));
            } else if (key == "family")
                cfg.family = parse_family(value.get<std::string>());
            else if (key == "sample_sizes")
                cfg.sample_sizes = value.get<std::vector<std::size_t>>();
            else if (key == "replicates")
                cfg.replicates = value.get<std::size_t>();
            else if (key == "mc_samples")
                cfg.mc_samples = value.get<std::size_t>();
            else if (key == "sgd") {
                if (!value.is_object())
                    throw ConfigurationError("'sgd' must be an object");
                for (const auto& [sk, sv] : value.items()) {
                    current = sk;
                    if (!sgd_keys.contains(sk))
                        throw ConfigurationError("unknown key 'sgd." + sk + "'");
                    if (sk == "epochs")
                        cfg.sgd.epochs = sv.get<int>();
                    else if (sk == "learning_rate")
                        cfg.sgd.learning_rate = sv.get<double>();
                    else if (sk == "batch_size")
                        cfg.sgd.batch_size = sv.get<std::size_t>();
                    else if (sk == "init_scale")
                        cfg.sgd.init_scale = sv.get<double>();
                    else if (sk == "seed")
                        cfg.sgd.seed = sv.get<std::uint64_t>();
                }
            }
        }
    } catch (const json::exception& e) {
        const std::size_t line = detail::line_of_key(text, current);
        throw IoError("line " + std::to_string(line) + ": bad value for '" + current + "': " + e.what(), line);
    } catch (const ConfigurationError& e) {
        const std::size_t line = detail::line_of_key(text, current);
        throw IoError("line " + std::to_string(line) + ": " + e.what(), line);
    }
    try {
        cfg.validate();
    } catch (const std::exception& e) {
        throw IoError(std::string("line 1: invalid config: ") + e.what(), 1);
    }
    return cfg;
}

inline SweepConfig load_sweep_config(const CliInvocation& inv)
{
    SweepConfig cfg = inv.config_path.empty() ? SweepConfig{} : parse_sweep_config(read_text_file(inv.config_path));
    if (inv.desk)
        cfg.apply_desk_mode();
    if (inv.seed)
        cfg.master_seed = *inv.seed;
    cfg.validate();
    return cfg;
}

// --out may name a file or a directory; directories get `default_name`.
inline std::filesystem::path resolve_output(const std::string& out, const std::string& default_name)
{
    namespace fs = std::filesystem;
    if (out.empty())
        return default_name;
    const fs::path p(out);
    if (fs::is_directory(p) || out.back() == '/')
        return p / default_name;
    return p;
}

// ---------------------------------------------------------------------------
// subcommands

namespace detail {

inline int cmd_verify(std::ostream& out)
{
    const std::vector<CheckOutcome> checks{check_gradients(100, 1), check_pde(1000, 2), check_homogeneity(1000, 3)};
    bool ok = true;
    for (const CheckOutcome& c : checks) {
        out << std::left << std::setw(12) << c.name << (c.passed ? "PASS" : "FAIL") << "  cases=" << c.cases << "  "
            << c.detail << '\n';
        ok = ok && c.passed;
    }
    return static_cast<int>(ok ? ExitCode::Ok : ExitCode::CheckFailed);
}

inline int cmd_identifiability(const CliInvocation& inv, std::ostream& out)
{
    struct Case {
        std::string label;
        ExpertFamily family;
        int order;
        bool freeze_slope;
    };
    const std::vector<Case> cases{
        {"ffn-relu", ExpertFamily::ffn(Activation::ReLU), 2, false},
        {"ffn-tanh", ExpertFamily::ffn(Activation::Tanh), 2, false},
        {"ffn-gelu", ExpertFamily::ffn(Activation::GELU), 2, false},
        {"poly2", ExpertFamily::polynomial(2), 2, false},
        {"linear", ExpertFamily::linear(), 2, false},
        {"ffn-relu", ExpertFamily::ffn(Activation::ReLU), 1, false},
        {"ffn-tanh", ExpertFamily::ffn(Activation::Tanh), 1, false},
        {"linear", ExpertFamily::linear(), 1, false},
        {"constant", ExpertFamily::linear(), 1, true},
    };
    const RouterSpec spec = RouterSpec::perturbed(0.1, 0.1);
    const std::uint64_t seed = inv.seed.value_or(0);
    out << "family      order  rows  cols  min_sv        max_sv        deficient\n";
    for (const Case& c : cases) {
        IdentifiabilityOptions opt;
        opt.freeze_slope = c.freeze_slope;
        const IdentifiabilityReport r = identifiability_check(spec, c.family, 2, c.order, seed, opt);
        out << std::left << std::setw(12) << c.label << std::setw(7) << r.order << std::setw(6) << r.matrix_rows
            << std::setw(6) << r.matrix_cols << std::setw(14) << sci(r.min_singular_value) << std::setw(14)
            << sci(r.max_singular_value) << (r.deficient ? "yes" : "no") << '\n';
    }
    return 0;
}

inline int cmd_sweep(const CliInvocation& inv, std::ostream& out)
{
    const SweepConfig cfg = load_sweep_config(inv);
    const auto path = resolve_output(inv.out_path, "results.csv");
    const auto results = run_sweep(cfg, {inv.jobs, inv.timing});
    write_results(results, path.string());
    std::size_t failed = 0;
    for (const TrialResult& r : results)
        failed += r.failed() ? 1 : 0;
    out << "wrote " << results.size() << " trials (" << failed << " failed) to " << path.string() << '\n';
    return 0;
}

inline std::string input_or_default(const CliInvocation& inv)
{
    return inv.input_path.empty() ? "results.csv" : inv.input_path;
}

inline int cmd_slopes(const CliInvocation& inv, std::ostream& out)
{
    const auto results = read_results(input_or_default(inv));
    const auto fits = fit_slopes(summarize(results));
    const auto path = resolve_output(inv.out_path, "slopes.json");
    write_text_file(path.string(), slopes_to_json(fits));
    for (const auto& [key, fit] : fits)
        out << key.label() << "  slope " << std::fixed << std::setprecision(3) << fit.slope << "  r2 " << fit.r_squared
            << '\n';
    out << std::defaultfloat << "wrote " << path.string() << '\n';
    return 0;
}

inline int cmd_plot(const CliInvocation& inv, std::ostream& out)
{
    namespace fs = std::filesystem;
    const auto results = read_results(input_or_default(inv));
    const auto series = summarize(results);
    const auto fits = fit_slopes(series);
    const fs::path dir = inv.out_path.empty() ? fs::path(".") : fs::path(inv.out_path);
    fs::create_directories(dir);
    std::set<std::string> settings;
    for (const auto& [key, pts] : series)
        settings.insert(key.setting);
    for (const std::string& setting : settings) {
        std::map<SeriesKey, std::vector<SeriesPoint>> sub;
        std::map<SeriesKey, RateFit> subfits;
        for (const auto& [key, pts] : series)
            if (key.setting == setting) {
                sub[key] = pts;
                if (auto it = fits.find(key); it != fits.end())
                    subfits[key] = it->second;
            }
        const fs::path path = dir / (setting + ".svg");
        write_text_file(path.string(), render_plot(setting, sub, subfits));
        out << "wrote " << path.string() << '\n';
    }
    return 0;
}

inline int cmd_diagnose_ratio(const CliInvocation& inv, std::ostream& out)
{
    const SweepConfig cfg = load_sweep_config(inv);
    const MixingMeasure truth = sample_true_measure(cfg.d, cfg.k_star, truth_seed(cfg.master_seed));
    const std::vector<std::size_t> ns{10, 100, 1000};
    for (RouterSpec spec : {RouterSpec::cosine(), RouterSpec::perturbed(cfg.tau, cfg.tau)}) {
        for (SequenceSetting setting : {SequenceSetting::Exact, SequenceSetting::Over}) {
            out << spec.name() << ' ' << (setting == SequenceSetting::Exact ? "exact" : "over") << " (r = 1)\n";
            out << "  n        L1r1          distance      ratio\n";
            const auto rows = ratio_diagnostic(spec, cfg.family, truth, ns, 1.0, cfg.mc_samples,
                                               derive_seed(cfg.master_seed, 77), setting);
            for (const RatioRow& r : rows)
                out << "  " << std::left << std::setw(9) << r.n << std::setw(14) << sci(r.loss) << std::setw(14)
                    << sci(r.distance) << sci(r.ratio) << '\n';
        }
    }
    return 0;
}

} // namespace detail

inline int run_command(const CliInvocation& inv, std::ostream& out, std::ostream& err)
{
    try {
        if (inv.jobs < 1)
            throw ConfigurationError("--jobs must be >= 1");
        if (inv.subcommand == "verify")
            return detail::cmd_verify(out);
        if (inv.subcommand == "identifiability")
            return detail::cmd_identifiability(inv, out);
        if (inv.subcommand == "sweep")
            return detail::cmd_sweep(inv, out);
        if (inv.subcommand == "slopes")
            return detail::cmd_slopes(inv, out);
        if (inv.subcommand == "plot")
            return detail::cmd_plot(inv, out);
        if (inv.subcommand == "diagnose-ratio")
            return detail::cmd_diagnose_ratio(inv, out);
        err << "error: unknown subcommand '" << inv.subcommand << "'\n";
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
    } catch (const std::invalid_argument& e) {
        err << "error: line 0: " << e.what() << '\n';
    }
    return static_cast<int>(ExitCode::ConfigError);
}

} // namespace cosmoe
