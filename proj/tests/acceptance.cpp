// Acceptance suite: one [PASS]/[FAIL] line per criterion. Exit status is the
// number of failed criteria (capped at 1), so ctest reports red when any fail.
//
// Artifacts (results, slopes, plots) land in ./acceptance_artifacts.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cosmoe/cosmoe.hpp"

using namespace cosmoe;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
    int id;
    bool passed;
    std::string summary;
};

std::vector<Verdict> g_verdicts;

void report(int id, bool passed, const std::string& summary)
{
    g_verdicts.push_back({id, passed, summary});
    std::cout << (passed ? "[PASS]" : "[FAIL]") << " criterion " << id << ": " << summary << std::endl;
}

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fixed(double v, int digits = 3)
{
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

bool in_band(double v, double lo, double hi) { return v >= lo && v <= hi; }

const std::filesystem::path kArtifacts = "acceptance_artifacts";

void save_artifacts(const std::string& stem, const std::vector<TrialResult>& results,
                    const std::map<SeriesKey, RateFit>& fits)
{
    std::filesystem::create_directories(kArtifacts);
    write_results(results, (kArtifacts / (stem + "_results.csv")).string());
    write_text_file((kArtifacts / (stem + "_slopes.json")).string(), slopes_to_json(fits));
    const auto series = summarize(results);
    std::set<std::string> settings;
    for (const auto& [key, pts] : series)
        settings.insert(key.setting);
    for (const std::string& s : settings) {
        std::map<SeriesKey, std::vector<SeriesPoint>> sub;
        std::map<SeriesKey, RateFit> subfits;
        for (const auto& [key, pts] : series)
            if (key.setting == s) {
                sub[key] = pts;
                if (auto it = fits.find(key); it != fits.end())
                    subfits[key] = it->second;
            }
        write_text_file((kArtifacts / (stem + "_" + s + ".svg")).string(), render_plot(s, sub, subfits));
    }
}

void print_series(const std::vector<TrialResult>& results)
{
    for (const auto& [key, pts] : summarize(results)) {
        std::cout << "    " << key.label() << " means:";
        for (const SeriesPoint& p : pts)
            std::cout << ' ' << p.n << '=' << sci(p.mean);
        std::cout << '\n';
    }
}

// Slope of a series, or NaN (and a note) if it cannot be fitted.
double slope_of(const std::map<SeriesKey, RateFit>& fits, const std::string& setting, const std::string& router,
                const std::string& loss)
{
    const auto it = fits.find(SeriesKey{setting, router, loss});
    if (it == fits.end()) {
        std::cout << "    no fit for " << setting << "/" << router << "/" << loss << '\n';
        return std::numeric_limits<double>::quiet_NaN();
    }
    return it->second.slope;
}

std::size_t failed_trials(const std::vector<TrialResult>& results)
{
    return static_cast<std::size_t>(std::count_if(results.begin(), results.end(), [](const TrialResult& r) { return r.failed(); }));
}

SweepConfig desk_config(std::vector<Setting> settings)
{
    SweepConfig cfg;
    cfg.master_seed = 0;
    cfg.apply_desk_mode();
    cfg.settings = std::move(settings);
    return cfg;
}

std::size_t jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

// ---------------------------------------------------------------------------

void criterion_1()
{
    const auto t0 = Clock::now();
    const CheckOutcome c = check_gradients(100, 20240501, 1e-6, 1e-8);
    const double secs = seconds_since(t0);
    const bool ok = c.passed && c.cases == 100 && secs <= 60.0;
    report(1, ok,
           "gradients vs central differences, " + std::to_string(c.cases) + " configs, worst rel error among coordinates above 1e-8 abs " + sci(c.worst) +
               ", " + fixed(secs, 1) + " s (limit 60 s)" + (c.passed ? "" : "; " + c.detail));
}

void criterion_2()
{
    const CheckOutcome c = check_pde(1000, 20240502, 1e-10, 1e-4);
    report(2, c.passed && c.cases == 1000,
           "cosine |pde| <= 1e-10 |H| and perturbed |pde| >= 1e-4 on 1000 inputs; worst cosine rel " + sci(c.worst) +
               "; " + c.detail);
}

void criterion_3()
{
    const CheckOutcome c = check_homogeneity(1000, 20240503, 1e-10, 1e-4);
    report(3, c.passed && c.cases == 1000, "cosine homogeneity on 1000 inputs; " + c.detail);
}

void criterion_4()
{
    struct Sub {
        std::string label;
        ExpertFamily family;
        int order;
        bool freeze_slope;
        bool want_deficient;
    };
    const std::vector<Sub> subs{
        {"ffn-relu order 2", ExpertFamily::ffn(Activation::ReLU), 2, false, false},
        {"ffn-tanh order 2", ExpertFamily::ffn(Activation::Tanh), 2, false, false},
        {"poly2 order 2", ExpertFamily::polynomial(2), 2, false, false},
        {"linear order 2", ExpertFamily::linear(), 2, false, true},
        {"constant order 1", ExpertFamily::linear(), 1, true, true},
        {"linear order 1", ExpertFamily::linear(), 1, false, false},
    };
    const RouterSpec spec = RouterSpec::perturbed(0.1, 0.1);
    bool all = true;
    std::string failed;
    for (const Sub& s : subs) {
        IdentifiabilityOptions opt;
        opt.freeze_slope = s.freeze_slope;
        const IdentifiabilityReport r = identifiability_check(spec, s.family, 2, s.order, 0, opt);
        const bool ok = r.deficient == s.want_deficient;
        std::cout << "    " << (ok ? "ok  " : "BAD ") << s.label << ": deficient=" << (r.deficient ? "yes" : "no")
                  << " (want " << (s.want_deficient ? "yes" : "no") << "), sigma_min/sigma_max "
                  << sci(r.max_singular_value > 0 ? r.min_singular_value / r.max_singular_value : 0.0) << ", "
                  << r.matrix_rows << "x" << r.matrix_cols << '\n';
        if (!ok)
            failed += (failed.empty() ? "" : ", ") + s.label;
        all = all && ok;
    }
    report(4, all, all ? "identifiability examples all match" : "mismatched: " + failed);
}

// Criteria 5 and 6 share one full desk sweep; criterion 9 reruns it.
std::vector<TrialResult> g_desk_results;
double g_desk_seconds = 0.0;

void run_desk_sweep()
{
    const auto t0 = Clock::now();
    g_desk_results = run_sweep(desk_config({Setting::ExactSpecified, Setting::OverSpecified}), {jobs(), false});
    g_desk_seconds = seconds_since(t0);
    std::cout << "    desk sweep (exact + over): " << g_desk_results.size() << " trials, " << failed_trials(g_desk_results)
              << " failed, " << fixed(g_desk_seconds, 1) << " s\n";
    print_series(g_desk_results);
}

void criterion_5()
{
    std::vector<TrialResult> exact;
    for (const TrialResult& r : g_desk_results)
        if (r.setting == "exact")
            exact.push_back(r);
    const auto fits = fit_slopes(summarize(exact));
    save_artifacts("exact", exact, fits);
    const double p = slope_of(fits, "exact", "perturbed", "L3");
    const double c = slope_of(fits, "exact", "cosine", "L3");
    const double secs = g_desk_seconds / 2.0;
    const bool p_ok = in_band(p, -0.65, -0.35);
    const bool c_ok = in_band(c, -0.30, 0.05);
    const bool sep_ok = p <= c - 0.15;
    report(5, p_ok && c_ok && sep_ok && failed_trials(exact) == 0 && secs <= 900.0,
           "exact-specified slopes: perturbed " + fixed(p) + " (band [-0.65,-0.35]) " + (p_ok ? "in" : "OUT") +
               ", cosine " + fixed(c) + " (band [-0.30,0.05]) " + (c_ok ? "in" : "OUT") + ", separation " +
               fixed(p - c) + " (need <= -0.15) " + (sep_ok ? "ok" : "NOT MET") + ", ~" + fixed(secs, 0) + " s");
}

void criterion_6()
{
    std::vector<TrialResult> over;
    for (const TrialResult& r : g_desk_results)
        if (r.setting == "over")
            over.push_back(r);
    const auto fits = fit_slopes(summarize(over));
    save_artifacts("over", over, fits);
    const double p = slope_of(fits, "over", "perturbed", "L2");
    const double c = slope_of(fits, "over", "cosine", "L2");
    const double secs = g_desk_seconds / 2.0;
    const bool p_ok = in_band(p, -0.65, -0.30);
    const bool c_ok = in_band(c, -0.25, 0.05);
    report(6, p_ok && c_ok && failed_trials(over) == 0 && secs <= 900.0,
           "over-specified (k = 9) L2 slopes: perturbed " + fixed(p) + " (band [-0.65,-0.30]) " + (p_ok ? "in" : "OUT") +
               ", cosine " + fixed(c) + " (band [-0.25,0.05]) " + (c_ok ? "in" : "OUT") + ", ~" + fixed(secs, 0) + " s");
}

void criterion_7()
{
    const auto t0 = Clock::now();
    const auto results = run_sweep(desk_config({Setting::MisspecF1, Setting::MisspecF2}), {jobs(), false});
    const double secs = seconds_since(t0);
    std::cout << "    misspecified sweep: " << results.size() << " trials, " << failed_trials(results) << " failed, "
              << fixed(secs, 1) << " s\n";
    print_series(results);
    const auto fits = fit_slopes(summarize(results));
    save_artifacts("misspec", results, fits);
    const double f1c = slope_of(fits, "misspec-f1", "cosine", "L3");
    const double f1p = slope_of(fits, "misspec-f1", "perturbed", "L3");
    const double f2l = slope_of(fits, "misspec-f2", "linear", "L3");
    const double f2p = slope_of(fits, "misspec-f2", "perturbed", "L3");
    const bool a = in_band(f1c, -0.30, 0.05), b = in_band(f1p, -0.65, -0.30);
    const bool c = in_band(f2l, -0.35, 0.05), d = in_band(f2p, -0.65, -0.30);
    report(7, a && b && c && d && failed_trials(results) == 0 && secs <= 1200.0,
           "misspecified slopes: F1 cosine " + fixed(f1c) + (a ? " in" : " OUT") + " [-0.30,0.05], F1 perturbed " +
               fixed(f1p) + (b ? " in" : " OUT") + " [-0.65,-0.30], F2 linear " + fixed(f2l) + (c ? " in" : " OUT") +
               " [-0.35,0.05], F2 perturbed " + fixed(f2p) + (d ? " in" : " OUT") + " [-0.65,-0.30], " +
               fixed(secs, 0) + " s");
}

void criterion_8()
{
    const SweepConfig cfg;
    const MixingMeasure truth = sample_true_measure(cfg.d, cfg.k_star, truth_seed(0));
    const std::vector<std::size_t> ns{10, 100, 1000};
    const auto rows = ratio_diagnostic(RouterSpec::cosine(), cfg.family, truth, ns, 1.0, cfg.mc_samples, 8);
    double worst_loss_err = 0.0;
    for (const RatioRow& r : rows) {
        const double closed = std::exp(truth[0].beta0) * norm2(truth[0].beta1) / static_cast<double>(r.n);
        worst_loss_err = std::max(worst_loss_err, std::abs(r.loss - closed));
        std::cout << "    n=" << r.n << " loss " << sci(r.loss) << " distance " << sci(r.distance) << " ratio "
                  << sci(r.ratio) << '\n';
    }
    const bool decay = rows.back().ratio <= 0.5 * rows.front().ratio;
    const bool loss_ok = worst_loss_err <= 1e-12;
    report(8, decay && loss_ok,
           "cosine ratio n=1000 " + sci(rows.back().ratio) + " vs n=10 " + sci(rows.front().ratio) +
               " (need <= half), loss column max error " + sci(worst_loss_err) + " (need <= 1e-12)");
}

void criterion_9()
{
    const std::string first = results_to_csv(g_desk_results);
    const std::size_t other_jobs = jobs() == 1 ? 4 : 1;
    const auto t0 = Clock::now();
    const auto second = run_sweep(desk_config({Setting::ExactSpecified, Setting::OverSpecified}), {other_jobs, false});
    const double secs = seconds_since(t0);
    const bool same = first == results_to_csv(second);
    report(9, same,
           "desk sweep rerun with jobs " + std::to_string(other_jobs) + " vs " + std::to_string(jobs()) + ": " +
               (same ? "byte-identical" : "DIFFERENT") + " results.csv (" + std::to_string(first.size()) + " bytes, " +
               fixed(secs, 0) + " s)");
}

} // namespace

int main()
{
    std::cout << "cosmoe acceptance suite (" << jobs() << " worker threads)\n";
    const auto t0 = Clock::now();
    const std::vector<std::pair<int, std::function<void()>>> steps{
        {1, criterion_1}, {2, criterion_2}, {3, criterion_3}, {4, criterion_4}, {0, run_desk_sweep},
        {5, criterion_5}, {6, criterion_6}, {7, criterion_7}, {8, criterion_8}, {9, criterion_9}};
    for (const auto& [id, step] : steps) {
        try {
            step();
        } catch (const std::exception& e) {
            if (id == 0) {
                std::cout << "    desk sweep aborted: " << e.what() << '\n';
                continue;
            }
            report(id, false, std::string("error: ") + e.what());
        }
    }
    std::size_t passed = 0;
    for (const Verdict& v : g_verdicts)
        passed += v.passed ? 1 : 0;
    std::cout << "\nsummary: " << passed << "/" << g_verdicts.size() << " criteria passed in "
              << fixed(seconds_since(t0), 0) << " s\n";
    for (const Verdict& v : g_verdicts)
        std::cout << (v.passed ? "[PASS]" : "[FAIL]") << " criterion " << v.id << '\n';
    return passed == g_verdicts.size() ? 0 : 1;
}
