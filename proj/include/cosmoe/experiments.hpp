#pragma once

// Synthetic ground truth, data generation, the convergence-rate sweep and
// log-log slope fitting.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "cosmoe/calculus.hpp"
#include "cosmoe/errors.hpp"
#include "cosmoe/estimation.hpp"
#include "cosmoe/metrics.hpp"
#include "cosmoe/model.hpp"
#include "cosmoe/random.hpp"

namespace cosmoe {

enum class Setting { ExactSpecified, OverSpecified, MisspecF1, MisspecF2 };

inline std::string setting_name(Setting s)
{
    switch (s) {
    case Setting::ExactSpecified: return "exact";
    case Setting::OverSpecified: return "over";
    case Setting::MisspecF1: return "misspec-f1";
    case Setting::MisspecF2: return "misspec-f2";
    }
    return "unknown";
}

// Router (beta0, beta1) ~ N(0, 0.01/d) for the first six atoms and zero for
// the rest; expert (a, b) ~ N(0, 1/d) for every atom.
inline MixingMeasure sample_true_measure(std::size_t d, std::size_t k_star, std::uint64_t seed)
{
    require(k_star >= 1 && d >= 1, "sample_true_measure: need d >= 1 and k* >= 1");
    constexpr std::size_t kRoutedAtoms = 6;
    Rng rng(seed);
    const double router_sd = std::sqrt(0.01 / static_cast<double>(d));
    const double expert_sd = std::sqrt(1.0 / static_cast<double>(d));
    std::vector<Atom> atoms(k_star);
    for (std::size_t i = 0; i < k_star; ++i) {
        Atom& a = atoms[i];
        a.beta1.assign(d, 0.0);
        a.eta.assign(d + 1, 0.0);
        if (i < kRoutedAtoms) {
            for (double& v : a.beta1)
                v = router_sd * rng.normal();
            a.beta0 = router_sd * rng.normal();
        }
        for (double& v : a.eta)
            v = expert_sd * rng.normal();
    }
    return MixingMeasure(std::move(atoms));
}

// X ~ Uniform([-1,1]^d), Y = f_G(X) + N(0, sigma2).
inline Dataset generate_dataset(const RouterSpec& spec, const ExpertFamily& family, const MixingMeasure& truth,
                                std::size_t n, double sigma2, std::uint64_t seed)
{
    require(n >= 1, "generate_dataset: n must be >= 1");
    require(sigma2 >= 0.0, "generate_dataset: sigma2 must be >= 0");
    Dataset data;
    data.n = n;
    data.d = truth.d1();
    data.sigma2 = sigma2;
    data.x = uniform_inputs(n, data.d, derive_seed(seed, 0));
    data.y.resize(n);
    Rng noise(derive_seed(seed, 1));
    const double sd = std::sqrt(sigma2);
    for (std::size_t i = 0; i < n; ++i)
        data.y[i] = predict(spec, family, truth, data.row(i)) + sd * noise.normal();
    return data;
}

// ---------------------------------------------------------------------------
// sweep

inline std::vector<std::size_t> log_spaced_sizes(double lo, double hi, std::size_t count)
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < count; ++i) {
        const double t = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
        out.push_back(static_cast<std::size_t>(std::llround(std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo))))));
    }
    return out;
}

struct SweepConfig {
    std::uint64_t master_seed = 0;
    std::size_t d = 32;
    std::size_t k_star = 8;
    double sigma2 = 0.01;
    double tau = 0.1;
    std::vector<Setting> settings{Setting::ExactSpecified, Setting::OverSpecified};
    std::vector<RouterKind> routers{RouterKind::Cosine, RouterKind::PerturbedCosine};
    ExpertFamily family = ExpertFamily::ffn(Activation::ReLU);
    std::vector<std::size_t> sample_sizes = log_spaced_sizes(1e3, 1e5, 7);
    std::size_t replicates = 20;
    SgdConfig sgd{};
    std::size_t mc_samples = 20000;

    // Half the replicates and sample sizes up to 46416.
    void apply_desk_mode()
    {
        replicates = 10;
        sample_sizes = log_spaced_sizes(1e3, 46416.0, 7);
    }

    void validate() const
    {
        if (sample_sizes.empty())
            throw ConfigurationError("sweep: sample_sizes must be non-empty");
        for (std::size_t i = 1; i < sample_sizes.size(); ++i)
            if (sample_sizes[i] <= sample_sizes[i - 1])
                throw ConfigurationError("sweep: sample_sizes must be strictly increasing");
        if (sample_sizes.front() < 1)
            throw ConfigurationError("sweep: sample sizes must be >= 1");
        if (replicates < 1)
            throw ConfigurationError("sweep: replicates must be >= 1");
        if (d < 1 || k_star < 1)
            throw ConfigurationError("sweep: need d >= 1 and k_star >= 1");
        if (!(sigma2 >= 0.0) || !(tau > 0.0))
            throw ConfigurationError("sweep: need sigma2 >= 0 and tau > 0");
        if (settings.empty() || routers.empty())
            throw ConfigurationError("sweep: settings and routers must be non-empty");
        sgd.validate();
    }
};

// One arm of the sweep: what generates the data, what is fitted, and which
// loss is scored.
struct ArmPlan {
    RouterSpec fit_router;
    RouterSpec data_router;
    ExpertFamily family;
    std::size_t k_fit = 0;
    LossKind loss;
};

// The standard (tau = 0) arm of misspec-f2 is the linear router; every other
// setting fits the router it is given.
inline ArmPlan plan_arm(const SweepConfig& cfg, Setting setting, RouterKind router)
{
    auto make = [&](RouterKind kind) {
        return kind == RouterKind::PerturbedCosine ? RouterSpec::perturbed(cfg.tau, cfg.tau) : RouterSpec{kind, 0.0, 0.0};
    };
    ArmPlan plan;
    plan.fit_router = make(router);
    plan.family = cfg.family;
    plan.k_fit = cfg.k_star;
    plan.loss = LossKind::l3();
    switch (setting) {
    case Setting::ExactSpecified:
        plan.data_router = plan.fit_router;
        break;
    case Setting::OverSpecified:
        plan.data_router = plan.fit_router;
        plan.k_fit = cfg.k_star + 1;
        plan.loss = LossKind::l2();
        break;
    case Setting::MisspecF1:
        plan.data_router = RouterSpec::linear();
        plan.family = ExpertFamily::ffn(Activation::ReLU);
        break;
    case Setting::MisspecF2:
        plan.data_router = RouterSpec::linear();
        plan.family = ExpertFamily::polynomial(2);
        if (router == RouterKind::Cosine)
            plan.fit_router = RouterSpec::linear();
        break;
    }
    return plan;
}

struct TrialResult {
    std::string setting;
    std::string router;
    double tau = 0.0;
    std::string family;
    std::size_t n = 0;
    std::size_t replicate = 0;
    std::uint64_t trial_seed = 0;
    std::string loss_name;
    double loss_value = 0.0;
    double train_mse = 0.0;
    double wall_ms = 0.0;

    bool failed() const { return loss_name.rfind("failed:", 0) == 0; }

    friend bool operator==(const TrialResult&, const TrialResult&) = default;
};

// master_seed XOR FNV-1a(setting, router, n index, replicate), then splitmix64.
inline std::uint64_t trial_seed(std::uint64_t master_seed, const std::string& setting, const std::string& router,
                                std::size_t n_index, std::size_t replicate)
{
    const std::uint64_t h = Fnv1a{}.add(setting).add(router).add(std::uint64_t{n_index}).add(std::uint64_t{replicate}).value();
    return mix64(master_seed ^ h);
}

inline std::uint64_t truth_seed(std::uint64_t master_seed) { return derive_seed(master_seed, 0x7275746853ULL); }

struct SweepOptions {
    std::size_t jobs = 1;
    bool record_wall_time = false; // off keeps result tables byte-reproducible
};

inline TrialResult run_trial(const SweepConfig& cfg, const MixingMeasure& truth, Setting setting, RouterKind router,
                             std::size_t n_index, std::size_t replicate, bool record_wall_time)
{
    const ArmPlan plan = plan_arm(cfg, setting, router);
    TrialResult row;
    row.setting = setting_name(setting);
    row.router = plan.fit_router.name();
    row.tau = plan.fit_router.tau1;
    row.family = plan.family.name();
    row.n = cfg.sample_sizes[n_index];
    row.replicate = replicate;
    row.trial_seed = trial_seed(cfg.master_seed, row.setting, row.router, n_index, replicate);
    row.loss_name = plan.loss.name();

    const auto start = std::chrono::steady_clock::now();
    try {
        const Dataset data = generate_dataset(plan.data_router, plan.family, truth, row.n, cfg.sigma2,
                                              derive_seed(row.trial_seed, 1));
        const MixingMeasure g0 = init_near(truth, plan.k_fit, cfg.sgd.init_scale, derive_seed(row.trial_seed, 2));
        SgdConfig sgd = cfg.sgd;
        sgd.seed = derive_seed(row.trial_seed, 3);
        const MixingMeasure fit = sgd_fit(plan.fit_router, plan.family, data, g0, sgd);
        row.loss_value = voronoi_loss(fit, truth, plan.loss);
        row.train_mse = mse(plan.fit_router, plan.family, fit, data);
    } catch (const DivergenceError& e) {
        row.loss_name = "failed:divergence@" + std::to_string(e.step());
        row.loss_value = std::numeric_limits<double>::quiet_NaN();
        row.train_mse = std::numeric_limits<double>::quiet_NaN();
    }
    if (record_wall_time)
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return row;
}

inline bool result_order(const TrialResult& a, const TrialResult& b)
{
    return std::tie(a.setting, a.router, a.n, a.replicate) < std::tie(b.setting, b.router, b.n, b.replicate);
}

// Every (setting, router, n, replicate) trial; each trial derives all of its
// randomness from its own seed, so the table is independent of scheduling.
inline std::vector<TrialResult> run_sweep(const SweepConfig& cfg, const SweepOptions& opt = {})
{
    cfg.validate();
    const MixingMeasure truth = sample_true_measure(cfg.d, cfg.k_star, truth_seed(cfg.master_seed));

    struct Job {
        Setting setting;
        RouterKind router;
        std::size_t n_index;
        std::size_t replicate;
    };
    std::vector<Job> jobs;
    for (Setting s : cfg.settings)
        for (RouterKind r : cfg.routers)
            for (std::size_t ni = 0; ni < cfg.sample_sizes.size(); ++ni)
                for (std::size_t rep = 0; rep < cfg.replicates; ++rep)
                    jobs.push_back({s, r, ni, rep});
    // largest trials first for better load balance
    std::stable_sort(jobs.begin(), jobs.end(), [](const Job& a, const Job& b) { return a.n_index > b.n_index; });

    std::vector<TrialResult> results(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) {
            const Job& j = jobs[i];
            results[i] = run_trial(cfg, truth, j.setting, j.router, j.n_index, j.replicate, opt.record_wall_time);
        }
    };
    const std::size_t threads = std::max<std::size_t>(1, std::min(opt.jobs, jobs.size()));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back(worker);
    }
    std::sort(results.begin(), results.end(), result_order);
    return results;
}

// ---------------------------------------------------------------------------
// rates

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    double slope_stderr = 0.0;
    std::size_t points_used = 0;
};

// OLS of log(loss) on log(n); points with non-positive loss are dropped.
inline RateFit fit_slope(const std::vector<std::pair<double, double>>& points)
{
    std::vector<std::pair<double, double>> logs;
    for (const auto& [n, loss] : points)
        if (loss > 0.0 && n > 0.0 && std::isfinite(loss))
            logs.emplace_back(std::log(n), std::log(loss));
    if (logs.size() < 2)
        throw InsufficientDataError("fit_slope: need at least two points with positive loss");

    const double m = static_cast<double>(logs.size());
    double mx = 0.0, my = 0.0;
    for (const auto& [x, y] : logs) {
        mx += x;
        my += y;
    }
    mx /= m;
    my /= m;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& [x, y] : logs) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if (sxx <= 0.0)
        throw InsufficientDataError("fit_slope: sample sizes must not all be equal");
    RateFit fit;
    fit.points_used = logs.size();
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double sse = 0.0;
    for (const auto& [x, y] : logs) {
        const double e = y - fit.intercept - fit.slope * x;
        sse += e * e;
    }
    fit.r_squared = syy > 0.0 ? 1.0 - sse / syy : 1.0;
    fit.slope_stderr = logs.size() > 2 ? std::sqrt(sse / (m - 2.0) / sxx) : 0.0;
    return fit;
}

// Mean and sample standard deviation of one (series, n) cell.
struct SeriesPoint {
    std::size_t n = 0;
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t count = 0;
};

struct SeriesKey {
    std::string setting;
    std::string router;
    std::string loss_name;

    std::string label() const { return setting + "/" + router + "/" + loss_name; }
    friend auto operator<=>(const SeriesKey&, const SeriesKey&) = default;
};

// Groups successful trials by (setting, router, loss) and n.
inline std::map<SeriesKey, std::vector<SeriesPoint>> summarize(const std::vector<TrialResult>& results)
{
    std::map<SeriesKey, std::map<std::size_t, std::vector<double>>> groups;
    for (const TrialResult& r : results)
        if (!r.failed())
            groups[{r.setting, r.router, r.loss_name}][r.n].push_back(r.loss_value);

    std::map<SeriesKey, std::vector<SeriesPoint>> out;
    for (const auto& [key, by_n] : groups) {
        auto& series = out[key];
        for (const auto& [n, values] : by_n) {
            SeriesPoint p;
            p.n = n;
            p.count = values.size();
            for (double v : values)
                p.mean += v;
            p.mean /= static_cast<double>(values.size());
            if (values.size() > 1) {
                double ss = 0.0;
                for (double v : values)
                    ss += (v - p.mean) * (v - p.mean);
                p.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
            }
            series.push_back(p);
        }
    }
    return out;
}

inline std::map<SeriesKey, RateFit> fit_slopes(const std::map<SeriesKey, std::vector<SeriesPoint>>& series)
{
    std::map<SeriesKey, RateFit> fits;
    for (const auto& [key, points] : series) {
        std::vector<std::pair<double, double>> xy;
        for (const SeriesPoint& p : points)
            xy.emplace_back(static_cast<double>(p.n), p.mean);
        try {
            fits[key] = fit_slope(xy);
        } catch (const InsufficientDataError&) {
        }
    }
    return fits;
}

} // namespace cosmoe
