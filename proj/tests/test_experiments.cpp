#include <gtest/gtest.h>

#include <cmath>

#include "cosmoe/experiments.hpp"

using namespace cosmoe;

namespace {

// 2 settings x 2 routers x 7 sizes x 10 replicates on a small problem.
SweepConfig small_config()
{
    SweepConfig cfg;
    cfg.d = 4;
    cfg.k_star = 3;
    cfg.sample_sizes = log_spaced_sizes(20, 200, 7);
    cfg.replicates = 10;
    cfg.sgd.epochs = 2;
    return cfg;
}

} // namespace

TEST(Settings, Names)
{
    EXPECT_EQ(setting_name(Setting::ExactSpecified), "exact");
    EXPECT_EQ(setting_name(Setting::OverSpecified), "over");
    EXPECT_EQ(setting_name(Setting::MisspecF1), "misspec-f1");
    EXPECT_EQ(setting_name(Setting::MisspecF2), "misspec-f2");
}

TEST(TrueMeasure, TrailingAtomsUnrouted)
{
    const MixingMeasure g = sample_true_measure(32, 8, 0);
    ASSERT_EQ(g.size(), 8u);
    for (std::size_t i = 6; i < 8; ++i) {
        EXPECT_EQ(g[i].beta0, 0.0);
        for (double v : g[i].beta1)
            EXPECT_EQ(v, 0.0);
        EXPECT_NE(norm2(g[i].eta), 0.0);
    }
    for (std::size_t i = 0; i < 6; ++i)
        EXPECT_GT(norm2(g[i].beta1), 0.0);
}

TEST(TrueMeasure, Deterministic)
{
    EXPECT_TRUE(sample_true_measure(32, 8, 5) == sample_true_measure(32, 8, 5));
    EXPECT_FALSE(sample_true_measure(32, 8, 5) == sample_true_measure(32, 8, 6));
}

TEST(TrueMeasure, Variances)
{
    const std::size_t d = 32;
    double router_ss = 0.0, expert_ss = 0.0;
    std::size_t router_n = 0, expert_n = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const MixingMeasure g = sample_true_measure(d, 8, seed);
        for (std::size_t i = 0; i < 6; ++i) {
            router_ss += g[i].beta0 * g[i].beta0;
            for (double v : g[i].beta1)
                router_ss += v * v;
            router_n += d + 1;
        }
        for (const Atom& a : g)
            for (double v : a.eta) {
                expert_ss += v * v;
                ++expert_n;
            }
    }
    EXPECT_NEAR(router_ss / static_cast<double>(router_n), 0.01 / d, 0.5 * 0.01 / d);
    EXPECT_NEAR(expert_ss / static_cast<double>(expert_n), 1.0 / d, 0.05 / d);
}

TEST(Dataset, NoiselessMatchesPredict)
{
    const MixingMeasure g = sample_true_measure(6, 4, 1);
    const RouterSpec spec = RouterSpec::perturbed(0.1, 0.1);
    const ExpertFamily f = ExpertFamily::ffn(Activation::ReLU);
    const Dataset data = generate_dataset(spec, f, g, 500, 0.0, 2);
    ASSERT_EQ(data.n, 500u);
    for (std::size_t i = 0; i < data.n; ++i)
        EXPECT_EQ(data.y[i], predict(spec, f, g, data.row(i)));
}

TEST(Dataset, InputsInCube)
{
    const Dataset data = generate_dataset(RouterSpec::cosine(), ExpertFamily::linear(), sample_true_measure(5, 2, 1),
                                          2000, 0.01, 3);
    for (double v : data.x) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Dataset, NoiseVariance)
{
    const MixingMeasure g = sample_true_measure(8, 4, 1);
    const RouterSpec spec = RouterSpec::cosine();
    const ExpertFamily f = ExpertFamily::ffn(Activation::ReLU);
    const Dataset data = generate_dataset(spec, f, g, 100000, 0.01, 4);
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < data.n; ++i) {
        const double e = data.y[i] - predict(spec, f, g, data.row(i));
        s += e;
        s2 += e * e;
    }
    const double n = static_cast<double>(data.n);
    EXPECT_NEAR(s2 / n - (s / n) * (s / n), 0.01, 0.001);
}

TEST(Dataset, Deterministic)
{
    const MixingMeasure g = sample_true_measure(4, 2, 1);
    const Dataset a = generate_dataset(RouterSpec::cosine(), ExpertFamily::linear(), g, 100, 0.01, 9);
    const Dataset b = generate_dataset(RouterSpec::cosine(), ExpertFamily::linear(), g, 100, 0.01, 9);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.y, b.y);
}

TEST(SampleSizes, DefaultAndDesk)
{
    EXPECT_EQ(log_spaced_sizes(1e3, 1e5, 7),
              (std::vector<std::size_t>{1000, 2154, 4642, 10000, 21544, 46416, 100000}));
    SweepConfig cfg;
    EXPECT_EQ(cfg.sample_sizes.size(), 7u);
    EXPECT_EQ(cfg.replicates, 20u);
    cfg.apply_desk_mode();
    EXPECT_EQ(cfg.replicates, 10u);
    EXPECT_EQ(cfg.sample_sizes.size(), 7u);
    EXPECT_EQ(cfg.sample_sizes.front(), 1000u);
    EXPECT_EQ(cfg.sample_sizes.back(), 46416u);
}

TEST(SweepConfig, Validation)
{
    SweepConfig cfg;
    cfg.sample_sizes = {100, 100};
    EXPECT_THROW(cfg.validate(), ConfigurationError);
    cfg = {};
    cfg.replicates = 0;
    EXPECT_THROW(cfg.validate(), ConfigurationError);
    cfg = {};
    cfg.settings.clear();
    EXPECT_THROW(cfg.validate(), ConfigurationError);
}

TEST(PlanArm, Settings)
{
    const SweepConfig cfg;
    const ArmPlan exact = plan_arm(cfg, Setting::ExactSpecified, RouterKind::PerturbedCosine);
    EXPECT_EQ(exact.fit_router, RouterSpec::perturbed(0.1, 0.1));
    EXPECT_EQ(exact.data_router, exact.fit_router);
    EXPECT_EQ(exact.k_fit, 8u);
    EXPECT_EQ(exact.loss.name(), "L3");

    const ArmPlan over = plan_arm(cfg, Setting::OverSpecified, RouterKind::Cosine);
    EXPECT_EQ(over.fit_router, RouterSpec::cosine());
    EXPECT_EQ(over.k_fit, 9u);
    EXPECT_EQ(over.loss.name(), "L2");

    const ArmPlan f1 = plan_arm(cfg, Setting::MisspecF1, RouterKind::Cosine);
    EXPECT_EQ(f1.data_router, RouterSpec::linear());
    EXPECT_EQ(f1.fit_router, RouterSpec::cosine());
    EXPECT_EQ(f1.family, ExpertFamily::ffn(Activation::ReLU));
    EXPECT_EQ(f1.loss.name(), "L3");

    const ArmPlan f2 = plan_arm(cfg, Setting::MisspecF2, RouterKind::Cosine);
    EXPECT_EQ(f2.fit_router, RouterSpec::linear());
    EXPECT_EQ(f2.family, ExpertFamily::polynomial(2));
    EXPECT_EQ(plan_arm(cfg, Setting::MisspecF2, RouterKind::PerturbedCosine).fit_router, RouterSpec::perturbed(0.1, 0.1));
}

TEST(TrialSeed, DependsOnEveryComponent)
{
    const std::uint64_t base = trial_seed(0, "exact", "cosine", 0, 0);
    EXPECT_EQ(base, trial_seed(0, "exact", "cosine", 0, 0));
    EXPECT_NE(base, trial_seed(1, "exact", "cosine", 0, 0));
    EXPECT_NE(base, trial_seed(0, "over", "cosine", 0, 0));
    EXPECT_NE(base, trial_seed(0, "exact", "perturbed", 0, 0));
    EXPECT_NE(base, trial_seed(0, "exact", "cosine", 1, 0));
    EXPECT_NE(base, trial_seed(0, "exact", "cosine", 0, 1));
    const std::uint64_t h = Fnv1a{}.add("exact").add("cosine").add(std::uint64_t{0}).add(std::uint64_t{0}).value();
    EXPECT_EQ(base, mix64(h));
}

TEST(RunSweep, RowCountAndOrder)
{
    const auto results = run_sweep(small_config(), {1, false});
    ASSERT_EQ(results.size(), 280u);
    EXPECT_TRUE(std::is_sorted(results.begin(), results.end(), result_order));
    for (const TrialResult& r : results) {
        EXPECT_FALSE(r.failed());
        EXPECT_GE(r.loss_value, 0.0);
        EXPECT_TRUE(std::isfinite(r.loss_value));
        EXPECT_EQ(r.wall_ms, 0.0);
        EXPECT_EQ(r.loss_name, r.setting == "over" ? "L2" : "L3");
        EXPECT_EQ(r.tau, r.router == "perturbed" ? 0.1 : 0.0);
        EXPECT_EQ(r.family, "ffn-relu");
    }
}

TEST(RunSweep, IndependentOfParallelism)
{
    SweepConfig cfg = small_config();
    cfg.replicates = 3;
    cfg.settings = {Setting::ExactSpecified, Setting::OverSpecified, Setting::MisspecF1, Setting::MisspecF2};
    const auto a = run_sweep(cfg, {1, false});
    const auto b = run_sweep(cfg, {8, false});
    const auto c = run_sweep(cfg, {1, false});
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, c);
}

TEST(RunSweep, TrialIsSelfContained)
{
    const SweepConfig cfg = small_config();
    const auto all = run_sweep(cfg, {1, false});
    const MixingMeasure truth = sample_true_measure(cfg.d, cfg.k_star, truth_seed(cfg.master_seed));
    const TrialResult one = run_trial(cfg, truth, Setting::OverSpecified, RouterKind::PerturbedCosine, 3, 7, false);
    const auto it = std::find_if(all.begin(), all.end(), [&](const TrialResult& r) {
        return r.setting == "over" && r.router == "perturbed" && r.n == cfg.sample_sizes[3] && r.replicate == 7;
    });
    ASSERT_NE(it, all.end());
    EXPECT_EQ(*it, one);
}

TEST(RunSweep, DivergenceIsRecordedNotThrown)
{
    SweepConfig cfg = small_config();
    cfg.replicates = 1;
    cfg.sample_sizes = {50, 100};
    cfg.settings = {Setting::MisspecF2};
    cfg.sgd.learning_rate = 1e8;
    cfg.sgd.init_scale = 1.0;
    const auto results = run_sweep(cfg);
    ASSERT_EQ(results.size(), 4u);
    std::size_t failed = 0;
    for (const TrialResult& r : results)
        if (r.failed()) {
            ++failed;
            EXPECT_EQ(r.loss_name.rfind("failed:divergence@", 0), 0u);
            EXPECT_TRUE(std::isnan(r.loss_value));
        }
    EXPECT_GT(failed, 0u);
}

TEST(FitSlope, PowerLaw)
{
    std::vector<std::pair<double, double>> pts;
    for (double n : {1e3, 1e4, 1e5})
        pts.emplace_back(n, 3.0 * std::pow(n, -0.5));
    const RateFit fit = fit_slope(pts);
    EXPECT_NEAR(fit.slope, -0.5, 1e-12);
    EXPECT_NEAR(fit.intercept, std::log(3.0), 1e-10);
    EXPECT_NEAR(fit.r_squared, 1.0, 1e-12);
    EXPECT_NEAR(fit.slope_stderr, 0.0, 1e-10);
    EXPECT_EQ(fit.points_used, 3u);
}

TEST(FitSlope, ConstantLosses)
{
    const RateFit fit = fit_slope({{10, 0.2}, {100, 0.2}, {1000, 0.2}});
    EXPECT_NEAR(fit.slope, 0.0, 1e-15);
}

TEST(FitSlope, ZeroLossesExcluded)
{
    const RateFit fit = fit_slope({{10, 0.0}, {100, 1.0}, {1000, 0.1}});
    EXPECT_EQ(fit.points_used, 2u);
    EXPECT_NEAR(fit.slope, -1.0, 1e-12);
}

TEST(FitSlope, InsufficientData)
{
    EXPECT_THROW(fit_slope({{10, 1.0}}), InsufficientDataError);
    EXPECT_THROW(fit_slope({{10, 0.0}, {100, 0.0}, {1000, 1.0}}), InsufficientDataError);
}

TEST(FitSlope, NoisyDataStderr)
{
    // residuals +-0.1 in log space around slope -0.3
    std::vector<std::pair<double, double>> pts;
    const double ns[] = {1e2, 1e3, 1e4, 1e5};
    const double eps[] = {0.1, -0.1, 0.1, -0.1};
    for (int i = 0; i < 4; ++i)
        pts.emplace_back(ns[i], std::exp(-0.3 * std::log(ns[i]) + eps[i]));
    const RateFit fit = fit_slope(pts);
    // hand OLS on x = log n (equally spaced by ln 10)
    const double l = std::log(10.0);
    const double xbar = 3.5 * l;
    double sxx = 0, sxy = 0;
    for (int i = 0; i < 4; ++i) {
        sxx += std::pow((i + 2) * l - xbar, 2);
        sxy += ((i + 2) * l - xbar) * eps[i];
    }
    EXPECT_NEAR(fit.slope, -0.3 + sxy / sxx, 1e-12);
    EXPECT_GT(fit.slope_stderr, 0.0);
    EXPECT_LT(fit.r_squared, 1.0);
}

TEST(Summarize, MeansAndFailures)
{
    std::vector<TrialResult> rows;
    auto add = [&](std::size_t n, double loss, const std::string& name = "L3") {
        TrialResult r;
        r.setting = "exact";
        r.router = "cosine";
        r.n = n;
        r.loss_name = name;
        r.loss_value = loss;
        rows.push_back(r);
    };
    add(100, 1.0);
    add(100, 3.0);
    add(1000, 0.5);
    add(1000, NAN, "failed:divergence@3");
    const auto series = summarize(rows);
    ASSERT_EQ(series.size(), 1u);
    const auto& pts = series.begin()->second;
    EXPECT_EQ(series.begin()->first.label(), "exact/cosine/L3");
    ASSERT_EQ(pts.size(), 2u);
    EXPECT_EQ(pts[0].mean, 2.0);
    EXPECT_NEAR(pts[0].stddev, std::sqrt(2.0), 1e-15);
    EXPECT_EQ(pts[0].count, 2u);
    EXPECT_EQ(pts[1].count, 1u);
    const auto fits = fit_slopes(series);
    EXPECT_NEAR(fits.begin()->second.slope, std::log(0.25) / std::log(10.0), 1e-12);
}
