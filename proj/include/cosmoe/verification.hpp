#pragma once

// Randomized self-checks shared by the `verify` subcommand and the
// acceptance suite: analytic gradients against central differences, the
// scale-direction PDE residual, and the homogeneity residual.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "cosmoe/calculus.hpp"
#include "cosmoe/model.hpp"
#include "cosmoe/random.hpp"

namespace cosmoe {

inline std::string sci(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

struct CheckOutcome {
    std::string name;
    bool passed = true;
    std::size_t cases = 0;
    double worst = 0.0; // check-specific worst metric
    std::string detail;
};

inline const std::array<RouterSpec, 3>& all_routers()
{
    static const std::array<RouterSpec, 3> r{RouterSpec::linear(), RouterSpec::cosine(), RouterSpec::perturbed(0.1, 0.1)};
    return r;
}

inline const std::vector<ExpertFamily>& all_families()
{
    static const std::vector<ExpertFamily> f{ExpertFamily::linear(),
                                             ExpertFamily::polynomial(2),
                                             ExpertFamily::polynomial(3),
                                             ExpertFamily::ffn(Activation::ReLU),
                                             ExpertFamily::ffn(Activation::GELU),
                                             ExpertFamily::ffn(Activation::Tanh),
                                             ExpertFamily::ffn(Activation::Sigmoid)};
    return f;
}

inline MixingMeasure random_measure(Rng& rng, std::size_t k, std::size_t d1, double scale)
{
    std::vector<Atom> atoms(k);
    for (Atom& a : atoms) {
        a.beta0 = 0.5 * rng.normal();
        a.beta1.resize(d1);
        a.eta.resize(d1 + 1);
        for (double& v : a.beta1)
            v = scale * rng.normal();
        for (double& v : a.eta)
            v = scale * rng.normal();
    }
    return MixingMeasure(std::move(atoms));
}

// Analytic gradient of the batch MSE against finite_diff_gradient over random
// (router, family, d1 in [2, 32], k in [1, 8]) configurations. A coordinate
// passes when |analytic - numeric| <= rel_tol * max(|analytic|, |numeric|)
// or <= abs_tol. For ReLU experts, rows whose pre-activation lies within
// 1e-4 of the kink are dropped: the 1e-6 kink band plus the reach of the
// difference step.
inline CheckOutcome check_gradients(std::size_t configs, std::uint64_t seed, double rel_tol = 1e-6,
                                    double abs_tol = 1e-8)
{
    CheckOutcome out{"gradient", true, 0, 0.0, ""};
    const auto& routers = all_routers();
    const auto& families = all_families();
    for (std::size_t c = 0; c < configs; ++c) {
        Rng rng(derive_seed(seed, c));
        const RouterSpec& spec = routers[c % routers.size()];
        const ExpertFamily& family = families[(c / routers.size()) % families.size()];
        const std::size_t d1 = 2 + rng.index(31);
        const std::size_t k = 1 + rng.index(8);
        const MixingMeasure g = random_measure(rng, k, d1, 1.0 / std::sqrt(static_cast<double>(d1)));

        Dataset data;
        data.d = d1;
        constexpr std::size_t rows = 8;
        while (data.n < rows) {
            Vector x(d1);
            for (double& v : x)
                v = rng.uniform(-1.0, 1.0);
            bool near_kink = false;
            if (family.kind == ExpertKind::FFN && family.activation == Activation::ReLU)
                for (const Atom& a : g)
                    near_kink = near_kink || std::abs(expert_preactivation(a.eta, x)) < 1e-4;
            if (near_kink)
                continue;
            data.x.insert(data.x.end(), x.begin(), x.end());
            data.y.push_back(rng.normal());
            ++data.n;
        }

        const auto [loss, grad] = grad_mse(spec, family, g, data);
        const Vector analytic = grad.flatten();
        const Vector numeric = finite_diff_gradient(
            [&](ConstSpan theta) { return mse(spec, family, MixingMeasure::unflatten(theta, k, d1), data); },
            g.flatten());
        for (std::size_t j = 0; j < analytic.size(); ++j) {
            const double diff = std::abs(analytic[j] - numeric[j]);
            const double scale = std::max(std::abs(analytic[j]), std::abs(numeric[j]));
            const double rel = scale > 0.0 ? diff / scale : 0.0;
            if (diff > abs_tol)
                out.worst = std::max(out.worst, rel);
            if (diff > abs_tol && diff > rel_tol * scale && out.passed) {
                out.passed = false;
                out.detail = spec.name() + "/" + family.name() + " d1=" + std::to_string(d1) + " k=" +
                             std::to_string(k) + " coordinate " + std::to_string(j) + " analytic " +
                             sci(analytic[j]) + " numeric " + sci(numeric[j]);
            }
        }
        ++out.cases;
    }
    return out;
}

// Cosine: |beta1^T dH/dbeta1| <= tol * |H|. Perturbed (tau = 0.1, h = 1):
// magnitude >= floor whenever |beta1^T x| >= 0.1.
inline CheckOutcome check_pde(std::size_t cases, std::uint64_t seed, double cosine_tol = 1e-10,
                              double perturbed_floor = 1e-4)
{
    CheckOutcome out{"pde", true, 0, 0.0, ""};
    const RouterSpec cosine = RouterSpec::cosine();
    const RouterSpec perturbed = RouterSpec::perturbed(0.1, 0.1);
    const auto& families = all_families();
    double min_perturbed = INFINITY;
    Rng rng(seed);
    for (std::size_t c = 0; c < cases; ++c) {
        const std::size_t d = 2 + rng.index(31);
        const double sd = 1.0 / std::sqrt(static_cast<double>(d));
        Vector b(d), x(d), eta(d + 1);
        do {
            for (double& v : b)
                v = sd * rng.normal();
            for (double& v : x)
                v = rng.uniform(-1.0, 1.0);
        } while (std::abs(dot(b, x)) < 0.1);
        for (double& v : eta)
            v = sd * rng.normal();
        const ExpertFamily& family = families[c % families.size()];

        const double h = std::exp(router_score(cosine, b, x)) * expert_value(family, eta, x);
        const double rc = pde_residual(cosine, b, eta, family, x);
        const double rel = std::abs(h) > 0.0 ? std::abs(rc) / std::abs(h) : std::abs(rc);
        out.worst = std::max(out.worst, rel);
        if (rel > cosine_tol && out.passed) {
            out.passed = false;
            out.detail = "cosine residual " + sci(rc) + " relative " + sci(rel);
        }

        Vector unit(d + 1, 0.0);
        unit[d] = 1.0; // a = 0, b = 1: h == 1
        const double rp = std::abs(pde_residual(perturbed, b, unit, ExpertFamily::linear(), x));
        min_perturbed = std::min(min_perturbed, rp);
        if (rp < perturbed_floor && out.passed) {
            out.passed = false;
            out.detail = "perturbed residual " + sci(rp) + " below floor";
        }
        ++out.cases;
    }
    if (out.passed)
        out.detail = "min perturbed magnitude " + sci(min_perturbed);
    return out;
}

inline CheckOutcome check_homogeneity(std::size_t cases, std::uint64_t seed, double tol_t1 = 1e-10,
                                      double tol_t2 = 1e-4)
{
    CheckOutcome out{"homogeneity", true, 0, 0.0, ""};
    const RouterSpec cosine = RouterSpec::cosine();
    Rng rng(seed);
    double worst1 = 0.0, worst2 = 0.0;
    for (std::size_t c = 0; c < cases; ++c) {
        const std::size_t d = 2 + rng.index(31);
        Vector b(d), x(d);
        do {
            for (double& v : b)
                v = rng.normal();
            for (double& v : x)
                v = rng.uniform(-1.0, 1.0);
        } while (norm2(b) < kNormEpsilon || norm2(x) < kNormEpsilon);
        worst1 = std::max(worst1, std::abs(homogeneity_residual(cosine, b, x, 1)));
        worst2 = std::max(worst2, std::abs(homogeneity_residual(cosine, b, x, 2)));
        ++out.cases;
    }
    out.worst = std::max(worst1, worst2);
    out.passed = worst1 <= tol_t1 && worst2 <= tol_t2;
    out.detail = "max |t=1| " + sci(worst1) + ", max |t=2| " + sci(worst2);
    return out;
}

} // namespace cosmoe
