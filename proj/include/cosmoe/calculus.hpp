#pragma once

// Analytic squared-loss gradients, a central finite-difference oracle, the
// scale-direction identities of the router (PDE residual and its higher-order
// homogeneity form), and a sampled linear-independence test for the
// derivative families behind strong/weak identifiability.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cosmoe/errors.hpp"
#include "cosmoe/model.hpp"
#include "cosmoe/random.hpp"

namespace cosmoe {

struct GradientRecord {
    Vector d_beta0;
    std::vector<Vector> d_beta1;
    std::vector<Vector> d_eta;

    // Same layout as MixingMeasure::flatten().
    Vector flatten() const
    {
        Vector out(d_beta0);
        for (const auto& v : d_beta1)
            out.insert(out.end(), v.begin(), v.end());
        for (const auto& v : d_eta)
            out.insert(out.end(), v.begin(), v.end());
        return out;
    }

    static GradientRecord unflatten(ConstSpan flat, std::size_t k, std::size_t d1)
    {
        const std::size_t d2 = ExpertFamily::eta_size(d1);
        GradientRecord g;
        g.d_beta0.assign(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(k));
        for (std::size_t i = 0; i < k; ++i) {
            auto b = flat.subspan(k + i * d1, d1);
            auto e = flat.subspan(k + k * d1 + i * d2, d2);
            g.d_beta1.emplace_back(b.begin(), b.end());
            g.d_eta.emplace_back(e.begin(), e.end());
        }
        return g;
    }
};

namespace detail {

// Reusable per-thread buffers for the batch gradient kernel.
struct GradientWorkspace {
    Vector score_grad; // k * d1
    Vector logits;     // k
    Vector values;     // k
    Vector slopes;     // k, phi'(z_i)

    void resize(std::size_t k, std::size_t d1)
    {
        score_grad.resize(k * d1);
        logits.resize(k);
        values.resize(k);
        slopes.resize(k);
    }
};

// Mean squared error over `rows` (all rows when empty) and, if `grad` is
// non-empty, its gradient in the flat parameter layout (overwritten).
inline double batch_mse(const RouterSpec& spec, const ExpertFamily& family, std::size_t k, std::size_t d1,
                        ConstSpan theta, const Dataset& data, std::span<const std::size_t> rows,
                        std::span<double> grad, GradientWorkspace& ws)
{
    const std::size_t d2 = ExpertFamily::eta_size(d1);
    const bool want_grad = !grad.empty();
    const std::size_t m = rows.empty() ? data.n : rows.size();
    ws.resize(k, d1);
    if (want_grad)
        std::fill(grad.begin(), grad.end(), 0.0);

    const ConstSpan b0 = theta.first(k);
    const ConstSpan b1 = theta.subspan(k, k * d1);
    const ConstSpan et = theta.subspan(k + k * d1, k * d2);
    double sse = 0.0;

    for (std::size_t r = 0; r < m; ++r) {
        const std::size_t row = rows.empty() ? r : rows[r];
        const ConstSpan x = data.row(row);
        const double xn = norm2(x);
        for (std::size_t i = 0; i < k; ++i) {
            const ConstSpan beta1 = b1.subspan(i * d1, d1);
            // value from router_score so the forward pass matches predict() bit for bit
            if (want_grad)
                router_score_grad(spec, beta1, x, xn, std::span<double>(ws.score_grad).subspan(i * d1, d1));
            ws.logits[i] = router_score(spec, beta1, x) + b0[i];
            const ActivationJet jet = family.jet(expert_preactivation(et.subspan(i * d2, d2), x));
            ws.values[i] = jet.value;
            ws.slopes[i] = jet.d1;
        }
        softmax_inplace(ws.logits);
        double f = 0.0;
        for (std::size_t i = 0; i < k; ++i)
            f += ws.logits[i] * ws.values[i];
        const double resid = f - data.y[row];
        sse += resid * resid;
        if (!want_grad)
            continue;

        const double dl_df = 2.0 * resid / static_cast<double>(m);
        for (std::size_t i = 0; i < k; ++i) {
            const double w = ws.logits[i];
            const double dl_dlogit = dl_df * w * (ws.values[i] - f);
            grad[i] += dl_dlogit;
            double* gb1 = grad.data() + k + i * d1;
            const double* sg = ws.score_grad.data() + i * d1;
            for (std::size_t u = 0; u < d1; ++u)
                gb1[u] += dl_dlogit * sg[u];
            const double dl_dz = dl_df * w * ws.slopes[i];
            double* ge = grad.data() + k + k * d1 + i * d2;
            for (std::size_t u = 0; u < d1; ++u)
                ge[u] += dl_dz * x[u];
            ge[d1] += dl_dz;
        }
    }
    return sse / static_cast<double>(m);
}

} // namespace detail

// Mean squared error of G on the selected rows and its exact gradient.
inline std::pair<double, GradientRecord> grad_mse(const RouterSpec& spec, const ExpertFamily& family,
                                                  const MixingMeasure& g, const Dataset& batch,
                                                  std::span<const std::size_t> rows = {})
{
    require(batch.n > 0, "grad_mse: empty batch");
    require(batch.d == g.d1(), "grad_mse: input dimension mismatch");
    const Vector theta = g.flatten();
    Vector flat(theta.size());
    detail::GradientWorkspace ws;
    const double mse = detail::batch_mse(spec, family, g.size(), g.d1(), theta, batch, rows, flat, ws);
    return {mse, GradientRecord::unflatten(flat, g.size(), g.d1())};
}

inline double mse(const RouterSpec& spec, const ExpertFamily& family, const MixingMeasure& g, const Dataset& data)
{
    require(data.n > 0 && data.d == g.d1(), "mse: empty data or dimension mismatch");
    const Vector theta = g.flatten();
    detail::GradientWorkspace ws;
    return detail::batch_mse(spec, family, g.size(), g.d1(), theta, data, {}, {}, ws);
}

using Objective = std::function<double(ConstSpan)>;

// Central differences with per-coordinate step h_rel * (1 + |theta_j|).
inline Vector finite_diff_gradient(const Objective& objective, ConstSpan theta, double h_rel = 1e-5)
{
    Vector probe(theta.begin(), theta.end());
    Vector out(theta.size());
    for (std::size_t j = 0; j < theta.size(); ++j) {
        const double h = h_rel * (1.0 + std::abs(theta[j]));
        probe[j] = theta[j] + h;
        const double up = objective(probe);
        probe[j] = theta[j] - h;
        const double down = objective(probe);
        probe[j] = theta[j];
        if (!std::isfinite(up) || !std::isfinite(down))
            throw EvaluationError("finite_diff_gradient: non-finite objective at coordinate " + std::to_string(j));
        out[j] = (up - down) / (2.0 * h);
    }
    return out;
}

namespace detail {

inline void require_admissible(ConstSpan beta1, ConstSpan x)
{
    require(beta1.size() == x.size(), "beta1 and x lengths differ");
    require(norm2(beta1) >= kNormEpsilon && norm2(x) >= kNormEpsilon,
            "identity is stated for nonzero beta1 and x");
}

// d/dc score(c * beta1, x) at c = 1, i.e. beta1^T grad_beta1 score.
inline double scale_derivative(const RouterSpec& spec, ConstSpan beta1, ConstSpan x)
{
    Vector g(beta1.size());
    router_score_grad(spec, beta1, x, norm2(x), g);
    return dot(beta1, g);
}

} // namespace detail

// beta1^T dH/dbeta1 for H(x, beta1, eta) = exp(score) * h(x, eta).
inline double pde_residual(const RouterSpec& spec, ConstSpan beta1, ConstSpan eta, const ExpertFamily& family,
                           ConstSpan x)
{
    detail::require_admissible(beta1, x);
    const double h = expert_value(family, eta, x);
    return std::exp(router_score(spec, beta1, x)) * h * detail::scale_derivative(spec, beta1, x);
}

// t-th derivative at s = 0 of s -> exp(score(x, (1 + s) beta1)); equals the
// t-fold contraction of the beta1-derivative tensor of F with beta1.
inline double homogeneity_residual(const RouterSpec& spec, ConstSpan beta1, ConstSpan x, int t)
{
    detail::require_admissible(beta1, x);
    if (t == 1)
        return std::exp(router_score(spec, beta1, x)) * detail::scale_derivative(spec, beta1, x);
    require(t == 2, "homogeneity_residual supports t = 1 or t = 2");
    constexpr double step = 1e-3;
    auto along = [&](double s) {
        Vector b(beta1.begin(), beta1.end());
        for (double& v : b)
            v *= 1.0 + s;
        return std::exp(router_score(spec, b, x));
    };
    return (along(step) - 2.0 * along(0.0) + along(-step)) / (step * step);
}

// ---------------------------------------------------------------------------
// identifiability

struct IdentifiabilityReport {
    int order = 1;
    std::size_t matrix_rows = 0;
    std::size_t matrix_cols = 0;
    double min_singular_value = 0.0;
    double max_singular_value = 0.0;
    bool deficient = false;
};

struct IdentifiabilityOptions {
    std::size_t d1 = 3;
    std::size_t samples = 512;
    std::size_t repetitions = 16;
    double relative_threshold = 1e-8;
    // Freeze the slope a = 0 so only the bias b varies: the constant expert h = phi(b).
    bool freeze_slope = false;
};

namespace detail {

// Perturbed-cosine score with gradient and Hessian in beta1.
inline double perturbed_score_hessian(const RouterSpec& spec, ConstSpan b, ConstSpan x, std::span<double> grad,
                                      std::span<double> hess)
{
    const std::size_t d = b.size();
    const double nb = norm2(b);
    const double den = nb + spec.tau1;
    const double cx = 1.0 / (norm2(x) + spec.tau2);
    const double p = dot(b, x);
    const double s = cx * p / den;
    const double a1 = 1.0 / (nb * den * den);                  // 1 / (N D^2)
    const double a2 = 1.0 / (nb * nb * nb * den * den) + 2.0 / (nb * nb * den * den * den);
    for (std::size_t u = 0; u < d; ++u) {
        grad[u] = cx * (x[u] / den - p * b[u] * a1);
        for (std::size_t v = 0; v < d; ++v) {
            double h = -x[u] * b[v] * a1 - x[v] * b[u] * a1 + p * b[u] * b[v] * a2;
            if (u == v)
                h -= p * a1;
            hess[u * d + v] = cx * h;
        }
    }
    return s;
}

// Columns of the derivative family of one atom evaluated at one input,
// appended to `out` in a fixed order.
inline void derivative_family_row(const RouterSpec& spec, const ExpertFamily& family, ConstSpan beta1,
                                  ConstSpan eta, ConstSpan x, int order, bool freeze_slope, Vector& out)
{
    const std::size_t d1 = x.size();
    Vector sg(d1), sh(d1 * d1);
    const double s = perturbed_score_hessian(spec, beta1, x, sg, sh);
    const double f = std::exp(s);

    // expert jet over the effective parameter vector
    Vector xt;
    double z = 0.0;
    if (freeze_slope) {
        xt = {1.0};
        z = eta[d1];
    } else {
        xt.assign(x.begin(), x.end());
        xt.push_back(1.0);
        z = expert_preactivation(eta, x);
    }
    const std::size_t pe = xt.size();
    const ActivationJet jet = family.jet(z);

    out.push_back(f * jet.value);
    if (order >= 1) {
        for (std::size_t u = 0; u < d1; ++u)
            out.push_back(f * sg[u] * jet.value);
        for (std::size_t j = 0; j < pe; ++j)
            out.push_back(f * jet.d1 * xt[j]);
    }
    if (order >= 2) {
        for (std::size_t u = 0; u < d1; ++u)
            for (std::size_t v = u; v < d1; ++v)
                out.push_back(f * (sg[u] * sg[v] + sh[u * d1 + v]) * jet.value);
        for (std::size_t u = 0; u < d1; ++u)
            for (std::size_t j = 0; j < pe; ++j)
                out.push_back(f * sg[u] * jet.d1 * xt[j]);
        for (std::size_t i = 0; i < pe; ++i)
            for (std::size_t j = i; j < pe; ++j)
                out.push_back(f * jet.d2 * xt[i] * xt[j]);
    }
}

inline std::size_t derivative_family_size(std::size_t d1, std::size_t pe, int order)
{
    const std::size_t p = d1 + pe;
    std::size_t n = 1;
    if (order >= 1)
        n += p;
    if (order >= 2)
        n += p * (p + 1) / 2;
    return n;
}

} // namespace detail

// Sampled rank test of the derivative family {d^|a| H / d beta1^a1 d eta^a2 :
// |a| <= order} over k atoms with distinct expert parameters. Each repetition
// draws fresh atoms and inputs from (seed, repetition); the worst repetition
// (smallest singular-value ratio) is reported. Columns are scaled to unit norm
// so the test does not depend on parameter units; all-zero columns stay zero.
inline IdentifiabilityReport identifiability_check(const RouterSpec& spec, const ExpertFamily& family, std::size_t k,
                                                   int order, std::uint64_t seed,
                                                   const IdentifiabilityOptions& opt = {})
{
    require(spec.kind == RouterKind::PerturbedCosine, "identifiability_check is defined for the perturbed router");
    require(k >= 1, "identifiability_check: k must be >= 1");
    require(order == 1 || order == 2, "identifiability_check: order must be 1 or 2");
    const std::size_t d1 = opt.d1;
    const std::size_t pe = opt.freeze_slope ? 1 : d1 + 1;
    const std::size_t cols = k * detail::derivative_family_size(d1, pe, order);
    if (opt.samples < cols)
        throw ConfigurationError("identifiability_check: " + std::to_string(opt.samples) +
                                 " samples cannot test " + std::to_string(cols) + " functions");

    IdentifiabilityReport worst{order, opt.samples, cols, 0.0, 0.0, false};
    double worst_ratio = 2.0;
    for (std::size_t rep = 0; rep < opt.repetitions; ++rep) {
        Rng rng(derive_seed(seed, rep));
        std::vector<Atom> atoms(k);
        for (Atom& a : atoms) {
            a.beta1.resize(d1);
            a.eta.assign(d1 + 1, 0.0);
            for (double& v : a.beta1)
                v = rng.normal();
            if (opt.freeze_slope) {
                a.eta[d1] = rng.normal();
            } else {
                for (double& v : a.eta)
                    v = rng.normal();
            }
        }
        Eigen::MatrixXd m(static_cast<Eigen::Index>(opt.samples), static_cast<Eigen::Index>(cols));
        Vector x(d1), row;
        for (std::size_t r = 0; r < opt.samples; ++r) {
            for (double& v : x)
                v = rng.uniform(-1.0, 1.0);
            row.clear();
            for (const Atom& a : atoms)
                detail::derivative_family_row(spec, family, a.beta1, a.eta, x, order, opt.freeze_slope, row);
            for (std::size_t c = 0; c < cols; ++c)
                m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
        }
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const double n = m.col(c).norm();
            if (n > 0.0)
                m.col(c) /= n;
        }
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
        const auto& sv = svd.singularValues();
        const double smax = sv(0);
        const double smin = sv(sv.size() - 1);
        const double ratio = smax > 0.0 ? smin / smax : 0.0;
        if (ratio < worst_ratio) {
            worst_ratio = ratio;
            worst.min_singular_value = smin;
            worst.max_singular_value = smax;
            worst.deficient = smin < opt.relative_threshold * smax;
        }
    }
    return worst;
}

} // namespace cosmoe
