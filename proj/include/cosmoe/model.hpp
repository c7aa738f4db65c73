#pragma once

// Parameter containers and the forward pass of a softmax-gated mixture of
// experts regression model with linear, cosine or perturbed-cosine routing.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cosmoe/errors.hpp"

namespace cosmoe {

using Vector = std::vector<double>;
using ConstSpan = std::span<const double>;

inline constexpr double kNormEpsilon = 1e-12;

// ---------------------------------------------------------------------------
// small dense helpers

inline double dot(ConstSpan a, ConstSpan b)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += a[i] * b[i];
    return acc;
}

inline double norm2(ConstSpan a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(ConstSpan a)
{
    return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

inline void require(bool ok, const std::string& msg)
{
    if (!ok)
        throw ContractViolation(msg);
}

// ---------------------------------------------------------------------------
// routers

enum class RouterKind { Linear, Cosine, PerturbedCosine };

struct RouterSpec {
    RouterKind kind = RouterKind::Cosine;
    double tau1 = 0.0;
    double tau2 = 0.0;

    static RouterSpec linear() { return {RouterKind::Linear, 0.0, 0.0}; }
    static RouterSpec cosine() { return {RouterKind::Cosine, 0.0, 0.0}; }
    static RouterSpec perturbed(double tau1, double tau2)
    {
        RouterSpec spec{RouterKind::PerturbedCosine, tau1, tau2};
        spec.validate();
        return spec;
    }

    void validate() const
    {
        if (kind == RouterKind::PerturbedCosine) {
            require(tau1 > 0.0 && tau2 > 0.0 && std::isfinite(tau1) && std::isfinite(tau2),
                    "perturbed cosine router needs tau1 > 0 and tau2 > 0");
        } else {
            require(tau1 == 0.0 && tau2 == 0.0, "only the perturbed cosine router carries taus");
        }
    }

    std::string name() const
    {
        switch (kind) {
        case RouterKind::Linear: return "linear";
        case RouterKind::Cosine: return "cosine";
        case RouterKind::PerturbedCosine: return "perturbed";
        }
        return "unknown";
    }

    friend bool operator==(const RouterSpec&, const RouterSpec&) = default;
};

// Gating score of one expert embedding against one input.
inline double router_score(const RouterSpec& spec, ConstSpan beta1, ConstSpan x)
{
    require(beta1.size() == x.size(), "router_score: beta1 and x lengths differ");
    const double p = dot(beta1, x);
    switch (spec.kind) {
    case RouterKind::Linear:
        return p;
    case RouterKind::Cosine: {
        const double nb = norm2(beta1);
        const double nx = norm2(x);
        if (nb < kNormEpsilon || nx < kNormEpsilon)
            return 0.0;
        return std::clamp(p / (nb * nx), -1.0, 1.0);
    }
    case RouterKind::PerturbedCosine:
        return p / ((norm2(beta1) + spec.tau1) * (norm2(x) + spec.tau2));
    }
    return 0.0;
}

// Score plus its gradient with respect to beta1. `x_norm` is ||x|| (callers
// cache it across experts). The cosine gradient is zero on the degenerate set.
inline double router_score_grad(const RouterSpec& spec, ConstSpan beta1, ConstSpan x, double x_norm,
                                std::span<double> grad)
{
    const std::size_t d = x.size();
    const double p = dot(beta1, x);
    switch (spec.kind) {
    case RouterKind::Linear:
        std::copy(x.begin(), x.end(), grad.begin());
        return p;
    case RouterKind::Cosine: {
        const double nb = norm2(beta1);
        if (nb < kNormEpsilon || x_norm < kNormEpsilon) {
            std::fill(grad.begin(), grad.end(), 0.0);
            return 0.0;
        }
        const double inv = 1.0 / (nb * x_norm);
        const double s = p * inv;
        const double c = s / (nb * nb);
        for (std::size_t u = 0; u < d; ++u)
            grad[u] = x[u] * inv - c * beta1[u];
        return s;
    }
    case RouterKind::PerturbedCosine: {
        const double nb = norm2(beta1);
        const double den_b = nb + spec.tau1;
        const double cx = 1.0 / (x_norm + spec.tau2);
        const double s = p * cx / den_b;
        // d/db [p / (|b| + t1)] = x/(|b|+t1) - p b / (|b| (|b|+t1)^2); second term vanishes with p at b = 0
        const double c = nb < kNormEpsilon ? 0.0 : p * cx / (nb * den_b * den_b);
        for (std::size_t u = 0; u < d; ++u)
            grad[u] = x[u] * cx / den_b - c * beta1[u];
        return s;
    }
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// experts

enum class ExpertKind { Linear, Polynomial, FFN };
enum class Activation { ReLU, GELU, Tanh, Sigmoid };

inline std::string activation_name(Activation a)
{
    switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::GELU: return "gelu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
    }
    return "unknown";
}

// phi and its first two derivatives at a pre-activation value.
struct ActivationJet {
    double value;
    double d1;
    double d2;
};

struct ExpertFamily {
    ExpertKind kind = ExpertKind::FFN;
    int degree = 1;                        // Polynomial only
    Activation activation = Activation::ReLU; // FFN only

    static ExpertFamily linear() { return {ExpertKind::Linear, 1, Activation::ReLU}; }
    static ExpertFamily polynomial(int p)
    {
        ExpertFamily f{ExpertKind::Polynomial, p, Activation::ReLU};
        f.validate();
        return f;
    }
    static ExpertFamily ffn(Activation a) { return {ExpertKind::FFN, 1, a}; }

    void validate() const
    {
        if (kind == ExpertKind::Polynomial)
            require(degree >= 2, "polynomial experts need degree >= 2");
    }

    std::string name() const
    {
        switch (kind) {
        case ExpertKind::Linear: return "linear";
        case ExpertKind::Polynomial: return "poly" + std::to_string(degree);
        case ExpertKind::FFN: return "ffn-" + activation_name(activation);
        }
        return "unknown";
    }

    // Expert parameter length for input dimension d1: eta = (a, b).
    static constexpr std::size_t eta_size(std::size_t d1) noexcept { return d1 + 1; }

    ActivationJet jet(double z) const
    {
        switch (kind) {
        case ExpertKind::Linear:
            return {z, 1.0, 0.0};
        case ExpertKind::Polynomial: {
            const double p = degree;
            const double zp2 = std::pow(z, degree - 2);
            return {zp2 * z * z, p * zp2 * z, p * (p - 1.0) * zp2};
        }
        case ExpertKind::FFN:
            switch (activation) {
            case Activation::ReLU:
                // subgradient 0 at the kink
                return z > 0.0 ? ActivationJet{z, 1.0, 0.0} : ActivationJet{0.0, 0.0, 0.0};
            case Activation::GELU: {
                const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
                const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
                return {z * cdf, cdf + z * pdf, (2.0 - z * z) * pdf};
            }
            case Activation::Tanh: {
                const double t = std::tanh(z);
                const double s = 1.0 - t * t;
                return {t, s, -2.0 * t * s};
            }
            case Activation::Sigmoid: {
                const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
                const double s1 = s * (1.0 - s);
                return {s, s1, s1 * (1.0 - 2.0 * s)};
            }
            }
        }
        return {0.0, 0.0, 0.0};
    }

    friend bool operator==(const ExpertFamily&, const ExpertFamily&) = default;
};

// Pre-activation a^T x + b for eta = (a, b).
inline double expert_preactivation(ConstSpan eta, ConstSpan x)
{
    return dot(eta.first(x.size()), x) + eta[x.size()];
}

inline double expert_value(const ExpertFamily& family, ConstSpan eta, ConstSpan x)
{
    require(eta.size() == ExpertFamily::eta_size(x.size()), "expert_value: eta must have length d1 + 1");
    return family.jet(expert_preactivation(eta, x)).value;
}

// ---------------------------------------------------------------------------
// parameters

struct Atom {
    double beta0 = 0.0;
    Vector beta1;
    Vector eta;

    friend bool operator==(const Atom&, const Atom&) = default;
};

class MixingMeasure {
public:
    MixingMeasure() = default;

    explicit MixingMeasure(std::vector<Atom> atoms) : atoms_(std::move(atoms))
    {
        require(!atoms_.empty(), "a mixing measure needs at least one atom");
        const std::size_t d1 = atoms_.front().beta1.size();
        require(d1 >= 1, "router vectors must be non-empty");
        for (const Atom& a : atoms_) {
            require(a.beta1.size() == d1, "atoms disagree on the router dimension");
            require(a.eta.size() == ExpertFamily::eta_size(d1), "expert parameters must have length d1 + 1");
            require(std::isfinite(a.beta0) && all_finite(a.beta1) && all_finite(a.eta),
                    "atom parameters must be finite");
        }
    }

    std::size_t size() const noexcept { return atoms_.size(); }
    bool empty() const noexcept { return atoms_.empty(); }
    std::size_t d1() const noexcept { return atoms_.empty() ? 0 : atoms_.front().beta1.size(); }
    std::size_t d2() const noexcept { return atoms_.empty() ? 0 : atoms_.front().eta.size(); }
    const Atom& operator[](std::size_t i) const { return atoms_[i]; }
    const std::vector<Atom>& atoms() const noexcept { return atoms_; }
    auto begin() const noexcept { return atoms_.begin(); }
    auto end() const noexcept { return atoms_.end(); }

    // Flat layout [beta0 (k) | beta1 (k*d1) | eta (k*d2)].
    std::size_t parameter_count() const noexcept { return size() * (1 + d1() + d2()); }

    Vector flatten() const
    {
        Vector theta;
        theta.reserve(parameter_count());
        for (const Atom& a : atoms_)
            theta.push_back(a.beta0);
        for (const Atom& a : atoms_)
            theta.insert(theta.end(), a.beta1.begin(), a.beta1.end());
        for (const Atom& a : atoms_)
            theta.insert(theta.end(), a.eta.begin(), a.eta.end());
        return theta;
    }

    static MixingMeasure unflatten(ConstSpan theta, std::size_t k, std::size_t d1)
    {
        const std::size_t d2 = ExpertFamily::eta_size(d1);
        require(theta.size() == k * (1 + d1 + d2), "unflatten: parameter vector has the wrong length");
        std::vector<Atom> atoms(k);
        for (std::size_t i = 0; i < k; ++i) {
            atoms[i].beta0 = theta[i];
            const auto b1 = theta.subspan(k + i * d1, d1);
            const auto et = theta.subspan(k + k * d1 + i * d2, d2);
            atoms[i].beta1.assign(b1.begin(), b1.end());
            atoms[i].eta.assign(et.begin(), et.end());
        }
        return MixingMeasure(std::move(atoms));
    }

    friend bool operator==(const MixingMeasure&, const MixingMeasure&) = default;

private:
    std::vector<Atom> atoms_;
};

// Inputs in row-major order.
struct Dataset {
    std::size_t n = 0;
    std::size_t d = 0;
    Vector x;
    Vector y;
    double sigma2 = 0.0;

    ConstSpan row(std::size_t i) const { return ConstSpan(x).subspan(i * d, d); }

    void validate() const
    {
        require(x.size() == n * d, "dataset: X shape mismatch");
        require(y.size() == n, "dataset: row count of X differs from length of Y");
        require(all_finite(x) && all_finite(y), "dataset entries must be finite");
    }
};

// ---------------------------------------------------------------------------
// forward pass

// Numerically stable softmax, in place.
inline void softmax_inplace(std::span<double> v)
{
    const double m = *std::max_element(v.begin(), v.end());
    double total = 0.0;
    for (double& e : v) {
        e = std::exp(e - m);
        total += e;
    }
    for (double& e : v)
        e /= total;
}

inline Vector gating_weights(const RouterSpec& spec, const MixingMeasure& g, ConstSpan x)
{
    require(!g.empty(), "gating_weights: empty mixing measure");
    require(x.size() == g.d1(), "gating_weights: input dimension mismatch");
    Vector w(g.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        w[i] = router_score(spec, g[i].beta1, x) + g[i].beta0;
    softmax_inplace(w);
    return w;
}

inline double predict(const RouterSpec& spec, const ExpertFamily& family, const MixingMeasure& g, ConstSpan x)
{
    const Vector w = gating_weights(spec, g, x);
    double f = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        f += w[i] * expert_value(family, g[i].eta, x);
    return f;
}

} // namespace cosmoe
