#pragma once

// Voronoi-cell losses between a fitted and a generating mixing measure,
// Monte-Carlo L2(mu) distances between regression functions, and the
// vanishing-ratio sequences that separate the cosine router from its
// perturbed variant.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cosmoe/errors.hpp"
#include "cosmoe/model.hpp"
#include "cosmoe/random.hpp"

namespace cosmoe {

struct VoronoiAssignment {
    std::vector<std::vector<std::size_t>> cells; // one per true atom
    Vector distances;                            // one per fitted atom
    std::vector<std::size_t> owner;              // true atom index per fitted atom
};

struct LossKind {
    enum class Variant { L1, L2, L3 };
    Variant variant = Variant::L3;
    double r = 1.0; // L1 only

    static LossKind l1(double r)
    {
        require(r >= 1.0, "L1 loss needs r >= 1");
        return {Variant::L1, r};
    }
    static LossKind l2() { return {Variant::L2, 1.0}; }
    static LossKind l3() { return {Variant::L3, 1.0}; }

    std::string name() const
    {
        switch (variant) {
        case Variant::L1: {
            std::string s = std::to_string(r);
            s.erase(s.find_last_not_of('0') + 1);
            if (s.back() == '.')
                s.pop_back();
            return "L1r" + s;
        }
        case Variant::L2: return "L2";
        case Variant::L3: return "L3";
        }
        return "unknown";
    }
};

namespace detail {

inline double sq_distance(ConstSpan a, ConstSpan b)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double t = a[i] - b[i];
        acc += t * t;
    }
    return acc;
}

inline double distance(ConstSpan a, ConstSpan b) { return std::sqrt(sq_distance(a, b)); }

} // namespace detail

// Each fitted atom joins the cell of the nearest true atom in the concatenated
// (beta1, eta) space; ties go to the smallest true index.
inline VoronoiAssignment voronoi_assign(const MixingMeasure& g, const MixingMeasure& truth)
{
    require(!g.empty() && !truth.empty(), "voronoi_assign: empty mixing measure");
    require(g.d1() == truth.d1(), "voronoi_assign: dimension mismatch");
    VoronoiAssignment out;
    out.cells.resize(truth.size());
    out.distances.resize(g.size());
    out.owner.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < truth.size(); ++j) {
            const double dist = detail::sq_distance(g[i].beta1, truth[j].beta1) + detail::sq_distance(g[i].eta, truth[j].eta);
            if (dist < best) {
                best = dist;
                best_j = j;
            }
        }
        out.cells[best_j].push_back(i);
        out.distances[i] = std::sqrt(best);
        out.owner[i] = best_j;
    }
    return out;
}

inline double voronoi_loss(const MixingMeasure& g, const MixingMeasure& truth, const LossKind& kind)
{
    const VoronoiAssignment cells = voronoi_assign(g, truth);
    double loss = 0.0;
    for (std::size_t j = 0; j < truth.size(); ++j) {
        const auto& cell = cells.cells[j];
        double mass = 0.0;
        for (std::size_t i : cell)
            mass += std::exp(g[i].beta0);
        loss += std::abs(mass - std::exp(truth[j].beta0));

        for (std::size_t i : cell) {
            const double db = detail::distance(g[i].beta1, truth[j].beta1);
            const double de = detail::distance(g[i].eta, truth[j].eta);
            double term = 0.0;
            switch (kind.variant) {
            case LossKind::Variant::L1:
                term = std::pow(db, kind.r) + std::pow(de, kind.r);
                break;
            case LossKind::Variant::L2:
                term = cell.size() == 1 ? db + de : db * db + de * de;
                break;
            case LossKind::Variant::L3:
                term = db + de;
                break;
            }
            loss += std::exp(g[i].beta0) * term;
        }
    }
    return loss;
}

// Inputs drawn uniformly from [-1, 1]^d, row-major.
inline Vector uniform_inputs(std::size_t n, std::size_t d, std::uint64_t seed)
{
    Rng rng(seed);
    Vector x(n * d);
    for (double& v : x)
        v = rng.uniform(-1.0, 1.0);
    return x;
}

// Monte-Carlo estimate of ||f_a - f_b|| in L2(Uniform([-1,1]^d)).
inline double l2mu_distance(const RouterSpec& spec, const ExpertFamily& family, const MixingMeasure& ga,
                            const MixingMeasure& gb, std::size_t n_mc, std::uint64_t seed)
{
    require(n_mc >= 1, "l2mu_distance: n_mc must be >= 1");
    require(ga.d1() == gb.d1(), "l2mu_distance: dimension mismatch");
    const std::size_t d = ga.d1();
    const Vector xs = uniform_inputs(n_mc, d, seed);
    double acc = 0.0;
    for (std::size_t s = 0; s < n_mc; ++s) {
        const ConstSpan x = ConstSpan(xs).subspan(s * d, d);
        const double diff = predict(spec, family, ga, x) - predict(spec, family, gb, x);
        acc += diff * diff;
    }
    return std::sqrt(acc / static_cast<double>(n_mc));
}

enum class SequenceSetting { Exact, Over };

// Exact: beta1 of atom 1 scaled by (1 + 1/n), everything else copied.
// Over: atom 1 split into two atoms of half weight with beta1 scaled by
// (1 - 1/n) and (1 + 1/n) and shared eta; the remaining atoms follow.
inline MixingMeasure adversarial_sequence(const MixingMeasure& truth, std::size_t n, SequenceSetting setting)
{
    require(n >= 1, "adversarial_sequence: n must be >= 1");
    require(norm2(truth[0].beta1) >= kNormEpsilon, "adversarial_sequence: atom 1 needs a nonzero router vector");
    const double step = 1.0 / static_cast<double>(n);
    std::vector<Atom> atoms(truth.atoms());
    if (setting == SequenceSetting::Exact) {
        for (double& v : atoms[0].beta1)
            v *= 1.0 + step;
        return MixingMeasure(std::move(atoms));
    }
    Atom lo = truth[0];
    Atom hi = truth[0];
    lo.beta0 = hi.beta0 = truth[0].beta0 - std::log(2.0);
    for (double& v : lo.beta1)
        v *= 1.0 - step;
    for (double& v : hi.beta1)
        v *= 1.0 + step;
    atoms[0] = std::move(lo);
    atoms.insert(atoms.begin() + 1, std::move(hi));
    return MixingMeasure(std::move(atoms));
}

struct RatioRow {
    std::size_t n = 0;
    double loss = 0.0;
    double distance = 0.0;
    double ratio = 0.0;
};

// Per n: L1,r(G_n, G*), the L2(mu) distance between the regression functions,
// and their ratio. Pointwise differences below the rounding resolution of the
// two predictions (8 ulp of their magnitudes) count as zero, so exact
// invariances of the router are reported as exact zeros rather than as
// accumulated rounding.
inline std::vector<RatioRow> ratio_diagnostic(const RouterSpec& spec, const ExpertFamily& family,
                                              const MixingMeasure& truth, const std::vector<std::size_t>& ns,
                                              double r, std::size_t n_mc, std::uint64_t seed,
                                              SequenceSetting setting = SequenceSetting::Exact)
{
    for (std::size_t i = 1; i < ns.size(); ++i)
        require(ns[i] > ns[i - 1], "ratio_diagnostic: ns must be increasing");
    require(n_mc >= 1, "ratio_diagnostic: n_mc must be >= 1");
    const LossKind kind = LossKind::l1(r);
    const std::size_t d = truth.d1();
    const Vector xs = uniform_inputs(n_mc, d, seed);
    constexpr double resolution = 8.0 * std::numeric_limits<double>::epsilon();

    std::vector<RatioRow> rows;
    for (std::size_t n : ns) {
        const MixingMeasure gn = adversarial_sequence(truth, n, setting);
        double acc = 0.0;
        for (std::size_t s = 0; s < n_mc; ++s) {
            const ConstSpan x = ConstSpan(xs).subspan(s * d, d);
            const double fa = predict(spec, family, gn, x);
            const double fb = predict(spec, family, truth, x);
            const double diff = fa - fb;
            if (std::abs(diff) > resolution * (std::abs(fa) + std::abs(fb)))
                acc += diff * diff;
        }
        RatioRow row;
        row.n = n;
        row.loss = voronoi_loss(gn, truth, kind);
        row.distance = std::sqrt(acc / static_cast<double>(n_mc));
        row.ratio = row.distance / row.loss;
        rows.push_back(row);
    }
    return rows;
}

} // namespace cosmoe
