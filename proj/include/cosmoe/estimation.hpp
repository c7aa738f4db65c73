#pragma once

// Least-squares fitting by plain mini-batch SGD from an initialization near
// the generating parameters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "cosmoe/calculus.hpp"
#include "cosmoe/errors.hpp"
#include "cosmoe/model.hpp"
#include "cosmoe/random.hpp"

namespace cosmoe {

struct SgdConfig {
    int epochs = 10;
    double learning_rate = 0.1;
    std::size_t batch_size = 32;
    double init_scale = 0.01;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (epochs < 0 || !(learning_rate > 0.0) || batch_size < 1 || !(init_scale >= 0.0))
            throw ConfigurationError("sgd: need epochs >= 0, learning_rate > 0, batch_size >= 1, init_scale >= 0");
    }
};

// Perturbed copy of the truth. With one extra atom, true atom 1 is split in two
// (fitted atoms 1 and k*+1) with log-weight beta0* - ln 2 each before noise.
inline MixingMeasure init_near(const MixingMeasure& truth, std::size_t k_fit, double init_scale, std::uint64_t seed)
{
    const std::size_t k_star = truth.size();
    if (k_fit < k_star || k_fit > k_star + 1)
        throw ConfigurationError("init_near: k_fit must be k* or k* + 1 (got " + std::to_string(k_fit) +
                                 ", k* = " + std::to_string(k_star) + ")");
    std::vector<Atom> atoms(truth.atoms());
    if (k_fit == k_star + 1) {
        atoms[0].beta0 -= std::log(2.0);
        atoms.push_back(atoms[0]);
    }
    Rng rng(seed);
    for (Atom& a : atoms) {
        a.beta0 += init_scale * rng.normal();
        for (double& v : a.beta1)
            v += init_scale * rng.normal();
        for (double& v : a.eta)
            v += init_scale * rng.normal();
    }
    return MixingMeasure(std::move(atoms));
}

// epochs * ceil(n / batch_size) steps of theta -= lr * grad_mse(batch); the row
// order is reshuffled every epoch from cfg.seed.
inline MixingMeasure sgd_fit(const RouterSpec& spec, const ExpertFamily& family, const Dataset& data,
                             const MixingMeasure& g0, const SgdConfig& cfg)
{
    cfg.validate();
    require(data.n > 0, "sgd_fit: empty dataset");
    require(data.d == g0.d1(), "sgd_fit: input dimension mismatch");
    if (cfg.epochs == 0)
        return g0;

    const std::size_t k = g0.size();
    const std::size_t d1 = g0.d1();
    Vector theta = g0.flatten();
    Vector grad(theta.size());
    detail::GradientWorkspace ws;
    std::vector<std::size_t> order(data.n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(cfg.seed);

    std::size_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < data.n; start += cfg.batch_size, ++step) {
            const std::size_t len = std::min(cfg.batch_size, data.n - start);
            const std::span<const std::size_t> rows(order.data() + start, len);
            const double loss = detail::batch_mse(spec, family, k, d1, theta, data, rows, grad, ws);
            if (!std::isfinite(loss) || !all_finite(grad))
                throw DivergenceError(step, "sgd_fit: non-finite loss at step " + std::to_string(step));
            for (std::size_t j = 0; j < theta.size(); ++j)
                theta[j] -= cfg.learning_rate * grad[j];
            if (!all_finite(theta))
                throw DivergenceError(step, "sgd_fit: non-finite parameters after step " + std::to_string(step));
        }
    }
    return MixingMeasure::unflatten(theta, k, d1);
}

} // namespace cosmoe
