#pragma once

// Central-difference gradient check for the perceptron loss.

#include <algorithm>
#include <cmath>
#include <vector>

#include "owl/perceptron.hpp"

namespace owl::test {

struct GradCheckInstance {
    mlp::PerceptronModel model;
    std::vector<LabeledVector> batch;
};

inline GradCheckInstance random_grad_instance(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t input = 4 + rng.bounded(6);
    const std::size_t classes = 2 + rng.bounded(4);
    std::vector<ClassId> ids;
    for (std::size_t c = 0; c < classes; ++c) ids.push_back(static_cast<ClassId>(3 * c + 1));
    auto model = mlp::init_model(input, ids, seed * 7 + 1);
    for (auto& b : model.b1) b = 0.1 * rng.normal();
    for (auto& b : model.b2) b = 0.1 * rng.normal();
    std::vector<LabeledVector> batch;
    const std::size_t n = 1 + rng.bounded(6);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<float> v(input);
        for (auto& x : v) x = static_cast<float>(rng.normal());
        batch.push_back({FeatureVector(v), ids[rng.bounded(classes)]});
    }
    return {std::move(model), std::move(batch)};
}

// Largest relative error |analytic - numeric| / max(|analytic|, |numeric|, 1e-6)
// over every parameter, using central differences with step h.
inline double max_gradient_error(const GradCheckInstance& inst, double h = 1e-4) {
    mlp::Gradients g;
    mlp::loss_and_gradient(inst.model, inst.batch, &g);
    auto m = inst.model;
    double worst = 0.0;
    const auto probe = [&](std::vector<double>& params, const std::vector<double>& analytic) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double saved = params[i];
            params[i] = saved + h;
            const double up = mlp::loss_and_gradient(m, inst.batch, nullptr);
            params[i] = saved - h;
            const double down = mlp::loss_and_gradient(m, inst.batch, nullptr);
            params[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
            worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
        }
    };
    probe(m.w1.data, g.w1.data);
    probe(m.b1, g.b1);
    probe(m.w2.data, g.w2.data);
    probe(m.b2, g.b2);
    return worst;
}

}  // namespace owl::test
