#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "newsrl/data.hpp"
#include "newsrl/synthetic.hpp"
#include "newsrl/tensor.hpp"

namespace newsrl::testing {

inline Tensor rand_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                          double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(static_cast<size_t>(numel(shape)));
    for (double& x : v) x = dist(rng);
    return Tensor(shape, std::move(v));
}

// Central finite differences against the analytic gradients of a scalar loss.
// fn must rebuild the loss from the (already leafed) inputs on the given tape.
// Returns the maximum relative error over all input elements.
inline double max_grad_rel_error(
    const std::function<Tensor(Tape&, std::vector<Tensor>&)>& fn, std::vector<Tensor> inputs,
    double h = 1e-5) {
    Tape tape;
    std::vector<Tensor> leafed;
    leafed.reserve(inputs.size());
    for (const auto& t : inputs) leafed.push_back(tape.leaf(t));
    Tensor loss = fn(tape, leafed);
    GradMap grads = tape.backward(loss);

    auto loss_at = [&](const std::vector<Tensor>& pts) {
        Tape t2;
        std::vector<Tensor> l2;
        l2.reserve(pts.size());
        for (const auto& t : pts) l2.push_back(t2.leaf(t));
        return fn(t2, l2).item();
    };

    double worst = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        const Tensor g = grads.of(leafed[i]);
        for (size_t j = 0; j < inputs[i].values.size(); ++j) {
            std::vector<Tensor> plus = inputs, minus = inputs;
            plus[i].values[j] += h;
            minus[i].values[j] -= h;
            const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
            const double a = g.values[j];
            const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-5});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

// Small aligned-frame fixture straight from the synthetic market.
inline std::vector<AlignedFrame> synthetic_frames(int64_t n_minutes = 2000, double drift = 0.004,
                                                  double amplitude = 3.0, double period = 180.0) {
    SyntheticMarketSpec spec;
    spec.n_minutes = n_minutes;
    spec.drift_per_min = drift;
    spec.amplitude = amplitude;
    spec.period_minutes = period;
    const auto bars = synthetic_bars(spec);
    const auto news = synthetic_news(spec, bars);
    return forward_fill_scores(bars, synthetic_scored_news(news));
}

} // namespace newsrl::testing
