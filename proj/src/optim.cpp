#include "newsrl/optim.hpp"

#include <cmath>

namespace newsrl {

void adamw_step(Tensor& param, const Tensor& grad, AdamWState& state) {
    if (!same_shape(param.shape, grad.shape)) {
        throw ShapeError("adamw_step: grad shape " + shape_str(grad.shape) + " != param shape " +
                         shape_str(param.shape));
    }
    for (double g : grad.values) {
        if (!std::isfinite(g)) throw NumericError("adamw_step: non-finite gradient, update aborted");
    }
    const size_t n = param.values.size();
    if (state.m.empty()) state.m.assign(n, 0.0);
    if (state.v.empty()) state.v.assign(n, 0.0);
    if (state.m.size() != n || state.v.size() != n) {
        throw ShapeError("adamw_step: moment size does not match parameter");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < n; ++i) {
        const double g = grad.values[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        param.values[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon) +
                           state.lr * state.weight_decay * param.values[i];
    }
}

double clip_grad_norm(std::vector<Tensor*> grads, double max_norm) {
    if (!(max_norm > 0.0)) throw NumericError("clip_grad_norm: max_norm must be positive");
    double sq = 0.0;
    for (const Tensor* g : grads)
        for (double x : g->values) sq += x * x;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && std::isfinite(max_norm)) {
        const double s = max_norm / norm;
        for (Tensor* g : grads)
            for (double& x : g->values) x *= s;
    }
    return norm;
}

AdamW::AdamW(double lr, double weight_decay, double beta1, double beta2, double epsilon)
    : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

double AdamW::update(ParamSet& params, const std::map<std::string, Tensor>& grads,
                     double max_grad_norm) {
    std::map<std::string, Tensor> clipped = grads;
    std::vector<Tensor*> ptrs;
    ptrs.reserve(clipped.size());
    for (auto& [name, g] : clipped) ptrs.push_back(&g);
    const double norm = clip_grad_norm(ptrs, max_grad_norm);
    for (auto& [name, g] : clipped) {
        auto it = params.find(name);
        if (it == params.end()) throw ShapeError("AdamW::update: unknown parameter '" + name + "'");
        auto& st = states_[name];
        st.lr = lr_;
        st.weight_decay = weight_decay_;
        st.beta1 = beta1_;
        st.beta2 = beta2_;
        st.epsilon = epsilon_;
        adamw_step(it->second, g, st);
    }
    return norm;
}

void AdamW::reset() { states_.clear(); }

} // namespace newsrl
