#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "newsrl/tensor.hpp"

namespace newsrl {

// Per-parameter AdamW state. Decoupled weight decay:
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * p
struct AdamWState {
    int64_t step = 0;
    std::vector<double> m;
    std::vector<double> v;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double lr = 1e-3;
    double weight_decay = 0.0;
    double epsilon = 1e-8;
};

// Single update. Throws NumericError on a non-finite gradient; the parameter
// and state are left untouched in that case.
void adamw_step(Tensor& param, const Tensor& grad, AdamWState& state);

// Scales all gradients by max_norm/global_norm when the global L2 norm
// exceeds max_norm. Returns the original global norm.
double clip_grad_norm(std::vector<Tensor*> grads, double max_norm);

// Named parameter set shared by all backbones. Iteration order is the name
// order, which keeps serialization and updates deterministic.
using ParamSet = std::map<std::string, Tensor>;

class AdamW {
public:
    AdamW() = default;
    AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double epsilon = 1e-8);

    // Applies one clipped AdamW step over every named gradient present.
    // Returns the pre-clip global gradient norm.
    double update(ParamSet& params, const std::map<std::string, Tensor>& grads, double max_grad_norm);

    double lr() const { return lr_; }
    void reset();

private:
    double lr_ = 1e-3;
    double weight_decay_ = 0.0;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double epsilon_ = 1e-8;
    std::map<std::string, AdamWState> states_;
};

} // namespace newsrl
