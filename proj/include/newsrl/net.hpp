#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "newsrl/optim.hpp"
#include "newsrl/tensor.hpp"

namespace newsrl {

inline constexpr int kNumActions = 3;

enum class NetKind { Mlp, Lstm, Transformer };

std::string net_kind_name(NetKind k);
NetKind net_kind_from_name(const std::string& name);

struct MlpConfig {
    int64_t h1 = 64;
    int64_t h2 = 64;
};

struct LstmConfig {
    int64_t hidden = 64;
    int64_t layers = 1;
    int64_t window = 20;
};

struct TransformerConfig {
    int64_t layers = 1;
    int64_t heads = 2;
    int64_t model_dim = 64;
    int64_t ff_dim = 64;
    double pos_init_std = 0.1;
    int64_t window = 20;
};

// One backbone plus its 3-way action head. Owns the parameters; forward
// passes record onto a caller-provided tape so the same code serves
// inference (tape discarded) and training (tape swept).
class PolicyNet {
public:
    PolicyNet() = default;

    static PolicyNet make_mlp(const MlpConfig& cfg, int64_t feature_dim, uint64_t seed);
    static PolicyNet make_lstm(const LstmConfig& cfg, int64_t feature_dim, uint64_t seed);
    static PolicyNet make_transformer(const TransformerConfig& cfg, int64_t feature_dim, uint64_t seed);

    NetKind kind() const { return kind_; }
    int64_t window() const;
    int64_t feature_dim() const { return feature_dim_; }

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    // obs: (B, window, F). Returns (B, 3) action scores (Q-values / logits).
    // When param_nodes is given it receives the tape node id of every bound
    // parameter, for gradient lookup after a backward sweep.
    Tensor forward(Tape& tape, const Tensor& obs,
                   std::map<std::string, int>* param_nodes = nullptr) const;

    // Detached convenience for a single observation (window, F) -> 3 scores.
    // Runs on an inference tape (no activations stored).
    std::array<double, kNumActions> scores(const Tensor& obs) const;

    // Batched inference: obs (B, window, F) -> B score triples.
    std::vector<std::array<double, kNumActions>> scores_batch(const Tensor& obs) const;

    // JSON describing architecture kind and config fields; embedded in
    // checkpoint headers.
    std::string config_json() const;
    static PolicyNet from_config_json(const std::string& json_text, ParamSet params);

private:
    NetKind kind_ = NetKind::Mlp;
    int64_t feature_dim_ = 0;
    MlpConfig mlp_{};
    LstmConfig lstm_{};
    TransformerConfig tr_{};
    ParamSet params_;

    Tensor forward_mlp(Tape& tape, const std::map<std::string, Tensor>& p, const Tensor& x) const;
    Tensor forward_lstm(Tape& tape, const std::map<std::string, Tensor>& p, const Tensor& x) const;
    Tensor forward_transformer(Tape& tape, const std::map<std::string, Tensor>& p, const Tensor& x) const;
};

// Xavier-uniform init for a (rows, cols) weight matrix.
Tensor xavier_uniform(int64_t rows, int64_t cols, std::mt19937_64& rng);

} // namespace newsrl
