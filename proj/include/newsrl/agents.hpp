#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "newsrl/env.hpp"
#include "newsrl/net.hpp"
#include "newsrl/optim.hpp"

namespace newsrl {

struct DdqnHyper {
    double gamma = 0.95;
    double epsilon_start = 0.05;
    double epsilon_decay = 0.99995;
    double tau = 5e-3;
    int64_t batch_size = 32;
    int64_t horizon_mult = 2; // horizon_len = max_step * mult
    int64_t replay_mult = 2;  // replay_capacity = horizon_len * mult
    int64_t repeat_times = 1;
    double lr = 3e-4;
    double weight_decay = 1e-4;
    double grad_clip = 1.0;

    std::string to_json() const;
    static DdqnHyper from_json(const std::string& text);
};

struct GrpoHyper {
    double gamma = 0.99; // tuned and parsed; episode returns stay undiscounted
    int group_size = 8;
    double clip_eps = 0.2;
    double entropy_coef = 0.01;
    double kl_target = 0.01;
    int64_t repeat_times = 4;
    int64_t batch_size = 128;
    double advantage_std_floor = 1e-8;
    double lr = 3e-4;
    double weight_decay = 1e-4;
    double grad_clip = 1.0;
    double gae_lambda = 0.95; // parsed but inactive: no critic
    double value_coef = 0.5;  // parsed but inactive: no critic

    std::string to_json() const;
    static GrpoHyper from_json(const std::string& text);
};

// One unit of off-policy experience.
struct Transition {
    Tensor state; // (W,F)
    int action = 0;
    double reward = 0.0;
    Tensor next_state; // (W,F)
    bool done = false;
};

// FIFO ring with uniform sampling.
class ReplayBuffer {
public:
    explicit ReplayBuffer(size_t capacity);
    void push(Transition t);
    size_t size() const { return items_.size(); }
    size_t capacity() const { return capacity_; }
    std::vector<const Transition*> sample(size_t n, std::mt19937_64& rng) const;

private:
    size_t capacity_;
    std::deque<Transition> items_;
};

// Epsilon-greedy over precomputed action scores; ties resolve to the lowest
// action index.
int epsilon_greedy(const std::array<double, kNumActions>& scores, double epsilon,
                   std::mt19937_64& rng);
int argmax_action(const std::array<double, kNumActions>& scores);

// Double-DQN targets: the online network picks the next action, the target
// network evaluates it; terminal transitions use the bare reward.
std::vector<double> ddqn_targets(const std::vector<const Transition*>& batch,
                                 const PolicyNet& online, const PolicyNet& target, double gamma);

// target <- (1-tau)*target + tau*online, parameter-wise.
void soft_update(const ParamSet& online, ParamSet& target, double tau);

class DdqnAgent {
public:
    DdqnAgent(PolicyNet net, DdqnHyper hyper, int64_t max_step, uint64_t seed);

    int act(const Tensor& obs);              // epsilon-greedy; call on_env_step() after stepping
    int act_greedy(const Tensor& obs) const; // argmax of online Q
    void observe(Transition t);              // store; decays epsilon (one env step)

    // One minibatch TD update. Returns the loss, or nullopt when the buffer
    // is still underfull.
    std::optional<double> update();
    // update() repeated per collected horizon: repeat_times * horizon / batch.
    int64_t updates_per_horizon() const;
    int64_t horizon_len() const { return hyper_.horizon_mult * max_step_; }

    double epsilon() const { return epsilon_; }
    const DdqnHyper& hyper() const { return hyper_; }
    PolicyNet& net() { return net_; }
    const PolicyNet& net() const { return net_; }
    const PolicyNet& target_net() const { return target_; }
    ReplayBuffer& buffer() { return buffer_; }
    std::mt19937_64& rng() { return rng_; }

private:
    PolicyNet net_;
    PolicyNet target_;
    DdqnHyper hyper_;
    int64_t max_step_;
    AdamW opt_;
    ReplayBuffer buffer_;
    double epsilon_;
    std::mt19937_64 rng_;
};

// Per-step record of an on-policy rollout.
struct GrpoStep {
    Tensor state; // (W,F)
    int action = 0;
    double log_prob_old = 0.0;
};

// G stochastic rollouts from one shared episode window and reset state.
struct GroupRollout {
    std::vector<std::vector<GrpoStep>> trajectories;
    std::vector<double> returns;    // undiscounted episode reward sums
    std::vector<double> advantages; // (r_i - mean) / max(std, floor), broadcast per step
};

// Group-normalized advantages with a population standard deviation.
std::vector<double> grpo_advantages(const std::vector<double>& returns, double std_floor);

struct GrpoUpdateStats {
    double loss = 0.0;
    double mean_kl = 0.0;
    int epochs_run = 0;
    double entropy = 0.0;
};

class GrpoAgent {
public:
    GrpoAgent(PolicyNet net, GrpoHyper hyper, uint64_t seed);

    int act_sample(const Tensor& obs, double* log_prob = nullptr); // ~ softmax policy
    int act_greedy(const Tensor& obs) const;                       // argmax logits

    // Runs hyper.group_size rollouts, each over a fresh env from make_env
    // (same window, same reset state).
    GroupRollout collect(const std::function<std::unique_ptr<Env>()>& make_env);

    // Clipped-surrogate epochs with entropy bonus and KL early stop.
    GrpoUpdateStats update(const GroupRollout& group);

    const GrpoHyper& hyper() const { return hyper_; }
    PolicyNet& net() { return net_; }
    const PolicyNet& net() const { return net_; }
    std::mt19937_64& rng() { return rng_; }

private:
    PolicyNet net_;
    GrpoHyper hyper_;
    AdamW opt_;
    std::mt19937_64 rng_;
};

// Agent checkpoint = network checkpoint + hyperparameters + feature-mode tag
// + rng seed. Restoring reproduces greedy-policy actions bit-exactly.
struct AgentCheckpoint {
    std::string algo; // "ddqn" | "grpo"
    PolicyNet net;
    std::string hyper_json;
    FeatureMode feature_mode = FeatureMode::Returns;
    uint64_t seed = 0;
};

void save_agent_checkpoint(const std::string& path, const std::string& algo, const PolicyNet& net,
                           const std::string& hyper_json, FeatureMode mode, uint64_t seed);
AgentCheckpoint load_agent_checkpoint(const std::string& path);

} // namespace newsrl
