#include "newsrl/agents.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "newsrl/checkpoint.hpp"

namespace newsrl {

using nlohmann::json;

std::string DdqnHyper::to_json() const {
    json j{{"gamma", gamma},         {"epsilon_start", epsilon_start},
           {"epsilon_decay", epsilon_decay}, {"tau", tau},
           {"batch_size", batch_size},       {"horizon_mult", horizon_mult},
           {"replay_mult", replay_mult},     {"repeat_times", repeat_times},
           {"lr", lr},                       {"weight_decay", weight_decay},
           {"grad_clip", grad_clip}};
    return j.dump();
}

DdqnHyper DdqnHyper::from_json(const std::string& text) {
    json j = json::parse(text);
    DdqnHyper h;
    h.gamma = j.value("gamma", h.gamma);
    h.epsilon_start = j.value("epsilon_start", h.epsilon_start);
    h.epsilon_decay = j.value("epsilon_decay", h.epsilon_decay);
    h.tau = j.value("tau", h.tau);
    h.batch_size = j.value("batch_size", h.batch_size);
    h.horizon_mult = j.value("horizon_mult", h.horizon_mult);
    h.replay_mult = j.value("replay_mult", h.replay_mult);
    h.repeat_times = j.value("repeat_times", h.repeat_times);
    h.lr = j.value("lr", h.lr);
    h.weight_decay = j.value("weight_decay", h.weight_decay);
    h.grad_clip = j.value("grad_clip", h.grad_clip);
    return h;
}

std::string GrpoHyper::to_json() const {
    json j{{"gamma", gamma},
           {"group_size", group_size},
           {"clip_eps", clip_eps},
           {"entropy_coef", entropy_coef},
           {"kl_target", kl_target},
           {"repeat_times", repeat_times},
           {"batch_size", batch_size},
           {"advantage_std_floor", advantage_std_floor},
           {"lr", lr},
           {"weight_decay", weight_decay},
           {"grad_clip", grad_clip},
           {"gae_lambda", gae_lambda},
           {"value_coef", value_coef}};
    return j.dump();
}

GrpoHyper GrpoHyper::from_json(const std::string& text) {
    json j = json::parse(text);
    GrpoHyper h;
    h.gamma = j.value("gamma", h.gamma);
    h.group_size = j.value("group_size", h.group_size);
    h.clip_eps = j.value("clip_eps", h.clip_eps);
    h.entropy_coef = j.value("entropy_coef", h.entropy_coef);
    h.kl_target = j.value("kl_target", h.kl_target);
    h.repeat_times = j.value("repeat_times", h.repeat_times);
    h.batch_size = j.value("batch_size", h.batch_size);
    h.advantage_std_floor = j.value("advantage_std_floor", h.advantage_std_floor);
    h.lr = j.value("lr", h.lr);
    h.weight_decay = j.value("weight_decay", h.weight_decay);
    h.grad_clip = j.value("grad_clip", h.grad_clip);
    h.gae_lambda = j.value("gae_lambda", h.gae_lambda);
    h.value_coef = j.value("value_coef", h.value_coef);
    return h;
}

ReplayBuffer::ReplayBuffer(size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw DataError("replay buffer: zero capacity");
}

void ReplayBuffer::push(Transition t) {
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(t));
}

std::vector<const Transition*> ReplayBuffer::sample(size_t n, std::mt19937_64& rng) const {
    if (items_.empty()) throw DataError("replay buffer: sample from empty buffer");
    std::uniform_int_distribution<size_t> dist(0, items_.size() - 1);
    std::vector<const Transition*> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) out.push_back(&items_[dist(rng)]);
    return out;
}

int argmax_action(const std::array<double, kNumActions>& scores) {
    int best = 0;
    for (int a = 1; a < kNumActions; ++a) {
        if (scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(best)]) best = a;
    }
    return best;
}

int epsilon_greedy(const std::array<double, kNumActions>& scores, double epsilon,
                   std::mt19937_64& rng) {
    if (epsilon < 0.0 || epsilon > 1.0) throw DataError("epsilon_greedy: epsilon outside [0,1]");
    if (epsilon > 0.0) {
        std::uniform_real_distribution<double> coin(0.0, 1.0);
        if (coin(rng) < epsilon) {
            std::uniform_int_distribution<int> pick(0, kNumActions - 1);
            return pick(rng);
        }
    }
    return argmax_action(scores);
}

namespace {

// Stacks single observations (W,F) into one (B,W,F) batch tensor.
Tensor stack_states(const std::vector<const Tensor*>& states) {
    const Shape& s0 = states.front()->shape;
    const int64_t b = static_cast<int64_t>(states.size());
    const int64_t per = numel(s0);
    std::vector<double> v(static_cast<size_t>(b * per));
    for (int64_t i = 0; i < b; ++i) {
        std::copy_n(states[static_cast<size_t>(i)]->values.data(), per,
                    &v[static_cast<size_t>(i * per)]);
    }
    return Tensor({b, s0[0], s0[1]}, std::move(v));
}

} // namespace

std::vector<double> ddqn_targets(const std::vector<const Transition*>& batch,
                                 const PolicyNet& online, const PolicyNet& target, double gamma) {
    std::vector<const Tensor*> next_states;
    next_states.reserve(batch.size());
    for (const auto* t : batch) next_states.push_back(&t->next_state);
    Tensor next = stack_states(next_states);
    Tape tape(GradMode::Off); // targets are detached by definition
    Tensor q_online = online.forward(tape, next);   // action selection
    Tensor q_target = target.forward(tape, next);   // value estimation
    std::vector<double> y(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
        if (batch[i]->done) {
            y[i] = batch[i]->reward;
            continue;
        }
        std::array<double, kNumActions> qo{q_online.at2(static_cast<int64_t>(i), 0),
                                           q_online.at2(static_cast<int64_t>(i), 1),
                                           q_online.at2(static_cast<int64_t>(i), 2)};
        const int a_star = argmax_action(qo);
        y[i] = batch[i]->reward + gamma * q_target.at2(static_cast<int64_t>(i), a_star);
    }
    return y;
}

void soft_update(const ParamSet& online, ParamSet& target, double tau) {
    if (!(tau > 0.0 && tau <= 1.0)) throw DataError("soft_update: tau outside (0,1]");
    for (auto& [name, t] : target) {
        const Tensor& o = online.at(name);
        for (size_t i = 0; i < t.values.size(); ++i) {
            t.values[i] = (1.0 - tau) * t.values[i] + tau * o.values[i];
        }
    }
}

DdqnAgent::DdqnAgent(PolicyNet net, DdqnHyper hyper, int64_t max_step, uint64_t seed)
    : net_(std::move(net)), target_(net_), hyper_(hyper), max_step_(max_step),
      opt_(hyper.lr, hyper.weight_decay),
      buffer_(static_cast<size_t>(hyper.horizon_mult * max_step * hyper.replay_mult)),
      epsilon_(hyper.epsilon_start), rng_(seed) {}

int DdqnAgent::act(const Tensor& obs) { return epsilon_greedy(net_.scores(obs), epsilon_, rng_); }

int DdqnAgent::act_greedy(const Tensor& obs) const { return argmax_action(net_.scores(obs)); }

void DdqnAgent::observe(Transition t) {
    buffer_.push(std::move(t));
    epsilon_ = std::max(0.0, epsilon_ * hyper_.epsilon_decay);
}

int64_t DdqnAgent::updates_per_horizon() const {
    return std::max<int64_t>(1, hyper_.repeat_times * horizon_len() / hyper_.batch_size);
}

std::optional<double> DdqnAgent::update() {
    if (buffer_.size() < static_cast<size_t>(hyper_.batch_size)) return std::nullopt;
    auto batch = buffer_.sample(static_cast<size_t>(hyper_.batch_size), rng_);
    const std::vector<double> y = ddqn_targets(batch, net_, target_, hyper_.gamma);

    std::vector<const Tensor*> states;
    std::vector<int> actions;
    states.reserve(batch.size());
    for (const auto* t : batch) {
        states.push_back(&t->state);
        actions.push_back(t->action);
    }
    Tape tape;
    std::map<std::string, int> param_nodes;
    Tensor q = net_.forward(tape, stack_states(states), &param_nodes); // (B,3)
    Tensor qa = tape.take_per_row(q, actions);                          // (B,1)
    Tensor targets(Shape{static_cast<int64_t>(y.size()), 1}, y);        // detached: semi-gradient
    Tensor diff = tape.sub(qa, targets);
    Tensor loss = tape.mean(tape.mul(diff, diff));
    GradMap grads = tape.backward(loss);

    std::map<std::string, Tensor> named;
    for (const auto& [name, node] : param_nodes) named.emplace(name, grads.of(node));
    opt_.update(net_.params(), named, hyper_.grad_clip);
    soft_update(net_.params(), target_.params(), hyper_.tau);
    return loss.item();
}

std::vector<double> grpo_advantages(const std::vector<double>& returns, double std_floor) {
    const size_t g = returns.size();
    if (g < 2) throw DataError("grpo_advantages: group size must be at least 2");
    const double mean = std::accumulate(returns.begin(), returns.end(), 0.0) / static_cast<double>(g);
    double var = 0.0;
    for (double r : returns) var += (r - mean) * (r - mean);
    var /= static_cast<double>(g); // population std
    const double denom = std::max(std::sqrt(var), std_floor);
    std::vector<double> adv(g);
    for (size_t i = 0; i < g; ++i) adv[i] = (returns[i] - mean) / denom;
    return adv;
}

GrpoAgent::GrpoAgent(PolicyNet net, GrpoHyper hyper, uint64_t seed)
    : net_(std::move(net)), hyper_(hyper), opt_(hyper.lr, hyper.weight_decay), rng_(seed) {}

int GrpoAgent::act_sample(const Tensor& obs, double* log_prob) {
    const auto logits = net_.scores(obs);
    double mx = std::max({logits[0], logits[1], logits[2]});
    std::array<double, kNumActions> p{};
    double z = 0.0;
    for (int a = 0; a < kNumActions; ++a) {
        p[static_cast<size_t>(a)] = std::exp(logits[static_cast<size_t>(a)] - mx);
        z += p[static_cast<size_t>(a)];
    }
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const double u = coin(rng_) * z;
    double acc = 0.0;
    int action = kNumActions - 1;
    for (int a = 0; a < kNumActions; ++a) {
        acc += p[static_cast<size_t>(a)];
        if (u <= acc) {
            action = a;
            break;
        }
    }
    if (log_prob) *log_prob = std::log(p[static_cast<size_t>(action)] / z);
    return action;
}

int GrpoAgent::act_greedy(const Tensor& obs) const { return argmax_action(net_.scores(obs)); }

GroupRollout GrpoAgent::collect(const std::function<std::unique_ptr<Env>()>& make_env) {
    const int g = hyper_.group_size;
    if (g < 2) throw DataError("grpo collect: group size must be at least 2 (std undefined)");
    GroupRollout out;
    out.trajectories.resize(static_cast<size_t>(g));
    out.returns.resize(static_cast<size_t>(g), 0.0);

    // The G rollouts share a reset state and episode length, so they advance
    // in lockstep with one batched policy forward per step.
    std::vector<std::unique_ptr<Env>> envs;
    std::vector<Tensor> obs;
    envs.reserve(static_cast<size_t>(g));
    for (int i = 0; i < g; ++i) {
        envs.push_back(make_env());
        obs.push_back(envs.back()->reset());
    }
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    while (!envs.front()->done()) {
        std::vector<const Tensor*> ptrs;
        ptrs.reserve(static_cast<size_t>(g));
        for (const auto& o : obs) ptrs.push_back(&o);
        const auto logits = net_.scores_batch(stack_states(ptrs));
        for (int i = 0; i < g; ++i) {
            const auto& l = logits[static_cast<size_t>(i)];
            const double mx = std::max({l[0], l[1], l[2]});
            std::array<double, kNumActions> p{};
            double z = 0.0;
            for (int a = 0; a < kNumActions; ++a) {
                p[static_cast<size_t>(a)] = std::exp(l[static_cast<size_t>(a)] - mx);
                z += p[static_cast<size_t>(a)];
            }
            const double u = coin(rng_) * z;
            double acc = 0.0;
            int action = kNumActions - 1;
            for (int a = 0; a < kNumActions; ++a) {
                acc += p[static_cast<size_t>(a)];
                if (u <= acc) {
                    action = a;
                    break;
                }
            }
            const double lp = std::log(p[static_cast<size_t>(action)] / z);
            out.trajectories[static_cast<size_t>(i)].push_back(GrpoStep{obs[static_cast<size_t>(i)],
                                                                        action, lp});
            StepOutcome so = envs[static_cast<size_t>(i)]->step(action);
            out.returns[static_cast<size_t>(i)] += so.reward;
            obs[static_cast<size_t>(i)] = std::move(so.observation);
        }
    }
    out.advantages = grpo_advantages(out.returns, hyper_.advantage_std_floor);
    return out;
}

namespace {

struct FlatSample {
    const Tensor* state;
    int action;
    double log_prob_old;
    double advantage;
};

// Mean KL(old || new) over the given samples, both policies evaluated fresh.
double mean_kl(const PolicyNet& old_net, const PolicyNet& new_net,
               const std::vector<FlatSample>& samples) {
    if (samples.empty()) return 0.0;
    std::vector<const Tensor*> states;
    states.reserve(samples.size());
    for (const auto& s : samples) states.push_back(s.state);
    Tensor batch = stack_states(states);
    Tape tape(GradMode::Off);
    Tensor lp_old = tape.log_softmax_last_dim(old_net.forward(tape, batch));
    Tensor lp_new = tape.log_softmax_last_dim(new_net.forward(tape, batch));
    double kl = 0.0;
    for (size_t i = 0; i < samples.size(); ++i) {
        for (int a = 0; a < kNumActions; ++a) {
            const double lo = lp_old.at2(static_cast<int64_t>(i), a);
            const double ln = lp_new.at2(static_cast<int64_t>(i), a);
            kl += std::exp(lo) * (lo - ln);
        }
    }
    return kl / static_cast<double>(samples.size());
}

} // namespace

GrpoUpdateStats GrpoAgent::update(const GroupRollout& group) {
    std::vector<FlatSample> samples;
    for (size_t i = 0; i < group.trajectories.size(); ++i) {
        const double adv = group.advantages[i]; // broadcast over the trajectory
        for (const auto& step : group.trajectories[i]) {
            samples.push_back(FlatSample{&step.state, step.action, step.log_prob_old, adv});
        }
    }
    GrpoUpdateStats stats;
    if (samples.empty()) return stats;

    const PolicyNet old_net = net_; // snapshot before the first epoch
    std::vector<size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);

    for (int64_t epoch = 0; epoch < hyper_.repeat_times; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng_);
        for (size_t ofs = 0; ofs < order.size(); ofs += static_cast<size_t>(hyper_.batch_size)) {
            const size_t take = std::min(static_cast<size_t>(hyper_.batch_size), order.size() - ofs);
            std::vector<const Tensor*> states;
            std::vector<int> actions;
            std::vector<double> lp_old;
            std::vector<double> adv;
            states.reserve(take);
            for (size_t i = 0; i < take; ++i) {
                const auto& s = samples[order[ofs + i]];
                states.push_back(s.state);
                actions.push_back(s.action);
                lp_old.push_back(s.log_prob_old);
                adv.push_back(s.advantage);
            }
            const auto b = static_cast<int64_t>(take);
            Tape tape;
            std::map<std::string, int> param_nodes;
            Tensor logits = net_.forward(tape, stack_states(states), &param_nodes); // (B,3)
            Tensor logp = tape.log_softmax_last_dim(logits);
            Tensor lp_a = tape.take_per_row(logp, actions);           // (B,1)
            Tensor ratio = tape.exp(tape.sub(lp_a, Tensor({b, 1}, lp_old)));
            Tensor adv_t(Shape{b, 1}, adv);
            Tensor unclipped = tape.mul(ratio, adv_t);
            Tensor clipped = tape.mul(tape.clamp(ratio, 1.0 - hyper_.clip_eps, 1.0 + hyper_.clip_eps),
                                      adv_t);
            Tensor surrogate = tape.scale(tape.sum(tape.minimum(unclipped, clipped)),
                                          1.0 / static_cast<double>(b));
            Tensor probs = tape.softmax_last_dim(logits);
            Tensor entropy = tape.scale(tape.sum(tape.mul(probs, logp)),
                                        -1.0 / static_cast<double>(b));
            Tensor objective = tape.add(surrogate, tape.scale(entropy, hyper_.entropy_coef));
            Tensor loss = tape.neg(objective);
            GradMap grads = tape.backward(loss);

            std::map<std::string, Tensor> named;
            for (const auto& [name, node] : param_nodes) named.emplace(name, grads.of(node));
            opt_.update(net_.params(), named, hyper_.grad_clip);
            stats.loss = loss.item();
            stats.entropy = entropy.item();
        }
        stats.epochs_run = static_cast<int>(epoch) + 1;
        stats.mean_kl = mean_kl(old_net, net_, samples);
        if (stats.mean_kl > hyper_.kl_target) break; // KL early stop
    }
    return stats;
}

void save_agent_checkpoint(const std::string& path, const std::string& algo, const PolicyNet& net,
                           const std::string& hyper_json, FeatureMode mode, uint64_t seed) {
    json header;
    header["algo"] = algo;
    header["net"] = json::parse(net.config_json());
    header["hyper"] = json::parse(hyper_json);
    header["feature_mode"] = feature_mode_name(mode);
    header["seed"] = seed;
    save_checkpoint(path, net.params(), header.dump());
}

AgentCheckpoint load_agent_checkpoint(const std::string& path) {
    ParamSet params;
    const std::string header_text = load_checkpoint(path, params);
    json header = json::parse(header_text);
    AgentCheckpoint ck;
    ck.algo = header.at("algo").get<std::string>();
    ck.net = PolicyNet::from_config_json(header.at("net").dump(), std::move(params));
    ck.hyper_json = header.at("hyper").dump();
    ck.feature_mode = feature_mode_from_name(header.at("feature_mode").get<std::string>());
    ck.seed = header.at("seed").get<uint64_t>();
    return ck;
}

} // namespace newsrl
