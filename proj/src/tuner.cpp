#include "newsrl/tuner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace newsrl {

using nlohmann::json;

const Dimension& SearchSpace::dim(const std::string& name) const {
    for (const auto& d : dims)
        if (d.name == name) return d;
    throw DataError("search space: unknown dimension '" + name + "'");
}

namespace {

Dimension log_dim(std::string name, double lo, double hi, bool integer = false) {
    return Dimension{std::move(name), DimKind::LogUniform, lo, hi, integer, {}};
}
Dimension uni_dim(std::string name, double lo, double hi, bool integer = false) {
    return Dimension{std::move(name), DimKind::Uniform, lo, hi, integer, {}};
}
Dimension cat_dim(std::string name, std::vector<double> choices) {
    return Dimension{std::move(name), DimKind::Categorical, 0, 0, false, std::move(choices)};
}

} // namespace

SearchSpace make_search_space(const std::string& algo, NetKind net) {
    SearchSpace s;
    // Shared training dimensions.
    s.dims.push_back(log_dim("lr", 2e-6, 1e-3));
    s.dims.push_back(log_dim("weight_decay", 1e-5, 1e-2));
    s.dims.push_back(log_dim("grad_clip", 0.1, 4.0));
    s.dims.push_back(cat_dim("batch_size", {32, 128, 512}));
    s.dims.push_back(log_dim("gamma", 0.90, 0.995));
    if (algo == "ddqn") {
        s.dims.push_back(log_dim("epsilon_start", 0.005, 0.125));
        s.dims.push_back(cat_dim("epsilon_decay", {0.99995, 0.99999, 0.999999}));
        s.dims.push_back(log_dim("tau", 1e-3, 1e-2));
        s.dims.push_back(cat_dim("horizon_mult", {2, 4, 8}));
        s.dims.push_back(cat_dim("replay_mult", {2, 4, 8}));
        s.dims.push_back(cat_dim("repeat_times", {1, 2}));
    } else if (algo == "grpo") {
        s.dims.push_back(uni_dim("clip_eps", 0.1, 0.2));
        s.dims.push_back(log_dim("entropy_coef", 0.001, 0.1));
        s.dims.push_back(log_dim("kl_target", 0.005, 0.02));
        s.dims.push_back(cat_dim("repeat_times", {4, 8}));
        // Listed for PPO; parsed but inactive in the critic-free learner.
        s.dims.push_back(uni_dim("gae_lambda", 0.9, 0.99));
        s.dims.push_back(log_dim("value_coef", 0.1, 1.0));
    } else {
        throw DataError("make_search_space: unknown algo '" + algo + "'");
    }
    switch (net) {
        case NetKind::Mlp:
            s.dims.push_back(cat_dim("h1", {32, 64, 128}));
            s.dims.push_back(cat_dim("h2", {32, 64, 128}));
            break;
        case NetKind::Lstm:
            s.dims.push_back(cat_dim("hidden", {32, 64, 128}));
            s.dims.push_back(cat_dim("layers", {1, 2}));
            s.dims.push_back(log_dim("window", 10, 50, /*integer=*/true));
            break;
        case NetKind::Transformer:
            s.dims.push_back(uni_dim("layers", 1, 3, /*integer=*/true));
            s.dims.push_back(cat_dim("heads", {2, 4}));
            s.dims.push_back(cat_dim("model_dim", {32, 64, 128}));
            s.dims.push_back(cat_dim("ff_dim", {32, 64, 128}));
            s.dims.push_back(log_dim("pos_init_std", 0.02, 1.0));
            s.dims.push_back(log_dim("window", 10, 50, /*integer=*/true));
            break;
    }
    return s;
}

std::string TrialRecord::to_json() const {
    json j;
    j["trial_id"] = trial_id;
    j["params"] = params;
    j["eval_history"] = eval_history;
    j["best_score"] = eval_history.empty() ? json() : json(best_score);
    j["status"] = status;
    j["checkpoint_ref"] = checkpoint_ref;
    if (!note.empty()) j["note"] = note;
    return j.dump();
}

TrialRecord TrialRecord::from_json(const std::string& text) {
    json j = json::parse(text);
    TrialRecord r;
    r.trial_id = j.at("trial_id").get<int64_t>();
    r.params = j.at("params").get<ParamValues>();
    r.eval_history = j.at("eval_history").get<std::vector<double>>();
    if (!j.at("best_score").is_null()) r.best_score = j.at("best_score").get<double>();
    r.status = j.at("status").get<std::string>();
    r.checkpoint_ref = j.value("checkpoint_ref", "");
    r.note = j.value("note", "");
    return r;
}

namespace {

double sample_uniform_dim(const Dimension& d, std::mt19937_64& rng) {
    switch (d.kind) {
        case DimKind::Categorical: {
            std::uniform_int_distribution<size_t> pick(0, d.choices.size() - 1);
            return d.choices[pick(rng)];
        }
        case DimKind::LogUniform: {
            std::uniform_real_distribution<double> u(std::log(d.lo), std::log(d.hi));
            double v = std::exp(u(rng));
            if (d.integer) v = std::clamp(std::round(v), d.lo, d.hi);
            return v;
        }
        case DimKind::Uniform: {
            std::uniform_real_distribution<double> u(d.lo, d.hi);
            double v = u(rng);
            if (d.integer) v = std::clamp(std::round(v), d.lo, d.hi);
            return v;
        }
    }
    return d.lo;
}

double to_internal(const Dimension& d, double v) {
    return d.kind == DimKind::LogUniform ? std::log(v) : v;
}
double from_internal(const Dimension& d, double t) {
    double v = d.kind == DimKind::LogUniform ? std::exp(t) : t;
    if (d.integer) v = std::round(v);
    return std::clamp(v, d.lo, d.hi);
}

// Gaussian KDE with a single Scott-rule bandwidth, floored to a fraction of
// the (internal-space) range so degenerate observation sets stay usable.
struct Kde {
    std::vector<double> centers;
    double bandwidth = 1.0;

    Kde(std::vector<double> obs, double range_span) : centers(std::move(obs)) {
        const double n = static_cast<double>(centers.size());
        double mean = std::accumulate(centers.begin(), centers.end(), 0.0) / n;
        double var = 0.0;
        for (double c : centers) var += (c - mean) * (c - mean);
        var /= n;
        bandwidth = 1.06 * std::sqrt(var) * std::pow(n, -0.2);
        bandwidth = std::max(bandwidth, range_span / 50.0);
    }

    double log_pdf(double x) const {
        double acc = 0.0;
        for (double c : centers) {
            const double z = (x - c) / bandwidth;
            acc += std::exp(-0.5 * z * z);
        }
        acc /= (static_cast<double>(centers.size()) * bandwidth * std::sqrt(2.0 * M_PI));
        return std::log(std::max(acc, 1e-300));
    }

    double sample(std::mt19937_64& rng) const {
        std::uniform_int_distribution<size_t> pick(0, centers.size() - 1);
        std::normal_distribution<double> noise(0.0, bandwidth);
        return centers[pick(rng)] + noise(rng);
    }
};

// Laplace-smoothed categorical frequencies.
struct CatDensity {
    std::vector<double> probs; // aligned with Dimension::choices

    CatDensity(const Dimension& d, const std::vector<double>& obs) {
        probs.assign(d.choices.size(), 1.0); // +1 smoothing
        for (double o : obs) {
            for (size_t i = 0; i < d.choices.size(); ++i) {
                if (std::abs(o - d.choices[i]) < 1e-12) {
                    probs[i] += 1.0;
                    break;
                }
            }
        }
        const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
        for (double& p : probs) p /= total;
    }

    size_t sample(std::mt19937_64& rng) const {
        std::discrete_distribution<size_t> dist(probs.begin(), probs.end());
        return dist(rng);
    }
};

} // namespace

ParamValues suggest(const SearchSpace& space, const std::vector<TrialRecord>& history,
                    std::mt19937_64& rng, const TpeOptions& opts) {
    std::vector<const TrialRecord*> scored;
    for (const auto& r : history) {
        if (!r.eval_history.empty()) scored.push_back(&r);
    }
    ParamValues out;
    if (static_cast<int>(scored.size()) < opts.n_startup) {
        for (const auto& d : space.dims) out[d.name] = sample_uniform_dim(d, rng);
        return out;
    }

    std::sort(scored.begin(), scored.end(), [](const TrialRecord* a, const TrialRecord* b) {
        if (a->best_score != b->best_score) return a->best_score > b->best_score;
        return a->trial_id < b->trial_id;
    });
    const size_t n_good = std::max<size_t>(
        1, static_cast<size_t>(std::ceil(opts.good_quantile * static_cast<double>(scored.size()))));

    for (const auto& d : space.dims) {
        std::vector<double> good, bad;
        for (size_t i = 0; i < scored.size(); ++i) {
            auto it = scored[i]->params.find(d.name);
            if (it == scored[i]->params.end()) continue;
            (i < n_good ? good : bad).push_back(it->second);
        }
        if (good.empty() || bad.empty()) {
            out[d.name] = sample_uniform_dim(d, rng);
            continue;
        }
        if (d.kind == DimKind::Categorical) {
            CatDensity l(d, good), g(d, bad);
            size_t best_idx = 0;
            double best_ratio = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < opts.n_candidates; ++c) {
                const size_t idx = l.sample(rng);
                const double ratio = std::log(l.probs[idx]) - std::log(g.probs[idx]);
                if (ratio > best_ratio) {
                    best_ratio = ratio;
                    best_idx = idx;
                }
            }
            out[d.name] = d.choices[best_idx];
        } else {
            const double span = to_internal(d, d.hi) - to_internal(d, d.lo);
            std::vector<double> tg, tb;
            for (double v : good) tg.push_back(to_internal(d, v));
            for (double v : bad) tb.push_back(to_internal(d, v));
            Kde l(std::move(tg), span), g(std::move(tb), span);
            double best_t = to_internal(d, d.lo);
            double best_ratio = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < opts.n_candidates; ++c) {
                double t = l.sample(rng);
                t = std::clamp(t, to_internal(d, d.lo), to_internal(d, d.hi));
                const double ratio = l.log_pdf(t) - g.log_pdf(t);
                if (ratio > best_ratio) {
                    best_ratio = ratio;
                    best_t = t;
                }
            }
            out[d.name] = from_internal(d, best_t);
        }
    }
    return out;
}

bool check_early_stop(const std::vector<double>& eval_history, int patience) {
    if (eval_history.empty()) return false;
    // Index of the last strict improvement of the running maximum.
    size_t last_improve = 0;
    double running_max = eval_history[0];
    for (size_t i = 1; i < eval_history.size(); ++i) {
        if (eval_history[i] > running_max) {
            running_max = eval_history[i];
            last_improve = i;
        }
    }
    return eval_history.size() - 1 - last_improve >= static_cast<size_t>(patience);
}

std::vector<TrialRecord> rank_trials(const std::vector<TrialRecord>& trials, size_t k) {
    std::vector<TrialRecord> done;
    for (const auto& t : trials) {
        if (t.status == "completed" || t.status == "early_stopped") done.push_back(t);
    }
    if (done.size() < k) {
        throw DataError("rank_trials: need " + std::to_string(k) + " finished trials, have " +
                        std::to_string(done.size()));
    }
    std::sort(done.begin(), done.end(), [](const TrialRecord& a, const TrialRecord& b) {
        if (a.best_score != b.best_score) return a.best_score > b.best_score;
        return a.trial_id < b.trial_id;
    });
    done.resize(k);
    return done;
}

TrialStore::TrialStore(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) return;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records_.push_back(TrialRecord::from_json(line));
    }
}

void TrialStore::append(const TrialRecord& record) {
    std::lock_guard<std::mutex> lock(mu_);
    records_.push_back(record);
    if (!path_.empty()) {
        std::ofstream out(path_, std::ios::app | std::ios::binary);
        if (!out) throw DataError("trial store: cannot append to " + path_);
        out << record.to_json() << "\n";
    }
}

std::vector<TrialRecord> TrialStore::records() const {
    std::lock_guard<std::mutex> lock(mu_);
    return records_;
}

int64_t TrialStore::next_trial_id() const {
    std::lock_guard<std::mutex> lock(mu_);
    int64_t id = 0;
    for (const auto& r : records_) id = std::max(id, r.trial_id + 1);
    return id;
}

void apply_desk_scale(TrialContext& ctx) {
    ctx.episode_length = 150;
    ctx.max_env_steps = 6'000;
    ctx.eval_interval = 600;
    ctx.n_eval = 12;
}

namespace {

double pget(const ParamValues& p, const std::string& name, double fallback) {
    auto it = p.find(name);
    return it == p.end() ? fallback : it->second;
}

} // namespace

PolicyNet make_net_from_params(const std::string& algo, NetKind kind, const ParamValues& params,
                               int64_t feature_dim, uint64_t seed) {
    (void)algo;
    switch (kind) {
        case NetKind::Mlp: {
            MlpConfig cfg;
            cfg.h1 = static_cast<int64_t>(pget(params, "h1", 64));
            cfg.h2 = static_cast<int64_t>(pget(params, "h2", 64));
            return PolicyNet::make_mlp(cfg, feature_dim, seed);
        }
        case NetKind::Lstm: {
            LstmConfig cfg;
            cfg.hidden = static_cast<int64_t>(pget(params, "hidden", 64));
            cfg.layers = static_cast<int64_t>(pget(params, "layers", 1));
            cfg.window = static_cast<int64_t>(pget(params, "window", 20));
            return PolicyNet::make_lstm(cfg, feature_dim, seed);
        }
        case NetKind::Transformer: {
            TransformerConfig cfg;
            cfg.layers = static_cast<int64_t>(pget(params, "layers", 1));
            cfg.heads = static_cast<int64_t>(pget(params, "heads", 2));
            cfg.model_dim = static_cast<int64_t>(pget(params, "model_dim", 64));
            cfg.ff_dim = static_cast<int64_t>(pget(params, "ff_dim", 64));
            cfg.pos_init_std = pget(params, "pos_init_std", 0.1);
            cfg.window = static_cast<int64_t>(pget(params, "window", 20));
            return PolicyNet::make_transformer(cfg, feature_dim, seed);
        }
    }
    throw DataError("make_net_from_params: bad net kind");
}

DdqnHyper ddqn_hyper_from_params(const ParamValues& p, int64_t max_step) {
    (void)max_step;
    DdqnHyper h;
    h.gamma = pget(p, "gamma", h.gamma);
    h.epsilon_start = pget(p, "epsilon_start", h.epsilon_start);
    h.epsilon_decay = pget(p, "epsilon_decay", h.epsilon_decay);
    h.tau = pget(p, "tau", h.tau);
    h.batch_size = static_cast<int64_t>(pget(p, "batch_size", static_cast<double>(h.batch_size)));
    h.horizon_mult = static_cast<int64_t>(pget(p, "horizon_mult", static_cast<double>(h.horizon_mult)));
    h.replay_mult = static_cast<int64_t>(pget(p, "replay_mult", static_cast<double>(h.replay_mult)));
    h.repeat_times = static_cast<int64_t>(pget(p, "repeat_times", static_cast<double>(h.repeat_times)));
    h.lr = pget(p, "lr", h.lr);
    h.weight_decay = pget(p, "weight_decay", h.weight_decay);
    h.grad_clip = pget(p, "grad_clip", h.grad_clip);
    return h;
}

GrpoHyper grpo_hyper_from_params(const ParamValues& p) {
    GrpoHyper h;
    h.gamma = pget(p, "gamma", h.gamma);
    h.clip_eps = pget(p, "clip_eps", h.clip_eps);
    h.entropy_coef = pget(p, "entropy_coef", h.entropy_coef);
    h.kl_target = pget(p, "kl_target", h.kl_target);
    h.repeat_times = static_cast<int64_t>(pget(p, "repeat_times", static_cast<double>(h.repeat_times)));
    h.batch_size = static_cast<int64_t>(pget(p, "batch_size", static_cast<double>(h.batch_size)));
    h.lr = pget(p, "lr", h.lr);
    h.weight_decay = pget(p, "weight_decay", h.weight_decay);
    h.grad_clip = pget(p, "grad_clip", h.grad_clip);
    h.gae_lambda = pget(p, "gae_lambda", h.gae_lambda);
    h.value_coef = pget(p, "value_coef", h.value_coef);
    return h;
}

double evaluate_policy_mean_return(const PolicyNet& net, const std::vector<AlignedFrame>& frames,
                                   const FeatureMatrix& features,
                                   const std::vector<EpisodeWindow>& windows, int64_t lookback,
                                   const TradingEnvConfig& config) {
    // Windows share the episode length, so the greedy rollouts advance in
    // lockstep with one batched forward per step.
    std::vector<std::unique_ptr<TradingEnv>> envs;
    std::vector<Tensor> obs;
    envs.reserve(windows.size());
    for (const auto& w : windows) {
        envs.push_back(std::make_unique<TradingEnv>(frames, features, w, lookback, config));
        obs.push_back(envs.back()->reset());
    }
    double total = 0.0;
    while (!envs.front()->done()) {
        std::vector<double> flat;
        flat.reserve(obs.size() * obs.front().values.size());
        for (const auto& o : obs) flat.insert(flat.end(), o.values.begin(), o.values.end());
        Tensor batch({static_cast<int64_t>(obs.size()), obs.front().shape[0], obs.front().shape[1]},
                     std::move(flat));
        const auto scores = net.scores_batch(batch);
        for (size_t i = 0; i < envs.size(); ++i) {
            StepOutcome so = envs[i]->step(argmax_action(scores[i]));
            total += so.reward;
            obs[i] = std::move(so.observation);
        }
    }
    return total / static_cast<double>(windows.size());
}

TrialRecord run_trial(const TrialContext& ctx, int64_t trial_id, const ParamValues& params,
                      uint64_t seed) {
    TrialRecord rec;
    rec.trial_id = trial_id;
    rec.params = params;

    if (ctx.n_eval <= 0 || ctx.eval_interval <= 0 || ctx.episode_length < 2) {
        throw DataError("run_trial: n_eval, eval_interval and episode_length must be positive");
    }
    const int64_t max_step = ctx.episode_length - 1;
    PolicyNet net = make_net_from_params(ctx.algo, ctx.net_kind, params, kFeatureDim, seed);
    const int64_t lookback = net.window();

    std::vector<EpisodeWindow> eval_windows = sample_windows(
        ctx.split.validation, SplitTag::Validation, ctx.episode_length, lookback, ctx.n_eval,
        ctx.eval_seed);

    std::mt19937_64 window_rng(seed ^ 0x9e3779b97f4a7c15ull);
    auto next_train_window = [&]() {
        return sample_windows(ctx.split.train, SplitTag::Train, ctx.episode_length, lookback, 1,
                              window_rng())[0];
    };

    const std::string ckpt_name = "trial_" + std::to_string(trial_id) + ".ckpt.json";
    const std::string ckpt_path =
        ctx.checkpoint_dir.empty() ? "" : ctx.checkpoint_dir + "/" + ckpt_name;
    double best = -std::numeric_limits<double>::infinity();
    int64_t env_steps = 0;
    int64_t next_eval = ctx.eval_interval;
    bool stopped_early = false;

    auto maybe_eval = [&](const PolicyNet& policy, const std::string& algo,
                          const std::string& hyper_json) -> bool {
        // Returns true when the trial should stop.
        if (env_steps < next_eval) return false;
        next_eval += ctx.eval_interval;
        const double score = evaluate_policy_mean_return(policy, *ctx.frames, *ctx.features,
                                                         eval_windows, lookback, ctx.env_config);
        rec.record_eval(score);
        if (score > best) {
            best = score;
            if (!ckpt_path.empty()) {
                save_agent_checkpoint(ckpt_path, algo, policy, hyper_json, ctx.feature_mode, seed);
                rec.checkpoint_ref = ckpt_name;
            }
        }
        if (check_early_stop(rec.eval_history)) {
            stopped_early = true;
            return true;
        }
        return false;
    };

    try {
        if (ctx.algo == "ddqn") {
            DdqnHyper hyper = ddqn_hyper_from_params(params, max_step);
            DdqnAgent agent(std::move(net), hyper, max_step, seed);
            const int64_t horizon = agent.horizon_len();
            bool stop = false;
            while (!stop && env_steps < ctx.max_env_steps) {
                TradingEnv env(*ctx.frames, *ctx.features, next_train_window(), lookback,
                               ctx.env_config);
                Tensor obs = env.reset();
                while (!env.done()) {
                    const int a = agent.act(obs);
                    StepOutcome so = env.step(a);
                    agent.observe(Transition{obs, a, so.reward, so.observation, so.done});
                    obs = std::move(so.observation);
                    ++env_steps;
                    if (env_steps % horizon == 0) {
                        for (int64_t u = 0; u < agent.updates_per_horizon(); ++u) agent.update();
                    }
                    if (maybe_eval(agent.net(), "ddqn", hyper.to_json()) ||
                        env_steps >= ctx.max_env_steps) {
                        stop = true;
                        break;
                    }
                }
            }
        } else if (ctx.algo == "grpo") {
            GrpoHyper hyper = grpo_hyper_from_params(params);
            GrpoAgent agent(std::move(net), hyper, seed);
            bool stop = false;
            while (!stop && env_steps < ctx.max_env_steps) {
                const EpisodeWindow w = next_train_window();
                auto make_env = [&]() {
                    return std::make_unique<TradingEnv>(*ctx.frames, *ctx.features, w, lookback,
                                                        ctx.env_config);
                };
                GroupRollout group = agent.collect(make_env);
                for (const auto& traj : group.trajectories)
                    env_steps += static_cast<int64_t>(traj.size());
                agent.update(group);
                if (maybe_eval(agent.net(), "grpo", hyper.to_json())) stop = true;
            }
        } else {
            throw DataError("run_trial: unknown algo '" + ctx.algo + "'");
        }
        rec.status = stopped_early ? "early_stopped" : "completed";
    } catch (const NumericError& e) {
        rec.status = "failed";
        rec.note = e.what();
    }
    // A trial that never reached an evaluation still reports one final score.
    if (rec.eval_history.empty() && rec.status != "failed") {
        rec.status = "failed";
        rec.note = "no evaluation within budget; lower eval_interval";
    }
    return rec;
}

} // namespace newsrl
