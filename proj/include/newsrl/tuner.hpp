#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "newsrl/agents.hpp"
#include "newsrl/data.hpp"
#include "newsrl/env.hpp"

namespace newsrl {

enum class DimKind { LogUniform, Uniform, Categorical };

struct Dimension {
    std::string name;
    DimKind kind = DimKind::Uniform;
    double lo = 0.0; // numeric bounds, inclusive
    double hi = 0.0;
    bool integer = false;
    std::vector<double> choices; // categorical values
};

struct SearchSpace {
    std::vector<Dimension> dims;
    const Dimension& dim(const std::string& name) const;
};

using ParamValues = std::map<std::string, double>;

// The tuning dimensions for one algorithm/backbone pair, bounds and value
// sets matching the published ranges.
SearchSpace make_search_space(const std::string& algo, NetKind net);

struct TrialRecord {
    int64_t trial_id = 0;
    ParamValues params;
    std::vector<double> eval_history;
    double best_score = -std::numeric_limits<double>::infinity();
    std::string status = "running"; // running|early_stopped|completed|failed
    std::string checkpoint_ref;
    std::string note;

    void record_eval(double score) {
        eval_history.push_back(score);
        best_score = std::max(best_score, score);
    }
    std::string to_json() const;
    static TrialRecord from_json(const std::string& text);
};

// First n_startup trials sample uniformly; afterwards a per-dimension
// TPE-lite: split history at the best-score quantile, fit kernel densities
// over good/bad, draw candidates from the good density and keep the one
// maximizing l(x)/g(x).
struct TpeOptions {
    int n_startup = 10;
    double good_quantile = 0.25;
    int n_candidates = 24;
};

ParamValues suggest(const SearchSpace& space, const std::vector<TrialRecord>& history,
                    std::mt19937_64& rng, const TpeOptions& opts = {});

// Stop once the running maximum has not strictly increased over the 5 most
// recent evaluations.
bool check_early_stop(const std::vector<double>& eval_history, int patience = 5);

// Top-k by best_score, descending; ties go to the lower trial_id. Only
// completed/early_stopped trials rank.
std::vector<TrialRecord> rank_trials(const std::vector<TrialRecord>& trials, size_t k);

// Append-only JSONL store of TrialRecords.
class TrialStore {
public:
    TrialStore() = default;
    explicit TrialStore(std::string path); // loads existing records

    void append(const TrialRecord& record);
    std::vector<TrialRecord> records() const;
    int64_t next_trial_id() const;

private:
    std::string path_;
    std::vector<TrialRecord> records_;
    mutable std::mutex mu_;
};

// Everything a trial needs: the dataset, the split, the algorithm choice and
// the training budget. Budgets are configuration, not protocol claims.
struct TrialContext {
    const std::vector<AlignedFrame>* frames = nullptr;
    const FeatureMatrix* features = nullptr;
    DatasetSplit split;
    std::string algo = "ddqn"; // ddqn|grpo
    NetKind net_kind = NetKind::Mlp;
    FeatureMode feature_mode = FeatureMode::Returns;
    TradingEnvConfig env_config;

    int64_t episode_length = 3000;
    int64_t max_env_steps = 120'000;
    int64_t eval_interval = 12'000;
    int64_t n_eval = 256;     // validation windows per evaluation
    uint64_t eval_seed = 7;   // fixed so evaluations share windows
    std::string checkpoint_dir;
};

// Shrinks the budget roughly 20x for CI / laptop runs.
void apply_desk_scale(TrialContext& ctx);

// Builds nets/hypers from sampled values.
PolicyNet make_net_from_params(const std::string& algo, NetKind kind, const ParamValues& params,
                               int64_t feature_dim, uint64_t seed);
DdqnHyper ddqn_hyper_from_params(const ParamValues& params, int64_t max_step);
GrpoHyper grpo_hyper_from_params(const ParamValues& params);

// Trains on training-split windows, evaluating the greedy policy on
// validation windows every eval_interval env steps; checkpoints the best
// evaluation and applies the early-stop rule.
TrialRecord run_trial(const TrialContext& ctx, int64_t trial_id, const ParamValues& params,
                      uint64_t seed);

// Mean cumulative return (USDT) of the greedy policy over the given windows.
double evaluate_policy_mean_return(const PolicyNet& net, const std::vector<AlignedFrame>& frames,
                                   const FeatureMatrix& features,
                                   const std::vector<EpisodeWindow>& windows, int64_t lookback,
                                   const TradingEnvConfig& config);

} // namespace newsrl
