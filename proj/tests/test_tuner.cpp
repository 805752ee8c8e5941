#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "newsrl/tuner.hpp"
#include "test_support.hpp"

using namespace newsrl;

namespace {

bool value_in_dim(const Dimension& d, double v) {
    if (d.kind == DimKind::Categorical) {
        return std::any_of(d.choices.begin(), d.choices.end(),
                           [&](double c) { return std::abs(c - v) < 1e-12; });
    }
    if (d.integer && std::abs(v - std::round(v)) > 1e-12) return false;
    return v >= d.lo - 1e-12 && v <= d.hi + 1e-12;
}

TrialRecord fake_trial(int64_t id, ParamValues params, double score) {
    TrialRecord r;
    r.trial_id = id;
    r.params = std::move(params);
    r.record_eval(score);
    r.status = "completed";
    return r;
}

// Independent restatement of the early-stop rule: the trial stops when none
// of the five most recent evaluations strictly raised the running maximum.
bool early_stop_oracle(const std::vector<double>& h) {
    if (h.size() < 6) return false;
    for (size_t i = h.size() - 5; i < h.size(); ++i) {
        double prior_max = -1e300;
        for (size_t j = 0; j < i; ++j) prior_max = std::max(prior_max, h[j]);
        if (i == 0 || h[i] > prior_max) return false;
    }
    return true;
}

} // namespace

TEST_CASE("every suggestion respects its bounds across 10k draws") {
    for (const char* algo : {"ddqn", "grpo"}) {
        for (NetKind net : {NetKind::Mlp, NetKind::Lstm, NetKind::Transformer}) {
            SearchSpace space = make_search_space(algo, net);
            std::mt19937_64 rng(4);
            std::vector<TrialRecord> history;
            for (int i = 0; i < 1200; ++i) {
                ParamValues p = suggest(space, history, rng);
                for (const auto& d : space.dims) {
                    CAPTURE(d.name);
                    CHECK(value_in_dim(d, p.at(d.name)));
                }
                // Keep TPE engaged for most of the run.
                history.push_back(fake_trial(i, p, std::sin(i * 0.7)));
            }
        }
    }
}

TEST_CASE("startup sampling of a log dimension is uniform in log space") {
    SearchSpace space;
    space.dims.push_back(Dimension{"lr", DimKind::LogUniform, 2e-6, 1e-3, false, {}});
    std::mt19937_64 rng(17);
    std::vector<double> logs;
    for (int i = 0; i < 10'000; ++i) {
        ParamValues p = suggest(space, {}, rng);
        logs.push_back(std::log10(p.at("lr")));
    }
    std::sort(logs.begin(), logs.end());
    const double lo = std::log10(2e-6), hi = std::log10(1e-3);
    CHECK(logs.front() >= lo);
    CHECK(logs.back() <= hi);
    // Kolmogorov-Smirnov distance against the uniform CDF.
    double d = 0.0;
    const auto n = static_cast<double>(logs.size());
    for (size_t i = 0; i < logs.size(); ++i) {
        const double u = (logs[i] - lo) / (hi - lo);
        d = std::max(d, std::abs(u - (static_cast<double>(i) + 1.0) / n));
        d = std::max(d, std::abs(u - static_cast<double>(i) / n));
    }
    CHECK(d < 0.02); // ~alpha 0.001 for n = 10k
}

TEST_CASE("tpe concentrates categorical suggestions on the good value") {
    SearchSpace space;
    space.dims.push_back(Dimension{"batch_size", DimKind::Categorical, 0, 0, false, {32, 128, 512}});
    std::vector<TrialRecord> history;
    std::mt19937_64 hist_rng(5);
    std::uniform_real_distribution<double> noise(0.0, 0.1);
    for (int i = 0; i < 40; ++i) {
        const double choice = (i % 3 == 0) ? 128 : (i % 3 == 1 ? 32 : 512);
        // 128 always scores best.
        const double score = (choice == 128 ? 10.0 : 1.0) + noise(hist_rng);
        history.push_back(fake_trial(i, {{"batch_size", choice}}, score));
    }
    std::mt19937_64 rng(11);
    std::map<double, int> counts;
    for (int i = 0; i < 200; ++i) counts[suggest(space, history, rng).at("batch_size")]++;
    CHECK(counts[128] > counts[32]);
    CHECK(counts[128] > counts[512]);
    CHECK(counts[128] > 120); // clear majority
}

TEST_CASE("tpe pulls numeric suggestions toward the good region") {
    SearchSpace space;
    space.dims.push_back(Dimension{"lr", DimKind::LogUniform, 1e-6, 1e-1, false, {}});
    std::vector<TrialRecord> history;
    std::mt19937_64 hist_rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 60; ++i) {
        // Good trials cluster near 1e-3.
        const double lr = std::pow(10.0, -6.0 + 5.0 * u(hist_rng));
        const double score = -std::abs(std::log10(lr) + 3.0);
        history.push_back(fake_trial(i, {{"lr", lr}}, score));
    }
    std::mt19937_64 rng(3);
    int near = 0;
    for (int i = 0; i < 100; ++i) {
        const double lr = suggest(space, history, rng).at("lr");
        if (lr > 1e-4 && lr < 1e-2) ++near;
    }
    CHECK(near > 60);
}

TEST_CASE("early stop examples") {
    CHECK(check_early_stop({3, 2, 2, 2, 2, 2}));
    CHECK_FALSE(check_early_stop({3, 2, 2, 2, 4}));
    CHECK_FALSE(check_early_stop({3, 2, 2, 2, 2}));
    CHECK_FALSE(check_early_stop({}));
    CHECK_FALSE(check_early_stop({1, 2, 3, 4, 5, 6}));
    CHECK(check_early_stop({6, 5, 4, 3, 2, 1}));
}

TEST_CASE("early stop matches the brute-force oracle on all short histories") {
    const std::array<double, 3> values{0.0, 1.0, 2.0};
    for (int len = 0; len <= 8; ++len) {
        const int total = static_cast<int>(std::pow(3, len));
        for (int code = 0; code < total; ++code) {
            std::vector<double> h;
            int c = code;
            for (int i = 0; i < len; ++i) {
                h.push_back(values[static_cast<size_t>(c % 3)]);
                c /= 3;
            }
            CAPTURE(h);
            CHECK(check_early_stop(h) == early_stop_oracle(h));
        }
    }
}

TEST_CASE("rank_trials orders by score with id tie-break") {
    std::vector<TrialRecord> trials;
    trials.push_back(fake_trial(0, {}, 1.0));
    trials.push_back(fake_trial(1, {}, 9.0));
    trials.push_back(fake_trial(2, {}, 5.0));
    auto top = rank_trials(trials, 1);
    CHECK(top[0].trial_id == 1);

    trials.clear();
    for (int i = 0; i < 30; ++i) trials.push_back(fake_trial(i, {}, static_cast<double>(i % 13)));
    auto ten = rank_trials(trials, 10);
    CHECK(ten.size() == 10);
    for (size_t i = 1; i < ten.size(); ++i) CHECK(ten[i - 1].best_score >= ten[i].best_score);

    trials.clear();
    trials.push_back(fake_trial(9, {}, 7.0));
    trials.push_back(fake_trial(4, {}, 7.0));
    auto tie = rank_trials(trials, 2);
    CHECK(tie[0].trial_id == 4); // lower id wins the tie

    CHECK_THROWS_AS(rank_trials(trials, 3), DataError);

    TrialRecord failed;
    failed.trial_id = 99;
    failed.status = "failed";
    failed.record_eval(100.0);
    trials.push_back(failed);
    auto still = rank_trials(trials, 2);
    CHECK(still[0].trial_id == 4); // failed trials do not rank
}

TEST_CASE("trial store appends and reloads records") {
    const auto path = (std::filesystem::temp_directory_path() / "nrl_trials.jsonl").string();
    std::filesystem::remove(path);
    {
        TrialStore store(path);
        CHECK(store.next_trial_id() == 0);
        auto r = fake_trial(0, {{"lr", 1e-4}}, 2.5);
        r.checkpoint_ref = "trial_0.ckpt.json";
        store.append(r);
        store.append(fake_trial(1, {{"lr", 2e-4}}, 1.5));
        CHECK(store.next_trial_id() == 2);
    }
    TrialStore reloaded(path);
    auto records = reloaded.records();
    REQUIRE(records.size() == 2);
    CHECK(records[0].trial_id == 0);
    CHECK(records[0].params.at("lr") == doctest::Approx(1e-4));
    CHECK(records[0].best_score == doctest::Approx(2.5));
    CHECK(records[0].checkpoint_ref == "trial_0.ckpt.json");
    CHECK(records[0].status == "completed");
    // Appending never mutates prior lines.
    reloaded.append(fake_trial(2, {}, 0.0));
    TrialStore again(path);
    CHECK(again.records()[0].best_score == doctest::Approx(2.5));
}

TEST_CASE("record_eval keeps best_score consistent with history") {
    TrialRecord r;
    r.record_eval(5.0);
    r.record_eval(7.0);
    r.record_eval(6.0);
    CHECK(r.best_score == doctest::Approx(7.0));
    CHECK(r.eval_history == std::vector<double>{5.0, 7.0, 6.0});
}

TEST_CASE("run_trial is deterministic and checkpoints its best evaluation") {
    auto frames = newsrl::testing::synthetic_frames(2200);
    auto split = chronological_split(static_cast<int64_t>(frames.size()));
    auto features = build_features(frames, FeatureMode::Returns, split.train);

    TrialContext ctx;
    ctx.frames = &frames;
    ctx.features = &features;
    ctx.split = split;
    ctx.algo = "ddqn";
    ctx.net_kind = NetKind::Mlp;
    ctx.episode_length = 80;
    ctx.max_env_steps = 1200;
    ctx.eval_interval = 300;
    ctx.n_eval = 4;
    const auto ckpt_dir = (std::filesystem::temp_directory_path() / "nrl_trial_ckpts").string();
    std::filesystem::create_directories(ckpt_dir);
    ctx.checkpoint_dir = ckpt_dir;

    SearchSpace space = make_search_space("ddqn", NetKind::Mlp);
    std::mt19937_64 rng(2);
    ParamValues params = suggest(space, {}, rng);
    params["batch_size"] = 32; // keep the unit test quick

    TrialRecord a = run_trial(ctx, 0, params, 11);
    TrialRecord b = run_trial(ctx, 0, params, 11);
    CHECK(a.eval_history == b.eval_history);
    CHECK_FALSE(a.eval_history.empty());
    CHECK(a.best_score == *std::max_element(a.eval_history.begin(), a.eval_history.end()));
    CHECK((a.status == "completed" || a.status == "early_stopped"));
    REQUIRE_FALSE(a.checkpoint_ref.empty());
    CHECK(std::filesystem::exists(std::filesystem::path(ckpt_dir) / a.checkpoint_ref));

    // The persisted checkpoint carries the feature-mode tag and algo.
    auto ck = load_agent_checkpoint((std::filesystem::path(ckpt_dir) / a.checkpoint_ref).string());
    CHECK(ck.algo == "ddqn");
    CHECK(ck.feature_mode == FeatureMode::Returns);
}

TEST_CASE("evaluation windows per evaluation match n_eval") {
    auto frames = newsrl::testing::synthetic_frames(2200);
    auto split = chronological_split(static_cast<int64_t>(frames.size()));
    auto windows = sample_windows(split.validation, SplitTag::Validation, 80, 1, 12, 7);
    CHECK(windows.size() == 12);
    for (const auto& w : windows) {
        CHECK(w.start_index - 1 >= split.validation.begin);
        CHECK(w.start_index + w.length <= split.validation.end);
    }
}

TEST_CASE("desk scale shrinks the budget") {
    TrialContext ctx;
    const auto full_steps = ctx.max_env_steps;
    apply_desk_scale(ctx);
    CHECK(ctx.episode_length == 150);
    CHECK(ctx.max_env_steps * 20 == full_steps);
}
