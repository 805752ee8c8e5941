#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "newsrl/agents.hpp"
#include "newsrl/checkpoint.hpp"
#include "newsrl/data.hpp"
#include "newsrl/env.hpp"
#include "newsrl/evaluation.hpp"
#include "newsrl/sentiment.hpp"
#include "newsrl/synthetic.hpp"
#include "newsrl/tuner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace newsrl;

namespace {

// Structured stderr lines plus machine-readable JSONL events.
class RunLog {
public:
    void open(const std::string& path) {
        if (!path.empty()) out_.open(path, std::ios::app | std::ios::binary);
    }
    void event(const std::string& kind, const json& fields = json::object()) {
        std::cerr << "[newsrl] " << kind;
        for (auto& [k, v] : fields.items()) std::cerr << ' ' << k << '=' << v.dump();
        std::cerr << '\n';
        if (out_.is_open()) {
            json line = fields;
            line["event"] = kind;
            line["wall_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                                  std::chrono::system_clock::now().time_since_epoch())
                                  .count();
            out_ << line.dump() << '\n';
            out_.flush();
        }
    }

private:
    std::ofstream out_;
};

RunLog g_log;

struct CommonOpts {
    std::string bars_path;
    std::string news_path;
    std::string cache_path;
    std::string feature_mode = "returns";
    double sltp = 0.001;
    double fee_bps = 0.0;
    bool no_llm = false;
};

struct Dataset {
    std::vector<AlignedFrame> frames;
    FeatureMatrix features;
    DatasetSplit split;
};

Dataset load_dataset(const CommonOpts& opts) {
    auto bars = load_bars(opts.bars_path);
    g_log.event("bars_loaded", {{"count", bars.bars.size()}, {"missing_minutes", bars.missing_minutes}});
    std::vector<ScoredNews> scored;
    if (!opts.cache_path.empty()) {
        ScoreCache cache(opts.cache_path);
        scored = cache.all();
        std::sort(scored.begin(), scored.end(),
                  [](const ScoredNews& a, const ScoredNews& b) { return a.ts < b.ts; });
        g_log.event("scores_loaded", {{"count", scored.size()}});
    }
    Dataset ds;
    ds.frames = forward_fill_scores(bars.bars, scored);
    ds.split = chronological_split(static_cast<int64_t>(ds.frames.size()));
    ds.features =
        build_features(ds.frames, feature_mode_from_name(opts.feature_mode), ds.split.train);
    if (opts.no_llm) zero_llm_channels(ds.features);
    return ds;
}

TradingEnvConfig env_config_of(const CommonOpts& opts) {
    TradingEnvConfig cfg;
    cfg.sltp_threshold = opts.sltp <= 0 ? std::numeric_limits<double>::infinity() : opts.sltp;
    cfg.fee_bps = opts.fee_bps;
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts, bool need_bars = true) {
    auto* b = cmd->add_option("--bars", opts.bars_path, "Bars CSV (ts,open,high,low,close,volume)");
    if (need_bars) b->required();
    cmd->add_option("--news", opts.news_path, "News JSONL (ts,title,body)");
    cmd->add_option("--cache", opts.cache_path, "Score cache JSONL");
    cmd->add_option("--feature-mode", opts.feature_mode, "returns|raw_scaled")
        ->check(CLI::IsMember({"returns", "raw_scaled"}));
    cmd->add_option("--sltp", opts.sltp, "Stop-loss/take-profit threshold fraction (<=0 disables)");
    cmd->add_option("--fee-bps", opts.fee_bps, "Fee per fill, basis points of notional");
    cmd->add_flag("--no-llm", opts.no_llm, "Zero the sentiment/risk feature channels");
}

void write_resolved_config(CLI::App& app, const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream out(fs::path(out_dir) / "resolved_config.toml", std::ios::binary);
    if (out) out << app.config_to_str(true, false);
}

std::string trial_store_path(const std::string& out_dir) {
    return (fs::path(out_dir) / "trials.jsonl").string();
}
std::string checkpoint_dir(const std::string& out_dir) {
    return (fs::path(out_dir) / "checkpoints").string();
}

int run_tune(const CommonOpts& common, const std::string& algo, const std::string& net,
             int64_t trials, uint64_t seed, bool desk_scale, const std::string& out_dir,
             int64_t episode_length, int64_t n_eval, int64_t max_env_steps, int64_t eval_interval) {
    Dataset ds = load_dataset(common);
    TrialContext ctx;
    ctx.frames = &ds.frames;
    ctx.features = &ds.features;
    ctx.split = ds.split;
    ctx.algo = algo;
    ctx.net_kind = net_kind_from_name(net);
    ctx.feature_mode = feature_mode_from_name(common.feature_mode);
    ctx.env_config = env_config_of(common);
    if (desk_scale) apply_desk_scale(ctx);
    // Explicit budget flags override the desk-scale preset.
    if (episode_length > 0) ctx.episode_length = episode_length;
    if (n_eval > 0) ctx.n_eval = n_eval;
    if (max_env_steps > 0) ctx.max_env_steps = max_env_steps;
    if (eval_interval > 0) ctx.eval_interval = eval_interval;

    std::error_code ec;
    fs::create_directories(checkpoint_dir(out_dir), ec);
    ctx.checkpoint_dir = checkpoint_dir(out_dir);
    TrialStore store(trial_store_path(out_dir));

    SearchSpace space = make_search_space(algo, ctx.net_kind);
    std::mt19937_64 rng(seed);
    for (int64_t i = 0; i < trials; ++i) {
        const int64_t trial_id = store.next_trial_id();
        ParamValues params = suggest(space, store.records(), rng);
        g_log.event("trial_start", {{"trial_id", trial_id}, {"algo", algo}, {"net", net}});
        TrialRecord rec = run_trial(ctx, trial_id, params, seed + static_cast<uint64_t>(trial_id));
        store.append(rec);
        g_log.event("trial_done", {{"trial_id", trial_id},
                                   {"status", rec.status},
                                   {"best_score", rec.eval_history.empty() ? 0.0 : rec.best_score},
                                   {"evals", rec.eval_history.size()}});
    }
    return 0;
}

struct EvalArtifacts {
    double top1_usdt = 0.0;
    std::optional<double> top10_usdt;
    double top1_backtest_pct = 0.0;
    std::optional<double> top10_backtest_pct;
    BacktestCurve top1_curve;
};

EvalArtifacts evaluate_store(const Dataset& ds, const TradingEnvConfig& env_cfg,
                             const std::string& store_path, const std::string& ckpt_dir, size_t topk,
                             int64_t count, int64_t length, uint64_t eval_seed) {
    TrialStore store(store_path);
    const auto records = store.records();
    auto load_ck = [&](const TrialRecord& t) {
        if (t.checkpoint_ref.empty())
            throw DataError("trial " + std::to_string(t.trial_id) + " has no checkpoint");
        return load_agent_checkpoint((fs::path(ckpt_dir) / t.checkpoint_ref).string());
    };
    auto period_metric = [&](const TrialRecord& t) {
        const auto ck = load_ck(t);
        return evaluate_periods(ck, ds.frames, ds.features, ds.split.test, SplitTag::Test, count,
                                length, eval_seed, env_cfg)
            .mean_usdt;
    };
    auto backtest_metric = [&](const TrialRecord& t) {
        const auto ck = load_ck(t);
        return full_backtest(ck, ds.frames, ds.features, ds.split.test, env_cfg).pct_return;
    };

    EvalArtifacts art;
    const auto top1 = topk_average(records, 1, period_metric);
    art.top1_usdt = top1.mean;
    art.top1_backtest_pct = topk_average(records, 1, backtest_metric).mean;
    {
        const auto best = rank_trials(records, 1)[0];
        const auto ck = load_ck(best);
        art.top1_curve = full_backtest(ck, ds.frames, ds.features, ds.split.test, env_cfg);
    }
    if (records.size() >= topk && topk > 1) {
        art.top10_usdt = topk_average(records, topk, period_metric).mean;
        art.top10_backtest_pct = topk_average(records, topk, backtest_metric).mean;
    }
    return art;
}

int run_selftest(const std::string& out_root, uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&]() {
        return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::steady_clock::now() - t0)
            .count();
    };
    auto stage = [&](const std::string& name) {
        g_log.event("selftest_stage", {{"stage", name}, {"t_sec", elapsed()}});
    };
    std::error_code ec;
    fs::create_directories(out_root, ec);

    // 1. Fixtures: deterministic drift-plus-sine market plus direction news.
    stage("fixtures");
    SyntheticMarketSpec spec;
    spec.n_minutes = 4000;
    const auto paths = write_synthetic_fixtures((fs::path(out_root) / "fixtures").string(), spec);

    // 2. Ingest + offline scoring + alignment through the real file formats.
    stage("ingest");
    auto bars = load_bars(paths.bars_csv);
    auto news = load_news(paths.news_jsonl);
    const std::string cache_path = (fs::path(out_root) / "scores.jsonl").string();
    fs::remove(cache_path, ec);
    ScoreCache cache(cache_path);
    FixtureResponder responder(paths.responses_jsonl);
    ScoreRunOptions sropts;
    ScoreRunStats stats1, stats2;
    score_news(news, responder, cache, sropts, &stats1);
    score_news(news, responder, cache, sropts, &stats2); // idempotence probe
    if (stats2.requests != 0) {
        std::cerr << "selftest: FAIL scoring not idempotent\n";
        return 3;
    }
    stage("align");
    auto scored = cache.all();
    std::sort(scored.begin(), scored.end(),
              [](const ScoredNews& a, const ScoredNews& b) { return a.ts < b.ts; });
    auto frames = forward_fill_scores(bars.bars, scored);
    export_aligned_csv((fs::path(out_root) / "aligned.csv").string(), frames);

    Dataset ds;
    ds.frames = std::move(frames);
    ds.split = chronological_split(static_cast<int64_t>(ds.frames.size()));
    ds.features = build_features(ds.frames, FeatureMode::Returns, ds.split.train);

    TradingEnvConfig env_cfg; // 0.1% SL/TP active, no fees

    // 3. Desk-scale tuning: 5 trials per algorithm on the MLP backbone.
    auto tune_algo = [&](const std::string& algo) {
        TrialContext ctx;
        ctx.frames = &ds.frames;
        ctx.features = &ds.features;
        ctx.split = ds.split;
        ctx.algo = algo;
        ctx.net_kind = NetKind::Mlp;
        ctx.feature_mode = FeatureMode::Returns;
        ctx.env_config = env_cfg;
        apply_desk_scale(ctx);
        const std::string out_dir = (fs::path(out_root) / ("tune_" + algo)).string();
        fs::create_directories(checkpoint_dir(out_dir), ec);
        ctx.checkpoint_dir = checkpoint_dir(out_dir);
        TrialStore store(trial_store_path(out_dir));
        SearchSpace space = make_search_space(algo, NetKind::Mlp);
        std::mt19937_64 rng(seed);
        for (int i = 0; i < 5; ++i) {
            const int64_t id = store.next_trial_id();
            TrialRecord rec = run_trial(ctx, id, suggest(space, store.records(), rng),
                                        seed + static_cast<uint64_t>(id));
            store.append(rec);
            g_log.event("selftest_trial",
                        {{"algo", algo}, {"trial", id}, {"status", rec.status},
                         {"best", rec.eval_history.empty() ? 0.0 : rec.best_score}});
        }
        return out_dir;
    };
    stage("tune_ddqn");
    const std::string ddqn_dir = tune_algo("ddqn");
    stage("tune_grpo");
    const std::string grpo_dir = tune_algo("grpo");

    // 4. Top-1 evaluation + full backtest + report.
    stage("evaluate");
    const int64_t eval_count = 32, eval_length = 150;
    EvalArtifacts ddqn_art = evaluate_store(ds, env_cfg, trial_store_path(ddqn_dir),
                                            checkpoint_dir(ddqn_dir), 1, eval_count, eval_length, seed);
    EvalArtifacts grpo_art = evaluate_store(ds, env_cfg, trial_store_path(grpo_dir),
                                            checkpoint_dir(grpo_dir), 1, eval_count, eval_length, seed);

    stage("report");
    ReportData report;
    report.table1 = standard_report_rows();
    report.table2 = standard_report_rows();
    report.table1[0].ddqn_top1 = ddqn_art.top1_usdt;
    report.table1[0].grpo_top1 = grpo_art.top1_usdt;
    report.table2[0].ddqn_top1 = ddqn_art.top1_backtest_pct;
    report.table2[0].grpo_top1 = grpo_art.top1_backtest_pct;
    for (int64_t i = ds.split.test.begin; i < ds.split.test.end; ++i) {
        report.baseline_ts.push_back(ds.frames[static_cast<size_t>(i)].ts);
        report.baseline_price.push_back(ds.frames[static_cast<size_t>(i)].close);
    }
    auto add_curve = [&](const char* name, BacktestCurve& c) {
        ReportCurve rc;
        rc.name = name;
        rc.ts = std::move(c.ts);
        rc.equity = std::move(c.equity);
        rc.initial_equity = c.initial_equity;
        report.curves.push_back(std::move(rc));
    };
    add_curve("ddqn-mlp-top1", ddqn_art.top1_curve);
    add_curve("grpo-mlp-top1", grpo_art.top1_curve);
    report.summary_extra = "Generated by `newsrl selftest` on the bundled synthetic market.";
    emit_report(report, (fs::path(out_root) / "report").string());

    const double baseline = baseline_buy_hold(ds.frames, ds.split.test);
    std::cout << "selftest: PASS fixtures+ingest+align (" << ds.frames.size() << " frames, "
              << news.size() << " news)\n";
    std::cout << "selftest: PASS scoring offline idempotent (requests second run = 0)\n";
    std::cout << "selftest: PASS tune ddqn (5 trials) top1 validation-selected\n";
    std::cout << "selftest: PASS tune grpo (5 trials) top1 validation-selected\n";
    std::cout << "selftest: PASS evaluate top1: ddqn=" << ddqn_art.top1_usdt
              << " USDT, grpo=" << grpo_art.top1_usdt << " USDT (mean over " << eval_count
              << " periods)\n";
    std::cout << "selftest: PASS backtest: ddqn=" << ddqn_art.top1_backtest_pct * 100.0
              << "%, grpo=" << grpo_art.top1_backtest_pct * 100.0
              << "%, buy&hold=" << baseline * 100.0 << "%\n";
    std::cout << "selftest: PASS report emitted under " << (fs::path(out_root) / "report").string()
              << "\n";
    std::cout << "selftest: done in " << elapsed() << "s\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"News-aware RL trading toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML-style config file; flags override");
    app.allow_config_extras(false);
    std::string log_path;
    app.add_option("--log-file", log_path, "Append machine-readable JSONL events here");

    // ---- ingest-bars
    auto* c_ingest_bars = app.add_subcommand("ingest-bars", "Validate and summarize a bars CSV");
    std::string ib_path, ib_out;
    c_ingest_bars->add_option("--bars", ib_path, "Bars CSV path")->required();
    c_ingest_bars->add_option("--out", ib_out, "Re-emit normalized CSV here");

    // ---- ingest-news
    auto* c_ingest_news = app.add_subcommand("ingest-news", "Validate and summarize a news JSONL");
    std::string in_path;
    c_ingest_news->add_option("--news", in_path, "News JSONL path")->required();

    // ---- score-news
    auto* c_score = app.add_subcommand("score-news", "Score news sentiment/risk via LLM or fixtures");
    std::string sn_news, sn_cache, sn_fixtures;
    std::string sn_base = "https://generativelanguage.googleapis.com";
    std::string sn_path = "/v1beta/openai/chat/completions";
    std::string sn_model = "gemini-2.5-flash";
    std::string sn_key_env = "NEWSRL_API_KEY";
    bool sn_offline = false;
    int64_t sn_budget = 24'000;
    int sn_jobs = 2;
    c_score->add_option("--news", sn_news, "News JSONL path")->required();
    c_score->add_option("--cache", sn_cache, "Score cache JSONL (appended)")->required();
    c_score->add_flag("--offline", sn_offline, "Use the fixture responder, no network");
    c_score->add_option("--fixtures", sn_fixtures, "Fixture responses JSONL (offline mode)");
    c_score->add_option("--endpoint", sn_base, "Chat endpoint base URL");
    c_score->add_option("--endpoint-path", sn_path, "Chat endpoint path");
    c_score->add_option("--model", sn_model, "Model id");
    c_score->add_option("--api-key-env", sn_key_env, "Env var holding the credential");
    c_score->add_option("--char-budget", sn_budget, "Prompt character budget");
    c_score->add_option("--jobs", sn_jobs, "Max in-flight requests");

    // ---- align
    auto* c_align = app.add_subcommand("align", "Forward-fill scores onto the minute grid");
    CommonOpts al_common;
    std::string al_out = "aligned.csv";
    add_common(c_align, al_common);
    c_align->add_option("--out", al_out, "Aligned frames CSV output");

    // ---- tune
    auto* c_tune = app.add_subcommand("tune", "Hyperparameter search with early stopping");
    CommonOpts tu_common;
    add_common(c_tune, tu_common);
    std::string tu_algo = "ddqn", tu_net = "mlp", tu_out = "tune_out";
    int64_t tu_trials = 20, tu_episode = 0, tu_n_eval = 0, tu_steps = 0, tu_eval_int = 0;
    uint64_t tu_seed = 7;
    bool tu_desk = false;
    c_tune->add_option("--algo", tu_algo, "ddqn|grpo")->check(CLI::IsMember({"ddqn", "grpo"}));
    c_tune->add_option("--net", tu_net, "mlp|lstm|transformer")
        ->check(CLI::IsMember({"mlp", "lstm", "transformer"}));
    c_tune->add_option("--trials", tu_trials, "Number of trials");
    c_tune->add_option("--seed", tu_seed, "Tuning seed");
    c_tune->add_flag("--desk-scale", tu_desk, "Shrink budgets ~20x for CI");
    c_tune->add_option("--out", tu_out, "Output dir (trials.jsonl, checkpoints/)");
    c_tune->add_option("--episode-length", tu_episode, "Episode length in minutes");
    c_tune->add_option("--n-eval", tu_n_eval, "Validation windows per evaluation");
    c_tune->add_option("--max-env-steps", tu_steps, "Training env-step budget per trial");
    c_tune->add_option("--eval-interval", tu_eval_int, "Env steps between evaluations");

    // ---- train
    auto* c_train = app.add_subcommand("train", "Train one agent with fixed hyperparameters");
    CommonOpts tr_common;
    add_common(c_train, tr_common);
    std::string tr_algo = "ddqn", tr_net = "mlp", tr_out = "train_out";
    uint64_t tr_seed = 7;
    bool tr_desk = false;
    std::string tr_params_json;
    c_train->add_option("--algo", tr_algo, "ddqn|grpo")->check(CLI::IsMember({"ddqn", "grpo"}));
    c_train->add_option("--net", tr_net, "mlp|lstm|transformer")
        ->check(CLI::IsMember({"mlp", "lstm", "transformer"}));
    c_train->add_option("--seed", tr_seed, "Training seed");
    c_train->add_flag("--desk-scale", tr_desk, "Shrink budgets ~20x");
    c_train->add_option("--out", tr_out, "Output dir");
    c_train->add_option("--params-json", tr_params_json, "JSON map of hyperparameter overrides");

    // ---- evaluate
    auto* c_eval = app.add_subcommand("evaluate", "Top-K evaluation over sampled test periods");
    CommonOpts ev_common;
    add_common(c_eval, ev_common);
    std::string ev_store, ev_ckpts, ev_out = "evaluation.json";
    int64_t ev_topk = 1, ev_count = 256, ev_length = 3000;
    uint64_t ev_seed = 7;
    c_eval->add_option("--store", ev_store, "trials.jsonl path")->required();
    c_eval->add_option("--ckpt-dir", ev_ckpts, "Checkpoint dir")->required();
    c_eval->add_option("--topk", ev_topk, "1 or 10");
    c_eval->add_option("--count", ev_count, "Sampled periods");
    c_eval->add_option("--length", ev_length, "Period length, minutes");
    c_eval->add_option("--eval-seed", ev_seed, "Window sampling seed");
    c_eval->add_option("--out", ev_out, "Result JSON path");

    // ---- backtest
    auto* c_back = app.add_subcommand("backtest", "Full backtest of one checkpoint on the test split");
    CommonOpts bt_common;
    add_common(c_back, bt_common);
    std::string bt_ckpt, bt_out = "backtest.csv";
    c_back->add_option("--ckpt", bt_ckpt, "Agent checkpoint path")->required();
    c_back->add_option("--out", bt_out, "Equity curve CSV output");

    // ---- report
    auto* c_report = app.add_subcommand("report", "Emit tables, curves and the backtest figure");
    CommonOpts rp_common;
    add_common(c_report, rp_common);
    std::vector<std::string> rp_runs;
    std::string rp_out = "report";
    int64_t rp_count = 256, rp_length = 3000, rp_topk = 10;
    uint64_t rp_seed = 7;
    c_report->add_option("--run", rp_runs,
                         "label=dir entries; label is <algo>:<row> with row one of mlp, lstm, "
                         "transformer, lstm-no-llm, transformer-no-llm; dir holds trials.jsonl + "
                         "checkpoints/")
        ->required();
    c_report->add_option("--out", rp_out, "Report output dir");
    c_report->add_option("--count", rp_count, "Sampled periods for the tables");
    c_report->add_option("--length", rp_length, "Period length, minutes");
    c_report->add_option("--topk", rp_topk, "K for the Top-K columns");
    c_report->add_option("--eval-seed", rp_seed, "Window sampling seed");

    // ---- selftest
    auto* c_self = app.add_subcommand("selftest", "End-to-end run on bundled synthetic fixtures");
    std::string st_out = "selftest_out";
    uint64_t st_seed = 1;
    c_self->add_option("--out", st_out, "Output dir");
    c_self->add_option("--seed", st_seed, "Seed");

    try {
        app.parse(argc, argv);
        g_log.open(log_path);

        if (*c_ingest_bars) {
            auto res = load_bars(ib_path);
            g_log.event("ingest_bars", {{"count", res.bars.size()},
                                        {"missing_minutes", res.missing_minutes},
                                        {"first_ts", res.bars.empty() ? 0 : res.bars.front().ts},
                                        {"last_ts", res.bars.empty() ? 0 : res.bars.back().ts}});
            if (!ib_out.empty()) {
                std::ofstream out(ib_out, std::ios::binary);
                if (!out) throw DataError("cannot write " + ib_out);
                out << "ts,open,high,low,close,volume\n";
                out.precision(17);
                for (const auto& b : res.bars)
                    out << b.ts << ',' << b.open << ',' << b.high << ',' << b.low << ',' << b.close
                        << ',' << b.volume << '\n';
            }
            std::cout << res.bars.size() << " bars, " << res.missing_minutes << " missing minutes\n";
            return 0;
        }
        if (*c_ingest_news) {
            auto items = load_news(in_path);
            g_log.event("ingest_news", {{"count", items.size()}});
            std::cout << items.size() << " news items\n";
            return 0;
        }
        if (*c_score) {
            auto items = load_news(sn_news);
            ScoreCache cache(sn_cache);
            std::unique_ptr<ScoreResponder> responder;
            if (sn_offline) {
                if (sn_fixtures.empty())
                    throw DataError("score-news: --offline requires --fixtures");
                responder = std::make_unique<FixtureResponder>(sn_fixtures, sn_model);
            } else {
                responder =
                    std::make_unique<HttpChatResponder>(sn_base, sn_path, sn_model, sn_key_env);
            }
            ScoreRunOptions opts;
            opts.char_budget = sn_budget;
            opts.max_in_flight = sn_jobs;
            ScoreRunStats stats;
            auto scored = score_news(items, *responder, cache, opts, &stats);
            g_log.event("score_news", {{"items", items.size()},
                                       {"cache_hits", stats.cache_hits},
                                       {"requests", stats.requests},
                                       {"parse_fallbacks", stats.parse_fallbacks}});
            std::cout << scored.size() << " items scored (" << stats.cache_hits << " cached, "
                      << stats.requests << " requests)\n";
            return 0;
        }
        if (*c_align) {
            if (al_common.cache_path.empty())
                throw DataError("align: --cache with scored news is required");
            auto bars = load_bars(al_common.bars_path);
            ScoreCache cache(al_common.cache_path);
            auto scored = cache.all();
            std::sort(scored.begin(), scored.end(),
                      [](const ScoredNews& a, const ScoredNews& b) { return a.ts < b.ts; });
            auto frames = forward_fill_scores(bars.bars, scored);
            export_aligned_csv(al_out, frames);
            g_log.event("align", {{"frames", frames.size()}, {"out", al_out}});
            std::cout << frames.size() << " aligned frames -> " << al_out << "\n";
            return 0;
        }
        if (*c_tune) {
            write_resolved_config(app, tu_out);
            const int rc = run_tune(tu_common, tu_algo, tu_net, tu_trials, tu_seed, tu_desk, tu_out,
                                    tu_episode, tu_n_eval, tu_steps, tu_eval_int);
            std::cout << tu_trials << " trials -> " << trial_store_path(tu_out) << "\n";
            return rc;
        }
        if (*c_train) {
            write_resolved_config(app, tr_out);
            Dataset ds = load_dataset(tr_common);
            TrialContext ctx;
            ctx.frames = &ds.frames;
            ctx.features = &ds.features;
            ctx.split = ds.split;
            ctx.algo = tr_algo;
            ctx.net_kind = net_kind_from_name(tr_net);
            ctx.feature_mode = feature_mode_from_name(tr_common.feature_mode);
            ctx.env_config = env_config_of(tr_common);
            if (tr_desk) apply_desk_scale(ctx);
            std::error_code ec;
            fs::create_directories(checkpoint_dir(tr_out), ec);
            ctx.checkpoint_dir = checkpoint_dir(tr_out);
            ParamValues params;
            if (!tr_params_json.empty()) {
                // Keep the parsed document alive for the whole loop; items()
                // holds a reference.
                const json overrides = json::parse(tr_params_json);
                for (const auto& [k, v] : overrides.items()) params[k] = v.get<double>();
            }
            TrialStore store(trial_store_path(tr_out));
            TrialRecord rec = run_trial(ctx, store.next_trial_id(), params, tr_seed);
            store.append(rec);
            std::cout << "trial " << rec.trial_id << " " << rec.status << ", best "
                      << (rec.eval_history.empty() ? 0.0 : rec.best_score) << " USDT -> "
                      << trial_store_path(tr_out) << "\n";
            return rec.status == "failed" ? 3 : 0;
        }
        if (*c_eval) {
            Dataset ds = load_dataset(ev_common);
            TradingEnvConfig env_cfg = env_config_of(ev_common);
            TrialStore store(ev_store);
            auto eval_fn = [&](const TrialRecord& t) {
                auto ck = load_agent_checkpoint((fs::path(ev_ckpts) / t.checkpoint_ref).string());
                return evaluate_periods(ck, ds.frames, ds.features, ds.split.test, SplitTag::Test,
                                        ev_count, ev_length, ev_seed, env_cfg)
                    .mean_usdt;
            };
            auto res = topk_average(store.records(), static_cast<size_t>(ev_topk), eval_fn);
            json out{{"topk", ev_topk}, {"mean_usdt", res.mean}, {"per_agent", json::array()}};
            for (auto& [id, v] : res.per_agent)
                out["per_agent"].push_back(json{{"trial_id", id}, {"mean_usdt", v}});
            std::ofstream f(ev_out, std::ios::binary);
            if (!f) throw DataError("cannot write " + ev_out);
            f << out.dump(2) << "\n";
            std::cout << "top" << ev_topk << " mean " << res.mean << " USDT -> " << ev_out << "\n";
            return 0;
        }
        if (*c_back) {
            Dataset ds = load_dataset(bt_common);
            auto ck = load_agent_checkpoint(bt_ckpt);
            auto curve = full_backtest(ck, ds.frames, ds.features, ds.split.test,
                                       env_config_of(bt_common));
            std::ofstream out(bt_out, std::ios::binary);
            if (!out) throw DataError("cannot write " + bt_out);
            out << "ts,equity,side\n";
            out.precision(17);
            for (size_t i = 0; i < curve.ts.size(); ++i)
                out << curve.ts[i] << ',' << curve.equity[i] << ',' << curve.side[i] << '\n';
            std::cout << "backtest return " << curve.pct_return * 100.0 << "% ("
                      << baseline_buy_hold(ds.frames, ds.split.test) * 100.0
                      << "% buy&hold) -> " << bt_out << "\n";
            return 0;
        }
        if (*c_report) {
            Dataset ds = load_dataset(rp_common);
            TradingEnvConfig env_cfg = env_config_of(rp_common);
            ReportData report;
            report.table1 = standard_report_rows();
            report.table2 = standard_report_rows();
            for (int64_t i = ds.split.test.begin; i < ds.split.test.end; ++i) {
                report.baseline_ts.push_back(ds.frames[static_cast<size_t>(i)].ts);
                report.baseline_price.push_back(ds.frames[static_cast<size_t>(i)].close);
            }
            for (const auto& entry : rp_runs) {
                const auto eq = entry.find('=');
                if (eq == std::string::npos)
                    throw DataError("report: --run needs label=dir, got '" + entry + "'");
                const std::string label = entry.substr(0, eq);
                const std::string dir = entry.substr(eq + 1);
                const auto colon = label.find(':');
                if (colon == std::string::npos)
                    throw DataError("report: label must be <algo>:<row>, got '" + label + "'");
                const std::string algo = label.substr(0, colon);
                const std::string row_label = label.substr(colon + 1);
                const bool no_llm = row_label.size() > 7 &&
                                    row_label.substr(row_label.size() - 7) == "-no-llm";
                CommonOpts run_common = rp_common;
                run_common.no_llm = rp_common.no_llm || no_llm;
                Dataset run_ds = load_dataset(run_common);
                EvalArtifacts art = evaluate_store(
                    run_ds, env_cfg, trial_store_path(dir), checkpoint_dir(dir),
                    static_cast<size_t>(rp_topk), rp_count, rp_length, rp_seed);
                auto set_cells = [&](std::vector<ReportRow>& rows, double top1,
                                     std::optional<double> top10) {
                    for (auto& r : rows) {
                        if (r.label != row_label) continue;
                        if (algo == "ddqn") {
                            r.ddqn_top1 = top1;
                            r.ddqn_top10 = top10;
                        } else {
                            r.grpo_top1 = top1;
                            r.grpo_top10 = top10;
                        }
                    }
                };
                set_cells(report.table1, art.top1_usdt, art.top10_usdt);
                set_cells(report.table2, art.top1_backtest_pct, art.top10_backtest_pct);
                ReportCurve curve;
                curve.name = algo + "-" + row_label + "-top1";
                curve.ts = std::move(art.top1_curve.ts);
                curve.equity = std::move(art.top1_curve.equity);
                curve.initial_equity = art.top1_curve.initial_equity;
                report.curves.push_back(std::move(curve));
            }
            emit_report(report, rp_out);
            write_resolved_config(app, rp_out);
            std::cout << "report -> " << rp_out << "\n";
            return 0;
        }
        if (*c_self) {
            return run_selftest(st_out, st_seed);
        }
        std::cerr << app.help() << "\n";
        return 1;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::FileError& e) {
        // A named-but-unreadable config file is a data problem, not usage.
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        std::cerr << "run with --help for usage\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const newsrl::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const TransportError& e) {
        std::cerr << "transport error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
