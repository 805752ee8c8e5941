#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "newsrl/evaluation.hpp"
#include "test_support.hpp"

using namespace newsrl;

namespace {

namespace fs = std::filesystem;

struct Setup {
    std::vector<AlignedFrame> frames;
    DatasetSplit split;
    FeatureMatrix features;

    explicit Setup(int64_t n = 3000) {
        frames = newsrl::testing::synthetic_frames(n);
        split = chronological_split(static_cast<int64_t>(frames.size()));
        features = build_features(frames, FeatureMode::Returns, split.train);
    }
};

PolicyNet biased_net(const std::array<double, 3>& outputs) {
    auto net = PolicyNet::make_mlp(MlpConfig{4, 4}, kFeatureDim, 0);
    for (auto& [name, t] : net.params())
        for (double& v : t.values) v = 0.0;
    net.params().at("head.b") = Tensor::vector({outputs[0], outputs[1], outputs[2]});
    return net;
}

AgentCheckpoint checkpoint_of(PolicyNet net, FeatureMode mode = FeatureMode::Returns) {
    AgentCheckpoint ck;
    ck.algo = "ddqn";
    ck.net = std::move(net);
    ck.hyper_json = DdqnHyper{}.to_json();
    ck.feature_mode = mode;
    ck.seed = 1;
    return ck;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("always-hold agent earns exactly zero") {
    Setup s;
    auto ck = checkpoint_of(biased_net({0, 0, 1})); // argmax = hold
    auto eval = evaluate_periods(ck, s.frames, s.features, s.split.test, SplitTag::Test, 16, 60, 7,
                                 TradingEnvConfig{});
    CHECK(eval.mean_usdt == 0.0);
    for (const auto& p : eval.periods) {
        CHECK(p.cumulative_return_usdt == 0.0);
        CHECK(p.pct_return == 0.0);
    }
}

TEST_CASE("period results equal the replay oracle") {
    Setup s;
    auto ck = checkpoint_of(biased_net({0.2, 0.5, 0.1})); // always long
    const int64_t count = 8, length = 50;
    auto eval = evaluate_periods(ck, s.frames, s.features, s.split.test, SplitTag::Test, count,
                                 length, 7, TradingEnvConfig{});
    REQUIRE(eval.periods.size() == static_cast<size_t>(count));
    auto windows = sample_windows(s.split.test, SplitTag::Test, length, 1, count, 7);
    for (size_t i = 0; i < windows.size(); ++i) {
        std::vector<int> actions(static_cast<size_t>(length - 1), static_cast<int>(Action::Long));
        const auto replay = replay_equity(s.frames, windows[i], actions, TradingEnvConfig{});
        double total = 0;
        for (double r : replay.rewards) total += r;
        CHECK(eval.periods[i].cumulative_return_usdt == doctest::Approx(total).epsilon(1e-12));
        CHECK(eval.periods[i].window_start == windows[i].start_index);
    }
}

TEST_CASE("requested period count is honored") {
    Setup s(9000);
    auto ck = checkpoint_of(biased_net({0, 0, 1}));
    auto eval = evaluate_periods(ck, s.frames, s.features, s.split.test, SplitTag::Test, 256, 60, 3,
                                 TradingEnvConfig{});
    CHECK(eval.periods.size() == 256);
}

TEST_CASE("feature mode mismatch is rejected") {
    Setup s;
    auto ck = checkpoint_of(biased_net({0, 0, 1}), FeatureMode::RawScaled);
    CHECK_THROWS_AS(evaluate_periods(ck, s.frames, s.features, s.split.test, SplitTag::Test, 4, 50,
                                     7, TradingEnvConfig{}),
                    DataError);
}

TEST_CASE("topk averaging") {
    std::vector<TrialRecord> trials;
    for (int i = 0; i < 5; ++i) {
        TrialRecord r;
        r.trial_id = i;
        r.record_eval(static_cast<double>(i)); // trial 4 best, then 3, ...
        r.status = "completed";
        trials.push_back(r);
    }
    auto metric = [](const TrialRecord& t) { return t.trial_id == 4 ? 10.0 : 20.0; };
    auto top1 = topk_average(trials, 1, metric);
    CHECK(top1.mean == doctest::Approx(10.0));
    REQUIRE(top1.per_agent.size() == 1);
    CHECK(top1.per_agent[0].first == 4);
    auto top2 = topk_average(trials, 2, metric);
    CHECK(top2.mean == doctest::Approx(15.0));
}

TEST_CASE("full backtest covers the whole test split") {
    Setup s;
    auto hold = checkpoint_of(biased_net({0, 0, 1}));
    auto curve = full_backtest(hold, s.frames, s.features, s.split.test, TradingEnvConfig{});
    CHECK(curve.ts.size() == static_cast<size_t>(s.split.test.size()));
    CHECK(curve.pct_return == doctest::Approx(0.0));
    for (double e : curve.equity) CHECK(e == doctest::Approx(curve.initial_equity));

    TradingEnvConfig no_sltp;
    no_sltp.sltp_threshold = std::numeric_limits<double>::infinity();
    auto longer = checkpoint_of(biased_net({0, 1, 0}));
    auto curve2 = full_backtest(longer, s.frames, s.features, s.split.test, no_sltp);
    const double c0 = s.frames[static_cast<size_t>(s.split.test.begin)].close;
    const double c1 = s.frames[static_cast<size_t>(s.split.test.end - 1)].close;
    CHECK(curve2.pct_return == doctest::Approx(c1 / c0 - 1.0).epsilon(1e-12));
}

TEST_CASE("buy and hold baseline arithmetic") {
    std::vector<AlignedFrame> frames;
    for (int64_t i = 0; i < 10; ++i) {
        AlignedFrame f;
        f.ts = i;
        f.close = 100.0 + i * (50.0 / 9.0);
        f.open = f.close;
        f.high = f.close;
        f.low = f.close;
        frames.push_back(f);
    }
    CHECK(baseline_buy_hold(frames, IndexRange{0, 10}) == doctest::Approx(0.5));
    std::vector<AlignedFrame> flat(5, frames[0]);
    CHECK(baseline_buy_hold(flat, IndexRange{0, 5}) == doctest::Approx(0.0));
    CHECK_THROWS_AS(baseline_buy_hold(flat, IndexRange{2, 2}), DataError);
}

TEST_CASE("emit_report writes the declared files deterministically") {
    ReportData data;
    data.table1 = standard_report_rows();
    data.table2 = standard_report_rows();
    data.table1[0].ddqn_top1 = 12.5;
    data.table1[0].grpo_top10 = -3.25;
    data.table2[1].grpo_top1 = 1.245;
    for (int i = 0; i < 100; ++i) {
        data.baseline_ts.push_back(1577836800000LL + i * 60000);
        data.baseline_price.push_back(100.0 + i * 0.1);
    }
    ReportCurve c;
    c.name = "ddqn-mlp-top1";
    c.ts = data.baseline_ts;
    c.equity.assign(100, 101.0);
    c.initial_equity = 100.0;
    data.curves.push_back(c);

    const auto dir = fs::temp_directory_path() / "nrl_report";
    fs::remove_all(dir);
    emit_report(data, dir.string());

    const std::string t1 = slurp(dir / "table1.csv");
    CHECK(t1.rfind("networks,ddqn_top1,ddqn_top10,grpo_top1,grpo_top10\n", 0) == 0);
    CHECK(t1.find("mlp,12.5,,,-3.25") != std::string::npos);
    CHECK(t1.find("lstm,") != std::string::npos);
    CHECK(t1.find("transformer,") != std::string::npos);
    CHECK(t1.find("lstm-no-llm,") != std::string::npos);
    CHECK(t1.find("transformer-no-llm,") != std::string::npos);
    CHECK(fs::exists(dir / "table2.csv"));
    CHECK(fs::exists(dir / "curves" / "ddqn_mlp_top1.csv"));
    CHECK(fs::exists(dir / "summary.md"));

    const std::string svg = slurp(dir / "backtest.svg");
    CHECK(svg.find("<svg") != std::string::npos);
    // One polyline for the baseline plus one per configuration.
    size_t polylines = 0;
    for (size_t pos = svg.find("<polyline"); pos != std::string::npos;
         pos = svg.find("<polyline", pos + 1))
        ++polylines;
    CHECK(polylines == 2);
    CHECK(svg.find("#9a9a9a") != std::string::npos); // gray baseline

    // Byte-identical on re-run.
    const std::string before_t1 = slurp(dir / "table1.csv");
    const std::string before_svg = svg;
    emit_report(data, dir.string());
    CHECK(slurp(dir / "table1.csv") == before_t1);
    CHECK(slurp(dir / "backtest.svg") == before_svg);
}

TEST_CASE("ablated features leave market channels bit-identical") {
    Setup s;
    auto ablated = s.features;
    zero_llm_channels(ablated);
    for (int64_t i = 0; i < s.features.rows; ++i) {
        for (int c = 0; c < 4; ++c) CHECK(s.features.row(i)[c] == ablated.row(i)[c]);
        CHECK(ablated.row(i)[4] == 0.0);
        CHECK(ablated.row(i)[5] == 0.0);
    }
}
