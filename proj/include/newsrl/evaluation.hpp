#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "newsrl/agents.hpp"
#include "newsrl/tuner.hpp"

namespace newsrl {

struct PeriodResult {
    int64_t window_start = 0;
    double cumulative_return_usdt = 0.0; // sum of step rewards
    double pct_return = 0.0;             // equity_final / equity_initial - 1
};

struct PeriodEvaluation {
    double mean_usdt = 0.0;
    std::vector<PeriodResult> periods;
};

// Greedy-policy average over `count` sampled windows of `length` minutes.
// The checkpoint's feature mode must match the feature build.
PeriodEvaluation evaluate_periods(const AgentCheckpoint& ck, const std::vector<AlignedFrame>& frames,
                                  const FeatureMatrix& features, const IndexRange& split_range,
                                  SplitTag tag, int64_t count, int64_t length, uint64_t seed,
                                  const TradingEnvConfig& config);

struct TopKEvaluation {
    double mean = 0.0;
    std::vector<std::pair<int64_t, double>> per_agent; // (trial_id, metric)
};

// Evaluates each of the top-k validation-ranked trials independently and
// averages the metric.
TopKEvaluation topk_average(const std::vector<TrialRecord>& trials, size_t k,
                            const std::function<double(const TrialRecord&)>& eval_fn);

struct BacktestCurve {
    std::vector<int64_t> ts;
    std::vector<double> equity;
    std::vector<int> side; // -1/0/+1 per minute
    double initial_equity = 0.0;
    double pct_return = 0.0;
};

// One continuous episode over the whole test split, SL/TP active, forced
// close at the end. Curve has one point per split frame.
BacktestCurve full_backtest(const AgentCheckpoint& ck, const std::vector<AlignedFrame>& frames,
                            const FeatureMatrix& features, const IndexRange& test_range,
                            const TradingEnvConfig& config);

// close_last / close_first - 1 over the split.
double baseline_buy_hold(const std::vector<AlignedFrame>& frames, const IndexRange& range);

// Report layout mirrors the two result tables and the backtest figure:
// rows are network configurations, columns DDQN/GRPO x Top1/Top10.
struct ReportRow {
    std::string label;
    std::optional<double> ddqn_top1, ddqn_top10, grpo_top1, grpo_top10;
};

struct ReportCurve {
    std::string name;
    std::vector<int64_t> ts;
    std::vector<double> equity;
    double initial_equity = 0.0;
};

struct ReportData {
    std::vector<ReportRow> table1; // averaged cumulative returns, USDT
    std::vector<ReportRow> table2; // full-backtest returns, fraction (0.56 = 56%)
    std::vector<ReportCurve> curves;
    std::vector<int64_t> baseline_ts;
    std::vector<double> baseline_price;
    std::string summary_extra;
};

// The five canonical rows with empty cells.
std::vector<ReportRow> standard_report_rows();

// Writes table1.csv, table2.csv, curves/<config>.csv, backtest.svg and
// summary.md under out_dir. Byte-deterministic for identical inputs.
void emit_report(const ReportData& data, const std::string& out_dir);

} // namespace newsrl
