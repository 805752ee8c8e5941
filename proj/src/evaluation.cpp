#include "newsrl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace newsrl {

namespace {

double run_greedy_episode(const PolicyNet& net, const std::vector<AlignedFrame>& frames,
                          const FeatureMatrix& features, const EpisodeWindow& window,
                          const TradingEnvConfig& config, double* final_equity = nullptr,
                          double* initial_equity = nullptr) {
    TradingEnv env(frames, features, window, net.window(), config);
    Tensor obs = env.reset();
    double ret = 0.0;
    while (!env.done()) {
        StepOutcome so = env.step(argmax_action(net.scores(obs)));
        ret += so.reward;
        obs = std::move(so.observation);
    }
    if (final_equity) *final_equity = env.equity();
    if (initial_equity) *initial_equity = env.initial_equity();
    return ret;
}

} // namespace

PeriodEvaluation evaluate_periods(const AgentCheckpoint& ck, const std::vector<AlignedFrame>& frames,
                                  const FeatureMatrix& features, const IndexRange& split_range,
                                  SplitTag tag, int64_t count, int64_t length, uint64_t seed,
                                  const TradingEnvConfig& config) {
    if (ck.feature_mode != features.mode) {
        throw DataError("evaluate_periods: checkpoint feature mode '" +
                        feature_mode_name(ck.feature_mode) + "' does not match dataset '" +
                        feature_mode_name(features.mode) + "'");
    }
    const auto windows =
        sample_windows(split_range, tag, length, ck.net.window(), count, seed);
    PeriodEvaluation out;
    out.periods.reserve(windows.size());
    double total = 0.0;
    for (const auto& w : windows) {
        double final_eq = 0.0, init_eq = 0.0;
        const double ret = run_greedy_episode(ck.net, frames, features, w, config, &final_eq, &init_eq);
        total += ret;
        out.periods.push_back(PeriodResult{w.start_index, ret, final_eq / init_eq - 1.0});
    }
    out.mean_usdt = total / static_cast<double>(windows.size());
    return out;
}

TopKEvaluation topk_average(const std::vector<TrialRecord>& trials, size_t k,
                            const std::function<double(const TrialRecord&)>& eval_fn) {
    const auto top = rank_trials(trials, k);
    TopKEvaluation out;
    double total = 0.0;
    for (const auto& trial : top) {
        const double metric = eval_fn(trial);
        out.per_agent.emplace_back(trial.trial_id, metric);
        total += metric;
    }
    out.mean = total / static_cast<double>(top.size());
    return out;
}

BacktestCurve full_backtest(const AgentCheckpoint& ck, const std::vector<AlignedFrame>& frames,
                            const FeatureMatrix& features, const IndexRange& test_range,
                            const TradingEnvConfig& config) {
    if (ck.feature_mode != features.mode) {
        throw DataError("full_backtest: checkpoint feature mode does not match dataset");
    }
    EpisodeWindow window{test_range.begin, test_range.size(), SplitTag::Test};
    TradingEnv env(frames, features, window, ck.net.window(), config);
    Tensor obs = env.reset();
    BacktestCurve curve;
    curve.initial_equity = env.initial_equity();
    curve.ts.push_back(frames[static_cast<size_t>(env.cursor())].ts);
    curve.equity.push_back(env.equity());
    curve.side.push_back(static_cast<int>(env.position().side));
    while (!env.done()) {
        StepOutcome so = env.step(argmax_action(ck.net.scores(obs)));
        obs = std::move(so.observation);
        curve.ts.push_back(frames[static_cast<size_t>(env.cursor())].ts);
        curve.equity.push_back(env.equity());
        curve.side.push_back(static_cast<int>(env.position().side));
    }
    curve.pct_return = curve.equity.back() / curve.initial_equity - 1.0;
    return curve;
}

double baseline_buy_hold(const std::vector<AlignedFrame>& frames, const IndexRange& range) {
    if (range.size() <= 0) throw DataError("baseline_buy_hold: empty split");
    const double first = frames[static_cast<size_t>(range.begin)].close;
    const double last = frames[static_cast<size_t>(range.end - 1)].close;
    return last / first - 1.0;
}

std::vector<ReportRow> standard_report_rows() {
    return {ReportRow{"mlp", {}, {}, {}, {}},
            ReportRow{"lstm", {}, {}, {}, {}},
            ReportRow{"transformer", {}, {}, {}, {}},
            ReportRow{"lstm-no-llm", {}, {}, {}, {}},
            ReportRow{"transformer-no-llm", {}, {}, {}, {}}};
}

namespace {

std::string fmt_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string cell(const std::optional<double>& v) { return v ? fmt_num(*v) : ""; }

void write_table(const std::string& path, const std::vector<ReportRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("report: cannot write " + path);
    out << "networks,ddqn_top1,ddqn_top10,grpo_top1,grpo_top10\n";
    for (const auto& r : rows) {
        out << r.label << ',' << cell(r.ddqn_top1) << ',' << cell(r.ddqn_top10) << ','
            << cell(r.grpo_top1) << ',' << cell(r.grpo_top10) << '\n';
    }
}

std::string sanitize(const std::string& name) {
    std::string out;
    for (char c : name) out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return out;
}

// Civil date from epoch days (Howard Hinnant's algorithm); avoids locale.
std::string utc_date(int64_t epoch_ms) {
    int64_t z = epoch_ms / 86'400'000;
    z += 719468;
    const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const auto doe = static_cast<uint64_t>(z - era * 146097);
    const uint64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const int64_t y = static_cast<int64_t>(yoe) + era * 400;
    const uint64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const uint64_t mp = (5 * doy + 2) / 153;
    const uint64_t d = doy - (153 * mp + 2) / 5 + 1;
    const uint64_t m = mp < 10 ? mp + 3 : mp - 9;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04lld-%02llu-%02llu", static_cast<long long>(y + (m <= 2)),
                  static_cast<unsigned long long>(m), static_cast<unsigned long long>(d));
    return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#e377c2", "#17becf"};

void write_svg(const std::string& path, const ReportData& data) {
    const double width = 960, height = 540;
    const double ml = 80, mr = 80, mt = 40, mb = 50;
    const double pw = width - ml - mr, ph = height - mt - mb;

    int64_t ts_lo = 0, ts_hi = 1;
    double y_lo = 0, y_hi = 1;
    bool have_any = false;
    auto absorb = [&](const std::vector<int64_t>& ts, const std::vector<double>& ys) {
        for (size_t i = 0; i < ts.size(); ++i) {
            if (!have_any) {
                ts_lo = ts_hi = ts[i];
                y_lo = y_hi = ys[i];
                have_any = true;
            } else {
                ts_lo = std::min(ts_lo, ts[i]);
                ts_hi = std::max(ts_hi, ts[i]);
                y_lo = std::min(y_lo, ys[i]);
                y_hi = std::max(y_hi, ys[i]);
            }
        }
    };
    absorb(data.baseline_ts, data.baseline_price);
    for (const auto& c : data.curves) absorb(c.ts, c.equity);
    if (!have_any) {
        ts_hi = ts_lo + 1;
        y_hi = y_lo + 1;
    }
    if (y_hi == y_lo) y_hi = y_lo + 1;
    if (ts_hi == ts_lo) ts_hi = ts_lo + 1;

    auto sx = [&](int64_t t) {
        return ml + pw * static_cast<double>(t - ts_lo) / static_cast<double>(ts_hi - ts_lo);
    };
    auto sy = [&](double v) { return mt + ph * (1.0 - (v - y_lo) / (y_hi - y_lo)); };

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("report: cannot write " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    // Axes and ticks.
    out << "<g stroke=\"#333\" stroke-width=\"1\">\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
        << "\"/>\n";
    out << "<line x1=\"" << ml + pw << "\" y1=\"" << mt << "\" x2=\"" << ml + pw << "\" y2=\""
        << mt + ph << "\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
        << mt + ph << "\"/>\n";
    out << "</g>\n";
    const double init = data.curves.empty()
                            ? (data.baseline_price.empty() ? 1.0 : data.baseline_price.front())
                            : data.curves.front().initial_equity;
    for (int i = 0; i <= 5; ++i) {
        const double v = y_lo + (y_hi - y_lo) * i / 5.0;
        const double y = sy(v);
        out << "<line x1=\"" << ml - 4 << "\" y1=\"" << y << "\" x2=\"" << ml << "\" y2=\"" << y
            << "\" stroke=\"#333\"/>\n";
        out << "<text x=\"" << ml - 8 << "\" y=\"" << y + 4
            << "\" font-size=\"11\" text-anchor=\"end\" fill=\"#333\">" << fmt_num(v) << "</text>\n";
        const double pct = (v / init - 1.0) * 100.0;
        out << "<text x=\"" << ml + pw + 8 << "\" y=\"" << y + 4
            << "\" font-size=\"11\" text-anchor=\"start\" fill=\"#333\">" << fmt_num(pct)
            << "%</text>\n";
    }
    for (int i = 0; i <= 4; ++i) {
        const int64_t t = ts_lo + (ts_hi - ts_lo) * i / 4;
        const double x = sx(t);
        out << "<text x=\"" << x << "\" y=\"" << mt + ph + 18
            << "\" font-size=\"11\" text-anchor=\"middle\" fill=\"#333\">" << utc_date(t)
            << "</text>\n";
    }
    out << "<text x=\"" << ml - 56 << "\" y=\"" << mt - 14
        << "\" font-size=\"12\" fill=\"#333\">USDT</text>\n";
    out << "<text x=\"" << ml + pw + 30 << "\" y=\"" << mt - 14
        << "\" font-size=\"12\" fill=\"#333\">%</text>\n";

    auto polyline = [&](const std::vector<int64_t>& ts, const std::vector<double>& ys,
                        const std::string& color, const std::string& width_attr) {
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width_attr
            << "\" points=\"";
        // Subsample long series to keep files small but deterministic.
        const size_t stride = std::max<size_t>(1, ts.size() / 2000);
        for (size_t i = 0; i < ts.size(); i += stride) {
            out << fmt_num(sx(ts[i])) << "," << fmt_num(sy(ys[i])) << " ";
        }
        if (!ts.empty() && (ts.size() - 1) % stride != 0) {
            out << fmt_num(sx(ts.back())) << "," << fmt_num(sy(ys.back()));
        }
        out << "\"/>\n";
    };

    if (!data.baseline_ts.empty()) {
        polyline(data.baseline_ts, data.baseline_price, "#9a9a9a", "1.5");
    }
    for (size_t i = 0; i < data.curves.size(); ++i) {
        polyline(data.curves[i].ts, data.curves[i].equity,
                 kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))], "1.5");
    }

    // Legend.
    double ly = mt + 12;
    if (!data.baseline_ts.empty()) {
        out << "<line x1=\"" << ml + 10 << "\" y1=\"" << ly << "\" x2=\"" << ml + 34 << "\" y2=\""
            << ly << "\" stroke=\"#9a9a9a\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << ml + 40 << "\" y=\"" << ly + 4
            << "\" font-size=\"11\" fill=\"#333\">baseline</text>\n";
        ly += 16;
    }
    for (size_t i = 0; i < data.curves.size(); ++i) {
        const char* color = kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
        out << "<line x1=\"" << ml + 10 << "\" y1=\"" << ly << "\" x2=\"" << ml + 34 << "\" y2=\""
            << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << ml + 40 << "\" y=\"" << ly + 4 << "\" font-size=\"11\" fill=\"#333\">"
            << data.curves[i].name << "</text>\n";
        ly += 16;
    }
    out << "</svg>\n";
}

} // namespace

void emit_report(const ReportData& data, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "curves", ec);
    if (ec) throw DataError("report: cannot create " + out_dir + ": " + ec.message());

    write_table((fs::path(out_dir) / "table1.csv").string(), data.table1);
    write_table((fs::path(out_dir) / "table2.csv").string(), data.table2);
    for (const auto& c : data.curves) {
        std::ofstream out((fs::path(out_dir) / "curves" / (sanitize(c.name) + ".csv")).string(),
                          std::ios::binary);
        if (!out) throw DataError("report: cannot write curve " + c.name);
        out << "ts,equity\n";
        for (size_t i = 0; i < c.ts.size(); ++i) {
            out << c.ts[i] << ',' << fmt_num(c.equity[i]) << '\n';
        }
    }
    write_svg((fs::path(out_dir) / "backtest.svg").string(), data);

    std::ofstream md((fs::path(out_dir) / "summary.md").string(), std::ios::binary);
    if (!md) throw DataError("report: cannot write summary.md");
    md << "# Evaluation summary\n\n";
    md << "## Averaged cumulative returns over sampled periods (USDT)\n\n";
    auto md_table = [&](const std::vector<ReportRow>& rows, bool pct) {
        md << "| networks | ddqn_top1 | ddqn_top10 | grpo_top1 | grpo_top10 |\n";
        md << "|---|---|---|---|---|\n";
        auto pc = [&](const std::optional<double>& v) {
            if (!v) return std::string("");
            return pct ? fmt_num(*v * 100.0) + "%" : fmt_num(*v);
        };
        for (const auto& r : rows) {
            md << "| " << r.label << " | " << pc(r.ddqn_top1) << " | " << pc(r.ddqn_top10) << " | "
               << pc(r.grpo_top1) << " | " << pc(r.grpo_top10) << " |\n";
        }
        md << "\n";
    };
    md_table(data.table1, false);
    md << "## Full-backtest returns over the test period\n\n";
    md_table(data.table2, true);
    if (!data.baseline_price.empty() && !data.baseline_ts.empty()) {
        md << "Buy-and-hold baseline over the same period: "
           << fmt_num((data.baseline_price.back() / data.baseline_price.front() - 1.0) * 100.0)
           << "%\n\n";
    }
    if (!data.summary_extra.empty()) md << data.summary_extra << "\n";
}

} // namespace newsrl
