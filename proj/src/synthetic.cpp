#include "newsrl/synthetic.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace newsrl {

std::vector<Bar> synthetic_bars(const SyntheticMarketSpec& spec) {
    std::vector<Bar> bars;
    bars.reserve(static_cast<size_t>(spec.n_minutes));
    constexpr double kTau = 6.283185307179586;
    double prev_close = 0.0;
    for (int64_t t = 0; t < spec.n_minutes; ++t) {
        const double close = spec.base + spec.drift_per_min * static_cast<double>(t) +
                             spec.amplitude * std::sin(kTau * static_cast<double>(t) / spec.period_minutes);
        Bar b;
        b.ts = spec.ts0 + t * 60'000;
        b.close = close;
        b.open = (t == 0) ? close : prev_close;
        const double body_hi = std::max(b.open, b.close);
        const double body_lo = std::min(b.open, b.close);
        b.high = body_hi * (1.0 + spec.wick);
        b.low = body_lo * (1.0 - spec.wick);
        b.volume = spec.volume_base * (1.0 + 0.5 * std::sin(kTau * static_cast<double>(t) /
                                                            (spec.period_minutes * 2.7)));
        bars.push_back(b);
        prev_close = close;
    }
    return bars;
}

std::vector<NewsItem> synthetic_news(const SyntheticMarketSpec&, const std::vector<Bar>& bars) {
    std::vector<NewsItem> news;
    int note = 0;
    int prev_sign = 0;
    for (size_t t = 0; t + 1 < bars.size(); ++t) {
        const double delta = bars[t + 1].close - bars[t].close;
        const int sign = delta >= 0.0 ? 1 : -1;
        if (t == 0 || sign != prev_sign) {
            NewsItem item;
            item.ts = bars[t].ts;
            const char* dir = sign > 0 ? "bullish" : "bearish";
            item.title = "Synthetic market note " + std::to_string(note++) + ": momentum turns " + dir;
            item.body = std::string("Automated monitor flags a ") + dir +
                        " swing in the drift-plus-sine reference series.";
            item.id = news_id_of(item.ts, item.title);
            news.push_back(std::move(item));
        }
        prev_sign = sign;
    }
    return news;
}

std::pair<int, int> synthetic_scores_for(const NewsItem& item) {
    const bool bullish = item.title.find("bullish") != std::string::npos;
    return {bullish ? 5 : 1, 3};
}

std::string synthetic_response_for(const ScoreBatch& batch) {
    std::string out;
    for (const auto& [index, item] : batch.items) {
        const auto [s, r] = synthetic_scores_for(item);
        out += std::to_string(index) + ": sentiment=" + std::to_string(s) +
               ", risk=" + std::to_string(r) + "\n";
    }
    return out;
}

std::vector<ScoredNews> synthetic_scored_news(const std::vector<NewsItem>& news) {
    std::vector<ScoredNews> out;
    out.reserve(news.size());
    for (const auto& item : news) {
        const auto [s, r] = synthetic_scores_for(item);
        out.push_back(ScoredNews{item.id, s, r, "synthetic", "", item.ts});
    }
    return out;
}

SyntheticFixturePaths write_synthetic_fixtures(const std::string& dir,
                                               const SyntheticMarketSpec& spec,
                                               int64_t char_budget) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("fixtures: cannot create " + dir + ": " + ec.message());

    SyntheticFixturePaths paths;
    paths.bars_csv = (fs::path(dir) / "bars.csv").string();
    paths.news_jsonl = (fs::path(dir) / "news.jsonl").string();
    paths.responses_jsonl = (fs::path(dir) / "responses.jsonl").string();

    const auto bars = synthetic_bars(spec);
    {
        std::ofstream out(paths.bars_csv, std::ios::binary);
        if (!out) throw DataError("fixtures: cannot write " + paths.bars_csv);
        out << "ts,open,high,low,close,volume\n";
        out.precision(12);
        for (const auto& b : bars) {
            out << b.ts << ',' << b.open << ',' << b.high << ',' << b.low << ',' << b.close << ','
                << b.volume << '\n';
        }
    }
    const auto news = synthetic_news(spec, bars);
    {
        std::ofstream out(paths.news_jsonl, std::ios::binary);
        if (!out) throw DataError("fixtures: cannot write " + paths.news_jsonl);
        for (const auto& n : news) {
            nlohmann::json j{{"ts", n.ts}, {"title", n.title}, {"body", n.body}};
            out << j.dump() << "\n";
        }
    }
    {
        // Canned responses for every greedy batch the scorer will form.
        std::ofstream clear(paths.responses_jsonl, std::ios::trunc | std::ios::binary);
        if (!clear) throw DataError("fixtures: cannot write " + paths.responses_jsonl);
        clear.close();
        for (const auto& batch_items : pack_batches(news, char_budget)) {
            const ScoreBatch batch = build_prompt(batch_items, char_budget);
            write_fixture_entry(paths.responses_jsonl, batch.prompt_hash,
                                synthetic_response_for(batch));
        }
    }
    return paths;
}

} // namespace newsrl
