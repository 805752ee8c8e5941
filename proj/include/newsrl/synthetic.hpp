#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "newsrl/data.hpp"
#include "newsrl/sentiment.hpp"

namespace newsrl {

// Deterministic drift-plus-sine market. Bars are gapless: each open equals
// the previous close, wicks extend the body by a fixed fraction.
struct SyntheticMarketSpec {
    int64_t n_minutes = 4000;
    double base = 100.0;
    double drift_per_min = 0.004;
    double amplitude = 3.0;
    double period_minutes = 180.0;
    double wick = 0.0002;
    int64_t ts0 = 1577836800000; // 2020-01-01T00:00:00Z
    double volume_base = 25.0;
};

std::vector<Bar> synthetic_bars(const SyntheticMarketSpec& spec);

// News at every sign flip of the next-minute close change (plus minute 0),
// titled with the new direction, so forward-filled sentiment tracks the
// upcoming drift.
std::vector<NewsItem> synthetic_news(const SyntheticMarketSpec& spec, const std::vector<Bar>& bars);

// Scores implied by a synthetic title: bullish -> (5,3), bearish -> (1,3).
std::pair<int, int> synthetic_scores_for(const NewsItem& item);

// Canned response text for a batch under synthetic scoring.
std::string synthetic_response_for(const ScoreBatch& batch);

// Scores news directly (no responder round-trip); for in-process tests.
std::vector<ScoredNews> synthetic_scored_news(const std::vector<NewsItem>& news);

struct SyntheticFixturePaths {
    std::string bars_csv;
    std::string news_jsonl;
    std::string responses_jsonl;
};

// Writes bars.csv, news.jsonl and the offline responder fixture
// (responses.jsonl) under dir; batches news greedily under char_budget.
SyntheticFixturePaths write_synthetic_fixtures(const std::string& dir,
                                               const SyntheticMarketSpec& spec,
                                               int64_t char_budget = 24'000);

} // namespace newsrl
