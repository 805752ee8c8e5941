// Regenerates tests/fixtures/golden_*.jsonl. Run manually after any change
// to the prompt template, then commit the outputs:
//   ./golden_fixtures_gen <fixtures_dir>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <vector>

#include <json.hpp>

#include "newsrl/sentiment.hpp"

using namespace newsrl;

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: golden_fixtures_gen <fixtures_dir>\n";
        return 1;
    }
    const std::string dir = argv[1];
    std::filesystem::create_directories(dir);

    struct Spec {
        int64_t ts;
        const char* title;
        const char* body;
        int sentiment;
        int risk;
    };
    const std::vector<Spec> specs{
        {1700000000000, "Major exchange lists new BTC product",
         "Institutional flows expected to rise over the coming weeks as the product opens.", 4, 2},
        {1700000360000, "Regulator opens probe into stablecoin issuer",
         "Uncertainty spreads across funding markets; desks reduce exposure.", 1, 5},
        {1700000720000, "Weekly on-chain review is mixed",
         "Active addresses flat; fees unremarkable; no clear directional read.", 3, 3},
        {1700001080000, "Spot ETF inflows hit a record",
         "Largest single-day net inflow since launch lifts sentiment across majors.", 5, 1},
        {1700001440000, "Miner reserves tick down",
         "Gradual distribution continues; analysts split on short-term impact.", 2, 4},
        {1700001800000, "Layer-2 activity accelerates",
         "Throughput doubles quarter over quarter; bridges report steady volume.", 4, 4},
        {1700002160000, "Exchange outage during volatility spike",
         "Order entry degraded for an hour; positions could not be adjusted.", 1, 1},
    };

    std::vector<NewsItem> items;
    {
        std::ofstream out(dir + "/golden_news.jsonl", std::ios::trunc | std::ios::binary);
        for (const auto& s : specs) {
            NewsItem item;
            item.ts = s.ts;
            item.title = s.title;
            item.body = s.body;
            item.id = news_id_of(item.ts, item.title);
            items.push_back(item);
            out << nlohmann::json{{"ts", s.ts}, {"title", s.title}, {"body", s.body}}.dump() << "\n";
        }
    }

    const int64_t char_budget = 1200;
    auto score_of = [&](uint64_t id) {
        for (size_t i = 0; i < items.size(); ++i)
            if (items[i].id == id) return std::pair<int, int>{specs[i].sentiment, specs[i].risk};
        throw std::runtime_error("unknown id");
    };

    {
        std::ofstream clear(dir + "/golden_responses.jsonl", std::ios::trunc | std::ios::binary);
    }
    bool first_batch = true;
    for (const auto& batch_items : pack_batches(items, char_budget)) {
        const ScoreBatch batch = build_prompt(batch_items, char_budget);
        std::string body;
        if (first_batch) body += "Here are the scores:\n```\n";
        for (const auto& [index, item] : batch.items) {
            const auto [s, r] = score_of(item.id);
            body += std::to_string(index) + ": sentiment=" + std::to_string(s) +
                    ", risk=" + std::to_string(r) + "\n";
        }
        if (first_batch) body += "```\nHope this helps.\n";
        first_batch = false;
        write_fixture_entry(dir + "/golden_responses.jsonl", batch.prompt_hash, body);
    }

    std::filesystem::remove(dir + "/golden_cache.jsonl");
    ScoreCache cache(dir + "/golden_cache.jsonl");
    FixtureResponder responder(dir + "/golden_responses.jsonl", "fixture");
    ScoreRunOptions opts;
    opts.char_budget = char_budget;
    score_news(items, responder, cache, opts);
    std::cout << "golden fixtures written to " << dir << " (" << cache.size() << " scores)\n";
    return 0;
}
