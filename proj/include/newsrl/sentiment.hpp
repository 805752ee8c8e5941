#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "newsrl/data.hpp"
#include "newsrl/errors.hpp"

namespace newsrl {

class TransportError : public std::runtime_error {
public:
    explicit TransportError(const std::string& msg) : std::runtime_error(msg) {}
};

// One rendered scoring request: the numbered items plus the canonical
// prompt text they were rendered into.
struct ScoreBatch {
    std::vector<std::pair<int, NewsItem>> items; // (1-based index, item)
    std::string rendered_prompt;
    std::string prompt_hash;
    int64_t char_budget = 0;
};

// Canonical prompt wording, versioned; the hash of the rendered prompt keys
// the response cache and fixtures.
extern const char* kPromptTemplateVersion;

std::string prompt_hash_of(const std::string& rendered_prompt);

// Renders task specification + 1..5 scale definitions + output format
// example + numbered items. Bodies are truncated at a word boundary to fit
// char_budget; an item whose title alone cannot fit is an error. With
// allow_truncation=false any overflow throws instead (used by the packer to
// decide batch boundaries).
ScoreBatch build_prompt(const std::vector<NewsItem>& items, int64_t char_budget,
                        bool allow_truncation = true);

// Extracts exactly expected_count (sentiment, risk) pairs from lines of the
// form `<index>: sentiment=<s>, risk=<r>`, tolerating surrounding prose and
// code fences. Pairs are returned in index order.
std::vector<std::pair<int, int>> parse_scores(const std::string& response_text, int expected_count);

// Greedy packing: items are appended while the rendered prompt stays under
// budget. Deterministic, so fixture writers and the scorer form identical
// batches.
std::vector<std::vector<NewsItem>> pack_batches(const std::vector<NewsItem>& items,
                                                int64_t char_budget);

// Append-only JSONL store keyed by (news_id, model_id, prompt_hash).
// Re-inserting an existing key is a no-op.
class ScoreCache {
public:
    ScoreCache() = default; // in-memory only
    explicit ScoreCache(std::string path);

    std::optional<ScoredNews> find(uint64_t news_id, const std::string& model_id) const;
    // Returns true when the record was new.
    bool insert(const ScoredNews& record);
    size_t size() const;
    std::vector<ScoredNews> all() const;

private:
    std::string path_;
    std::map<std::string, ScoredNews> records_; // key: news_id|model_id|prompt_hash
    std::map<std::string, std::string> latest_; // news_id|model_id -> key
    mutable std::mutex mu_;

    void load();
    static std::string key_of(uint64_t news_id, const std::string& model_id,
                              const std::string& prompt_hash);
};

class ScoreResponder {
public:
    virtual ~ScoreResponder() = default;
    virtual std::string respond(const ScoreBatch& batch) = 0;
    virtual std::string model_id() const = 0;
    // True when respond() performs network I/O (drives retry/backoff).
    virtual bool is_remote() const { return false; }
};

// HTTP JSON chat-completion client. Single user message, temperature 0.
// Credential read from an environment variable, never from config files.
class HttpChatResponder : public ScoreResponder {
public:
    HttpChatResponder(std::string base_url, std::string path, std::string model,
                      std::string api_key_env);
    std::string respond(const ScoreBatch& batch) override;
    std::string model_id() const override { return model_; }
    bool is_remote() const override { return true; }

private:
    std::string base_url_;
    std::string path_;
    std::string model_;
    std::string api_key_env_;
};

// Offline responder backed by a JSONL file of {"prompt_hash": ..., "response": ...}.
class FixtureResponder : public ScoreResponder {
public:
    explicit FixtureResponder(const std::string& fixture_path, std::string model = "fixture");
    std::string respond(const ScoreBatch& batch) override;
    std::string model_id() const override { return model_; }

private:
    std::map<std::string, std::string> responses_;
    std::string model_;
};

// Writes a fixture JSONL compatible with FixtureResponder.
void write_fixture_entry(const std::string& path, const std::string& prompt_hash,
                         const std::string& response_text, bool append = true);

struct ScoreRunOptions {
    int64_t char_budget = 24'000;
    int max_transport_retries = 3;
    int max_in_flight = 2;
};

struct ScoreRunStats {
    size_t cache_hits = 0;
    size_t requests = 0;
    size_t parse_fallbacks = 0; // items assigned neutral (3,3) after retry
};

// Scores all items, skipping cache hits and batching misses greedily under
// char_budget. On ParseError a batch is retried once, then failing items get
// neutral (3,3). Transport failures retry with exponential backoff; if they
// persist the error lists every unscored id. All results are persisted to
// the cache before return.
std::vector<ScoredNews> score_news(const std::vector<NewsItem>& items, ScoreResponder& responder,
                                   ScoreCache& cache, const ScoreRunOptions& opts,
                                   ScoreRunStats* stats = nullptr);

} // namespace newsrl
