#include "newsrl/sentiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

namespace newsrl {

using nlohmann::json;

const char* kPromptTemplateVersion = "newsrl-prompt-v1";

namespace {

const char* kTaskSpec =
    "You are a cryptocurrency market analyst. For each numbered news item below, "
    "score its implications for the BTC/USDT market.\n";

const char* kScaleSpec =
    "Scoring system (integers only):\n"
    "- sentiment: 1 = very bearish, 2 = bearish, 3 = neutral, 4 = bullish, 5 = very bullish\n"
    "- risk: 1 = very low market risk, 2 = low, 3 = moderate, 4 = high, 5 = very high\n";

const char* kFormatSpec =
    "Output exactly one line per item, in item order, formatted as in this example:\n"
    "1: sentiment=4, risk=2\n"
    "2: sentiment=1, risk=5\n"
    "Do not add any other text.\n";

std::string render_header() {
    std::string s;
    s += kTaskSpec;
    s += "\n";
    s += kScaleSpec;
    s += "\n";
    s += kFormatSpec;
    s += "\nNews items:\n";
    return s;
}

std::string render_item(int index, const NewsItem& item, const std::string& body) {
    std::string s = std::to_string(index) + ". " + item.title + "\n";
    if (!body.empty()) s += body + "\n";
    return s;
}

// Cuts at the last word boundary that fits, appending an ellipsis marker.
std::string truncate_body(const std::string& body, int64_t max_chars) {
    if (static_cast<int64_t>(body.size()) <= max_chars) return body;
    if (max_chars <= 3) return "";
    const size_t limit = static_cast<size_t>(max_chars - 3);
    size_t cut = body.find_last_of(" \t\n", limit);
    if (cut == std::string::npos || cut == 0) cut = limit;
    return body.substr(0, cut) + "...";
}

} // namespace

std::string prompt_hash_of(const std::string& rendered_prompt) {
    std::ostringstream os;
    os << std::hex << stable_hash(rendered_prompt);
    return os.str();
}

ScoreBatch build_prompt(const std::vector<NewsItem>& items, int64_t char_budget,
                        bool allow_truncation) {
    if (items.empty()) throw DataError("build_prompt: no items");
    std::string prompt = render_header();
    ScoreBatch batch;
    batch.char_budget = char_budget;
    int index = 1;
    for (const auto& item : items) {
        std::string entry = render_item(index, item, item.body);
        if (static_cast<int64_t>(prompt.size() + entry.size()) > char_budget) {
            if (!allow_truncation) {
                throw DataError("build_prompt: items exceed the prompt budget");
            }
            // -1 leaves room for the newline a non-empty body appends.
            const int64_t room =
                char_budget -
                static_cast<int64_t>(prompt.size() + render_item(index, item, "").size()) - 1;
            if (room < -1) {
                throw DataError("build_prompt: item '" + item.title +
                                "' does not fit the prompt budget even title-only");
            }
            entry = render_item(index, item, truncate_body(item.body, room));
            if (static_cast<int64_t>(prompt.size() + entry.size()) > char_budget) {
                throw DataError("build_prompt: item '" + item.title + "' does not fit the prompt budget");
            }
        }
        prompt += entry;
        batch.items.emplace_back(index, item);
        ++index;
    }
    batch.rendered_prompt = std::move(prompt);
    batch.prompt_hash = prompt_hash_of(batch.rendered_prompt);
    return batch;
}

std::vector<std::pair<int, int>> parse_scores(const std::string& response_text, int expected_count) {
    static const std::regex line_re(
        R"(^\s*(\d+)\s*[:.)]\s*sentiment\s*=\s*(-?\d+)\s*,\s*risk\s*=\s*(-?\d+)\s*$)",
        std::regex::icase);
    std::map<int, std::pair<int, int>> found;
    std::istringstream in(response_text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.rfind("```", 0) == 0) continue; // fence marker
        std::smatch m;
        if (!std::regex_match(line, m, line_re)) continue;
        const int idx = std::stoi(m[1]);
        const int s = std::stoi(m[2]);
        const int r = std::stoi(m[3]);
        if (s < 1 || s > 5 || r < 1 || r > 5) {
            throw ParseError("parse_scores: score out of 1..5 range", line);
        }
        if (found.count(idx)) {
            throw ParseError("parse_scores: duplicate index " + std::to_string(idx), line);
        }
        found[idx] = {s, r};
    }
    if (static_cast<int>(found.size()) != expected_count) {
        throw ParseError("parse_scores: expected " + std::to_string(expected_count) +
                             " score lines, found " + std::to_string(found.size()),
                         response_text.substr(0, 120));
    }
    std::vector<std::pair<int, int>> out;
    out.reserve(found.size());
    for (int i = 1; i <= expected_count; ++i) {
        auto it = found.find(i);
        if (it == found.end()) {
            throw ParseError("parse_scores: missing index " + std::to_string(i), response_text.substr(0, 120));
        }
        out.push_back(it->second);
    }
    return out;
}

std::string ScoreCache::key_of(uint64_t news_id, const std::string& model_id,
                               const std::string& prompt_hash) {
    return std::to_string(news_id) + "|" + model_id + "|" + prompt_hash;
}

ScoreCache::ScoreCache(std::string path) : path_(std::move(path)) { load(); }

void ScoreCache::load() {
    std::ifstream in(path_);
    if (!in) return; // a fresh cache file is created on first insert
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("score cache: invalid JSON at line " + std::to_string(line_no) + ": " +
                            e.what());
        }
        ScoredNews rec;
        rec.news_id = j.at("news_id").get<uint64_t>();
        rec.sentiment = j.at("sentiment").get<int>();
        rec.risk = j.at("risk").get<int>();
        rec.model_id = j.at("model_id").get<std::string>();
        rec.prompt_hash = j.at("prompt_hash").get<std::string>();
        rec.ts = j.value("ts", int64_t{0});
        if (rec.sentiment < 1 || rec.sentiment > 5 || rec.risk < 1 || rec.risk > 5) {
            throw DataError("score cache: score out of range at line " + std::to_string(line_no));
        }
        const std::string key = key_of(rec.news_id, rec.model_id, rec.prompt_hash);
        records_.emplace(key, rec);
        latest_[std::to_string(rec.news_id) + "|" + rec.model_id] = key;
    }
}

std::optional<ScoredNews> ScoreCache::find(uint64_t news_id, const std::string& model_id) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = latest_.find(std::to_string(news_id) + "|" + model_id);
    if (it == latest_.end()) return std::nullopt;
    return records_.at(it->second);
}

bool ScoreCache::insert(const ScoredNews& record) {
    if (record.sentiment < 1 || record.sentiment > 5 || record.risk < 1 || record.risk > 5) {
        throw DataError("score cache: refusing to persist score outside 1..5");
    }
    std::lock_guard<std::mutex> lock(mu_);
    const std::string key = key_of(record.news_id, record.model_id, record.prompt_hash);
    if (records_.count(key)) return false;
    records_.emplace(key, record);
    latest_[std::to_string(record.news_id) + "|" + record.model_id] = key;
    if (!path_.empty()) {
        std::ofstream out(path_, std::ios::app | std::ios::binary);
        if (!out) throw DataError("score cache: cannot append to " + path_);
        json j{{"news_id", record.news_id}, {"sentiment", record.sentiment}, {"risk", record.risk},
               {"model_id", record.model_id}, {"prompt_hash", record.prompt_hash}, {"ts", record.ts}};
        out << j.dump() << "\n";
    }
    return true;
}

size_t ScoreCache::size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return records_.size();
}

std::vector<ScoredNews> ScoreCache::all() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<ScoredNews> out;
    out.reserve(records_.size());
    for (const auto& [k, v] : records_) out.push_back(v);
    return out;
}

HttpChatResponder::HttpChatResponder(std::string base_url, std::string path, std::string model,
                                     std::string api_key_env)
    : base_url_(std::move(base_url)), path_(std::move(path)), model_(std::move(model)),
      api_key_env_(std::move(api_key_env)) {}

std::string HttpChatResponder::respond(const ScoreBatch& batch) {
    const char* key = std::getenv(api_key_env_.c_str());
    if (!key || !*key) {
        throw TransportError("scoring credential missing: set $" + api_key_env_);
    }
    httplib::Client client(base_url_);
    client.set_read_timeout(120, 0);
    httplib::Headers headers{{"Authorization", std::string("Bearer ") + key}};
    json req{{"model", model_},
             {"temperature", 0},
             {"messages", json::array({json{{"role", "user"}, {"content", batch.rendered_prompt}}})}};
    auto res = client.Post(path_, headers, req.dump(), "application/json");
    if (!res) {
        throw TransportError("scoring endpoint unreachable: " + base_url_ + path_);
    }
    if (res->status != 200) {
        throw TransportError("scoring endpoint returned HTTP " + std::to_string(res->status));
    }
    try {
        json j = json::parse(res->body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw TransportError(std::string("scoring endpoint returned malformed body: ") + e.what());
    }
}

FixtureResponder::FixtureResponder(const std::string& fixture_path, std::string model)
    : model_(std::move(model)) {
    std::ifstream in(fixture_path);
    if (!in) throw DataError("fixture responder: cannot read " + fixture_path);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("fixture responder: invalid JSON at line " + std::to_string(line_no) +
                            ": " + e.what());
        }
        responses_[j.at("prompt_hash").get<std::string>()] = j.at("response").get<std::string>();
    }
}

std::string FixtureResponder::respond(const ScoreBatch& batch) {
    auto it = responses_.find(batch.prompt_hash);
    if (it == responses_.end()) {
        throw TransportError("fixture responder: no canned response for prompt_hash " +
                             batch.prompt_hash);
    }
    return it->second;
}

void write_fixture_entry(const std::string& path, const std::string& prompt_hash,
                         const std::string& response_text, bool append) {
    std::ofstream out(path, (append ? std::ios::app : std::ios::trunc) | std::ios::binary);
    if (!out) throw DataError("fixture responder: cannot write " + path);
    out << json{{"prompt_hash", prompt_hash}, {"response", response_text}}.dump() << "\n";
}

std::vector<std::vector<NewsItem>> pack_batches(const std::vector<NewsItem>& items,
                                                int64_t char_budget) {
    std::vector<std::vector<NewsItem>> batches;
    std::vector<NewsItem> current;
    for (const auto& item : items) {
        std::vector<NewsItem> trial = current;
        trial.push_back(item);
        bool fits = true;
        try {
            build_prompt(trial, char_budget, /*allow_truncation=*/false);
        } catch (const DataError&) {
            fits = false;
        }
        if (fits) {
            current = std::move(trial);
            continue;
        }
        if (!current.empty()) batches.push_back(std::move(current));
        current = {item};
        try {
            build_prompt(current, char_budget, /*allow_truncation=*/false);
        } catch (const DataError&) {
            // Oversize opener: truncation applies (title-only overflow throws).
            build_prompt(current, char_budget);
            batches.push_back(std::move(current));
            current = {};
        }
    }
    if (!current.empty()) batches.push_back(std::move(current));
    return batches;
}

namespace {

struct BatchOutcome {
    std::vector<ScoredNews> scored;
    size_t parse_fallbacks = 0;
    bool transport_failed = false;
};

BatchOutcome run_batch(const std::vector<NewsItem>& batch_items, ScoreResponder& responder,
                       const ScoreRunOptions& opts) {
    BatchOutcome outcome;
    ScoreBatch batch = build_prompt(batch_items, opts.char_budget);
    std::string response;
    bool have_response = false;
    int backoff_ms = 250;
    for (int attempt = 0; attempt <= opts.max_transport_retries; ++attempt) {
        try {
            response = responder.respond(batch);
            have_response = true;
            break;
        } catch (const TransportError&) {
            if (attempt == opts.max_transport_retries || !responder.is_remote()) break;
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
            backoff_ms *= 2;
        }
    }
    if (!have_response) {
        outcome.transport_failed = true;
        return outcome;
    }

    std::vector<std::pair<int, int>> pairs;
    bool parsed = false;
    for (int attempt = 0; attempt < 2 && !parsed; ++attempt) {
        try {
            pairs = parse_scores(response, static_cast<int>(batch.items.size()));
            parsed = true;
        } catch (const ParseError&) {
            if (attempt == 0) {
                try {
                    response = responder.respond(batch); // one retry of the whole batch
                } catch (const TransportError&) {
                    break;
                }
            }
        }
    }
    for (size_t i = 0; i < batch.items.size(); ++i) {
        const NewsItem& item = batch.items[i].second;
        ScoredNews rec;
        rec.news_id = item.id;
        rec.ts = item.ts;
        rec.model_id = responder.model_id();
        rec.prompt_hash = batch.prompt_hash;
        if (parsed) {
            rec.sentiment = pairs[i].first;
            rec.risk = pairs[i].second;
        } else {
            rec.sentiment = 3;
            rec.risk = 3;
            ++outcome.parse_fallbacks;
        }
        outcome.scored.push_back(std::move(rec));
    }
    return outcome;
}

} // namespace

std::vector<ScoredNews> score_news(const std::vector<NewsItem>& items, ScoreResponder& responder,
                                   ScoreCache& cache, const ScoreRunOptions& opts,
                                   ScoreRunStats* stats) {
    ScoreRunStats local;
    std::map<uint64_t, ScoredNews> by_id;
    std::vector<NewsItem> misses;
    for (const auto& item : items) {
        if (auto hit = cache.find(item.id, responder.model_id())) {
            by_id[item.id] = *hit;
            ++local.cache_hits;
        } else {
            misses.push_back(item);
        }
    }

    auto batches = pack_batches(misses, opts.char_budget);
    std::vector<BatchOutcome> outcomes(batches.size());
    std::atomic<size_t> next{0};
    std::atomic<size_t> requests{0};
    const int workers = std::max(1, std::min<int>(opts.max_in_flight,
                                                  static_cast<int>(batches.size())));
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= batches.size()) return;
            requests.fetch_add(1);
            outcomes[i] = run_batch(batches[i], responder, opts);
        }
    };
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    local.requests = requests.load();

    std::vector<uint64_t> unscored;
    for (size_t i = 0; i < batches.size(); ++i) {
        if (outcomes[i].transport_failed) {
            for (const auto& item : batches[i]) unscored.push_back(item.id);
            continue;
        }
        local.parse_fallbacks += outcomes[i].parse_fallbacks;
        for (const auto& rec : outcomes[i].scored) {
            cache.insert(rec);
            by_id[rec.news_id] = rec;
        }
    }
    if (!unscored.empty()) {
        std::string ids;
        for (uint64_t id : unscored) ids += (ids.empty() ? "" : ",") + std::to_string(id);
        throw TransportError("score_news: transport failed for news ids [" + ids + "]");
    }

    std::vector<ScoredNews> out;
    out.reserve(items.size());
    for (const auto& item : items) out.push_back(by_id.at(item.id));
    if (stats) *stats = local;
    return out;
}

} // namespace newsrl
