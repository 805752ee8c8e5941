#include "newsrl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace newsrl {

using nlohmann::json;

std::string split_tag_name(SplitTag tag) {
    switch (tag) {
        case SplitTag::Train: return "train";
        case SplitTag::Validation: return "validation";
        case SplitTag::Test: return "test";
    }
    return "train";
}

uint64_t stable_hash(const std::string& text) {
    // FNV-1a 64-bit.
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t news_id_of(int64_t ts, const std::string& title) {
    return stable_hash(std::to_string(ts) + "\x1f" + title);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, const std::string& what, size_t line_no) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw DataError("bars: unparsable " + what + " '" + s + "' at line " + std::to_string(line_no));
    }
}

int64_t parse_ts(const std::string& s, size_t line_no) {
    try {
        size_t pos = 0;
        int64_t v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw DataError("bars: unparsable ts '" + s + "' at line " + std::to_string(line_no));
    }
}

} // namespace

BarLoadResult load_bars(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("bars: cannot read " + path);
    std::string line;
    size_t line_no = 0;
    if (!std::getline(in, line)) throw DataError("bars: empty file " + path);
    ++line_no;
    {
        auto fields = split_csv_line(line);
        const std::vector<std::string> expected{"ts", "open", "high", "low", "close", "volume"};
        if (std::vector<std::string>(fields.begin(), fields.end()) != expected) {
            throw DataError("bars: bad header '" + line + "', expected ts,open,high,low,close,volume");
        }
    }
    BarLoadResult result;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 6) {
            throw DataError("bars: expected 6 fields at line " + std::to_string(line_no));
        }
        Bar b;
        b.ts = parse_ts(fields[0], line_no);
        b.open = parse_double(fields[1], "open", line_no);
        b.high = parse_double(fields[2], "high", line_no);
        b.low = parse_double(fields[3], "low", line_no);
        b.close = parse_double(fields[4], "close", line_no);
        b.volume = parse_double(fields[5], "volume", line_no);
        const double body_lo = std::min(b.open, b.close);
        const double body_hi = std::max(b.open, b.close);
        if (!(b.low <= body_lo && body_hi <= b.high)) {
            throw DataError("bars: OHLC invariant violated at line " + std::to_string(line_no));
        }
        if (b.volume < 0) {
            throw DataError("bars: negative volume at line " + std::to_string(line_no));
        }
        result.bars.push_back(b);
    }
    std::stable_sort(result.bars.begin(), result.bars.end(),
                     [](const Bar& a, const Bar& b) { return a.ts < b.ts; });
    constexpr int64_t kMinuteMs = 60'000;
    for (size_t i = 1; i < result.bars.size(); ++i) {
        const int64_t dt = result.bars[i].ts - result.bars[i - 1].ts;
        if (dt == 0) {
            throw DataError("bars: duplicate timestamp " + std::to_string(result.bars[i].ts));
        }
        if (dt > kMinuteMs) result.missing_minutes += dt / kMinuteMs - 1;
    }
    return result;
}

std::vector<NewsItem> load_news(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("news: cannot read " + path);
    std::vector<NewsItem> items;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("news: invalid JSON at line " + std::to_string(line_no) + ": " + e.what());
        }
        NewsItem item;
        try {
            item.ts = j.at("ts").get<int64_t>();
            item.title = j.at("title").get<std::string>();
            item.body = j.value("body", "");
        } catch (const json::exception& e) {
            throw DataError("news: missing field at line " + std::to_string(line_no) + ": " + e.what());
        }
        if (item.title.empty()) {
            throw DataError("news: empty title at line " + std::to_string(line_no));
        }
        item.id = news_id_of(item.ts, item.title);
        items.push_back(std::move(item));
    }
    std::stable_sort(items.begin(), items.end(),
                     [](const NewsItem& a, const NewsItem& b) { return a.ts < b.ts; });
    return items;
}

std::vector<AlignedFrame> forward_fill_scores(const std::vector<Bar>& bars,
                                              const std::vector<ScoredNews>& scored) {
    for (size_t i = 1; i < scored.size(); ++i) {
        if (scored[i].ts < scored[i - 1].ts) {
            throw DataError("forward_fill_scores: scored news not sorted by ts");
        }
    }
    std::vector<AlignedFrame> frames;
    frames.reserve(bars.size());
    size_t j = 0;
    int cur_s = 3, cur_r = 3; // neutral before the first news
    for (const Bar& b : bars) {
        while (j < scored.size() && scored[j].ts <= b.ts) {
            cur_s = scored[j].sentiment;
            cur_r = scored[j].risk;
            ++j;
        }
        frames.push_back(AlignedFrame{b.ts, b.open, b.high, b.low, b.close, b.volume, cur_s, cur_r});
    }
    return frames;
}

void export_aligned_csv(const std::string& path, const std::vector<AlignedFrame>& frames) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("aligned: cannot write " + path);
    out << "ts,open,high,low,close,volume,sentiment,risk\n";
    out.precision(17);
    for (const auto& f : frames) {
        out << f.ts << ',' << f.open << ',' << f.high << ',' << f.low << ',' << f.close << ','
            << f.volume << ',' << f.sentiment << ',' << f.risk << '\n';
    }
}

DatasetSplit chronological_split(int64_t n_frames, double train_frac, double val_frac_end) {
    if (n_frames <= 0) throw DataError("chronological_split: empty frame series");
    const int64_t a = static_cast<int64_t>(std::floor(train_frac * static_cast<double>(n_frames)));
    const int64_t b = static_cast<int64_t>(std::floor(val_frac_end * static_cast<double>(n_frames)));
    DatasetSplit s;
    s.train = {0, a};
    s.validation = {a, b};
    s.test = {b, n_frames};
    if (s.train.size() <= 0 || s.validation.size() <= 0 || s.test.size() <= 0) {
        throw DataError("chronological_split: a split is empty for N=" + std::to_string(n_frames));
    }
    return s;
}

std::vector<EpisodeWindow> sample_windows(const IndexRange& range, SplitTag tag, int64_t length,
                                          int64_t lookback, int64_t count, uint64_t seed) {
    const int64_t first_start = range.begin + lookback;
    const int64_t last_start = range.end - length; // inclusive
    if (last_start < first_start) {
        throw DataError("sample_windows: split [" + std::to_string(range.begin) + "," +
                        std::to_string(range.end) + ") too short for length " + std::to_string(length) +
                        " + lookback " + std::to_string(lookback));
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int64_t> dist(first_start, last_start);
    std::vector<EpisodeWindow> windows;
    windows.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        windows.push_back(EpisodeWindow{dist(rng), length, tag});
    }
    return windows;
}

std::string feature_mode_name(FeatureMode mode) {
    return mode == FeatureMode::Returns ? "returns" : "raw_scaled";
}

FeatureMode feature_mode_from_name(const std::string& name) {
    if (name == "returns") return FeatureMode::Returns;
    if (name == "raw_scaled") return FeatureMode::RawScaled;
    throw DataError("unknown feature mode '" + name + "'");
}

Tensor FeatureMatrix::window(int64_t at, int64_t lookback) const {
    if (at < lookback - 1 || at >= rows) {
        throw DataError("feature window: index " + std::to_string(at) + " with lookback " +
                        std::to_string(lookback) + " out of " + std::to_string(rows) + " rows");
    }
    const int64_t from = at - lookback + 1;
    std::vector<double> v(static_cast<size_t>(lookback * kFeatureDim));
    std::copy_n(row(from), lookback * kFeatureDim, v.data());
    return Tensor({lookback, kFeatureDim}, std::move(v));
}

FeatureMatrix build_features(const std::vector<AlignedFrame>& frames, FeatureMode mode,
                             const IndexRange& train_range) {
    const int64_t n = static_cast<int64_t>(frames.size());
    if (train_range.begin < 0 || train_range.end > n || train_range.size() <= 0) {
        throw DataError("build_features: bad train range");
    }
    for (const auto& f : frames) {
        if (f.open <= 0 || f.high <= 0 || f.low <= 0 || f.close <= 0) {
            throw DataError("build_features: non-positive price at ts " + std::to_string(f.ts));
        }
    }
    // Volume statistics on the training range only.
    double vmean = 0.0;
    for (int64_t i = train_range.begin; i < train_range.end; ++i) {
        vmean += std::log1p(frames[static_cast<size_t>(i)].volume);
    }
    vmean /= static_cast<double>(train_range.size());
    double vvar = 0.0;
    for (int64_t i = train_range.begin; i < train_range.end; ++i) {
        const double d = std::log1p(frames[static_cast<size_t>(i)].volume) - vmean;
        vvar += d * d;
    }
    vvar /= static_cast<double>(train_range.size());
    const double vstd = std::sqrt(vvar);
    const bool degenerate_vol = vstd < 1e-12;

    FeatureMatrix m;
    m.rows = n;
    m.mode = mode;
    m.data.assign(static_cast<size_t>(n * kFeatureDim), 0.0);
    const double base_close = frames.front().close; // raw_scaled reference
    for (int64_t i = 0; i < n; ++i) {
        const auto& f = frames[static_cast<size_t>(i)];
        double* r = &m.data[static_cast<size_t>(i * kFeatureDim)];
        if (mode == FeatureMode::Returns) {
            r[0] = (i == 0) ? 0.0 : std::log(f.close / frames[static_cast<size_t>(i - 1)].close);
            r[1] = (f.high - f.low) / f.close;
            r[2] = (f.close - f.open) / f.close;
        } else {
            r[0] = f.high / base_close;
            r[1] = f.low / base_close;
            r[2] = f.close / base_close;
        }
        r[3] = degenerate_vol ? 0.0 : (std::log1p(f.volume) - vmean) / vstd;
        r[4] = (static_cast<double>(f.sentiment) - 3.0) / 2.0;
        r[5] = (static_cast<double>(f.risk) - 1.0) / 4.0;
    }
    return m;
}

void zero_llm_channels(FeatureMatrix& features) {
    for (int64_t i = 0; i < features.rows; ++i) {
        features.data[static_cast<size_t>(i * kFeatureDim + 4)] = 0.0;
        features.data[static_cast<size_t>(i * kFeatureDim + 5)] = 0.0;
    }
}

} // namespace newsrl
