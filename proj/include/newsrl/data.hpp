#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "newsrl/errors.hpp"
#include "newsrl/tensor.hpp"

namespace newsrl {

// One minute of OHLCV market data. ts is epoch milliseconds, minute-aligned.
struct Bar {
    int64_t ts = 0;
    double open = 0, high = 0, low = 0, close = 0;
    double volume = 0;
};

struct NewsItem {
    uint64_t id = 0; // stable hash of (ts, title)
    int64_t ts = 0;
    std::string title;
    std::string body;
};

// Per-minute fused row: the bar plus the forward-filled LLM scores.
struct AlignedFrame {
    int64_t ts = 0;
    double open = 0, high = 0, low = 0, close = 0;
    double volume = 0;
    int sentiment = 3;
    int risk = 3;
};

// News item together with its integer scores in 1..5.
struct ScoredNews {
    uint64_t news_id = 0;
    int sentiment = 3;
    int risk = 3;
    std::string model_id;
    std::string prompt_hash;
    int64_t ts = 0; // carried along for forward fill ordering
};

struct IndexRange {
    int64_t begin = 0;
    int64_t end = 0; // exclusive
    int64_t size() const { return end - begin; }
};

struct DatasetSplit {
    IndexRange train;
    IndexRange validation;
    IndexRange test;
};

enum class SplitTag { Train, Validation, Test };
std::string split_tag_name(SplitTag tag);

struct EpisodeWindow {
    int64_t start_index = 0;
    int64_t length = 3000;
    SplitTag split_tag = SplitTag::Train;
};

struct BarLoadResult {
    std::vector<Bar> bars;
    int64_t missing_minutes = 0; // gaps are tolerated, only counted
};

uint64_t stable_hash(const std::string& text);
uint64_t news_id_of(int64_t ts, const std::string& title);

// CSV with header `ts,open,high,low,close,volume`. Rejects duplicate
// timestamps and OHLC invariant violations with the line number.
BarLoadResult load_bars(const std::string& path);

// JSONL, one object per line with keys ts, title, body (url ignored).
std::vector<NewsItem> load_news(const std::string& path);

// Latest score at or before each bar's ts; neutral (3,3) before the first
// news item. scored must be sorted by ts.
std::vector<AlignedFrame> forward_fill_scores(const std::vector<Bar>& bars,
                                              const std::vector<ScoredNews>& scored);

void export_aligned_csv(const std::string& path, const std::vector<AlignedFrame>& frames);

// [0, floor(0.70 N)) / [floor(0.70 N), floor(0.85 N)) / [floor(0.85 N), N).
DatasetSplit chronological_split(int64_t n_frames, double train_frac = 0.70, double val_frac_end = 0.85);

// Uniform over start positions with [start-lookback, start+length) inside the
// split. Deterministic given seed.
std::vector<EpisodeWindow> sample_windows(const IndexRange& range, SplitTag tag, int64_t length,
                                          int64_t lookback, int64_t count, uint64_t seed);

enum class FeatureMode { Returns, RawScaled };
std::string feature_mode_name(FeatureMode mode);
FeatureMode feature_mode_from_name(const std::string& name);

inline constexpr int kFeatureDim = 6;

// Row-per-frame feature matrix, F=6 columns in both modes. Volume statistics
// come from train_range only.
struct FeatureMatrix {
    int64_t rows = 0;
    std::vector<double> data; // rows x kFeatureDim
    FeatureMode mode = FeatureMode::Returns;

    const double* row(int64_t r) const { return &data[static_cast<size_t>(r * kFeatureDim)]; }
    // (lookback, F) observation ending at (and including) index `at`.
    Tensor window(int64_t at, int64_t lookback) const;
};

FeatureMatrix build_features(const std::vector<AlignedFrame>& frames, FeatureMode mode,
                             const IndexRange& train_range);

// Zeroes the sentiment/risk channels in place (the --no-llm ablation).
void zero_llm_channels(FeatureMatrix& features);

} // namespace newsrl
