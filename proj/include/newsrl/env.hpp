#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "newsrl/data.hpp"
#include "newsrl/tensor.hpp"

namespace newsrl {

enum class Action : int { Short = 0, Long = 1, Hold = 2 };
inline const char* action_name(int a) {
    switch (a) {
        case 0: return "short";
        case 1: return "long";
        default: return "hold";
    }
}

enum class Side : int { Flat = 0, Long = 1, Short = -1 };

struct Position {
    Side side = Side::Flat;
    double entry_price = 0.0; // defined unless flat
    static constexpr double kSize = 1.0; // 1 BTC
};

struct Fill {
    int64_t ts = 0;
    double price = 0.0;
    Side closed_side = Side::Flat; // side being closed (Flat for an open)
    double realized = 0.0;
    bool sltp = false;
};

struct StepOutcome {
    Tensor observation; // (lookback, F)
    double reward = 0.0;
    bool done = false;
    std::vector<Fill> fills;
    bool sltp_triggered = false;
};

// Minimal episodic interface shared by the trading simulator and the
// synthetic test environments the agents train against.
class Env {
public:
    virtual ~Env() = default;
    virtual int64_t feature_dim() const = 0;
    virtual int64_t lookback() const = 0;
    virtual int64_t max_steps() const = 0;
    virtual Tensor reset() = 0;
    virtual StepOutcome step(int action) = 0;
    virtual bool done() const = 0;
};

struct TradingEnvConfig {
    double sltp_threshold = 0.001; // 0.1%; +inf disables
    double fee_bps = 0.0;          // charged per fill on notional
    double initial_equity = 0.0;   // 0 -> first close of the window
};

// If the bar touches the position's stop-loss or take-profit level, returns
// the forced fill at exactly that level; stop-loss wins when both levels are
// touched within one bar.
std::optional<Fill> apply_sltp(const Position& pos, const Bar& bar, double threshold);

// Episodic three-action position simulator over one EpisodeWindow. Actions
// are target positions: short -> -1, long -> +1, hold -> keep current side.
// Transitions execute at the current frame's close; SL/TP is evaluated on
// the next frame before mark-to-market; reward is the equity change in USDT.
class TradingEnv : public Env {
public:
    TradingEnv(const std::vector<AlignedFrame>& frames, const FeatureMatrix& features,
               EpisodeWindow window, int64_t lookback, TradingEnvConfig config = {});

    int64_t feature_dim() const override { return kFeatureDim; }
    int64_t lookback() const override { return lookback_; }
    int64_t max_steps() const override { return window_.length - 1; }
    Tensor reset() override;
    StepOutcome step(int action) override;
    bool done() const override { return done_; }

    double equity() const { return equity_; }
    double realized() const { return realized_; }
    double initial_equity() const { return initial_equity_; }
    const Position& position() const { return position_; }
    int64_t cursor() const { return cursor_; }
    const AlignedFrame& frame(int64_t index) const { return frames_[static_cast<size_t>(index)]; }

private:
    const std::vector<AlignedFrame>& frames_;
    const FeatureMatrix& features_;
    EpisodeWindow window_;
    int64_t lookback_;
    TradingEnvConfig config_;

    int64_t cursor_ = 0;
    Position position_;
    double realized_ = 0.0;
    double equity_ = 0.0;
    double initial_equity_ = 0.0;
    bool done_ = true;
    bool reset_called_ = false;

    Bar bar_at(int64_t index) const;
    double unrealized(double price) const;
    double fee_for(double price) const;
    // Closes at `price`; returns realized PnL net of fee.
    double close_position(double price);
    void open_position(Side side, double price);
};

struct ReplayResult {
    double final_equity = 0.0;
    double initial_equity = 0.0;
    std::vector<double> rewards;
};

// Independent accounting oracle: recomputes a whole episode by direct ledger
// simulation without TradingEnv's incremental bookkeeping.
ReplayResult replay_equity(const std::vector<AlignedFrame>& frames, const EpisodeWindow& window,
                           const std::vector<int>& actions, const TradingEnvConfig& config = {});

// Episode trace CSV: step,ts,action,side,fill_price,reward,equity,sltp
void export_episode_csv(const std::string& path, const std::vector<AlignedFrame>& frames,
                        const FeatureMatrix& features, const EpisodeWindow& window,
                        int64_t lookback, const std::vector<int>& actions,
                        const TradingEnvConfig& config);

} // namespace newsrl
