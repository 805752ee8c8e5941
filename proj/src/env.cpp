#include "newsrl/env.hpp"

#include <cmath>
#include <fstream>

namespace newsrl {

std::optional<Fill> apply_sltp(const Position& pos, const Bar& bar, double threshold) {
    if (pos.side == Side::Flat || !std::isfinite(threshold)) return std::nullopt;
    Fill fill;
    fill.ts = bar.ts;
    fill.closed_side = pos.side;
    fill.sltp = true;
    if (pos.side == Side::Long) {
        const double tp = pos.entry_price * (1.0 + threshold);
        const double sl = pos.entry_price * (1.0 - threshold);
        const bool hit_sl = bar.low <= sl;
        const bool hit_tp = bar.high >= tp;
        if (!hit_sl && !hit_tp) return std::nullopt;
        // Stop-loss first when both levels are touched within one bar.
        fill.price = hit_sl ? sl : tp;
        fill.realized = (fill.price - pos.entry_price) * Position::kSize;
    } else {
        const double tp = pos.entry_price * (1.0 - threshold);
        const double sl = pos.entry_price * (1.0 + threshold);
        const bool hit_sl = bar.high >= sl;
        const bool hit_tp = bar.low <= tp;
        if (!hit_sl && !hit_tp) return std::nullopt;
        fill.price = hit_sl ? sl : tp;
        fill.realized = (pos.entry_price - fill.price) * Position::kSize;
    }
    return fill;
}

TradingEnv::TradingEnv(const std::vector<AlignedFrame>& frames, const FeatureMatrix& features,
                       EpisodeWindow window, int64_t lookback, TradingEnvConfig config)
    : frames_(frames), features_(features), window_(window), lookback_(lookback), config_(config) {
    if (window_.length < 2) throw DataError("trading env: window shorter than 2 frames");
    if (window_.start_index - lookback_ + 1 < 0 ||
        window_.start_index + window_.length > static_cast<int64_t>(frames_.size())) {
        throw DataError("trading env: window with lookback margin exceeds frame series");
    }
    if (features_.rows != static_cast<int64_t>(frames_.size())) {
        throw DataError("trading env: feature matrix does not match frame series");
    }
}

Bar TradingEnv::bar_at(int64_t index) const {
    const auto& f = frames_[static_cast<size_t>(index)];
    return Bar{f.ts, f.open, f.high, f.low, f.close, f.volume};
}

double TradingEnv::unrealized(double price) const {
    switch (position_.side) {
        case Side::Long: return (price - position_.entry_price) * Position::kSize;
        case Side::Short: return (position_.entry_price - price) * Position::kSize;
        case Side::Flat: return 0.0;
    }
    return 0.0;
}

double TradingEnv::fee_for(double price) const {
    return config_.fee_bps * 1e-4 * price * Position::kSize;
}

double TradingEnv::close_position(double price) {
    const double pnl = unrealized(price) - fee_for(price);
    position_ = Position{};
    return pnl;
}

void TradingEnv::open_position(Side side, double price) {
    position_.side = side;
    position_.entry_price = price;
    realized_ -= fee_for(price);
}

Tensor TradingEnv::reset() {
    cursor_ = window_.start_index;
    position_ = Position{};
    realized_ = 0.0;
    initial_equity_ =
        config_.initial_equity > 0.0 ? config_.initial_equity : frames_[static_cast<size_t>(cursor_)].close;
    equity_ = initial_equity_;
    done_ = false;
    reset_called_ = true;
    return features_.window(cursor_, lookback_);
}

StepOutcome TradingEnv::step(int action) {
    if (!reset_called_) throw std::logic_error("trading env: step before reset");
    if (done_) throw std::logic_error("trading env: step after episode end");
    if (action < 0 || action > 2) throw std::logic_error("trading env: action out of range");

    StepOutcome out;
    const double exec_price = frames_[static_cast<size_t>(cursor_)].close;
    const int64_t exec_ts = frames_[static_cast<size_t>(cursor_)].ts;

    Side target = position_.side;
    if (action == static_cast<int>(Action::Long)) target = Side::Long;
    if (action == static_cast<int>(Action::Short)) target = Side::Short;

    if (target != position_.side) {
        if (position_.side != Side::Flat) {
            Fill f{exec_ts, exec_price, position_.side, unrealized(exec_price), false};
            realized_ += close_position(exec_price);
            out.fills.push_back(f);
        }
        open_position(target, exec_price);
        out.fills.push_back(Fill{exec_ts, exec_price, Side::Flat, 0.0, false});
    }

    ++cursor_;
    const Bar bar = bar_at(cursor_);
    if (position_.side != Side::Flat) {
        if (auto fill = apply_sltp(position_, bar, config_.sltp_threshold)) {
            realized_ += fill->realized - fee_for(fill->price);
            position_ = Position{};
            out.sltp_triggered = true;
            out.fills.push_back(*fill);
        }
    }

    out.done = (cursor_ == window_.start_index + window_.length - 1);
    if (out.done && position_.side != Side::Flat) {
        Fill f{bar.ts, bar.close, position_.side, unrealized(bar.close), false};
        realized_ += close_position(bar.close);
        out.fills.push_back(f);
    }

    const double new_equity = initial_equity_ + realized_ + unrealized(bar.close);
    out.reward = new_equity - equity_;
    equity_ = new_equity;
    done_ = out.done;
    out.observation = features_.window(cursor_, lookback_);
    return out;
}

ReplayResult replay_equity(const std::vector<AlignedFrame>& frames, const EpisodeWindow& window,
                           const std::vector<int>& actions, const TradingEnvConfig& config) {
    const int64_t steps = window.length - 1;
    if (static_cast<int64_t>(actions.size()) != steps) {
        throw DataError("replay_equity: need " + std::to_string(steps) + " actions, got " +
                        std::to_string(actions.size()));
    }
    const auto close_of = [&](int64_t i) { return frames[static_cast<size_t>(i)].close; };
    const auto fee = [&](double price) { return config.fee_bps * 1e-4 * price * Position::kSize; };

    ReplayResult result;
    result.initial_equity =
        config.initial_equity > 0.0 ? config.initial_equity : close_of(window.start_index);

    // Direct ledger pass: record every cash movement as (step, amount), then
    // derive the equity series from scratch.
    std::vector<std::pair<int64_t, double>> cash; // realized movements per step
    std::vector<std::pair<int64_t, Position>> held(static_cast<size_t>(steps + 1));
    Position pos;
    held[0] = {window.start_index, pos};
    for (int64_t s = 0; s < steps; ++s) {
        const int64_t at = window.start_index + s;
        Side target = pos.side;
        if (actions[static_cast<size_t>(s)] == static_cast<int>(Action::Long)) target = Side::Long;
        if (actions[static_cast<size_t>(s)] == static_cast<int>(Action::Short)) target = Side::Short;
        if (target != pos.side) {
            const double px = close_of(at);
            if (pos.side != Side::Flat) {
                const double dir = pos.side == Side::Long ? 1.0 : -1.0;
                cash.emplace_back(s, dir * (px - pos.entry_price) - fee(px));
            }
            pos = Position{target, px};
            cash.emplace_back(s, -fee(px));
        }
        const auto& f = frames[static_cast<size_t>(at + 1)];
        const Bar bar{f.ts, f.open, f.high, f.low, f.close, f.volume};
        if (pos.side != Side::Flat) {
            if (auto fill = apply_sltp(pos, bar, config.sltp_threshold)) {
                cash.emplace_back(s, fill->realized - fee(fill->price));
                pos = Position{};
            }
        }
        if (s == steps - 1 && pos.side != Side::Flat) {
            const double dir = pos.side == Side::Long ? 1.0 : -1.0;
            cash.emplace_back(s, dir * (bar.close - pos.entry_price) - fee(bar.close));
            pos = Position{};
        }
        held[static_cast<size_t>(s + 1)] = {at + 1, pos};
    }

    // Cash entries tagged with step s enter the ledger at equity[s+1].
    std::vector<double> equity(static_cast<size_t>(steps + 1), result.initial_equity);
    double realized = 0.0;
    size_t ci = 0;
    for (int64_t s = 0; s <= steps; ++s) {
        while (ci < cash.size() && cash[ci].first < s) {
            realized += cash[ci].second;
            ++ci;
        }
        const auto& [idx, p] = held[static_cast<size_t>(s)];
        double mtm = 0.0;
        if (p.side != Side::Flat) {
            const double dir = p.side == Side::Long ? 1.0 : -1.0;
            mtm = dir * (close_of(idx) - p.entry_price);
        }
        equity[static_cast<size_t>(s)] = result.initial_equity + realized + mtm;
    }
    result.final_equity = equity.back();
    result.rewards.resize(static_cast<size_t>(steps));
    for (int64_t s = 0; s < steps; ++s) {
        result.rewards[static_cast<size_t>(s)] =
            equity[static_cast<size_t>(s + 1)] - equity[static_cast<size_t>(s)];
    }
    return result;
}

void export_episode_csv(const std::string& path, const std::vector<AlignedFrame>& frames,
                        const FeatureMatrix& features, const EpisodeWindow& window,
                        int64_t lookback, const std::vector<int>& actions,
                        const TradingEnvConfig& config) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("episode trace: cannot write " + path);
    out << "step,ts,action,side,fill_price,reward,equity,sltp\n";
    out.precision(17);
    TradingEnv env(frames, features, window, lookback, config);
    env.reset();
    for (size_t s = 0; s < actions.size(); ++s) {
        auto r = env.step(actions[s]);
        const char* side = env.position().side == Side::Long
                               ? "long"
                               : (env.position().side == Side::Short ? "short" : "flat");
        out << s << ',' << frames[static_cast<size_t>(env.cursor())].ts << ','
            << action_name(actions[s]) << ',' << side << ',';
        if (!r.fills.empty()) out << r.fills.back().price;
        out << ',' << r.reward << ',' << env.equity() << ',' << (r.sltp_triggered ? 1 : 0) << '\n';
        if (r.done) break;
    }
}

} // namespace newsrl
