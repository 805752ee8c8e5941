#include "newsrl/net.hpp"

#include <cmath>

#include <json.hpp>

namespace newsrl {

using nlohmann::json;

std::string net_kind_name(NetKind k) {
    switch (k) {
        case NetKind::Mlp: return "mlp";
        case NetKind::Lstm: return "lstm";
        case NetKind::Transformer: return "transformer";
    }
    return "mlp";
}

NetKind net_kind_from_name(const std::string& name) {
    if (name == "mlp") return NetKind::Mlp;
    if (name == "lstm") return NetKind::Lstm;
    if (name == "transformer") return NetKind::Transformer;
    throw DataError("unknown network kind '" + name + "'");
}

Tensor xavier_uniform(int64_t rows, int64_t cols, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> v(static_cast<size_t>(rows * cols));
    for (double& x : v) x = dist(rng);
    return Tensor({rows, cols}, std::move(v));
}

namespace {

Tensor normal_init(const Shape& shape, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(static_cast<size_t>(numel(shape)));
    for (double& x : v) x = dist(rng);
    return Tensor(shape, std::move(v));
}

void add_head(ParamSet& p, int64_t in_dim, std::mt19937_64& rng) {
    p.emplace("head.w", xavier_uniform(in_dim, kNumActions, rng));
    p.emplace("head.b", Tensor::zeros({kNumActions}));
}

std::map<std::string, Tensor> bind_params(Tape& tape, const ParamSet& params) {
    std::map<std::string, Tensor> bound;
    for (const auto& [name, t] : params) bound.emplace(name, tape.leaf(t));
    return bound;
}

} // namespace

PolicyNet PolicyNet::make_mlp(const MlpConfig& cfg, int64_t feature_dim, uint64_t seed) {
    PolicyNet net;
    net.kind_ = NetKind::Mlp;
    net.feature_dim_ = feature_dim;
    net.mlp_ = cfg;
    std::mt19937_64 rng(seed);
    net.params_.emplace("mlp.w1", xavier_uniform(feature_dim, cfg.h1, rng));
    net.params_.emplace("mlp.b1", Tensor::zeros({cfg.h1}));
    net.params_.emplace("mlp.w2", xavier_uniform(cfg.h1, cfg.h2, rng));
    net.params_.emplace("mlp.b2", Tensor::zeros({cfg.h2}));
    add_head(net.params_, cfg.h2, rng);
    return net;
}

PolicyNet PolicyNet::make_lstm(const LstmConfig& cfg, int64_t feature_dim, uint64_t seed) {
    PolicyNet net;
    net.kind_ = NetKind::Lstm;
    net.feature_dim_ = feature_dim;
    net.lstm_ = cfg;
    std::mt19937_64 rng(seed);
    const int64_t h = cfg.hidden;
    for (int64_t l = 0; l < cfg.layers; ++l) {
        const int64_t in = (l == 0) ? feature_dim : h;
        const std::string base = "lstm.l" + std::to_string(l) + ".";
        net.params_.emplace(base + "wx", xavier_uniform(in, 4 * h, rng));
        net.params_.emplace(base + "wh", xavier_uniform(h, 4 * h, rng));
        // Gate order [i, f, g, o]; forget-gate bias starts at 1.
        Tensor b = Tensor::zeros({4 * h});
        for (int64_t i = h; i < 2 * h; ++i) b.values[static_cast<size_t>(i)] = 1.0;
        net.params_.emplace(base + "b", std::move(b));
    }
    add_head(net.params_, h, rng);
    return net;
}

PolicyNet PolicyNet::make_transformer(const TransformerConfig& cfg, int64_t feature_dim,
                                      uint64_t seed) {
    if (cfg.model_dim % cfg.heads != 0) {
        throw ShapeError("transformer: model_dim " + std::to_string(cfg.model_dim) +
                         " not divisible by heads " + std::to_string(cfg.heads));
    }
    PolicyNet net;
    net.kind_ = NetKind::Transformer;
    net.feature_dim_ = feature_dim;
    net.tr_ = cfg;
    std::mt19937_64 rng(seed);
    const int64_t d = cfg.model_dim;
    net.params_.emplace("tr.proj.w", xavier_uniform(feature_dim, d, rng));
    net.params_.emplace("tr.proj.b", Tensor::zeros({d}));
    net.params_.emplace("tr.pos", normal_init({cfg.window, d}, cfg.pos_init_std, rng));
    for (int64_t l = 0; l < cfg.layers; ++l) {
        const std::string base = "tr.l" + std::to_string(l) + ".";
        net.params_.emplace(base + "ln1.g", Tensor::full({d}, 1.0));
        net.params_.emplace(base + "ln1.b", Tensor::zeros({d}));
        for (const char* w : {"wq", "wk", "wv", "wo"})
            net.params_.emplace(base + w, xavier_uniform(d, d, rng));
        for (const char* b : {"bq", "bk", "bv", "bo"})
            net.params_.emplace(base + b, Tensor::zeros({d}));
        net.params_.emplace(base + "ln2.g", Tensor::full({d}, 1.0));
        net.params_.emplace(base + "ln2.b", Tensor::zeros({d}));
        net.params_.emplace(base + "ff.w1", xavier_uniform(d, cfg.ff_dim, rng));
        net.params_.emplace(base + "ff.b1", Tensor::zeros({cfg.ff_dim}));
        net.params_.emplace(base + "ff.w2", xavier_uniform(cfg.ff_dim, d, rng));
        net.params_.emplace(base + "ff.b2", Tensor::zeros({d}));
    }
    add_head(net.params_, d, rng);
    return net;
}

int64_t PolicyNet::window() const {
    switch (kind_) {
        case NetKind::Mlp: return 1;
        case NetKind::Lstm: return lstm_.window;
        case NetKind::Transformer: return tr_.window;
    }
    return 1;
}

Tensor PolicyNet::forward(Tape& tape, const Tensor& obs,
                          std::map<std::string, int>* param_nodes) const {
    if (obs.rank() != 3 || obs.shape[1] != window() || obs.shape[2] != feature_dim_) {
        throw ShapeError("forward: expected (B," + std::to_string(window()) + "," +
                         std::to_string(feature_dim_) + ") observation, got " + shape_str(obs.shape));
    }
    auto p = bind_params(tape, params_);
    if (param_nodes) {
        param_nodes->clear();
        for (const auto& [name, t] : p) (*param_nodes)[name] = t.node;
    }
    switch (kind_) {
        case NetKind::Mlp: return forward_mlp(tape, p, obs);
        case NetKind::Lstm: return forward_lstm(tape, p, obs);
        case NetKind::Transformer: return forward_transformer(tape, p, obs);
    }
    throw ShapeError("forward: bad net kind");
}

Tensor PolicyNet::forward_mlp(Tape& tape, const std::map<std::string, Tensor>& p,
                              const Tensor& x) const {
    Tensor f = tape.select_time(x, window() - 1); // (B,F)
    Tensor h1 = tape.tanh(tape.add(tape.matmul(f, p.at("mlp.w1")), p.at("mlp.b1")));
    Tensor h2 = tape.tanh(tape.add(tape.matmul(h1, p.at("mlp.w2")), p.at("mlp.b2")));
    return tape.add(tape.matmul(h2, p.at("head.w")), p.at("head.b"));
}

Tensor PolicyNet::forward_lstm(Tape& tape, const std::map<std::string, Tensor>& p,
                               const Tensor& x) const {
    const int64_t b = x.shape[0];
    const int64_t w = lstm_.window;
    const int64_t hd = lstm_.hidden;
    std::vector<Tensor> seq;
    seq.reserve(static_cast<size_t>(w));
    for (int64_t t = 0; t < w; ++t) seq.push_back(tape.select_time(x, t));
    Tensor last_h = Tensor::zeros({b, hd});
    for (int64_t l = 0; l < lstm_.layers; ++l) {
        const std::string base = "lstm.l" + std::to_string(l) + ".";
        const Tensor& wx = p.at(base + "wx");
        const Tensor& wh = p.at(base + "wh");
        const Tensor& bias = p.at(base + "b");
        Tensor h = tape.leaf(Tensor::zeros({b, hd}));
        Tensor c = tape.leaf(Tensor::zeros({b, hd}));
        std::vector<Tensor> next_seq;
        next_seq.reserve(static_cast<size_t>(w));
        for (int64_t t = 0; t < w; ++t) {
            Tensor z = tape.add(tape.add(tape.matmul(seq[static_cast<size_t>(t)], wx),
                                         tape.matmul(h, wh)),
                                bias); // (B,4H)
            Tensor ig = tape.sigmoid(tape.slice_last_dim(z, 0, hd));
            Tensor fg = tape.sigmoid(tape.slice_last_dim(z, hd, hd));
            Tensor gg = tape.tanh(tape.slice_last_dim(z, 2 * hd, hd));
            Tensor og = tape.sigmoid(tape.slice_last_dim(z, 3 * hd, hd));
            c = tape.add(tape.mul(fg, c), tape.mul(ig, gg));
            h = tape.mul(og, tape.tanh(c));
            next_seq.push_back(h);
        }
        seq = std::move(next_seq);
        last_h = seq.back();
    }
    return tape.add(tape.matmul(last_h, p.at("head.w")), p.at("head.b"));
}

Tensor PolicyNet::forward_transformer(Tape& tape, const std::map<std::string, Tensor>& p,
                                      const Tensor& x) const {
    const int64_t d = tr_.model_dim;
    const int64_t dh = d / tr_.heads;
    Tensor h = tape.add(tape.matmul(x, p.at("tr.proj.w")), p.at("tr.proj.b")); // (B,W,D)
    h = tape.add(h, p.at("tr.pos"));
    for (int64_t l = 0; l < tr_.layers; ++l) {
        const std::string base = "tr.l" + std::to_string(l) + ".";
        Tensor n1 = tape.layer_norm(h, p.at(base + "ln1.g"), p.at(base + "ln1.b"));
        Tensor q = tape.add(tape.matmul(n1, p.at(base + "wq")), p.at(base + "bq"));
        Tensor k = tape.add(tape.matmul(n1, p.at(base + "wk")), p.at(base + "bk"));
        Tensor v = tape.add(tape.matmul(n1, p.at(base + "wv")), p.at(base + "bv"));
        std::vector<Tensor> heads;
        heads.reserve(static_cast<size_t>(tr_.heads));
        for (int64_t hh = 0; hh < tr_.heads; ++hh) {
            Tensor qh = tape.slice_last_dim(q, hh * dh, dh);
            Tensor kh = tape.slice_last_dim(k, hh * dh, dh);
            Tensor vh = tape.slice_last_dim(v, hh * dh, dh);
            Tensor scores = tape.scale(tape.bmm(qh, tape.transpose_last2(kh)),
                                       1.0 / std::sqrt(static_cast<double>(dh)));
            Tensor attn = tape.softmax_last_dim(scores); // full, non-causal
            heads.push_back(tape.bmm(attn, vh));
        }
        Tensor merged = tape.concat_last_dim(heads);
        Tensor attn_out = tape.add(tape.matmul(merged, p.at(base + "wo")), p.at(base + "bo"));
        h = tape.add(h, attn_out);
        Tensor n2 = tape.layer_norm(h, p.at(base + "ln2.g"), p.at(base + "ln2.b"));
        Tensor ff = tape.relu(tape.add(tape.matmul(n2, p.at(base + "ff.w1")), p.at(base + "ff.b1")));
        ff = tape.add(tape.matmul(ff, p.at(base + "ff.w2")), p.at(base + "ff.b2"));
        h = tape.add(h, ff);
    }
    Tensor last = tape.select_time(h, tr_.window - 1); // (B,D)
    return tape.add(tape.matmul(last, p.at("head.w")), p.at("head.b"));
}

std::array<double, kNumActions> PolicyNet::scores(const Tensor& obs) const {
    if (obs.rank() != 2) throw ShapeError("scores: expected (window,F) observation");
    Tape tape(GradMode::Off);
    Tensor batched(Shape{1, obs.shape[0], obs.shape[1]}, obs.values);
    Tensor out = forward(tape, batched);
    return {out.values[0], out.values[1], out.values[2]};
}

std::vector<std::array<double, kNumActions>> PolicyNet::scores_batch(const Tensor& obs) const {
    Tape tape(GradMode::Off);
    Tensor out = forward(tape, obs); // (B,3)
    std::vector<std::array<double, kNumActions>> res(static_cast<size_t>(out.shape[0]));
    for (int64_t r = 0; r < out.shape[0]; ++r) {
        res[static_cast<size_t>(r)] = {out.at2(r, 0), out.at2(r, 1), out.at2(r, 2)};
    }
    return res;
}

std::string PolicyNet::config_json() const {
    json j;
    j["kind"] = net_kind_name(kind_);
    j["feature_dim"] = feature_dim_;
    switch (kind_) {
        case NetKind::Mlp:
            j["h1"] = mlp_.h1;
            j["h2"] = mlp_.h2;
            break;
        case NetKind::Lstm:
            j["hidden"] = lstm_.hidden;
            j["layers"] = lstm_.layers;
            j["window"] = lstm_.window;
            break;
        case NetKind::Transformer:
            j["layers"] = tr_.layers;
            j["heads"] = tr_.heads;
            j["model_dim"] = tr_.model_dim;
            j["ff_dim"] = tr_.ff_dim;
            j["pos_init_std"] = tr_.pos_init_std;
            j["window"] = tr_.window;
            break;
    }
    return j.dump();
}

PolicyNet PolicyNet::from_config_json(const std::string& json_text, ParamSet params) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw DataError(std::string("net config: invalid JSON: ") + e.what());
    }
    PolicyNet net;
    net.kind_ = net_kind_from_name(j.at("kind").get<std::string>());
    net.feature_dim_ = j.at("feature_dim").get<int64_t>();
    switch (net.kind_) {
        case NetKind::Mlp:
            net.mlp_ = MlpConfig{j.at("h1").get<int64_t>(), j.at("h2").get<int64_t>()};
            break;
        case NetKind::Lstm:
            net.lstm_ = LstmConfig{j.at("hidden").get<int64_t>(), j.at("layers").get<int64_t>(),
                                   j.at("window").get<int64_t>()};
            break;
        case NetKind::Transformer:
            net.tr_ = TransformerConfig{j.at("layers").get<int64_t>(),  j.at("heads").get<int64_t>(),
                                        j.at("model_dim").get<int64_t>(), j.at("ff_dim").get<int64_t>(),
                                        j.at("pos_init_std").get<double>(), j.at("window").get<int64_t>()};
            break;
    }
    net.params_ = std::move(params);
    auto it = net.params_.find("head.w");
    if (it == net.params_.end() || it->second.shape.back() != kNumActions) {
        throw DataError("net config: parameter set has no valid action head");
    }
    return net;
}

} // namespace newsrl
