#include "newsrl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

namespace newsrl {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    if (numel(shape) != static_cast<int64_t>(values.size())) {
        throw ShapeError("tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                         shape_str(shape));
    }
}

Tensor Tensor::zeros(const Shape& s) { return Tensor(s, std::vector<double>(static_cast<size_t>(numel(s)), 0.0)); }

Tensor Tensor::full(const Shape& s, double value) {
    return Tensor(s, std::vector<double>(static_cast<size_t>(numel(s)), value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<double> v) {
    Shape s{static_cast<int64_t>(v.size())};
    return Tensor(s, std::move(v));
}

Tensor Tensor::matrix(int64_t rows, int64_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
}

double Tensor::item() const {
    if (!is_scalar()) throw ShapeError("item() on non-scalar tensor of shape " + shape_str(shape));
    return values[0];
}

double Tensor::at2(int64_t r, int64_t c) const {
    if (rank() != 2) throw ShapeError("at2() on tensor of shape " + shape_str(shape));
    return values[static_cast<size_t>(r * shape[1] + c)];
}

Tensor Tensor::detached() const {
    Tensor t = *this;
    t.node = -1;
    return t;
}

Tensor GradMap::of(const Tensor& t) const {
    if (t.node < 0) throw ShapeError("gradient requested for a tensor that is not on the tape");
    return of(t.node);
}

Tensor GradMap::of(int node) const {
    const auto& shape = shapes_.at(static_cast<size_t>(node));
    const auto& g = grads_.at(static_cast<size_t>(node));
    if (!g) return Tensor::zeros(shape);
    return Tensor(shape, *g);
}

bool GradMap::has(int node) const { return grads_.at(static_cast<size_t>(node)).has_value(); }

namespace {

void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string("non-finite value produced by op '") + op + "'");
        }
    }
}

// True when small is a trailing suffix of big (broadcast of b over leading dims of a).
bool suffix_of(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const MatRM>;
using MapM = Eigen::Map<MatRM>;

} // namespace

int Tape::push(Shape shape, const std::vector<double>& out, std::vector<int> in,
               std::function<void(const std::vector<double>&,
                                  std::vector<std::optional<std::vector<double>>>&)>
                   back,
               const char* op) {
    check_finite(out, op);
    int id = static_cast<int>(nodes_.size());
    if (!record_) {
        // Inference: keep the shape for validation, drop activations and
        // backward closures.
        nodes_.push_back(Node{std::move(shape), {}, {}, nullptr});
        return id;
    }
    nodes_.push_back(Node{std::move(shape), out, std::move(in), std::move(back)});
    return id;
}

int Tape::require_node(const Tensor& t, const char* op) {
    if (t.node >= 0) {
        if (static_cast<size_t>(t.node) >= nodes_.size() ||
            nodes_[static_cast<size_t>(t.node)].shape != t.shape) {
            throw ShapeError(std::string("op '") + op + "': tensor node does not belong to this tape");
        }
        return t.node;
    }
    // Detached inputs are recorded as constant leaves on first use.
    int id = push(t.shape, t.values, {}, nullptr, op);
    return id;
}

void Tape::accumulate(std::vector<std::optional<std::vector<double>>>& grads, int node,
                      const std::vector<double>& delta) {
    auto& slot = grads[static_cast<size_t>(node)];
    if (!slot) {
        slot = delta;
        return;
    }
    auto& g = *slot;
    for (size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

Tensor Tape::leaf(const Tensor& t) {
    // Re-leafing a tensor already recorded here is a no-op, so callers can
    // pre-leaf parameters and still pass them through forward code.
    if (t.node >= 0 && static_cast<size_t>(t.node) < nodes_.size()) {
        const auto& n = nodes_[static_cast<size_t>(t.node)];
        if (n.shape == t.shape && n.out == t.values) return t;
    }
    Tensor r = t;
    r.node = push(t.shape, t.values, {}, nullptr, "leaf");
    return r;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() != 2 || a.shape.back() != b.shape[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape) + " x " + shape_str(b.shape));
    }
    const int64_t k = b.shape[0];
    const int64_t n = b.shape[1];
    const int64_t rows = a.size() / k;
    std::vector<double> out(static_cast<size_t>(rows * n));
    MapM(out.data(), rows, n).noalias() =
        MapC(a.values.data(), rows, k) * MapC(b.values.data(), k, n);
    Shape oshape = a.shape;
    oshape.back() = n;
    int ia = require_node(a, "matmul");
    int ib = require_node(b, "matmul");
    Tensor res(oshape, std::move(out));
    res.node = push(res.shape, res.values, {ia, ib},
                    [this, ia, ib, rows, k, n](const std::vector<double>& up, auto& grads) {
                        const auto& av = out_of(ia);
                        const auto& bv = out_of(ib);
                        std::vector<double> da(av.size());
                        std::vector<double> db(bv.size());
                        MapC U(up.data(), rows, n);
                        MapC A(av.data(), rows, k);
                        MapC B(bv.data(), k, n);
                        MapM(da.data(), rows, k).noalias() = U * B.transpose();
                        MapM(db.data(), k, n).noalias() = A.transpose() * U;
                        accumulate(grads, ia, da);
                        accumulate(grads, ib, db);
                    },
                    "matmul");
    return res;
}

Tensor Tape::bmm(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.shape[0] != b.shape[0] || a.shape[2] != b.shape[1]) {
        throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape) + " x " + shape_str(b.shape));
    }
    const int64_t nb = a.shape[0], m = a.shape[1], k = a.shape[2], p = b.shape[2];
    std::vector<double> out(static_cast<size_t>(nb * m * p));
    for (int64_t t = 0; t < nb; ++t) {
        MapM(&out[static_cast<size_t>(t * m * p)], m, p).noalias() =
            MapC(&a.values[static_cast<size_t>(t * m * k)], m, k) *
            MapC(&b.values[static_cast<size_t>(t * k * p)], k, p);
    }
    int ia = require_node(a, "bmm");
    int ib = require_node(b, "bmm");
    Tensor res({nb, m, p}, std::move(out));
    res.node = push(res.shape, res.values, {ia, ib},
                    [this, ia, ib, nb, m, k, p](const std::vector<double>& up, auto& grads) {
                        const auto& av = out_of(ia);
                        const auto& bv = out_of(ib);
                        std::vector<double> da(av.size());
                        std::vector<double> db(bv.size());
                        for (int64_t t = 0; t < nb; ++t) {
                            MapC A(&av[static_cast<size_t>(t * m * k)], m, k);
                            MapC B(&bv[static_cast<size_t>(t * k * p)], k, p);
                            MapC U(&up[static_cast<size_t>(t * m * p)], m, p);
                            MapM(&da[static_cast<size_t>(t * m * k)], m, k).noalias() =
                                U * B.transpose();
                            MapM(&db[static_cast<size_t>(t * k * p)], k, p).noalias() =
                                A.transpose() * U;
                        }
                        accumulate(grads, ia, da);
                        accumulate(grads, ib, db);
                    },
                    "bmm");
    return res;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    if (!suffix_of(b.shape, a.shape)) {
        throw ShapeError("add: shape " + shape_str(b.shape) + " does not broadcast over " + shape_str(a.shape));
    }
    const int64_t bn = b.size();
    const int64_t reps = a.size() / bn;
    std::vector<double> out(a.values.size());
    for (int64_t r = 0; r < reps; ++r) {
        const double* ap = &a.values[static_cast<size_t>(r * bn)];
        double* op = &out[static_cast<size_t>(r * bn)];
        for (int64_t i = 0; i < bn; ++i) op[i] = ap[i] + b.values[static_cast<size_t>(i)];
    }
    int ia = require_node(a, "add");
    int ib = require_node(b, "add");
    Tensor res(a.shape, std::move(out));
    res.node = push(res.shape, res.values, {ia, ib},
                    [ia, ib, bn, reps](const std::vector<double>& up, auto& grads) {
                        accumulate(grads, ia, up);
                        std::vector<double> db(static_cast<size_t>(bn), 0.0);
                        for (int64_t r = 0; r < reps; ++r) {
                            const double* u = &up[static_cast<size_t>(r * bn)];
                            for (int64_t i = 0; i < bn; ++i) db[static_cast<size_t>(i)] += u[i];
                        }
                        accumulate(grads, ib, db);
                    },
                    "add");
    return res;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    if (!suffix_of(b.shape, a.shape)) {
        throw ShapeError("sub: shape " + shape_str(b.shape) + " does not broadcast over " + shape_str(a.shape));
    }
    const int64_t bn = b.size();
    const int64_t reps = a.size() / bn;
    std::vector<double> out(a.values.size());
    for (int64_t r = 0; r < reps; ++r) {
        const double* ap = &a.values[static_cast<size_t>(r * bn)];
        double* op = &out[static_cast<size_t>(r * bn)];
        for (int64_t i = 0; i < bn; ++i) op[i] = ap[i] - b.values[static_cast<size_t>(i)];
    }
    int ia = require_node(a, "sub");
    int ib = require_node(b, "sub");
    Tensor res(a.shape, std::move(out));
    res.node = push(res.shape, res.values, {ia, ib},
                    [ia, ib, bn, reps](const std::vector<double>& up, auto& grads) {
                        accumulate(grads, ia, up);
                        std::vector<double> db(static_cast<size_t>(bn), 0.0);
                        for (int64_t r = 0; r < reps; ++r) {
                            const double* u = &up[static_cast<size_t>(r * bn)];
                            for (int64_t i = 0; i < bn; ++i) db[static_cast<size_t>(i)] -= u[i];
                        }
                        accumulate(grads, ib, db);
                    },
                    "sub");
    return res;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    if (!suffix_of(b.shape, a.shape)) {
        throw ShapeError("mul: shape " + shape_str(b.shape) + " does not broadcast over " + shape_str(a.shape));
    }
    const int64_t bn = b.size();
    const int64_t reps = a.size() / bn;
    std::vector<double> out(a.values.size());
    for (int64_t r = 0; r < reps; ++r) {
        const double* ap = &a.values[static_cast<size_t>(r * bn)];
        double* op = &out[static_cast<size_t>(r * bn)];
        for (int64_t i = 0; i < bn; ++i) op[i] = ap[i] * b.values[static_cast<size_t>(i)];
    }
    int ia = require_node(a, "mul");
    int ib = require_node(b, "mul");
    Tensor res(a.shape, std::move(out));
    res.node = push(res.shape, res.values, {ia, ib},
                    [this, ia, ib, bn, reps](const std::vector<double>& up, auto& grads) {
                        const auto& av = out_of(ia);
                        const auto& bv = out_of(ib);
                        std::vector<double> da(av.size());
                        std::vector<double> db(static_cast<size_t>(bn), 0.0);
                        for (int64_t r = 0; r < reps; ++r) {
                            const double* u = &up[static_cast<size_t>(r * bn)];
                            const double* ap = &av[static_cast<size_t>(r * bn)];
                            double* dp = &da[static_cast<size_t>(r * bn)];
                            for (int64_t i = 0; i < bn; ++i) {
                                dp[i] = u[i] * bv[static_cast<size_t>(i)];
                                db[static_cast<size_t>(i)] += u[i] * ap[i];
                            }
                        }
                        accumulate(grads, ia, da);
                        accumulate(grads, ib, db);
                    },
                    "mul");
    return res;
}

Tensor Tape::concat_last_dim(const Tensor& a, const Tensor& b) {
    return concat_last_dim(std::vector<Tensor>{a, b});
}

Tensor Tape::concat_last_dim(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_last_dim: no inputs");
    Shape lead = parts[0].shape;
    lead.pop_back();
    int64_t total_last = 0;
    for (const auto& p : parts) {
        Shape pl = p.shape;
        if (pl.empty()) throw ShapeError("concat_last_dim: scalar input");
        int64_t last = pl.back();
        pl.pop_back();
        if (pl != lead) {
            throw ShapeError("concat_last_dim: leading dims differ: " + shape_str(parts[0].shape) +
                             " vs " + shape_str(p.shape));
        }
        total_last += last;
    }
    const int64_t rows = numel(lead);
    std::vector<double> out(static_cast<size_t>(rows * total_last));
    std::vector<int64_t> lasts;
    std::vector<int> ids;
    for (const auto& p : parts) lasts.push_back(p.shape.back());
    int64_t off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const int64_t last = lasts[pi];
        for (int64_t r = 0; r < rows; ++r) {
            std::copy_n(&parts[pi].values[static_cast<size_t>(r * last)], last,
                        &out[static_cast<size_t>(r * total_last + off)]);
        }
        off += last;
    }
    for (const auto& p : parts) ids.push_back(require_node(p, "concat_last_dim"));
    Shape oshape = lead;
    oshape.push_back(total_last);
    Tensor res(oshape, std::move(out));
    res.node = push(res.shape, res.values, ids,
                    [ids, lasts, rows, total_last](const std::vector<double>& up, auto& grads) {
                        int64_t off = 0;
                        for (size_t pi = 0; pi < ids.size(); ++pi) {
                            const int64_t last = lasts[pi];
                            std::vector<double> d(static_cast<size_t>(rows * last));
                            for (int64_t r = 0; r < rows; ++r) {
                                std::copy_n(&up[static_cast<size_t>(r * total_last + off)], last,
                                            &d[static_cast<size_t>(r * last)]);
                            }
                            accumulate(grads, ids[pi], d);
                            off += last;
                        }
                    },
                    "concat_last_dim");
    return res;
}

Tensor Tape::tanh(const Tensor& a) {
    std::vector<double> out(a.values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.values[i]);
    int ia = require_node(a, "tanh");
    Tensor res(a.shape, std::move(out));
    int self = push(res.shape, res.values, {ia}, nullptr, "tanh");
    if (record_)
        nodes_[static_cast<size_t>(self)].back = [this, ia, self](const std::vector<double>& up, auto& grads) {
        const auto& y = out_of(self);
        std::vector<double> d(up.size());
        for (size_t i = 0; i < up.size(); ++i) d[i] = up[i] * (1.0 - y[i] * y[i]);
        accumulate(grads, ia, d);
    };
    res.node = self;
    return res;
}

Tensor Tape::sigmoid(const Tensor& a) {
    std::vector<double> out(a.values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a.values[i]));
    int ia = require_node(a, "sigmoid");
    Tensor res(a.shape, std::move(out));
    int self = push(res.shape, res.values, {ia}, nullptr, "sigmoid");
    if (record_)
        nodes_[static_cast<size_t>(self)].back = [this, ia, self](const std::vector<double>& up, auto& grads) {
        const auto& y = out_of(self);
        std::vector<double> d(up.size());
        for (size_t i = 0; i < up.size(); ++i) d[i] = up[i] * y[i] * (1.0 - y[i]);
        accumulate(grads, ia, d);
    };
    res.node = self;
    return res;
}

Tensor Tape::relu(const Tensor& a) {
    std::vector<double> out(a.values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values[i] > 0.0 ? a.values[i] : 0.0;
    int ia = require_node(a, "relu");
    Tensor res(a.shape, std::move(out));
    res.node = push(res.shape, res.values, {ia},
                    [this, ia](const std::vector<double>& up, auto& grads) {
                        const auto& x = out_of(ia);
                        std::vector<double> d(up.size());
                        for (size_t i = 0; i < up.size(); ++i) d[i] = x[i] > 0.0 ? up[i] : 0.0;
                        accumulate(grads, ia, d);
                    },
                    "relu");
    return res;
}

Tensor Tape::exp(const Tensor& a) {
    std::vector<double> out(a.values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.values[i]);
    int ia = require_node(a, "exp");
    Tensor res(a.shape, std::move(out));
    int self = push(res.shape, res.values, {ia}, nullptr, "exp");
    if (record_)
        nodes_[static_cast<size_t>(self)].back = [this, ia, self](const std::vector<double>& up, auto& grads) {
        const auto& y = out_of(self);
        std::vector<double> d(up.size());
        for (size_t i = 0; i < up.size(); ++i) d[i] = up[i] * y[i];
        accumulate(grads, ia, d);
    };
    res.node = self;
    return res;
}

Tensor Tape::log(const Tensor& a) {
    std::vector<double> out(a.values.size());
    for (size_t i = 0; i < out.size(); ++i) {
        if (a.values[i] <= 0.0) throw NumericError("log of non-positive value");
        out[i] = std::log(a.values[i]);
    }
    int ia = require_node(a, "log");
    Tensor res(a.shape, std::move(out));
    res.node = push(res.shape, res.values, {ia},
                    [this, ia](const std::vector<double>& up, auto& grads) {
                        const auto& x = out_of(ia);
                        std::vector<double> d(up.size());
                        for (size_t i = 0; i < up.size(); ++i) d[i] = up[i] / x[i];
                        accumulate(grads, ia, d);
                    },
                    "log");
    return res;
}

Tensor Tape::neg(const Tensor& a) { return scale(a, -1.0); }

Tensor Tape::scale(const Tensor& a, double k) {
    std::vector<double> out(a.values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values[i] * k;
    int ia = require_node(a, "scale");
    Tensor res(a.shape, std::move(out));
    res.node = push(res.shape, res.values, {ia},
                    [ia, k](const std::vector<double>& up, auto& grads) {
                        std::vector<double> d(up.size());
                        for (size_t i = 0; i < up.size(); ++i) d[i] = up[i] * k;
                        accumulate(grads, ia, d);
                    },
                    "scale");
    return res;
}

Tensor Tape::clamp(const Tensor& a, double lo, double hi) {
    if (!(lo <= hi)) throw ShapeError("clamp: lo > hi");
    std::vector<double> out(a.values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(a.values[i], lo), hi);
    int ia = require_node(a, "clamp");
    Tensor res(a.shape, std::move(out));
    res.node = push(res.shape, res.values, {ia},
                    [this, ia, lo, hi](const std::vector<double>& up, auto& grads) {
                        const auto& x = out_of(ia);
                        std::vector<double> d(up.size());
                        for (size_t i = 0; i < up.size(); ++i)
                            d[i] = (x[i] >= lo && x[i] <= hi) ? up[i] : 0.0;
                        accumulate(grads, ia, d);
                    },
                    "clamp");
    return res;
}

Tensor Tape::minimum(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) {
        throw ShapeError("minimum: shapes differ: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
    std::vector<double> out(a.values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::min(a.values[i], b.values[i]);
    int ia = require_node(a, "minimum");
    int ib = require_node(b, "minimum");
    Tensor res(a.shape, std::move(out));
    res.node = push(res.shape, res.values, {ia, ib},
                    [this, ia, ib](const std::vector<double>& up, auto& grads) {
                        const auto& av = out_of(ia);
                        const auto& bv = out_of(ib);
                        std::vector<double> da(up.size(), 0.0);
                        std::vector<double> db(up.size(), 0.0);
                        for (size_t i = 0; i < up.size(); ++i) {
                            if (av[i] <= bv[i]) da[i] = up[i];
                            else db[i] = up[i];
                        }
                        accumulate(grads, ia, da);
                        accumulate(grads, ib, db);
                    },
                    "minimum");
    return res;
}

Tensor Tape::softmax_last_dim(const Tensor& a) {
    if (a.shape.empty()) throw ShapeError("softmax_last_dim: scalar input");
    const int64_t c = a.shape.back();
    const int64_t rows = a.size() / c;
    std::vector<double> out(a.values.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = &a.values[static_cast<size_t>(r * c)];
        double* y = &out[static_cast<size_t>(r * c)];
        double mx = x[0];
        for (int64_t i = 1; i < c; ++i) mx = std::max(mx, x[i]);
        double s = 0.0;
        for (int64_t i = 0; i < c; ++i) {
            y[i] = std::exp(x[i] - mx);
            s += y[i];
        }
        for (int64_t i = 0; i < c; ++i) y[i] /= s;
    }
    int ia = require_node(a, "softmax_last_dim");
    Tensor res(a.shape, std::move(out));
    int self = push(res.shape, res.values, {ia}, nullptr, "softmax_last_dim");
    if (record_)
        nodes_[static_cast<size_t>(self)].back = [this, ia, self, rows, c](const std::vector<double>& up,
                                                                       auto& grads) {
        const auto& y = out_of(self);
        std::vector<double> d(up.size());
        for (int64_t r = 0; r < rows; ++r) {
            const double* yr = &y[static_cast<size_t>(r * c)];
            const double* ur = &up[static_cast<size_t>(r * c)];
            double dot = 0.0;
            for (int64_t i = 0; i < c; ++i) dot += ur[i] * yr[i];
            for (int64_t i = 0; i < c; ++i) d[static_cast<size_t>(r * c + i)] = yr[i] * (ur[i] - dot);
        }
        accumulate(grads, ia, d);
    };
    res.node = self;
    return res;
}

Tensor Tape::log_softmax_last_dim(const Tensor& a) {
    if (a.shape.empty()) throw ShapeError("log_softmax_last_dim: scalar input");
    const int64_t c = a.shape.back();
    const int64_t rows = a.size() / c;
    std::vector<double> out(a.values.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = &a.values[static_cast<size_t>(r * c)];
        double* y = &out[static_cast<size_t>(r * c)];
        double mx = x[0];
        for (int64_t i = 1; i < c; ++i) mx = std::max(mx, x[i]);
        double s = 0.0;
        for (int64_t i = 0; i < c; ++i) s += std::exp(x[i] - mx);
        const double lse = mx + std::log(s);
        for (int64_t i = 0; i < c; ++i) y[i] = x[i] - lse;
    }
    int ia = require_node(a, "log_softmax_last_dim");
    Tensor res(a.shape, std::move(out));
    int self = push(res.shape, res.values, {ia}, nullptr, "log_softmax_last_dim");
    if (record_)
        nodes_[static_cast<size_t>(self)].back = [this, ia, self, rows, c](const std::vector<double>& up,
                                                                       auto& grads) {
        const auto& y = out_of(self);
        std::vector<double> d(up.size());
        for (int64_t r = 0; r < rows; ++r) {
            const double* yr = &y[static_cast<size_t>(r * c)];
            const double* ur = &up[static_cast<size_t>(r * c)];
            double usum = 0.0;
            for (int64_t i = 0; i < c; ++i) usum += ur[i];
            for (int64_t i = 0; i < c; ++i)
                d[static_cast<size_t>(r * c + i)] = ur[i] - std::exp(yr[i]) * usum;
        }
        accumulate(grads, ia, d);
    };
    res.node = self;
    return res;
}

Tensor Tape::layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias) {
    if (a.shape.empty()) throw ShapeError("layer_norm: scalar input");
    const int64_t c = a.shape.back();
    if (gain.shape != Shape{c} || bias.shape != Shape{c}) {
        throw ShapeError("layer_norm: gain/bias must have shape (" + std::to_string(c) + "), got " +
                         shape_str(gain.shape) + " and " + shape_str(bias.shape));
    }
    constexpr double eps = 1e-5;
    const int64_t rows = a.size() / c;
    std::vector<double> out(a.values.size());
    std::vector<double> xhat(a.values.size());
    std::vector<double> inv_std(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = &a.values[static_cast<size_t>(r * c)];
        double mu = 0.0;
        for (int64_t i = 0; i < c; ++i) mu += x[i];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t i = 0; i < c; ++i) var += (x[i] - mu) * (x[i] - mu);
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(r)] = is;
        for (int64_t i = 0; i < c; ++i) {
            const double xh = (x[i] - mu) * is;
            xhat[static_cast<size_t>(r * c + i)] = xh;
            out[static_cast<size_t>(r * c + i)] = xh * gain.values[static_cast<size_t>(i)] +
                                                  bias.values[static_cast<size_t>(i)];
        }
    }
    int ia = require_node(a, "layer_norm");
    int ig = require_node(gain, "layer_norm");
    int ib = require_node(bias, "layer_norm");
    Tensor res(a.shape, std::move(out));
    res.node = push(res.shape, res.values, {ia, ig, ib},
                    [this, ia, ig, ib, rows, c, xhat = std::move(xhat),
                     inv_std = std::move(inv_std)](const std::vector<double>& up, auto& grads) {
                        const auto& g = out_of(ig);
                        std::vector<double> da(static_cast<size_t>(rows * c));
                        std::vector<double> dg(static_cast<size_t>(c), 0.0);
                        std::vector<double> db(static_cast<size_t>(c), 0.0);
                        for (int64_t r = 0; r < rows; ++r) {
                            const double* ur = &up[static_cast<size_t>(r * c)];
                            const double* xh = &xhat[static_cast<size_t>(r * c)];
                            double m_dxhat = 0.0, m_dxhat_xhat = 0.0;
                            for (int64_t i = 0; i < c; ++i) {
                                db[static_cast<size_t>(i)] += ur[i];
                                dg[static_cast<size_t>(i)] += ur[i] * xh[i];
                                const double dxh = ur[i] * g[static_cast<size_t>(i)];
                                m_dxhat += dxh;
                                m_dxhat_xhat += dxh * xh[i];
                            }
                            m_dxhat /= static_cast<double>(c);
                            m_dxhat_xhat /= static_cast<double>(c);
                            const double is = inv_std[static_cast<size_t>(r)];
                            for (int64_t i = 0; i < c; ++i) {
                                const double dxh = ur[i] * g[static_cast<size_t>(i)];
                                da[static_cast<size_t>(r * c + i)] =
                                    is * (dxh - m_dxhat - xh[i] * m_dxhat_xhat);
                            }
                        }
                        accumulate(grads, ia, da);
                        accumulate(grads, ig, dg);
                        accumulate(grads, ib, db);
                    },
                    "layer_norm");
    return res;
}

Tensor Tape::reshape(const Tensor& a, const Shape& s) {
    if (numel(s) != a.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape) + " as " + shape_str(s));
    }
    int ia = require_node(a, "reshape");
    Tensor res(s, a.values);
    res.node = push(res.shape, res.values, {ia},
                    [ia](const std::vector<double>& up, auto& grads) { accumulate(grads, ia, up); },
                    "reshape");
    return res;
}

Tensor Tape::transpose_last2(const Tensor& a) {
    if (a.rank() < 2) throw ShapeError("transpose_last2: rank < 2 input " + shape_str(a.shape));
    const int64_t r = a.shape[a.rank() - 2];
    const int64_t c = a.shape[a.rank() - 1];
    const int64_t blocks = a.size() / (r * c);
    std::vector<double> out(a.values.size());
    for (int64_t b = 0; b < blocks; ++b) {
        const double* src = &a.values[static_cast<size_t>(b * r * c)];
        double* dst = &out[static_cast<size_t>(b * r * c)];
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    }
    Shape oshape = a.shape;
    std::swap(oshape[oshape.size() - 2], oshape[oshape.size() - 1]);
    int ia = require_node(a, "transpose_last2");
    Tensor res(oshape, std::move(out));
    res.node = push(res.shape, res.values, {ia},
                    [ia, r, c, blocks](const std::vector<double>& up, auto& grads) {
                        std::vector<double> d(up.size());
                        for (int64_t b = 0; b < blocks; ++b) {
                            const double* src = &up[static_cast<size_t>(b * r * c)];
                            double* dst = &d[static_cast<size_t>(b * r * c)];
                            for (int64_t i = 0; i < r; ++i)
                                for (int64_t j = 0; j < c; ++j) dst[i * c + j] = src[j * r + i];
                        }
                        accumulate(grads, ia, d);
                    },
                    "transpose_last2");
    return res;
}

Tensor Tape::slice_last_dim(const Tensor& a, int64_t from, int64_t len) {
    if (a.shape.empty()) throw ShapeError("slice_last_dim: scalar input");
    const int64_t c = a.shape.back();
    if (from < 0 || len <= 0 || from + len > c) {
        throw ShapeError("slice_last_dim: range [" + std::to_string(from) + "," +
                         std::to_string(from + len) + ") out of " + shape_str(a.shape));
    }
    const int64_t rows = a.size() / c;
    std::vector<double> out(static_cast<size_t>(rows * len));
    for (int64_t r = 0; r < rows; ++r)
        std::copy_n(&a.values[static_cast<size_t>(r * c + from)], len, &out[static_cast<size_t>(r * len)]);
    Shape oshape = a.shape;
    oshape.back() = len;
    int ia = require_node(a, "slice_last_dim");
    Tensor res(oshape, std::move(out));
    res.node = push(res.shape, res.values, {ia},
                    [ia, from, len, rows, c](const std::vector<double>& up, auto& grads) {
                        std::vector<double> d(static_cast<size_t>(rows * c), 0.0);
                        for (int64_t r = 0; r < rows; ++r)
                            std::copy_n(&up[static_cast<size_t>(r * len)], len,
                                        &d[static_cast<size_t>(r * c + from)]);
                        accumulate(grads, ia, d);
                    },
                    "slice_last_dim");
    return res;
}

Tensor Tape::select_time(const Tensor& a, int64_t t) {
    Shape s = a.shape;
    int64_t b = 1, w = 0, d = 0;
    if (s.size() == 3) {
        b = s[0];
        w = s[1];
        d = s[2];
    } else if (s.size() == 2) {
        w = s[0];
        d = s[1];
    } else {
        throw ShapeError("select_time: expected rank 2 or 3, got " + shape_str(s));
    }
    if (t < 0 || t >= w) {
        throw ShapeError("select_time: index " + std::to_string(t) + " out of window " + std::to_string(w));
    }
    std::vector<double> out(static_cast<size_t>(b * d));
    for (int64_t i = 0; i < b; ++i)
        std::copy_n(&a.values[static_cast<size_t>((i * w + t) * d)], d, &out[static_cast<size_t>(i * d)]);
    int ia = require_node(a, "select_time");
    Tensor res({b, d}, std::move(out));
    res.node = push(res.shape, res.values, {ia},
                    [ia, b, w, d, t, n = a.size()](const std::vector<double>& up, auto& grads) {
                        std::vector<double> g(static_cast<size_t>(n), 0.0);
                        for (int64_t i = 0; i < b; ++i)
                            std::copy_n(&up[static_cast<size_t>(i * d)], d,
                                        &g[static_cast<size_t>((i * w + t) * d)]);
                        accumulate(grads, ia, g);
                    },
                    "select_time");
    return res;
}

Tensor Tape::take_per_row(const Tensor& a, const std::vector<int>& idx) {
    if (a.rank() != 2) throw ShapeError("take_per_row: expected rank 2, got " + shape_str(a.shape));
    const int64_t rows = a.shape[0], c = a.shape[1];
    if (static_cast<int64_t>(idx.size()) != rows) {
        throw ShapeError("take_per_row: " + std::to_string(idx.size()) + " indices for " +
                         std::to_string(rows) + " rows");
    }
    std::vector<double> out(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const int i = idx[static_cast<size_t>(r)];
        if (i < 0 || i >= c) throw ShapeError("take_per_row: column index out of range");
        out[static_cast<size_t>(r)] = a.values[static_cast<size_t>(r * c + i)];
    }
    int ia = require_node(a, "take_per_row");
    Tensor res({rows, 1}, std::move(out));
    res.node = push(res.shape, res.values, {ia},
                    [ia, idx, rows, c](const std::vector<double>& up, auto& grads) {
                        std::vector<double> d(static_cast<size_t>(rows * c), 0.0);
                        for (int64_t r = 0; r < rows; ++r)
                            d[static_cast<size_t>(r * c + idx[static_cast<size_t>(r)])] =
                                up[static_cast<size_t>(r)];
                        accumulate(grads, ia, d);
                    },
                    "take_per_row");
    return res;
}

Tensor Tape::sum(const Tensor& a) {
    double s = std::accumulate(a.values.begin(), a.values.end(), 0.0);
    int ia = require_node(a, "sum");
    Tensor res = Tensor::scalar(s);
    res.node = push(res.shape, res.values, {ia},
                    [ia, n = a.values.size()](const std::vector<double>& up, auto& grads) {
                        accumulate(grads, ia, std::vector<double>(n, up[0]));
                    },
                    "sum");
    return res;
}

Tensor Tape::mean(const Tensor& a) {
    const double n = static_cast<double>(a.size());
    double s = std::accumulate(a.values.begin(), a.values.end(), 0.0) / n;
    int ia = require_node(a, "mean");
    Tensor res = Tensor::scalar(s);
    res.node = push(res.shape, res.values, {ia},
                    [ia, n, cnt = a.values.size()](const std::vector<double>& up, auto& grads) {
                        accumulate(grads, ia, std::vector<double>(cnt, up[0] / n));
                    },
                    "mean");
    return res;
}

GradMap Tape::backward(const Tensor& loss) const {
    if (!record_) throw ShapeError("backward: tape was created in inference mode");
    if (!loss.is_scalar()) {
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape));
    }
    if (loss.node < 0 || static_cast<size_t>(loss.node) >= nodes_.size()) {
        throw ShapeError("backward: loss is not recorded on this tape");
    }
    std::vector<std::optional<std::vector<double>>> grads(nodes_.size());
    grads[static_cast<size_t>(loss.node)] = std::vector<double>{1.0};
    for (int i = loss.node; i >= 0; --i) {
        const auto& node = nodes_[static_cast<size_t>(i)];
        if (!grads[static_cast<size_t>(i)] || !node.back) continue;
        node.back(*grads[static_cast<size_t>(i)], grads);
    }
    std::vector<Shape> shapes;
    shapes.reserve(nodes_.size());
    for (const auto& n : nodes_) shapes.push_back(n.shape);
    return GradMap(std::move(grads), std::move(shapes));
}

} // namespace newsrl
