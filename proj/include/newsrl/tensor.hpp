#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "newsrl/errors.hpp"

namespace newsrl {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);

// Dense row-major array of 64-bit floats. `node` links the value to the tape
// it was recorded on (-1 when detached).
struct Tensor {
    Shape shape;
    std::vector<double> values;
    int node = -1;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> v);

    static Tensor zeros(const Shape& s);
    static Tensor full(const Shape& s, double value);
    static Tensor scalar(double value);
    static Tensor vector(std::vector<double> v);
    static Tensor matrix(int64_t rows, int64_t cols, std::vector<double> v);

    int64_t size() const { return static_cast<int64_t>(values.size()); }
    int64_t dim(size_t i) const { return shape.at(i); }
    size_t rank() const { return shape.size(); }
    bool is_scalar() const { return size() == 1; }
    double item() const;
    double at2(int64_t r, int64_t c) const;

    Tensor detached() const;
};

// Gradients produced by Tape::backward, keyed by node id. Nodes with no path
// to the loss read back as zeros.
class GradMap {
public:
    GradMap(std::vector<std::optional<std::vector<double>>> grads, std::vector<Shape> shapes)
        : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

    Tensor of(const Tensor& t) const;
    Tensor of(int node) const;
    bool has(int node) const;

private:
    std::vector<std::optional<std::vector<double>>> grads_;
    std::vector<Shape> shapes_;
};

// Reverse-mode tape. Rebuilt per forward pass; ops append nodes whose input
// ids are strictly smaller than their own, so the graph is topological by
// construction. Single-threaded; tapes are independent values.
//
// An inference tape (GradMode::Off) runs the same forward code but stores no
// activations and supports no backward sweep, which roughly halves the
// memory traffic of rollout and evaluation forwards.
enum class GradMode { On, Off };

class Tape {
public:
    Tape() = default;
    explicit Tape(GradMode mode) : record_(mode == GradMode::On) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return record_; }

    // Records a value as a leaf (parameter or input). Gradients accumulate
    // against the returned tensor's node id.
    Tensor leaf(const Tensor& t);

    // Binary primitives. add/sub/mul broadcast a trailing-suffix shape of b
    // over the leading dims of a (bias over rows, posenc over batch).
    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor bmm(const Tensor& a, const Tensor& b);
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor concat_last_dim(const Tensor& a, const Tensor& b);
    Tensor concat_last_dim(const std::vector<Tensor>& parts);

    // Unary primitives.
    Tensor tanh(const Tensor& a);
    Tensor sigmoid(const Tensor& a);
    Tensor relu(const Tensor& a);
    Tensor exp(const Tensor& a);
    Tensor log(const Tensor& a);
    Tensor neg(const Tensor& a);
    Tensor scale(const Tensor& a, double k);
    // Clamp to [lo, hi]; zero gradient outside the interval.
    Tensor clamp(const Tensor& a, double lo, double hi);
    // Elementwise min of same-shape tensors; subgradient follows the smaller
    // side (a on ties).
    Tensor minimum(const Tensor& a, const Tensor& b);
    Tensor softmax_last_dim(const Tensor& a);
    Tensor log_softmax_last_dim(const Tensor& a);
    Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias);

    // Structural ops.
    Tensor reshape(const Tensor& a, const Shape& s);
    Tensor transpose_last2(const Tensor& a);
    Tensor slice_last_dim(const Tensor& a, int64_t from, int64_t len);
    // (B,T,D) -> (B,D) at time index t; also accepts (T,D) -> (1,D).
    Tensor select_time(const Tensor& a, int64_t t);
    // (B,C) + row indices -> (B,1): picks column idx[r] of row r.
    Tensor take_per_row(const Tensor& a, const std::vector<int>& idx);

    // Reductions to scalar shape {1}.
    Tensor sum(const Tensor& a);
    Tensor mean(const Tensor& a);

    // Reverse sweep from a scalar loss. Chain rule over the whole tape;
    // nodes not on a path to the loss get no entry (read back as zeros).
    GradMap backward(const Tensor& loss) const;

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Shape shape;
        std::vector<double> out;
        std::vector<int> in;
        // Accumulates input gradients given this node's upstream gradient.
        std::function<void(const std::vector<double>& up,
                           std::vector<std::optional<std::vector<double>>>& grads)>
            back;
    };

    std::vector<Node> nodes_;
    bool record_ = true;

    int push(Shape shape, const std::vector<double>& out, std::vector<int> in,
             std::function<void(const std::vector<double>&,
                                std::vector<std::optional<std::vector<double>>>&)>
                 back,
             const char* op);
    const std::vector<double>& out_of(int node) const { return nodes_[static_cast<size_t>(node)].out; }
    int require_node(const Tensor& t, const char* op);
    static void accumulate(std::vector<std::optional<std::vector<double>>>& grads, int node,
                           const std::vector<double>& delta);
    static void accumulate_at(std::vector<std::optional<std::vector<double>>>& grads, int node,
                              size_t offset, const std::vector<double>& delta);
};

} // namespace newsrl
