#pragma once

#include "comet/types.hpp"

#include <functional>
#include <initializer_list>
#include <vector>

// Reverse-mode accumulation over dense matrices. Nodes are appended in
// evaluation order, so a reverse sweep over the node list is a valid
// topological order for backpropagation.
namespace comet::ad {

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    int id() const { return id_; }
    Tape& tape() const { return *tape_; }
    bool valid() const { return tape_ != nullptr; }

    const Matrix& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    bool requires_grad() const;

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Matrix&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var leaf(Matrix value);
    Var record(Matrix value, const std::vector<Var>& parents, BackwardFn fn);

    const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

    template <typename Derived>
    void accumulate(const Var& v, const Eigen::MatrixBase<Derived>& g) {
        auto& node = nodes_[static_cast<std::size_t>(v.id())];
        if (!node.requires_grad) return;
        if (!node.has_grad) {
            node.grad = g;
            node.has_grad = true;
        } else {
            node.grad += g;
        }
    }

    /// Gradient of the last backward root w.r.t. `v`; zeros if nothing flowed.
    Matrix grad(const Var& v) const;
    bool has_grad(const Var& v) const { return nodes_[static_cast<std::size_t>(v.id())].has_grad; }

    /// Seeds d(root)/d(root) = 1; root must be 1x1.
    void backward(const Var& root);
    void backward(const Var& root, const Matrix& seed);
    void zero_grad();

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        BackwardFn backward;
        bool requires_grad = false;
        bool has_grad = false;
    };
    std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

inline double scalar(const Var& v) {
    require_dims(v.rows() == 1 && v.cols() == 1, "scalar() needs a 1x1 node");
    return v.value()(0, 0);
}

// Elementwise arithmetic.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_n(const std::vector<Var>& terms);
inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

// Linear algebra.
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var transpose(const Var& a);
/// Row-batched affine map: X W^T + 1 b, with W (out x in) and b (1 x out).
Var affine(const Var& x, const Var& w, const Var& b);
Var add_row(const Var& a, const Var& row);      // broadcast 1 x m over rows
Var mul_col(const Var& a, const Var& column);   // scale row i by column(i)
Var mul_row(const Var& a, const Var& row);      // scale column j by row(j)

// Nonlinearities.
Var silu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var clamp(const Var& a, double lo, double hi);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
Var row_sum(const Var& a);
Var col_mean(const Var& a);

Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);

// Structure.
Var row_block(const Var& a, Index start, Index count);
Var col_block(const Var& a, Index start, Index count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(const Var& a, const IndexList& rows);
/// out(i) = a(i, cols[i]), an n x 1 column.
Var pick(const Var& a, const IndexList& cols);

Var stop_gradient(const Var& a);
/// Forward value `quantized`, gradient routed unchanged to `z`.
Var straight_through(const Var& z, const Matrix& quantized);

}  // namespace comet::ad
