#include "comet/ad.hpp"

#include <cmath>

namespace comet::ad {

Var Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, {}, false, false});
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::leaf(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, {}, true, false});
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, const std::vector<Var>& parents, BackwardFn fn) {
    bool needs = false;
    for (const auto& p : parents) {
        require_dims(&p.tape() == this, "tape: parent recorded on a different tape");
        needs = needs || p.requires_grad();
    }
    Node node{std::move(value), {}, {}, needs, false};
    if (needs) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Matrix Tape::grad(const Var& v) const {
    const auto& node = nodes_[static_cast<std::size_t>(v.id())];
    if (node.has_grad) return node.grad;
    return Matrix::Zero(node.value.rows(), node.value.cols());
}

void Tape::backward(const Var& root) {
    require_dims(root.rows() == 1 && root.cols() == 1, "backward() without seed needs a scalar root");
    backward(root, Matrix::Ones(1, 1));
}

void Tape::backward(const Var& root, const Matrix& seed) {
    require_dims(seed.rows() == root.rows() && seed.cols() == root.cols(), "backward seed shape mismatch");
    zero_grad();
    accumulate(root, seed);
    for (int id = root.id(); id >= 0; --id) {
        auto& node = nodes_[static_cast<std::size_t>(id)];
        if (!node.has_grad || !node.backward) continue;
        // The closure may accumulate into earlier nodes only, never into
        // this one, so handing it a reference is safe.
        node.backward(*this, node.grad);
    }
}

void Tape::zero_grad() {
    for (auto& node : nodes_) {
        node.has_grad = false;
        node.grad.resize(0, 0);
    }
}

namespace {

void same_shape(const Var& a, const Var& b, const char* op) {
    require_dims(a.rows() == b.rows() && a.cols() == b.cols(),
                 std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
}

}  // namespace

Var add(const Var& a, const Var& b) {
    same_shape(a, b, "add");
    return a.tape().record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var sub(const Var& a, const Var& b) {
    same_shape(a, b, "sub");
    return a.tape().record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
        t.accumulate(a, g);
        t.accumulate(b, -g);
    });
}

Var hadamard(const Var& a, const Var& b) {
    same_shape(a, b, "hadamard");
    return a.tape().record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
        if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
        if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
    });
}

Var scale(const Var& a, double s) {
    return a.tape().record(a.value() * s, {a}, [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var add_n(const std::vector<Var>& terms) {
    require_dims(!terms.empty(), "add_n: no terms");
    Matrix out = terms.front().value();
    for (std::size_t i = 1; i < terms.size(); ++i) {
        same_shape(terms.front(), terms[i], "add_n");
        out += terms[i].value();
    }
    return terms.front().tape().record(std::move(out), terms, [terms](Tape& t, const Matrix& g) {
        for (const auto& term : terms) t.accumulate(term, g);
    });
}

Var matmul(const Var& a, const Var& b) {
    require_dims(a.cols() == b.rows(), "matmul: inner dimension mismatch");
    return a.tape().record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
        if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
        if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    require_dims(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
    return a.tape().record(a.value() * b.value().transpose(), {a, b}, [a, b](Tape& t, const Matrix& g) {
        if (a.requires_grad()) t.accumulate(a, g * b.value());
        if (b.requires_grad()) t.accumulate(b, g.transpose() * a.value());
    });
}

Var transpose(const Var& a) {
    return a.tape().record(a.value().transpose(), {a},
                           [a](Tape& t, const Matrix& g) { t.accumulate(a, g.transpose()); });
}

Var affine(const Var& x, const Var& w, const Var& b) {
    require_dims(x.cols() == w.cols(), "affine: input dimension " + std::to_string(x.cols()) +
                                           " does not match weight columns " + std::to_string(w.cols()));
    require_dims(b.rows() == 1 && b.cols() == w.rows(), "affine: bias must be 1 x out");
    Matrix y = x.value() * w.value().transpose();
    y.rowwise() += b.value().row(0);
    return x.tape().record(std::move(y), {x, w, b}, [x, w, b](Tape& t, const Matrix& g) {
        if (x.requires_grad()) t.accumulate(x, g * w.value());
        if (w.requires_grad()) t.accumulate(w, g.transpose() * x.value());
        if (b.requires_grad()) t.accumulate(b, g.colwise().sum());
    });
}

Var add_row(const Var& a, const Var& row) {
    require_dims(row.rows() == 1 && row.cols() == a.cols(), "add_row: row must be 1 x cols");
    Matrix y = a.value();
    y.rowwise() += row.value().row(0);
    return a.tape().record(std::move(y), {a, row}, [a, row](Tape& t, const Matrix& g) {
        t.accumulate(a, g);
        if (row.requires_grad()) t.accumulate(row, g.colwise().sum());
    });
}

Var mul_col(const Var& a, const Var& column) {
    require_dims(column.cols() == 1 && column.rows() == a.rows(), "mul_col: column must be rows x 1");
    Matrix y = a.value().array().colwise() * column.value().col(0).array();
    return a.tape().record(std::move(y), {a, column}, [a, column](Tape& t, const Matrix& g) {
        if (a.requires_grad()) t.accumulate(a, (g.array().colwise() * column.value().col(0).array()).matrix());
        if (column.requires_grad()) t.accumulate(column, g.cwiseProduct(a.value()).rowwise().sum());
    });
}

Var mul_row(const Var& a, const Var& row) {
    require_dims(row.rows() == 1 && row.cols() == a.cols(), "mul_row: row must be 1 x cols");
    Matrix y = a.value().array().rowwise() * row.value().row(0).array();
    return a.tape().record(std::move(y), {a, row}, [a, row](Tape& t, const Matrix& g) {
        if (a.requires_grad()) t.accumulate(a, (g.array().rowwise() * row.value().row(0).array()).matrix());
        if (row.requires_grad()) t.accumulate(row, g.cwiseProduct(a.value()).colwise().sum());
    });
}

Var silu(const Var& a) {
    const Matrix sig = (1.0 + (-a.value().array()).exp()).inverse().matrix();
    Matrix y = a.value().cwiseProduct(sig);
    return a.tape().record(std::move(y), {a}, [a, sig](Tape& t, const Matrix& g) {
        const auto x = a.value().array();
        const auto s = sig.array();
        t.accumulate(a, (g.array() * (s * (1.0 + x * (1.0 - s)))).matrix());
    });
}

Var sigmoid(const Var& a) {
    Matrix y = (1.0 + (-a.value().array()).exp()).inverse().matrix();
    Matrix saved = y;
    return a.tape().record(std::move(y), {a}, [a, saved](Tape& t, const Matrix& g) {
        t.accumulate(a, (g.array() * saved.array() * (1.0 - saved.array())).matrix());
    });
}

Var tanh(const Var& a) {
    Matrix y = a.value().array().tanh().matrix();
    Matrix saved = y;
    return a.tape().record(std::move(y), {a}, [a, saved](Tape& t, const Matrix& g) {
        t.accumulate(a, (g.array() * (1.0 - saved.array().square())).matrix());
    });
}

Var exp(const Var& a) {
    Matrix y = a.value().array().exp().matrix();
    Matrix saved = y;
    return a.tape().record(std::move(y), {a}, [a, saved](Tape& t, const Matrix& g) {
        t.accumulate(a, g.cwiseProduct(saved));
    });
}

Var log(const Var& a) {
    return a.tape().record(a.value().array().log().matrix(), {a}, [a](Tape& t, const Matrix& g) {
        t.accumulate(a, (g.array() / a.value().array()).matrix());
    });
}

Var square(const Var& a) {
    return a.tape().record(a.value().cwiseAbs2(), {a}, [a](Tape& t, const Matrix& g) {
        t.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
    });
}

Var clamp(const Var& a, double lo, double hi) {
    Matrix y = a.value().cwiseMax(lo).cwiseMin(hi);
    return a.tape().record(std::move(y), {a}, [a, lo, hi](Tape& t, const Matrix& g) {
        const auto inside = (a.value().array() >= lo && a.value().array() <= hi).cast<Scalar>();
        t.accumulate(a, (g.array() * inside).matrix());
    });
}

Var sum(const Var& a) {
    Matrix y(1, 1);
    y(0, 0) = a.value().sum();
    return a.tape().record(std::move(y), {a}, [a](Tape& t, const Matrix& g) {
        t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
    });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    require_dims(n > 0, "mean of empty node");
    Matrix y(1, 1);
    y(0, 0) = a.value().sum() / n;
    return a.tape().record(std::move(y), {a}, [a, n](Tape& t, const Matrix& g) {
        t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / n));
    });
}

Var row_sum(const Var& a) {
    return a.tape().record(a.value().rowwise().sum(), {a}, [a](Tape& t, const Matrix& g) {
        t.accumulate(a, g.col(0).replicate(1, a.cols()));
    });
}

Var col_mean(const Var& a) {
    const double n = static_cast<double>(a.rows());
    return a.tape().record(a.value().colwise().mean(), {a}, [a, n](Tape& t, const Matrix& g) {
        t.accumulate(a, (g.row(0) / n).replicate(a.rows(), 1));
    });
}

namespace {

Matrix softmax_rows_value(const Matrix& x) {
    Matrix y = x.colwise() - x.rowwise().maxCoeff();
    y = y.array().exp().matrix();
    y = y.array().colwise() / y.rowwise().sum().array();
    return y;
}

}  // namespace

Var softmax_rows(const Var& a) {
    require_dims(a.cols() >= 1, "softmax over zero columns");
    Matrix y = softmax_rows_value(a.value());
    Matrix saved = y;
    return a.tape().record(std::move(y), {a}, [a, saved](Tape& t, const Matrix& g) {
        const Vector dot = g.cwiseProduct(saved).rowwise().sum();
        t.accumulate(a, (saved.array() * (g.colwise() - dot).array()).matrix());
    });
}

Var log_softmax_rows(const Var& a) {
    require_dims(a.cols() >= 1, "log-softmax over zero columns");
    const Vector mx = a.value().rowwise().maxCoeff();
    Matrix shifted = a.value().colwise() - mx;
    const Vector lse = shifted.array().exp().rowwise().sum().log().matrix();
    Matrix y = shifted.colwise() - lse;
    Matrix probs = y.array().exp().matrix();
    return a.tape().record(std::move(y), {a}, [a, probs](Tape& t, const Matrix& g) {
        const Vector gs = g.rowwise().sum();
        t.accumulate(a, g - (probs.array().colwise() * gs.array()).matrix());
    });
}

Var row_block(const Var& a, Index start, Index count) {
    require_dims(start >= 0 && count >= 0 && start + count <= a.rows(), "row_block out of range");
    return a.tape().record(a.value().middleRows(start, count), {a}, [a, start, count](Tape& t, const Matrix& g) {
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        full.middleRows(start, count) = g;
        t.accumulate(a, full);
    });
}

Var col_block(const Var& a, Index start, Index count) {
    require_dims(start >= 0 && count >= 0 && start + count <= a.cols(), "col_block out of range");
    return a.tape().record(a.value().middleCols(start, count), {a}, [a, start, count](Tape& t, const Matrix& g) {
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        full.middleCols(start, count) = g;
        t.accumulate(a, full);
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    require_dims(!parts.empty(), "concat_rows: no parts");
    Index rows = 0;
    const Index cols = parts.front().cols();
    for (const auto& p : parts) {
        require_dims(p.cols() == cols, "concat_rows: column mismatch");
        rows += p.rows();
    }
    Matrix y(rows, cols);
    Index at = 0;
    for (const auto& p : parts) {
        y.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    return parts.front().tape().record(std::move(y), parts, [parts](Tape& t, const Matrix& g) {
        Index offset = 0;
        for (const auto& p : parts) {
            if (p.requires_grad()) t.accumulate(p, g.middleRows(offset, p.rows()));
            offset += p.rows();
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    require_dims(!parts.empty(), "concat_cols: no parts");
    Index cols = 0;
    const Index rows = parts.front().rows();
    for (const auto& p : parts) {
        require_dims(p.rows() == rows, "concat_cols: row mismatch");
        cols += p.cols();
    }
    Matrix y(rows, cols);
    Index at = 0;
    for (const auto& p : parts) {
        y.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    return parts.front().tape().record(std::move(y), parts, [parts](Tape& t, const Matrix& g) {
        Index offset = 0;
        for (const auto& p : parts) {
            if (p.requires_grad()) t.accumulate(p, g.middleCols(offset, p.cols()));
            offset += p.cols();
        }
    });
}

Var gather_rows(const Var& a, const IndexList& rows) {
    Matrix y(static_cast<Index>(rows.size()), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require_dims(rows[i] >= 0 && rows[i] < a.rows(), "gather_rows: index out of range");
        y.row(static_cast<Index>(i)) = a.value().row(rows[i]);
    }
    return a.tape().record(std::move(y), {a}, [a, rows](Tape& t, const Matrix& g) {
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) full.row(rows[i]) += g.row(static_cast<Index>(i));
        t.accumulate(a, full);
    });
}

Var pick(const Var& a, const IndexList& cols) {
    require_dims(static_cast<Index>(cols.size()) == a.rows(), "pick: one column per row required");
    Matrix y(a.rows(), 1);
    for (Index i = 0; i < a.rows(); ++i) {
        const Index c = cols[static_cast<std::size_t>(i)];
        require_dims(c >= 0 && c < a.cols(), "pick: column out of range");
        y(i, 0) = a.value()(i, c);
    }
    return a.tape().record(std::move(y), {a}, [a, cols](Tape& t, const Matrix& g) {
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        for (Index i = 0; i < a.rows(); ++i) full(i, cols[static_cast<std::size_t>(i)]) = g(i, 0);
        t.accumulate(a, full);
    });
}

Var stop_gradient(const Var& a) { return a.tape().constant(a.value()); }

Var straight_through(const Var& z, const Matrix& quantized) {
    require_dims(z.rows() == quantized.rows() && z.cols() == quantized.cols(), "straight_through: shape mismatch");
    return z.tape().record(quantized, {z}, [z](Tape& t, const Matrix& g) { t.accumulate(z, g); });
}

}  // namespace comet::ad
