#include "comet/numerics.hpp"

#include <cmath>

namespace comet {

Vector affine(const Vector& x, const Matrix& w, const Vector& b) {
    require_dims(w.cols() == x.size(), "affine: W has " + std::to_string(w.cols()) + " columns but x has " +
                                           std::to_string(x.size()) + " entries");
    require_dims(w.rows() == b.size(), "affine: bias length does not match W rows");
    return w * x + b;
}

void init_recurrent(ParamSet& params, const std::string& prefix, RecurrentShape shape, std::uint64_t seed) {
    const Index fan_in = shape.input_dim + shape.context_dim;
    params.set(prefix + ".update.weight", init_weight(seed, prefix + ".update.weight", shape.context_dim, fan_in));
    params.set(prefix + ".update.bias", Matrix::Zero(1, shape.context_dim));
    params.set(prefix + ".candidate.weight",
               init_weight(seed, prefix + ".candidate.weight", shape.context_dim, fan_in));
    params.set(prefix + ".candidate.bias", Matrix::Zero(1, shape.context_dim));
}

namespace ad {

Var recurrent_summarize(ParamBinding& params, const std::string& prefix, const Var& z, Index batch) {
    require_dims(batch >= 1 && z.rows() % batch == 0 && z.rows() >= batch,
                 "recurrent_summarize: rows must be a positive multiple of the batch size");
    const Index steps = z.rows() / batch;
    Var wu = params[prefix + ".update.weight"];
    Var bu = params[prefix + ".update.bias"];
    Var wc = params[prefix + ".candidate.weight"];
    Var bc = params[prefix + ".candidate.bias"];
    const Index context_dim = wu.rows();
    require_dims(wu.cols() == z.cols() + context_dim, "recurrent_summarize: input dimension mismatch");

    Tape& tape = z.tape();
    Var state = tape.constant(Matrix::Zero(batch, context_dim));
    std::vector<Var> contexts;
    contexts.reserve(static_cast<std::size_t>(steps));
    for (Index t = 0; t < steps; ++t) {
        Var input = concat_cols({row_block(z, t * batch, batch), state});
        Var gate = sigmoid(affine(input, wu, bu));
        Var candidate = tanh(affine(input, wc, bc));
        state = add(state, hadamard(gate, sub(candidate, state)));
        contexts.push_back(state);
    }
    return concat_rows(contexts);
}

Var cross_attention(const Var& query, const Var& key_value) {
    require_dims(key_value.rows() >= 1, "cross_attention: empty key/value sequence");
    require_dims(query.cols() == key_value.cols(), "cross_attention: feature dimension mismatch");
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(query.cols()));
    Var weights = softmax_rows(scale(matmul_nt(query, key_value), inv_sqrt_d));
    return matmul(weights, key_value);
}

}  // namespace ad

FeatureSequence recurrent_summarize(const FeatureSequence& z, const ParamSet& params, const std::string& prefix) {
    ad::Tape tape;
    ParamBinding bound(tape, params, false);
    ad::Var out = ad::recurrent_summarize(bound, prefix, tape.constant(z.matrix()), 1);
    return FeatureSequence(out.value());
}

Matrix cross_attention(const Matrix& query, const Matrix& key_value) {
    ad::Tape tape;
    return ad::cross_attention(tape.constant(query), tape.constant(key_value)).value();
}

FeatureSequence cross_attention(const FeatureSequence& query, const FeatureSequence& key_value) {
    return FeatureSequence(cross_attention(query.matrix(), key_value.matrix()));
}

ParamSet finite_difference_gradient(const ScalarObjective& f, const ParamSet& theta, double h) {
    if (!(h > 0.0)) throw ValueError("finite difference step must be positive");
    ParamSet probe = theta;
    ParamSet grad = theta.zeros_like();
    for (const auto& [path, value] : theta) {
        Matrix& slot = probe.at(path);
        Matrix& out = grad.at(path);
        for (Index i = 0; i < value.size(); ++i) {
            const double original = slot.data()[i];
            slot.data()[i] = original + h;
            const double up = f(probe);
            slot.data()[i] = original - h;
            const double down = f(probe);
            slot.data()[i] = original;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw ValueError("objective not finite while differencing " + path);
            }
            out.data()[i] = (up - down) / (2.0 * h);
        }
    }
    return grad;
}

GradientComparison compare_gradients(const ParamSet& analytic, const ParamSet& numeric, double floor) {
    GradientComparison worst;
    for (const auto& [path, n] : numeric) {
        const Matrix& a = analytic.at(path);
        require_dims(a.rows() == n.rows() && a.cols() == n.cols(), "gradient shape mismatch at " + path);
        for (Index i = 0; i < n.size(); ++i) {
            const double av = a.data()[i];
            const double nv = n.data()[i];
            const double denom = std::max({std::abs(av), std::abs(nv), floor});
            const double err = std::abs(av - nv) / denom;
            if (err > worst.max_relative_error || worst.worst_index < 0) {
                worst = GradientComparison{err, path, i, av, nv};
            }
        }
    }
    return worst;
}

}  // namespace comet
