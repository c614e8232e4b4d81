#pragma once

#include "comet/ad.hpp"
#include "comet/params.hpp"
#include "comet/types.hpp"

#include <functional>
#include <string>

namespace comet {

// Plain (non-taped) evaluations. Each one shares its arithmetic with the
// taped variant below it, so the FD oracle checks the code that trains.

Vector affine(const Vector& x, const Matrix& w, const Vector& b);

/// Max-shifted softmax; throws on an empty input.
template <typename Derived>
Vector softmax(const Eigen::MatrixBase<Derived>& logits) {
    if (logits.size() == 0) throw ValueError("softmax of an empty vector");
    const double mx = logits.maxCoeff();
    Vector e = (logits.derived().template cast<Scalar>().array() - mx).exp().matrix();
    return e / e.sum();
}

/// Shapes of a single-gate recurrent cell: update gate plus candidate.
struct RecurrentShape {
    Index input_dim = 0;
    Index context_dim = 0;
};

/// Adds "<prefix>.update.{weight,bias}" and "<prefix>.candidate.{weight,bias}".
void init_recurrent(ParamSet& params, const std::string& prefix, RecurrentShape shape, std::uint64_t seed);

/// Causal contexts c_1..c_T of one sequence, zero initial state.
FeatureSequence recurrent_summarize(const FeatureSequence& z, const ParamSet& params, const std::string& prefix);

/// Scaled dot-product attention with no learned projections; softmax over
/// key positions, one output row per query row.
FeatureSequence cross_attention(const FeatureSequence& query, const FeatureSequence& key_value);
Matrix cross_attention(const Matrix& query, const Matrix& key_value);

namespace ad {

/// Batched recurrence. `z` is time-major: rows [t*batch, (t+1)*batch) hold
/// step t of every sequence. Returns contexts in the same layout.
Var recurrent_summarize(ParamBinding& params, const std::string& prefix, const Var& z, Index batch);

Var cross_attention(const Var& query, const Var& key_value);

}  // namespace ad

using ScalarObjective = std::function<double(const ParamSet&)>;

/// Central differences (f(θ+h e_i) - f(θ-h e_i)) / 2h for every coordinate.
ParamSet finite_difference_gradient(const ScalarObjective& f, const ParamSet& theta, double h = 1e-4);

struct GradientComparison {
    double max_relative_error = 0.0;
    std::string worst_path;
    Index worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Element-wise |a - n| / max(|a|, |n|, floor), maximized over all entries.
GradientComparison compare_gradients(const ParamSet& analytic, const ParamSet& numeric, double floor = 1e-8);

}  // namespace comet
