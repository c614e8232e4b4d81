#include "comet/numerics.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace comet;

TEST(Affine, IdentityWeightReturnsInput) {
    Vector x(2);
    x << 3, 4;
    EXPECT_EQ(affine(x, Matrix::Identity(2, 2), Vector::Zero(2)), x);
}

TEST(Affine, RowWeightWithBias) {
    Vector x(2);
    x << 3, 4;
    Matrix w(1, 2);
    w << 1, 2;
    EXPECT_DOUBLE_EQ(affine(x, w, Vector::Constant(1, 1.0))(0), 12.0);
}

TEST(Affine, ZeroWeightGivesBias) {
    Vector x = fixture::randn(1, 3, 1);
    EXPECT_DOUBLE_EQ(affine(x, Matrix::Zero(1, 3), Vector::Constant(1, 5.0))(0), 5.0);
}

TEST(Affine, ShapeMismatchThrows) {
    EXPECT_THROW(affine(Vector::Zero(3), Matrix::Zero(1, 2), Vector::Zero(1)), DimensionError);
}

TEST(Softmax, SymmetricLogits) {
    Vector p = softmax(Vector::Zero(2));
    EXPECT_NEAR(p(0), 0.5, 1e-15);
    EXPECT_NEAR(p(1), 0.5, 1e-15);
}

TEST(Softmax, LogTwoGap) {
    Vector v(2);
    v << std::log(2.0), 0.0;
    Vector p = softmax(v);
    EXPECT_NEAR(p(0), 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(p(1), 1.0 / 3.0, 1e-12);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
    Vector v(2);
    v << 1000.0, 0.0;
    Vector p = softmax(v);
    EXPECT_TRUE(p.allFinite());
    EXPECT_NEAR(p(0), 1.0, 1e-12);
    EXPECT_NEAR(p(1), 0.0, 1e-12);
}

TEST(Softmax, EmptyThrows) { EXPECT_THROW(softmax(Vector(0)), ValueError); }

TEST(Softmax, SumsToOneAndShiftInvariant) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        Vector v = fixture::randn(s, 7, 1, 5.0);
        Vector p = softmax(v);
        EXPECT_NEAR(p.sum(), 1.0, 1e-9);
        Vector q = softmax((v.array() + 123.4).matrix());
        EXPECT_LT((p - q).cwiseAbs().maxCoeff(), 1e-9);
    }
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

ParamSet scalar_cell(double wu_z, double wu_c, double bu, double wc_z, double wc_c, double bc) {
    ParamSet p;
    Matrix wu(1, 2), wc(1, 2);
    wu << wu_z, wu_c;
    wc << wc_z, wc_c;
    p.set("rnn.update.weight", wu);
    p.set("rnn.update.bias", Matrix::Constant(1, 1, bu));
    p.set("rnn.candidate.weight", wc);
    p.set("rnn.candidate.bias", Matrix::Constant(1, 1, bc));
    return p;
}

}  // namespace

TEST(RecurrentSummarize, MatchesHandUnrolledTwoSteps) {
    const ParamSet p = scalar_cell(0.5, -0.3, 0.1, 0.8, 0.4, -0.2);
    Matrix z(2, 1);
    z << 0.7, -1.2;
    double c = 0.0;
    std::vector<double> expected;
    for (int t = 0; t < 2; ++t) {
        const double u = sigmoid(0.5 * z(t, 0) - 0.3 * c + 0.1);
        const double cand = std::tanh(0.8 * z(t, 0) + 0.4 * c - 0.2);
        c = (1.0 - u) * c + u * cand;
        expected.push_back(c);
    }
    FeatureSequence out = recurrent_summarize(FeatureSequence(z), p, "rnn");
    ASSERT_EQ(out.steps(), 2);
    EXPECT_NEAR(out.matrix()(0, 0), expected[0], 1e-15);
    EXPECT_NEAR(out.matrix()(1, 0), expected[1], 1e-15);
}

TEST(RecurrentSummarize, PrefixInvariantToSuffixPerturbation) {
    ParamSet p;
    init_recurrent(p, "rnn", {3, 5}, 11);
    Matrix z = fixture::randn(2, 6, 3);
    FeatureSequence base = recurrent_summarize(FeatureSequence(z), p, "rnn");
    for (Index t = 1; t < 6; ++t) {
        Matrix perturbed = z;
        perturbed.row(t).array() += 3.0;
        FeatureSequence out = recurrent_summarize(FeatureSequence(perturbed), p, "rnn");
        EXPECT_TRUE(same_matrix(out.matrix().topRows(t), base.matrix().topRows(t)));
        EXPECT_FALSE(same_matrix(out.matrix().row(t), base.matrix().row(t)));
    }
}

TEST(RecurrentSummarize, ZeroWeightsGiveFixedResponse) {
    const ParamSet p = scalar_cell(0, 0, 0, 0, 0, 0);
    FeatureSequence out = recurrent_summarize(FeatureSequence(fixture::randn(3, 5, 1)), p, "rnn");
    // Gate 1/2 and candidate 0 hold the zero initial state.
    for (Index t = 0; t < 5; ++t) EXPECT_EQ(out.matrix()(t, 0), 0.0);
}

TEST(RecurrentSummarize, BatchedEqualsPerSequence) {
    ParamSet p;
    init_recurrent(p, "rnn", {2, 3}, 5);
    Matrix a = fixture::randn(7, 4, 2), b = fixture::randn(8, 4, 2);
    Matrix stacked(8, 2);
    for (Index t = 0; t < 4; ++t) {
        stacked.row(2 * t) = a.row(t);
        stacked.row(2 * t + 1) = b.row(t);
    }
    ad::Tape tape;
    ParamBinding bound(tape, p, false);
    Matrix out = ad::recurrent_summarize(bound, "rnn", tape.constant(stacked), 2).value();
    Matrix ca = recurrent_summarize(FeatureSequence(a), p, "rnn").matrix();
    Matrix cb = recurrent_summarize(FeatureSequence(b), p, "rnn").matrix();
    for (Index t = 0; t < 4; ++t) {
        EXPECT_LT((out.row(2 * t) - ca.row(t)).cwiseAbs().maxCoeff(), 1e-15);
        EXPECT_LT((out.row(2 * t + 1) - cb.row(t)).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(CrossAttention, SingleKeyReturnsItsValue) {
    Matrix kv(1, 3);
    kv << 1, -2, 0.5;
    Matrix out = cross_attention(fixture::randn(4, 5, 3), kv);
    for (Index i = 0; i < 5; ++i) EXPECT_LT((out.row(i) - kv.row(0)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(CrossAttention, EqualScoresAverageValues) {
    // Keys double as values, so equal scores come from a query orthogonal
    // to the difference of the two rows.
    Matrix kv(2, 2);
    kv << 1, 0, 0, 1;
    Matrix q(1, 2);
    q << 2, 2;
    Matrix out = cross_attention(q, kv);
    EXPECT_NEAR(out(0, 0), 0.5, 1e-15);
    EXPECT_NEAR(out(0, 1), 0.5, 1e-15);
}

TEST(CrossAttention, ScoreGapGivesTwoWaySoftmax) {
    Matrix kv(2, 2);
    kv << 1, 0, 0, 1;
    Matrix q(1, 2);
    q << 1.3, -0.4;
    const double gap = (1.3 - -0.4) / std::sqrt(2.0);
    const double w0 = 1.0 / (1.0 + std::exp(-gap));
    Matrix out = cross_attention(q, kv);
    EXPECT_NEAR(out(0, 0), w0, 1e-14);
    EXPECT_NEAR(out(0, 1), 1.0 - w0, 1e-14);
}

TEST(CrossAttention, OutputsAreConvexCombinations) {
    Matrix kv = fixture::randn(9, 6, 3);
    Matrix out = cross_attention(fixture::randn(10, 4, 3), kv);
    ASSERT_EQ(out.rows(), 4);
    for (Index j = 0; j < 3; ++j) {
        EXPECT_LE(out.col(j).maxCoeff(), kv.col(j).maxCoeff() + 1e-12);
        EXPECT_GE(out.col(j).minCoeff(), kv.col(j).minCoeff() - 1e-12);
    }
}

TEST(CrossAttention, EmptyKeyValueThrows) { EXPECT_THROW(cross_attention(Matrix(2, 3), Matrix(0, 3)), Error); }

TEST(FiniteDifference, SquareAtThree) {
    ParamSet theta;
    theta.set("x", Matrix::Constant(1, 1, 3.0));
    ParamSet g = finite_difference_gradient([](const ParamSet& p) { return std::pow(p.at("x")(0, 0), 2); }, theta);
    EXPECT_NEAR(g.at("x")(0, 0), 6.0, 1e-7);
}

TEST(FiniteDifference, ConstantIsZero) {
    ParamSet theta;
    theta.set("x", fixture::randn(1, 2, 3));
    ParamSet g = finite_difference_gradient([](const ParamSet&) { return 4.2; }, theta);
    EXPECT_EQ(g.at("x"), Matrix::Zero(2, 3));
}

TEST(FiniteDifference, LinearIsExact) {
    const Matrix a = fixture::randn(2, 3, 2);
    ParamSet theta;
    theta.set("x", fixture::randn(3, 3, 2));
    ParamSet g = finite_difference_gradient([&a](const ParamSet& p) { return a.cwiseProduct(p.at("x")).sum(); },
                                            theta);
    EXPECT_LT((g.at("x") - a).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(FiniteDifference, NonFiniteObjectiveThrows) {
    ParamSet theta;
    theta.set("x", Matrix::Zero(1, 1));
    EXPECT_THROW(finite_difference_gradient([](const ParamSet& p) { return std::log(p.at("x")(0, 0)); }, theta),
                 Error);
}

TEST(CompareGradients, ReportsWorstEntry) {
    ParamSet a, n;
    a.set("p", (Matrix(1, 3) << 1.0, 2.0, 0.0).finished());
    n.set("p", (Matrix(1, 3) << 1.0, 1.0, 0.0).finished());
    GradientComparison c = compare_gradients(a, n);
    EXPECT_DOUBLE_EQ(c.max_relative_error, 0.5);
    EXPECT_EQ(c.worst_path, "p");
    EXPECT_EQ(c.worst_index, 1);
}

TEST(Tape, StraightThroughPassesGradientUnchanged) {
    ad::Tape tape;
    ad::Var z = tape.leaf(fixture::randn(4, 2, 3));
    const Matrix q = fixture::randn(5, 2, 3);
    ad::Var out = ad::straight_through(z, q);
    EXPECT_EQ(out.value(), q);
    const Matrix w = fixture::randn(6, 2, 3);
    tape.backward(ad::sum(ad::hadamard(out, tape.constant(w))));
    EXPECT_EQ(tape.grad(z), w);
}

TEST(Tape, StopGradientBlocksFlow) {
    ad::Tape tape;
    ad::Var z = tape.leaf(fixture::randn(4, 2, 2));
    tape.backward(ad::sum(ad::stop_gradient(ad::square(z))));
    EXPECT_EQ(tape.grad(z), Matrix::Zero(2, 2));
}
