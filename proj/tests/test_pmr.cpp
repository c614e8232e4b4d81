#include "comet/numerics.hpp"
#include "comet/pmr.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace comet;

namespace {

struct Fixture {
    ModelDims dims = fixture::small_dims();
    TeacherSnapshot teacher;
    UnifiedCodebook live;
    ParamSet heads;

    explicit Fixture(Index added = 3) {
        const UnifiedCodebook v1 = UnifiedCodebook::random(5, dims.sem_dim, 0.99, 11);
        teacher = TeacherSnapshot(v1);
        Matrix codes(5 + added, dims.sem_dim);
        codes << v1.codes, fixture::randn(12, added, dims.sem_dim);
        live = UnifiedCodebook::from_codes(codes, 0.99);
        live.frozen_prefix = 5;
        for (const ModalityId& m : {kPseudoModality, ModalityId("A"), ModalityId("B")}) {
            CpcHead::init(heads, m, dims, 13);
        }
    }

    std::vector<Matrix> codes_sequences(const IndexList& rows, int count) const {
        std::vector<Matrix> out;
        for (int b = 0; b < count; ++b) {
            Matrix z(static_cast<Index>(rows.size()), dims.sem_dim);
            for (std::size_t t = 0; t < rows.size(); ++t) {
                z.row(static_cast<Index>(t)) = live.codes.row(rows[(t + static_cast<std::size_t>(b)) % rows.size()]);
            }
            out.push_back(z + fixture::randn(40 + b, z.rows(), z.cols(), 1e-3));
        }
        return out;
    }
};

}  // namespace

TEST(PseudoSequence, ExactTeacherMatch) {
    const Fixture f;
    const Matrix z = f.teacher.codes().topRows(3);
    const PseudoSequence p = build_pseudo_sequence(z, f.teacher, f.live);
    EXPECT_EQ(p.indices, (IndexList{0, 1, 2}));
    EXPECT_EQ(p.weights, Vector::Ones(3));
    EXPECT_EQ(p.embeddings, z);
    EXPECT_DOUBLE_EQ(p.teacher_fraction(), 1.0);
}

TEST(PseudoSequence, CloserNewCodeGetsDownweighted) {
    const Fixture f;
    const Matrix z = f.live.codes.row(6);
    const PseudoSequence p = build_pseudo_sequence(z, f.teacher, f.live);
    EXPECT_EQ(p.indices[0], 6);
    EXPECT_FALSE(p.from_teacher[0]);
    EXPECT_DOUBLE_EQ(p.weights(0), std::exp(-6.0));
    EXPECT_EQ(p.embeddings.row(0), f.live.codes.row(6));
}

TEST(PseudoSequence, NoAddedCodesMeansAllTeacher) {
    const Fixture f(0);
    const PseudoSequence p = build_pseudo_sequence(fixture::randn(3, 20, f.dims.sem_dim), f.teacher, f.live);
    EXPECT_DOUBLE_EQ(p.teacher_fraction(), 1.0);
    EXPECT_EQ(p.weights, Vector::Ones(20));
}

TEST(PseudoSequence, OldStepsReadTheFrozenTeacher) {
    Fixture f;
    const Matrix z = f.teacher.codes().topRows(2);
    f.live.codes.topRows(5).array() += 1e-3;  // live rows drift but keep their assignment
    const PseudoSequence p = build_pseudo_sequence(z, f.teacher, f.live);
    EXPECT_EQ(p.embeddings, z);
}

TEST(PseudoSequence, LiveSmallerThanTeacherThrows) {
    const Fixture f;
    const UnifiedCodebook small = UnifiedCodebook::random(3, f.dims.sem_dim, 0.99, 1);
    EXPECT_THROW(build_pseudo_sequence(Matrix::Zero(2, f.dims.sem_dim), f.teacher, small), ValueError);
}

TEST(StackPseudo, TimeMajorLayout) {
    const Fixture f;
    const auto seqs = f.codes_sequences({0, 6, 2, 7}, 2);
    const std::vector<PseudoSequence> p = {build_pseudo_sequence(seqs[0], f.teacher, f.live),
                                           build_pseudo_sequence(seqs[1], f.teacher, f.live)};
    const PseudoBatch batch = stack_pseudo(p);
    EXPECT_EQ(batch.batch, 2);
    EXPECT_EQ(batch.embeddings.row(2 * 1 + 1), p[1].embeddings.row(1));
    EXPECT_EQ(batch.weights(3, 0), p[0].weights(3));
    EXPECT_DOUBLE_EQ(batch.teacher_fraction, 0.5);
}

TEST(PmrCpcLoss, AllTeacherWeightsMatchUnweighted) {
    const Fixture f;
    const auto zm = f.codes_sequences({0, 1, 2, 3, 4, 0}, 3);
    const auto zp = f.codes_sequences({4, 3, 2, 1, 0, 4}, 3);
    std::vector<PseudoSequence> p;
    for (const auto& z : zm) p.push_back(build_pseudo_sequence(z, f.teacher, f.live));
    EXPECT_NEAR(pmr_cpc_loss(p, zm, zp, f.heads, "A", "B", 2, true),
                pmr_cpc_loss(p, zm, zp, f.heads, "A", "B", 2, false), 1e-12);
}

TEST(PmrCpcLoss, AllNewCodesScaleByNewCodeWeight) {
    const Fixture f;
    const auto zm = f.codes_sequences({5, 6, 7, 5, 6, 7}, 3);
    const auto zp = f.codes_sequences({1, 2, 3, 4, 0, 1}, 3);
    std::vector<PseudoSequence> p;
    for (const auto& z : zm) p.push_back(build_pseudo_sequence(z, f.teacher, f.live));
    const double weighted = pmr_cpc_loss(p, zm, zp, f.heads, "A", "B", 2, true);
    const double plain = pmr_cpc_loss(p, zm, zp, f.heads, "A", "B", 2, false);
    EXPECT_GT(plain, 0.0);
    EXPECT_NEAR(weighted, kNewCodeWeight * plain, 1e-12 * plain);
}

TEST(PmrCpcLoss, MixedSequencesStayBetweenTheExtremes) {
    const Fixture f;
    const auto zm = f.codes_sequences({0, 6, 1, 7, 2, 5}, 3);
    const auto zp = f.codes_sequences({1, 2, 3, 4, 0, 1}, 3);
    std::vector<PseudoSequence> p;
    for (const auto& z : zm) p.push_back(build_pseudo_sequence(z, f.teacher, f.live));
    const double weighted = pmr_cpc_loss(p, zm, zp, f.heads, "A", "B", 2, true);
    const double plain = pmr_cpc_loss(p, zm, zp, f.heads, "A", "B", 2, false);
    EXPECT_GT(weighted, kNewCodeWeight * plain);
    EXPECT_LT(weighted, plain);
}

TEST(PmrCpcRows, GradientReachesBothModalities) {
    const Fixture f;
    const auto zm = f.codes_sequences({0, 1, 2, 3, 4, 0}, 2);
    const auto zp = f.codes_sequences({3, 3, 1, 1, 0, 2}, 2);
    std::vector<PseudoSequence> p;
    for (const auto& z : zm) p.push_back(build_pseudo_sequence(z, f.teacher, f.live));
    const PseudoBatch batch = stack_pseudo(p);
    auto time_major = [](const std::vector<Matrix>& s) {
        Matrix out(s[0].rows() * 2, s[0].cols());
        for (Index t = 0; t < s[0].rows(); ++t) out.middleRows(2 * t, 2) << s[0].row(t), s[1].row(t);
        return out;
    };

    ad::Tape tape;
    ParamBinding bound(tape, f.heads, false);
    ad::Var zmv = tape.leaf(time_major(zm));
    ad::Var zpv = tape.leaf(time_major(zp));
    ad::Var cm = ad::recurrent_summarize(bound, CpcHead::prefix("A") + ".rnn", zmv, 2);
    ad::Var cp = ad::recurrent_summarize(bound, CpcHead::prefix("B") + ".rnn", zpv, 2);
    ad::Var loss = ad::mean(ad::pmr_cpc_rows(bound, batch, "A", zmv, cm, "B", zpv, cp, 2));
    EXPECT_NEAR(ad::scalar(loss), pmr_cpc_loss(p, zm, zp, f.heads, "A", "B", 2), 1e-12);
    tape.backward(loss);
    EXPECT_GT(tape.grad(zmv).norm(), 0.0);
    EXPECT_GT(tape.grad(zpv).norm(), 0.0);
}
