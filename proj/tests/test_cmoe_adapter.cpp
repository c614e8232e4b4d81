#include "comet/cmoe_adapter.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace comet;

namespace {

ModelDims scalar_dims(int experts) {
    ModelDims d = fixture::small_dims();
    d.sem_dim = 1;
    d.experts = experts;
    return d;
}

void set_layer(ParamSet& p, const std::string& prefix, double w, double b) {
    p.at(prefix + ".weight") = Matrix::Constant(1, 1, w);
    p.at(prefix + ".bias") = Matrix::Constant(1, 1, b);
}

}  // namespace

TEST(ExpertForward, IdentityLayersPassInput) {
    ModelDims d = fixture::small_dims();
    d.experts = 1;
    ParamSet p;
    init_adapter(p, d, 1);
    ensure_modality(p, d, "A", 1);
    for (const std::string pre : {common_prefix(0), specific_prefix(0, "A")}) {
        p.at(pre + ".weight") = Matrix::Identity(d.sem_dim, d.sem_dim);
        p.at(pre + ".bias").setZero();
    }
    const Vector h = fixture::randn(2, d.sem_dim, 1);
    EXPECT_EQ(expert_forward(h, "A", 0, p, AdapterLayout::from(d)), h);
}

TEST(ExpertForward, SpecificThenCommon) {
    ModelDims d = fixture::small_dims();
    d.sem_dim = 2;
    d.experts = 1;
    ParamSet p;
    init_adapter(p, d, 1);
    ensure_modality(p, d, "A", 1);
    p.at(specific_prefix(0, "A") + ".weight") = 2.0 * Matrix::Identity(2, 2);
    p.at(specific_prefix(0, "A") + ".bias").setZero();
    p.at(common_prefix(0) + ".weight") = Matrix::Identity(2, 2);
    p.at(common_prefix(0) + ".bias").setOnes();
    const Vector out = expert_forward(Vector::Ones(2), "A", 0, p, AdapterLayout::from(d));
    EXPECT_EQ(out, Vector::Constant(2, 3.0));
}

TEST(ExpertForward, ModalitiesShareCommonButNotSpecific) {
    const ModelDims d = fixture::small_dims();
    ParamSet p;
    init_adapter(p, d, 1);
    ensure_modality(p, d, "A", 1);
    ensure_modality(p, d, "B", 1);
    const Vector h = fixture::randn(4, d.sem_dim, 1);
    const AdapterLayout layout = AdapterLayout::from(d);
    EXPECT_NE(expert_forward(h, "A", 0, p, layout), expert_forward(h, "B", 0, p, layout));

    ad::Tape tape;
    ParamBinding bound(tape, p, true);
    ad::Var ha = tape.constant(fixture::randn(5, 3, d.sem_dim));
    tape.backward(ad::add(ad::sum(ad::expert_forward(bound, "A", 0, ha, layout)),
                          ad::sum(ad::expert_forward(bound, "B", 0, tape.constant(Matrix::Zero(3, d.sem_dim)), layout))));
    ParamSet g = bound.gradients();
    EXPECT_GT(g.at(common_prefix(0) + ".weight").cwiseAbs().sum(), 0.0);
    EXPECT_GT(g.at(specific_prefix(0, "A") + ".weight").cwiseAbs().sum(), 0.0);
    // Zero input for B: its specific weight only sees a zero activation.
    EXPECT_EQ(g.at(specific_prefix(0, "B") + ".weight"), Matrix::Zero(d.sem_dim, d.sem_dim));
}

TEST(ExpertForward, UnknownModalityThrows) {
    const ModelDims d = fixture::small_dims();
    ParamSet p;
    init_adapter(p, d, 1);
    EXPECT_THROW(expert_forward(Vector::Zero(d.sem_dim), "Z", 0, p, AdapterLayout::from(d)), Error);
}

TEST(AdapterForward, SingleExpertHasUnitGate) {
    ModelDims d = fixture::small_dims();
    d.experts = 1;
    ParamSet p;
    init_adapter(p, d, 2);
    ensure_modality(p, d, "A", 2);
    const Matrix h = fixture::randn(3, 4, d.sem_dim);
    const AdapterOutput out = adapter_forward(FeatureSequence(h), "A", p, AdapterLayout::from(d));
    EXPECT_EQ(out.gates, Matrix::Ones(4, 1));
    for (Index t = 0; t < 4; ++t) {
        const Vector e = expert_forward(h.row(t).transpose(), "A", 0, p, AdapterLayout::from(d));
        EXPECT_LT((out.z.matrix().row(t).transpose() - e).cwiseAbs().maxCoeff(), 1e-14);
    }
}

TEST(AdapterForward, ConvexCombinationOfExperts) {
    const ModelDims d = scalar_dims(2);
    ParamSet p;
    init_adapter(p, d, 1);
    ensure_modality(p, d, "A", 1);
    // Router logits (0, ln 3) on h = 1 give gates (0.25, 0.75).
    p.at(kRouterPrefix + ".weight") = (Matrix(2, 1) << 0.0, std::log(3.0)).finished();
    p.at(kRouterPrefix + ".bias").setZero();
    set_layer(p, specific_prefix(0, "A"), 1.0, 0.0);
    set_layer(p, specific_prefix(1, "A"), 1.0, 0.0);
    set_layer(p, common_prefix(0), 4.0, 0.0);
    set_layer(p, common_prefix(1), 8.0, 0.0);
    const AdapterOutput out = adapter_forward(FeatureSequence(Matrix::Ones(1, 1)), "A", p, AdapterLayout::from(d));
    EXPECT_NEAR(out.gates(0, 0), 0.25, 1e-15);
    EXPECT_NEAR(out.z.matrix()(0, 0), 7.0, 1e-14);
}

TEST(AdapterForward, SaturatedRouterSelectsOneExpert) {
    const ModelDims d = fixture::small_dims();
    ParamSet p;
    init_adapter(p, d, 1);
    ensure_modality(p, d, "A", 1);
    p.at(kRouterPrefix + ".weight").setZero();
    Matrix bias = Matrix::Constant(1, d.experts, -1000.0);
    bias(0, 1) = 1000.0;
    p.at(kRouterPrefix + ".bias") = bias;
    const Matrix h = fixture::randn(5, 3, d.sem_dim);
    const AdapterOutput out = adapter_forward(FeatureSequence(h), "A", p, AdapterLayout::from(d));
    for (Index t = 0; t < 3; ++t) {
        const Vector e = expert_forward(h.row(t).transpose(), "A", 1, p, AdapterLayout::from(d));
        EXPECT_LT((out.z.matrix().row(t).transpose() - e).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(AdapterForward, GateRowsSumToOne) {
    const ModelDims d = fixture::small_dims();
    ParamSet p;
    init_adapter(p, d, 4);
    ensure_modality(p, d, "A", 4);
    const AdapterOutput out =
        adapter_forward(FeatureSequence(fixture::randn(6, 10, d.sem_dim, 3.0)), "A", p, AdapterLayout::from(d));
    for (Index t = 0; t < 10; ++t) EXPECT_NEAR(out.gates.row(t).sum(), 1.0, 1e-9);
}

TEST(EnsureModality, CreatesLayersOnce) {
    const ModelDims d = fixture::small_dims();
    ParamSet p;
    init_adapter(p, d, 1);
    EXPECT_FALSE(has_modality(p, "A"));
    EXPECT_TRUE(ensure_modality(p, d, "A", 1));
    EXPECT_TRUE(has_modality(p, "A"));
    const ParamSet before = p;
    EXPECT_FALSE(ensure_modality(p, d, "A", 99));
    EXPECT_EQ(p, before);
}

TEST(GateLoadLoss, UniformGatesAreBalanced) {
    EXPECT_NEAR(gate_load_loss(Matrix::Constant(5, 4, 0.25)), 0.0, 1e-15);
}

TEST(GateLoadLoss, AllOnFirstExpert) {
    const Matrix g = (Matrix(2, 2) << 1, 0, 1, 0).finished();
    EXPECT_NEAR(gate_load_loss(g), 1.0, 1e-12);
}

TEST(GateLoadLoss, SkewedGates) {
    Matrix g(4, 2);
    g.col(0).setConstant(0.75);
    g.col(1).setConstant(0.25);
    EXPECT_NEAR(gate_load_loss(g), 0.25, 1e-12);
}

TEST(GateLoadLoss, NonnegativeOnRandomGates) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        Matrix logits = fixture::randn(s, 7, 3);
        Matrix g = logits.array().exp();
        for (Index i = 0; i < g.rows(); ++i) g.row(i) /= g.row(i).sum();
        EXPECT_GE(gate_load_loss(g), 0.0);
    }
}
