#include "comet/synthgen.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace comet;

TEST(GenerateScript, SameSeedSameScript) {
    EXPECT_EQ(generate_script(8, 64, 17), generate_script(8, 64, 17));
    EXPECT_NE(generate_script(8, 64, 17), generate_script(8, 64, 18));
}

TEST(GenerateScript, FullPersistenceIsConstant) {
    const SemanticScript s = generate_script(5, 40, 3, 1.0);
    for (int c : s.codes) EXPECT_EQ(c, s.codes.front());
}

TEST(GenerateScript, NoPersistenceTwoCategoriesSwitchRate) {
    // With C = 2 and p_stay = 0 every step switches; use p_stay = 0.5 to get
    // the stated 0.5 switch rate and check it against binomial error bars.
    const Index steps = 20000;
    const SemanticScript s = generate_script(2, steps, 9, 0.5);
    int switches = 0;
    for (Index t = 1; t < steps; ++t) switches += s.codes[t] != s.codes[t - 1];
    const double n = static_cast<double>(steps - 1);
    const double rate = switches / n;
    EXPECT_NEAR(rate, 0.5, 3.0 * std::sqrt(0.25 / n));
    const SemanticScript always = generate_script(2, 200, 9, 0.0);
    for (Index t = 1; t < 200; ++t) EXPECT_NE(always.codes[t], always.codes[t - 1]);
}

TEST(GenerateScript, IdsInRange) {
    const SemanticScript s = generate_script(6, 500, 2, 0.3);
    for (int c : s.codes) {
        EXPECT_GE(c, 0);
        EXPECT_LT(c, 6);
    }
}

TEST(GenerateScript, TooFewCategoriesThrows) { EXPECT_THROW(generate_script(1, 10, 0), ValueError); }

namespace {

ModalityRenderer plain_renderer(double noise) {
    return ModalityRenderer("A", fixture::randn(4, 5, 32, 3.0), Matrix(), 0.0, noise);
}

}  // namespace

TEST(Render, NoiselessWithoutNuisanceEqualsEmbedding) {
    const ModalityRenderer r = plain_renderer(0.0);
    const SemanticScript s = generate_script(5, 16, 1);
    const FeatureSequence x = render(s, r, 7);
    for (Index t = 0; t < 16; ++t) EXPECT_EQ(x.matrix().row(t), r.embeddings().row(s.codes[t]));
}

TEST(Render, ChangingOneStepOnlyChangesThatRow) {
    RendererOptions o;
    const ModalityRenderer r = ModalityRenderer::create("A", o, 3);
    SemanticScript s = generate_script(8, 16, 1);
    SemanticScript other = s;
    other.codes[5] = (s.codes[5] + 1) % 8;
    const Matrix a = render(s, r, 11).matrix();
    const Matrix b = render(other, r, 11).matrix();
    for (Index t = 0; t < 16; ++t) {
        if (t == 5) EXPECT_FALSE(same_matrix(a.row(t), b.row(t)));
        else EXPECT_TRUE(same_matrix(a.row(t), b.row(t)));
    }
}

TEST(Render, NoiseScaleMatchesChiMean) {
    const ModalityRenderer r = plain_renderer(0.1);
    const SemanticScript s = generate_script(5, 4000, 2);
    const Matrix x = render(s, r, 5).matrix();
    double total = 0.0;
    for (Index t = 0; t < x.rows(); ++t) total += (x.row(t) - r.embeddings().row(s.codes[t])).norm();
    const double mean = total / static_cast<double>(x.rows());
    EXPECT_NEAR(mean, 0.1 * std::sqrt(32.0), 0.1 * 0.1 * std::sqrt(32.0));
}

TEST(Render, UnknownCategoryThrows) {
    SemanticScript s{{0, 9}, 10};
    EXPECT_THROW(render(s, plain_renderer(0.0), 1), ValueError);
}

TEST(Render, NoiselessNearestRowRecoversScript) {
    const ModalityRenderer r = plain_renderer(0.0);
    const SemanticScript s = generate_script(5, 64, 8);
    const Matrix x = render(s, r, 3).matrix();
    for (Index t = 0; t < x.rows(); ++t) {
        Index best = 0;
        (r.embeddings().rowwise() - x.row(t)).rowwise().squaredNorm().minCoeff(&best);
        EXPECT_EQ(best, s.codes[t]);
    }
}

TEST(ModalityRenderer, RowsWellSeparated) {
    RendererOptions o;
    const ModalityRenderer r = ModalityRenderer::create("B", o, 4);
    const Matrix& e = r.embeddings();
    for (Index i = 0; i < e.rows(); ++i) {
        for (Index j = i + 1; j < e.rows(); ++j) EXPECT_GT((e.row(i) - e.row(j)).norm(), 10.0 * o.noise);
    }
}

TEST(ModalityRenderer, CloseRowsRejected) {
    Matrix e = Matrix::Zero(2, 3);
    e(1, 0) = 0.5;
    EXPECT_THROW(ModalityRenderer("A", e, Matrix(), 0.0, 0.1), ValueError);
}

namespace {

StageSpec spec_for(int stage, const ModalityId& partner, const CategoryPlan& plan, int n = 40) {
    StageSpec s;
    s.stage = stage;
    s.mediator = "A";
    s.partner = partner;
    s.categories = plan;
    s.train_pairs = n;
    s.eval_pairs = 10;
    return s;
}

}  // namespace

TEST(GenerateStageDataset, MediatorRendererSharedAcrossStages) {
    RendererBank bank(RendererOptions{}, 5, "A");
    const auto plans = plan_categories({8, 8}, {0.0, 0.25});
    const StageDataset d1 = generate_stage_dataset(spec_for(1, "B", plans[0]), bank, 1);
    RendererBank other_bank(RendererOptions{}, 5, "A");
    const StageDataset d2 = generate_stage_dataset(spec_for(2, "C", plans[1]), other_bank, 2);
    EXPECT_EQ(d1.mediator_fingerprint, d2.mediator_fingerprint);
    EXPECT_NE(d1.partner_fingerprint, d2.partner_fingerprint);
}

TEST(GenerateStageDataset, CategoryRangesRespectSharedSubset) {
    RendererBank bank(RendererOptions{}, 5, "A");
    const auto plans = plan_categories({8, 8}, {0.0, 0.25});
    EXPECT_EQ(plans[1].lo, 8);
    EXPECT_EQ(plans[1].shared, (std::vector<int>{0, 1}));
    const StageDataset d2 = generate_stage_dataset(spec_for(2, "C", plans[1], 200), bank, 2);
    std::set<int> seen;
    for (const auto& p : d2.train) seen.insert(p.script.begin(), p.script.end());
    for (int c : seen) EXPECT_TRUE(c < 2 || (c >= plans[1].lo && c < plans[1].hi)) << c;
}

TEST(GenerateStageDataset, DisjointPlanStaysAboveFirstStage) {
    const auto plans = plan_categories({8, 8}, {0.0, 0.0});
    RendererBank bank(RendererOptions{}, 5, "A");
    const StageDataset d2 = generate_stage_dataset(spec_for(2, "C", plans[1]), bank, 2);
    for (const auto& p : d2.train) {
        for (int c : p.script) EXPECT_GE(c, 8);
    }
}

TEST(GenerateStageDataset, PairsShareScript) {
    RendererOptions o;
    o.noise = 0.0;
    o.nuisance_scale = 0.0;
    RendererBank bank(o, 5, "A");
    const StageDataset d = generate_stage_dataset(spec_for(1, "B", {0, 8, {}}), bank, 1);
    const Matrix& ea = bank.get("A").embeddings();
    const Matrix& eb = bank.get("B").embeddings();
    for (const auto& p : d.train) {
        for (std::size_t t = 0; t < p.script.size(); ++t) {
            EXPECT_EQ(p.mediator.matrix().row(t), ea.row(p.script[t]));
            EXPECT_EQ(p.partner.matrix().row(t), eb.row(p.script[t]));
        }
    }
}

TEST(GenerateStageDataset, ByteIdenticalOnRegeneration) {
    const StageSpec spec = [] {
        StageSpec s = spec_for(1, "B", {0, 8, {}}, 100);
        s.steps = 16;
        return s;
    }();
    RendererBank a(RendererOptions{}, 3, "A"), b(RendererOptions{}, 3, "A");
    EXPECT_EQ(serialize_dataset(generate_stage_dataset(spec, a, 9)), serialize_dataset(generate_stage_dataset(spec, b, 9)));
}

TEST(GenerateStageDataset, WrongMediatorThrows) {
    RendererBank bank(RendererOptions{}, 3, "A");
    StageSpec s = spec_for(1, "B", {0, 8, {}});
    s.mediator = "C";
    EXPECT_THROW(generate_stage_dataset(s, bank, 1), ValueError);
}

TEST(DatasetSerialization, RoundTrip) {
    RendererBank bank(RendererOptions{}, 3, "A");
    const StageDataset d = generate_stage_dataset(spec_for(1, "B", {0, 8, {}}, 5), bank, 2);
    const StageDataset back = deserialize_dataset(serialize_dataset(d));
    EXPECT_EQ(serialize_dataset(back), serialize_dataset(d));
    ASSERT_EQ(back.train.size(), d.train.size());
    EXPECT_EQ(back.train[3].partner, d.train[3].partner);
    EXPECT_EQ(back.eval[1].script, d.eval[1].script);
}

TEST(DatasetSerialization, TruncatedRejected) {
    RendererBank bank(RendererOptions{}, 3, "A");
    std::string bytes = serialize_dataset(generate_stage_dataset(spec_for(1, "B", {0, 8, {}}, 5), bank, 2));
    bytes.resize(bytes.size() - 9);
    EXPECT_THROW(deserialize_dataset(bytes), Error);
}
