#include <gtest/gtest.h>

#include "fdbq/checkpoint.hpp"
#include "fdbq/distill.hpp"
#include "fdbq/error.hpp"

using namespace fdbq;
using namespace fdbq::distill;

namespace {

model::ModelConfig tiny_config() {
    model::ModelConfig c;
    c.n_layers = 1;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_ffn = 32;
    c.vocab_size = 13;
    c.max_seq_len = 10;
    return c;
}

struct Pair {
    model::TransformerLM teacher, student;
};

Pair make_pair(std::uint64_t seed) {
    Pair p{model::TransformerLM::random_init(tiny_config(), seed), {}};
    p.student = p.teacher;
    model::quantize_model(p.student, model::QuantMethod::fdb, {2, 8, quant::RangeMode::asymmetric_shifted});
    return p;
}

std::vector<quant::ScalePair> all_scales(const model::TransformerLM& m) {
    std::vector<quant::ScalePair> out;
    for (const auto* l : m.linears())
        if (l->fdb()) out.insert(out.end(), l->fdb()->scales.begin(), l->fdb()->scales.end());
    return out;
}

}  // namespace

TEST(ProjectScales, RestoresOrdering) {
    const double m = 1e-8;
    EXPECT_EQ(project_scales({2.0, -1.0}, m), (quant::ScalePair{2.0, -1.0}));
    const auto a = project_scales({2.0, 0.5}, m);
    EXPECT_EQ(a.alpha2, -m);
    EXPECT_TRUE(a.ordered());
    const auto b = project_scales({0.5, -1.0}, m);
    EXPECT_EQ(b.alpha2, -1.0);
    EXPECT_EQ(b.alpha1, 1.0 + m);
    EXPECT_TRUE(b.ordered());
    EXPECT_EQ(project_scales({0.0, 0.0}, m), (quant::ScalePair{0.0, 0.0}));
}

TEST(Calibration, DeterministicWithUniformFirstToken) {
    const auto t = model::TransformerLM::random_init(tiny_config(), 1);
    const auto a = generate_calibration(t, 50, 8, 3);
    EXPECT_EQ(a, generate_calibration(t, 50, 8, 3));
    EXPECT_NE(a, generate_calibration(t, 50, 8, 4));
    std::vector<int> firsts(13, 0);
    for (const auto& s : a) {
        ASSERT_EQ(s.size(), 8u);
        for (int tok : s) ASSERT_LT(tok, 13);
        ++firsts[s[0]];
    }
    int distinct = 0;
    for (int c : firsts) distinct += c > 0;
    EXPECT_GE(distinct, 8);
    EXPECT_THROW(generate_calibration(t, 2, 11, 3), Error);
}

TEST(Finetune, ZeroLearningRateIsIdentity) {
    auto p = make_pair(2);
    const auto before = ckpt::serialize({p.student, 5, {}});
    const auto calib = generate_calibration(p.teacher, 6, 10, 1);
    DistillConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.steps = 7;
    cfg.calib_samples = 6;
    const auto r = finetune_fdb(p.student, p.teacher, calib, cfg);
    EXPECT_EQ(r.trace.size(), 7u);
    EXPECT_EQ(ckpt::serialize({p.student, 5, {}}), before);
    for (const auto& row : r.trace) EXPECT_EQ(row.alpha_drift, 0.0);
}

TEST(Finetune, FullBatchDescentKeepsOrdering) {
    auto p = make_pair(3);
    const auto calib = generate_calibration(p.teacher, 4, 10, 2);
    DistillConfig cfg;
    cfg.learning_rate = 2e-3;
    cfg.batch_size = 4;
    cfg.calib_samples = 4;
    cfg.steps = 25;
    const auto r = finetune_fdb(p.student, p.teacher, calib, cfg);
    ASSERT_EQ(r.trace.size(), 25u);
    EXPECT_LT(r.trace.back().total, r.trace.front().total);
    EXPECT_GT(r.trace.back().alpha_drift, 0.0);
    for (const auto& s : all_scales(p.student)) EXPECT_TRUE(s.ordered());
    EXPECT_EQ(r.frozen_groups, 0u);
    EXPECT_TRUE(r.warnings.empty());
}

TEST(Finetune, DeterministicForFixedSeed) {
    auto a = make_pair(4), b = make_pair(4);
    const auto calib = generate_calibration(a.teacher, 8, 10, 2);
    DistillConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.calib_samples = 8;
    cfg.epochs = 2;
    const auto ra = finetune_fdb(a.student, a.teacher, calib, cfg);
    const auto rb = finetune_fdb(b.student, b.teacher, calib, cfg);
    EXPECT_EQ(ra.trace.size(), 8u);
    EXPECT_EQ(ckpt::serialize({a.student, 0, {}}), ckpt::serialize({b.student, 0, {}}));
}

TEST(Finetune, DegenerateGroupsAreFrozenWithWarning) {
    auto t = model::TransformerLM::random_init(tiny_config(), 5);
    auto s = t;
    s.linear("layers.0.attn.q").mutable_weight().row(0).head(8).setZero();
    model::quantize_model(s, model::QuantMethod::fdb, {2, 8, quant::RangeMode::asymmetric_shifted});
    const auto calib = generate_calibration(t, 4, 10, 2);
    DistillConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.calib_samples = 4;
    cfg.steps = 3;
    const auto r = finetune_fdb(s, t, calib, cfg);
    EXPECT_EQ(r.frozen_groups, 1u);
    ASSERT_FALSE(r.warnings.empty());
    EXPECT_TRUE(s.linear("layers.0.attn.q").fdb()->scales[0].degenerate());
}

TEST(Finetune, RejectsMismatchedModels) {
    auto p = make_pair(6);
    auto c = tiny_config();
    c.d_ffn = 48;
    const auto other = model::TransformerLM::random_init(c, 1);
    const auto calib = generate_calibration(p.teacher, 2, 10, 2);
    DistillConfig cfg;
    cfg.calib_samples = 2;
    EXPECT_THROW(finetune_fdb(p.student, other, calib, cfg), Error);
    cfg.gamma = 2.0;
    EXPECT_THROW(finetune_fdb(p.student, p.teacher, calib, cfg), Error);
}

TEST(TraceCsv, Header) {
    const std::string csv = trace_csv({{0, 1.0, 2.0, 1.2, 0.0}});
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,ce,dad,total,alpha_drift");
}
