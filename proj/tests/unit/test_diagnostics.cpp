#include <gtest/gtest.h>

#include <cmath>

#include "fdbq/diagnostics.hpp"
#include "fdbq/distill.hpp"

using namespace fdbq;
using namespace fdbq::diag;

namespace {

model::ModelConfig small_config(std::size_t vocab) {
    model::ModelConfig c;
    c.n_layers = 1;
    c.d_model = 8;
    c.n_heads = 2;
    c.d_ffn = 16;
    c.vocab_size = vocab;
    c.max_seq_len = 8;
    return c;
}

model::TransformerLM constant_logit_model(std::size_t vocab) {
    model::TransformerLM m(small_config(vocab));
    for (auto& b : m.blocks) {
        b.norm1.setOnes();
        b.norm2.setOnes();
    }
    m.norm_final.setOnes();
    return m;  // zero head: every logit is 0
}

}  // namespace

TEST(FrequencyPartition, QuantileAndTies) {
    const std::vector<std::size_t> f{5, 0, 9, 5, 1, 3};
    const auto p = frequency_partition(f, 0.4);
    // observed 5 tokens, ceil(0.4 * 5) = 2 in the head
    EXPECT_EQ(p.head, (std::vector<int>{2, 0}));
    EXPECT_EQ(p.tail, (std::vector<int>{3, 5, 4}));
    const auto q = frequency_partition(f, 0.01);
    EXPECT_EQ(q.head.size(), 1u);
    const auto r = frequency_partition(f, 0.99);
    EXPECT_EQ(r.tail.size(), 1u);
}

TEST(HeadTailBias, UniformLogitsGiveRatioOne) {
    const auto m = constant_logit_model(10);
    std::vector<std::size_t> f(10);
    for (std::size_t i = 0; i < 10; ++i) f[i] = 100 - i;
    const auto part = frequency_partition(f, 0.2);
    const std::vector<std::vector<int>> ctx{{1, 2, 3}, {4, 5}};
    const auto r = head_tail_bias(m, ctx, part);
    EXPECT_EQ(r.predictions, 5u);
    EXPECT_NEAR(r.head_count, 1.0, 1e-12);
    EXPECT_NEAR(r.tail_count, 4.0, 1e-12);
    EXPECT_NEAR(r.head_tail_ratio, 1.0, 1e-12);
    EXPECT_EQ(r.head_rank_first, 0u);
    EXPECT_EQ(r.head_rank_last, 1u);
    EXPECT_EQ(r.tail_rank_first, 2u);
    EXPECT_EQ(r.tail_rank_last, 9u);
}

TEST(HeadTailBias, DeterministicForFixedSeed) {
    const auto m = model::TransformerLM::random_init(small_config(12), 3);
    std::vector<std::size_t> f(12, 1);
    f[0] = 50;
    const auto part = frequency_partition(f, 0.25);
    const auto ctx = distill::generate_calibration(m, 10, 8, 4);
    const auto a = head_tail_bias(m, ctx, part);
    const auto b = head_tail_bias(m, distill::generate_calibration(m, 10, 8, 4), part);
    EXPECT_EQ(a.head_count, b.head_count);
    EXPECT_EQ(a.tail_count, b.tail_count);
    EXPECT_NEAR(a.head_count + a.tail_count + a.other_count, 80.0, 1e-9);
}

TEST(Spearman, KnownValuesAndDegenerateCases) {
    const std::vector<double> x{1, 2, 3, 4, 5};
    EXPECT_NEAR(spearman(x, std::vector<double>{2, 4, 6, 8, 10}), 1.0, 1e-12);
    EXPECT_NEAR(spearman(x, std::vector<double>{5, 4, 3, 2, 1}), -1.0, 1e-12);
    // Pearson of average ranks: y ranks (1, 2.5, 2.5, 4, 5)
    const double r = spearman(x, std::vector<double>{1, 2, 2, 3, 9});
    EXPECT_NEAR(r, 9.5 / std::sqrt(10.0 * 9.5), 1e-12);
    EXPECT_TRUE(std::isnan(spearman(x, std::vector<double>(5, 1.0))));
    EXPECT_TRUE(std::isnan(spearman(std::vector<double>{1}, std::vector<double>{2})));
}

TEST(EntropyLossCorrelation, ConstantModelIsFlaggedNan) {
    const auto m = constant_logit_model(6);
    const std::vector<std::vector<int>> eval{{0, 1, 2, 3, 4, 5}};
    const auto r = entropy_loss_correlation(m, m, eval);
    EXPECT_EQ(r.points.size(), 5u);
    EXPECT_TRUE(std::isnan(r.student_spearman));
    EXPECT_FALSE(r.flags.empty());
    const std::string csv = correlation_csv(r);
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "sequence,position,teacher_entropy,teacher_loss,student_entropy,student_loss");
}

TEST(EntropyLossCorrelation, RandomModelProducesFiniteCoefficients) {
    const auto m = model::TransformerLM::random_init(small_config(12), 5);
    const auto eval = distill::generate_calibration(m, 6, 8, 1);
    const auto r = entropy_loss_correlation(m, m, eval);
    EXPECT_EQ(r.points.size(), 42u);
    EXPECT_TRUE(std::isfinite(r.teacher_spearman));
    EXPECT_EQ(r.teacher_spearman, r.student_spearman);
    EXPECT_TRUE(r.flags.empty());
}
