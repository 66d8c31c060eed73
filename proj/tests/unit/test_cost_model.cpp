#include <gtest/gtest.h>

#include "fdbq/cost_model.hpp"
#include "fdbq/error.hpp"

using namespace fdbq::kernel;

TEST(CostModel, Llama7bFp16MatchesHandCount) {
    const auto r = cost_model(llama1_7b(), 32, CostMethod::fp16, {});
    const double h = 4096, f = 11008, v = 32000, L = 32, T = 32;
    const double weights = 2 * T * L * (4 * h * h + 3 * h * f);
    const double attention = 2 * L * (2 * T * T * h);
    const double head = 2 * T * v * h;
    EXPECT_DOUBLE_EQ(r.flops_fp, weights + attention + head);
    EXPECT_DOUBLE_EQ(r.equiv_flops_method, r.flops_fp);
    EXPECT_GT(r.flops_fp, 381e9);
    EXPECT_LT(r.flops_fp, 466e9);
}

TEST(CostModel, OrderingWithReferenceSparsities) {
    const auto a = llama1_7b();
    const double fp = cost_model(a, 32, CostMethod::fp16, {}).equiv_flops_method;
    const double b3 = cost_model(a, 32, CostMethod::int3, PlaneSparsity::uniform(0.0)).equiv_flops_method;
    const double b2 = cost_model(a, 32, CostMethod::int2, PlaneSparsity::uniform(0.483)).equiv_flops_method;
    const double bin = cost_model(a, 32, CostMethod::binarization, {}).equiv_flops_method;
    const double fdb = cost_model(a, 32, CostMethod::fdb, {0.628, 0.628}).equiv_flops_method;
    EXPECT_LT(fdb, bin);
    EXPECT_LT(bin, b2);
    EXPECT_LT(b2, b3);
    EXPECT_LT(b3, fp);
}

TEST(CostModel, ZeroSequenceGivesZeroFlops) {
    for (auto m : {CostMethod::fp16, CostMethod::int2, CostMethod::fdb}) {
        const auto r = cost_model(llama1_7b(), 0, m, PlaneSparsity::uniform(0.5));
        EXPECT_EQ(r.flops_fp, 0.0);
        EXPECT_EQ(r.equiv_flops_method, 0.0);
    }
}

TEST(CostModel, WeightFlopsLinearInSequenceLength) {
    const auto a = toy_arch();
    const auto r1 = cost_model(a, 10, CostMethod::fdb, {0.3, 0.6});
    const auto r3 = cost_model(a, 30, CostMethod::fdb, {0.3, 0.6});
    EXPECT_DOUBLE_EQ(r3.flops_weight_fp, 3 * r1.flops_weight_fp);
}

TEST(CostModel, MonotoneInSparsity) {
    const auto a = llama1_7b();
    double prev = 1e300;
    for (double s = 0.0; s <= 1.0; s += 0.125) {
        const double e = cost_model(a, 32, CostMethod::fdb, PlaneSparsity::uniform(s)).equiv_flops_method;
        EXPECT_LT(e, prev);
        prev = e;
    }
}

TEST(CostModel, SignBinarizationReportsNoSparsity) {
    const auto r = cost_model(llama1_7b(), 32, CostMethod::binarization, PlaneSparsity::uniform(0.7));
    EXPECT_EQ(r.sparsity_avg, 0.0);
}

TEST(CostModel, RejectsBadInputs) {
    EXPECT_THROW(cost_model(llama1_7b(), 32, CostMethod::fdb, {1.5, 0.0}), fdbq::Error);
    EXPECT_THROW(arch_preset("gpt-5"), fdbq::Error);
    EXPECT_THROW(parse_cost_method("4bit"), fdbq::Error);
    EXPECT_EQ(parse_cost_method("2bit"), CostMethod::int2);
}
