#include <gtest/gtest.h>

#include <random>

#include "fdbq/bitplane.hpp"
#include "fdbq/error.hpp"
#include "fdbq/kernels.hpp"
#include "helpers.hpp"

using namespace fdbq;

TEST(BitPlane, PackSetsWordBits) {
    const std::vector<std::uint8_t> bits{1, 0, 1, 0};
    const auto p = BitPlane::pack(1, 4, bits);
    ASSERT_EQ(p.words().size(), 1u);
    EXPECT_EQ(p.words()[0], 0b101u);
    EXPECT_EQ(p.ones_count(), 2u);
    EXPECT_EQ(p.unpack(), bits);
}

TEST(BitPlane, PaddingStaysZeroAcrossWordBoundary) {
    BitPlane p(3, 70);
    EXPECT_EQ(p.ones_count(), 0u);
    EXPECT_EQ(p.words_per_row(), 2u);
    for (std::size_t r = 0; r < 3; ++r) p.set(r, 69, true);
    EXPECT_EQ(p.ones_count(), 3u);
    for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(p.row_words(r)[1], std::uint64_t{1} << 5);
    p.set(1, 69, false);
    p.set(1, 69, false);
    EXPECT_EQ(p.ones_count(), 2u);
}

TEST(BitPlane, FromWordsRejectsPaddingBits) {
    EXPECT_THROW(BitPlane::from_words(1, 3, {0b1000}), Error);
    EXPECT_THROW(BitPlane::from_words(1, 3, {0, 0}), Error);
    EXPECT_EQ(BitPlane::from_words(1, 3, {0b101}).ones_count(), 2u);
}

TEST(PlaneSparsity, Examples) {
    EXPECT_EQ(kernel::plane_sparsity(BitPlane(2, 5)), 1.0);
    const std::vector<std::uint8_t> bits{1, 0, 1, 0};
    EXPECT_EQ(kernel::plane_sparsity(BitPlane::pack(1, 4, bits)), 0.5);
}

TEST(MaskedGemv, Examples) {
    const std::vector<std::uint8_t> bits{1, 0, 1, 0, 0, 0, 0, 0};
    const auto p = BitPlane::pack(2, 4, bits);
    const std::vector<double> x{1, 2, 3, 4};
    const auto y = kernel::masked_gemv(p, x);
    EXPECT_EQ(y[0], 4.0);
    EXPECT_EQ(y[1], 0.0);
}

TEST(MaskedRowSum, MatchesDenseOnSubranges) {
    std::mt19937_64 gen(1);
    std::bernoulli_distribution coin(0.4);
    const std::size_t cols = 200;
    std::vector<std::uint8_t> bits(cols);
    for (auto& b : bits) b = coin(gen);
    const auto p = BitPlane::pack(1, cols, bits);
    const auto x = test::gaussian_vector(cols, gen);
    std::uniform_int_distribution<std::size_t> pos(0, cols);
    for (int t = 0; t < 500; ++t) {
        std::size_t a = pos(gen), b = pos(gen);
        if (a > b) std::swap(a, b);
        double ref = 0.0;
        for (std::size_t j = a; j < b; ++j)
            if (bits[j]) ref += x[j];
        EXPECT_NEAR(kernel::masked_row_sum(p, 0, a, b, x.data()), ref, 1e-12);
    }
}

TEST(FdbForward, HandExample) {
    quant::DualBinaryWeight d;
    d.layout = quant::GroupLayout(1, 4, 4);
    const std::vector<std::uint8_t> b1{1, 0, 0, 0}, b2{1, 0, 0, 1};
    d.plane1 = BitPlane::pack(1, 4, b1);
    d.plane2 = BitPlane::pack(1, 4, b2);
    d.scales = {{2.0, -1.0}};
    EXPECT_EQ(kernel::fdb_forward(d, std::vector<double>{1, 2, 3, 4})[0], -3.0);
    EXPECT_EQ(kernel::fdb_forward(d, std::vector<double>{0, 0, 0, 0})[0], 0.0);
    EXPECT_THROW(kernel::fdb_forward(d, std::vector<double>{1, 2, 3}), Error);
}

TEST(FdbForward, MatchesReconstructedDense) {
    std::mt19937_64 gen(2);
    std::uniform_int_distribution<std::size_t> dim(1, 150), gs(1, 80);
    for (int t = 0; t < 100; ++t) {
        const std::size_t rows = dim(gen), cols = dim(gen), g = gs(gen);
        const auto w = test::gaussian_weights(rows, cols, gen);
        const auto q = quant::rtn_quantize(w, {2, g, quant::RangeMode::asymmetric_shifted});
        const auto d = quant::fdb_split(w, quant::fdb_init(q), g);
        const auto x = test::gaussian_vector(cols, gen);
        const auto y = kernel::fdb_forward(d, x);
        const Vector ref = quant::fdb_reconstruct(d).values() * Eigen::Map<const Vector>(x.data(), cols);
        for (std::size_t r = 0; r < rows; ++r)
            EXPECT_NEAR(y[r], ref[r], 1e-12 * std::max(1.0, std::abs(ref[r])));
        const Matrix X = test::gaussian_matrix(3, cols, gen);
        const Matrix Y = kernel::fdb_forward_batch(d, X);
        const Matrix R = X * quant::fdb_reconstruct(d).values().transpose();
        EXPECT_LE((Y - R).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, R.cwiseAbs().maxCoeff()));
    }
}

TEST(FdbScaleGrad, MatchesFiniteDifferencesOfQuadratic) {
    // L = 0.5 * ||X W_hat^T - T||^2 with planes held fixed.
    std::mt19937_64 gen(3);
    const std::size_t rows = 5, cols = 40, g = 16;
    const auto w = test::gaussian_weights(rows, cols, gen);
    const auto q = quant::rtn_quantize(w, {2, g, quant::RangeMode::asymmetric_shifted});
    auto d = quant::fdb_split(w, quant::fdb_init(q), g);
    const Matrix X = test::gaussian_matrix(7, cols, gen);
    const Matrix T = test::gaussian_matrix(7, rows, gen);
    auto loss = [&](const quant::DualBinaryWeight& dd) {
        return 0.5 * (X * quant::fdb_reconstruct(dd).values().transpose() - T).squaredNorm();
    };
    const Matrix dY = X * quant::fdb_reconstruct(d).values().transpose() - T;
    const Matrix G = dY.transpose() * X;
    const auto grads = kernel::fdb_scale_grad(d, G);
    const double h = 1e-5;
    for (std::size_t i = 0; i < d.scales.size(); ++i) {
        for (int which = 0; which < 2; ++which) {
            auto plus = d, minus = d;
            (which ? plus.scales[i].alpha2 : plus.scales[i].alpha1) += h;
            (which ? minus.scales[i].alpha2 : minus.scales[i].alpha1) -= h;
            const double fd = (loss(plus) - loss(minus)) / (2 * h);
            const double an = which ? grads[i].d_alpha2 : grads[i].d_alpha1;
            EXPECT_NEAR(an, fd, 1e-6 * std::max(1.0, std::abs(fd)));
        }
    }
}
