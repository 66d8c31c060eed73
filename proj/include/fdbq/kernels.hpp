#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fdbq/bitplane.hpp"
#include "fdbq/matrix.hpp"
#include "fdbq/quantcore.hpp"

namespace fdbq::kernel {

// Fraction of zero bits over the valid (unpadded) area.
double plane_sparsity(const BitPlane& p) noexcept;

// Sum of x[j] over set bits j in [begin, end) of row r, accumulated in
// ascending j. All-zero words are skipped.
double masked_row_sum(const BitPlane& p, std::size_t r, std::size_t begin, std::size_t end, const double* x) noexcept;

// out[r] = sum over set bits of row r of x[j].
std::vector<double> masked_gemv(const BitPlane& p, std::span<const double> x);

// y = alpha1 * (plane1 (.) x) + alpha2 * (plane2 (.) x), with the masked sums
// taken per group and scaled by that group's pair before summing over groups.
std::vector<double> fdb_forward(const quant::DualBinaryWeight& d, std::span<const double> x);
void fdb_forward_into(const quant::DualBinaryWeight& d, const double* x, double* y);

// Row-wise batched form: inputs is (n x cols), result is (n x rows).
Matrix fdb_forward_batch(const quant::DualBinaryWeight& d, const Matrix& inputs);

struct ScaleGrad {
    double d_alpha1 = 0.0;
    double d_alpha2 = 0.0;
};

// Straight-through gradient of a loss w.r.t. every group's scale pair, given
// weight_grad = dL/dW_hat (rows x cols). With the split treated as locally
// constant, dL/dalpha_i of a group is the masked sum of weight_grad over that
// group's bits in plane i.
std::vector<ScaleGrad> fdb_scale_grad(const quant::DualBinaryWeight& d, const Matrix& weight_grad);

}  // namespace fdbq::kernel
