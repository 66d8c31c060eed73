#include "fdbq/kernels.hpp"

#include <bit>
#include <sstream>

#include "fdbq/error.hpp"

namespace fdbq::kernel {

double plane_sparsity(const BitPlane& p) noexcept {
    const double n = static_cast<double>(p.size());
    return (n - static_cast<double>(p.ones_count())) / n;
}

double masked_row_sum(const BitPlane& p, std::size_t r, std::size_t begin, std::size_t end, const double* x) noexcept {
    if (begin >= end) return 0.0;
    const auto words = p.row_words(r);
    const std::size_t first = begin / BitPlane::word_bits;
    const std::size_t last = (end - 1) / BitPlane::word_bits;
    double acc = 0.0;
    for (std::size_t wi = first; wi <= last; ++wi) {
        std::uint64_t w = words[wi];
        if (wi == first) w &= ~std::uint64_t{0} << (begin % BitPlane::word_bits);
        if (wi == last) {
            const std::size_t tail = end - wi * BitPlane::word_bits;
            if (tail < BitPlane::word_bits) w &= (std::uint64_t{1} << tail) - 1;
        }
        if (w == 0) continue;
        const double* xw = x + wi * BitPlane::word_bits;
        while (w != 0) {
            acc += xw[std::countr_zero(w)];
            w &= w - 1;
        }
    }
    return acc;
}

std::vector<double> masked_gemv(const BitPlane& p, std::span<const double> x) {
    if (x.size() != p.cols()) {
        std::ostringstream msg;
        msg << "masked_gemv: input length " << x.size() << " does not match plane cols " << p.cols();
        throw Error(ErrorKind::shape_mismatch, msg.str());
    }
    std::vector<double> out(p.rows());
    for (std::size_t r = 0; r < p.rows(); ++r) out[r] = masked_row_sum(p, r, 0, p.cols(), x.data());
    return out;
}

void fdb_forward_into(const quant::DualBinaryWeight& d, const double* x, double* y) {
    const auto& layout = d.layout;
    const std::size_t gpr = layout.groups_per_row();
    for (std::size_t r = 0; r < layout.rows; ++r) {
        double acc = 0.0;
        for (std::size_t cg = 0; cg < gpr; ++cg) {
            const quant::ScalePair& s = d.scales[r * gpr + cg];
            const std::size_t b = layout.col_begin(cg), e = layout.col_end(cg);
            acc += s.alpha1 * masked_row_sum(d.plane1, r, b, e, x) + s.alpha2 * masked_row_sum(d.plane2, r, b, e, x);
        }
        y[r] = acc;
    }
}

std::vector<double> fdb_forward(const quant::DualBinaryWeight& d, std::span<const double> x) {
    if (x.size() != d.cols()) {
        std::ostringstream msg;
        msg << "fdb_forward: input length " << x.size() << " does not match weight cols " << d.cols();
        throw Error(ErrorKind::shape_mismatch, msg.str());
    }
    std::vector<double> y(d.rows());
    fdb_forward_into(d, x.data(), y.data());
    return y;
}

Matrix fdb_forward_batch(const quant::DualBinaryWeight& d, const Matrix& inputs) {
    if (static_cast<std::size_t>(inputs.cols()) != d.cols())
        throw Error(ErrorKind::shape_mismatch, "fdb_forward_batch: input width does not match weight cols");
    Matrix out(inputs.rows(), static_cast<Eigen::Index>(d.rows()));
    for (Eigen::Index t = 0; t < inputs.rows(); ++t) fdb_forward_into(d, inputs.row(t).data(), out.row(t).data());
    return out;
}

std::vector<ScaleGrad> fdb_scale_grad(const quant::DualBinaryWeight& d, const Matrix& weight_grad) {
    if (static_cast<std::size_t>(weight_grad.rows()) != d.rows() || static_cast<std::size_t>(weight_grad.cols()) != d.cols())
        throw Error(ErrorKind::shape_mismatch, "fdb_scale_grad: gradient shape does not match weight");
    const auto& layout = d.layout;
    const std::size_t gpr = layout.groups_per_row();
    std::vector<ScaleGrad> grads(layout.group_count());
    for (std::size_t r = 0; r < layout.rows; ++r) {
        const double* g = weight_grad.row(static_cast<Eigen::Index>(r)).data();
        for (std::size_t cg = 0; cg < gpr; ++cg) {
            const std::size_t b = layout.col_begin(cg), e = layout.col_end(cg);
            grads[r * gpr + cg] = {masked_row_sum(d.plane1, r, b, e, g), masked_row_sum(d.plane2, r, b, e, g)};
        }
    }
    return grads;
}

}  // namespace fdbq::kernel
