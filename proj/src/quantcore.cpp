#include "fdbq/quantcore.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fdbq/error.hpp"

namespace fdbq::quant {

WeightMatrix::WeightMatrix(std::size_t rows, std::size_t cols) : values_(Matrix::Zero(rows, cols)) {
    if (rows == 0 || cols == 0) throw Error(ErrorKind::invalid_argument, "WeightMatrix needs rows >= 1 and cols >= 1");
}

WeightMatrix::WeightMatrix(Matrix values) : values_(std::move(values)) {
    if (values_.rows() == 0 || values_.cols() == 0)
        throw Error(ErrorKind::invalid_argument, "WeightMatrix needs rows >= 1 and cols >= 1");
}

WeightMatrix WeightMatrix::from_rows(std::size_t rows, std::size_t cols, std::span<const double> values) {
    if (values.size() != rows * cols) throw Error(ErrorKind::shape_mismatch, "WeightMatrix: value count does not match shape");
    WeightMatrix w(rows, cols);
    std::copy(values.begin(), values.end(), w.values_.data());
    return w;
}

bool WeightMatrix::all_finite() const { return values_.allFinite(); }

int QuantSpec::code_min() const {
    return range == RangeMode::asymmetric_shifted ? -1 : -(1 << (bits - 1));
}

int QuantSpec::code_max() const {
    return range == RangeMode::asymmetric_shifted ? 2 : (1 << (bits - 1)) - 1;
}

void QuantSpec::validate() const {
    if (bits < 1 || bits > 4) throw Error(ErrorKind::invalid_argument, "QuantSpec: bits must be in {1,2,3,4}");
    if (group_size == 0) throw Error(ErrorKind::invalid_argument, "QuantSpec: group_size must be >= 1");
    if (range == RangeMode::asymmetric_shifted && bits != 2)
        throw Error(ErrorKind::invalid_argument, "QuantSpec: asymmetric-shifted range requires bits = 2");
}

GroupLayout::GroupLayout(std::size_t rows_, std::size_t cols_, std::size_t group_size_)
    : rows(rows_), cols(cols_), group_size(group_size_) {
    if (rows == 0 || cols == 0) throw Error(ErrorKind::invalid_argument, "GroupLayout: empty shape");
    if (group_size == 0) throw Error(ErrorKind::invalid_argument, "GroupLayout: group_size must be >= 1");
}

GroupedIntQuant rtn_quantize(const WeightMatrix& w, const QuantSpec& spec) {
    spec.validate();
    GroupedIntQuant q;
    q.layout = GroupLayout(w.rows(), w.cols(), spec.group_size);
    q.spec = spec;
    q.codes.assign(w.rows() * w.cols(), 0);
    q.scales.assign(q.layout.group_count(), 0.0);

    const double half_range = static_cast<double>(1 << (spec.bits - 1));
    const double lo = spec.code_min();
    const double hi = spec.code_max();
    const std::size_t gpr = q.layout.groups_per_row();

    for (std::size_t r = 0; r < w.rows(); ++r) {
        const double* row = w.row(r);
        for (std::size_t cg = 0; cg < gpr; ++cg) {
            const std::size_t b = q.layout.col_begin(cg), e = q.layout.col_end(cg);
            double amax = 0.0;
            for (std::size_t c = b; c < e; ++c) {
                if (!std::isfinite(row[c])) {
                    std::ostringstream msg;
                    msg << "rtn_quantize: non-finite weight at (" << r << ", " << c << ") in group "
                        << r * gpr + cg;
                    throw Error(ErrorKind::numeric, msg.str());
                }
                amax = std::max(amax, std::abs(row[c]));
            }
            const std::size_t g = r * gpr + cg;
            if (amax == 0.0) continue;  // s = 0, codes stay 0
            const double s = amax / half_range;
            q.scales[g] = s;
            for (std::size_t c = b; c < e; ++c) {
                // std::round breaks ties away from zero.
                const double code = std::clamp(std::round(row[c] / s), lo, hi);
                q.codes[r * w.cols() + c] = static_cast<std::int8_t>(code);
            }
        }
    }
    return q;
}

WeightMatrix dequantize(const GroupedIntQuant& q) {
    WeightMatrix out(q.rows(), q.cols());
    for (std::size_t r = 0; r < q.rows(); ++r) {
        for (std::size_t c = 0; c < q.cols(); ++c) {
            out(r, c) = q.scales[q.layout.group_of(r, c)] * static_cast<double>(q.codes[r * q.cols() + c]);
        }
    }
    return out;
}

SignBinarized sign_binarize(const WeightMatrix& w, std::size_t group_size) {
    SignBinarized b;
    b.layout = GroupLayout(w.rows(), w.cols(), group_size);
    b.bits = BitPlane(w.rows(), w.cols());
    b.scales.assign(b.layout.group_count(), 0.0);
    const std::size_t gpr = b.layout.groups_per_row();
    for (std::size_t r = 0; r < w.rows(); ++r) {
        const double* row = w.row(r);
        for (std::size_t cg = 0; cg < gpr; ++cg) {
            const std::size_t beg = b.layout.col_begin(cg), end = b.layout.col_end(cg);
            double sum = 0.0;
            for (std::size_t c = beg; c < end; ++c) {
                sum += std::abs(row[c]);
                if (row[c] >= 0.0) b.bits.set(r, c, true);
            }
            b.scales[r * gpr + cg] = sum / static_cast<double>(end - beg);
        }
    }
    return b;
}

WeightMatrix reconstruct(const SignBinarized& b) {
    WeightMatrix out(b.layout.rows, b.layout.cols);
    for (std::size_t r = 0; r < b.layout.rows; ++r)
        for (std::size_t c = 0; c < b.layout.cols; ++c) {
            const double s = b.scales[b.layout.group_of(r, c)];
            out(r, c) = b.bits.get(r, c) ? s : -s;
        }
    return out;
}

std::vector<ScalePair> fdb_init(const GroupedIntQuant& q) {
    if (q.spec.bits != 2) throw Error(ErrorKind::invalid_argument, "fdb_init: requires a 2-bit quantization");
    std::vector<ScalePair> pairs(q.scales.size());
    for (std::size_t g = 0; g < q.scales.size(); ++g) {
        const double s = q.scales[g];
        pairs[g] = s == 0.0 ? ScalePair{} : ScalePair{2.0 * s, -s};
    }
    return pairs;
}

DualBinaryWeight fdb_split(const WeightMatrix& w, std::span<const ScalePair> pairs, std::size_t group_size) {
    DualBinaryWeight d;
    d.layout = GroupLayout(w.rows(), w.cols(), group_size);
    if (pairs.size() != d.layout.group_count()) {
        std::ostringstream msg;
        msg << "fdb_split: expected " << d.layout.group_count() << " scale pairs, got " << pairs.size();
        throw Error(ErrorKind::shape_mismatch, msg.str());
    }
    for (std::size_t g = 0; g < pairs.size(); ++g) {
        if (!pairs[g].degenerate() && !pairs[g].ordered()) {
            std::ostringstream msg;
            msg << "fdb_split: scale pair of group " << g << " violates alpha2 < 0 < alpha1 + alpha2 (alpha1="
                << pairs[g].alpha1 << ", alpha2=" << pairs[g].alpha2 << ")";
            throw Error(ErrorKind::invalid_argument, msg.str());
        }
    }
    d.scales.assign(pairs.begin(), pairs.end());
    d.plane1 = BitPlane(w.rows(), w.cols());
    d.plane2 = BitPlane(w.rows(), w.cols());
    const std::size_t gpr = d.layout.groups_per_row();
    for (std::size_t r = 0; r < w.rows(); ++r) {
        const double* row = w.row(r);
        for (std::size_t cg = 0; cg < gpr; ++cg) {
            const ScalePair& p = pairs[r * gpr + cg];
            if (p.degenerate()) continue;
            for (std::size_t c = d.layout.col_begin(cg); c < d.layout.col_end(cg); ++c) {
                const SplitBits bits = split_scalar(row[c], p);
                if (bits.b1) d.plane1.set(r, c, true);
                if (bits.b2) d.plane2.set(r, c, true);
            }
        }
    }
    return d;
}

WeightMatrix fdb_reconstruct(const DualBinaryWeight& d) {
    WeightMatrix out(d.rows(), d.cols());
    for (std::size_t r = 0; r < d.rows(); ++r)
        for (std::size_t c = 0; c < d.cols(); ++c) {
            const ScalePair& p = d.scales[d.layout.group_of(r, c)];
            out(r, c) = (d.plane1.get(r, c) ? p.alpha1 : 0.0) + (d.plane2.get(r, c) ? p.alpha2 : 0.0);
        }
    return out;
}

}  // namespace fdbq::quant
