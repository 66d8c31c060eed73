#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fdbq/bitplane.hpp"
#include "fdbq/matrix.hpp"

namespace fdbq::quant {

// Dense real weights, rows = output channels, cols = input features.
class WeightMatrix {
public:
    WeightMatrix() = default;
    WeightMatrix(std::size_t rows, std::size_t cols);
    explicit WeightMatrix(Matrix values);
    static WeightMatrix from_rows(std::size_t rows, std::size_t cols, std::span<const double> values);

    std::size_t rows() const noexcept { return static_cast<std::size_t>(values_.rows()); }
    std::size_t cols() const noexcept { return static_cast<std::size_t>(values_.cols()); }
    double operator()(std::size_t r, std::size_t c) const { return values_(r, c); }
    double& operator()(std::size_t r, std::size_t c) { return values_(r, c); }
    const double* row(std::size_t r) const { return values_.data() + r * cols(); }

    const Matrix& values() const noexcept { return values_; }
    Matrix& values() noexcept { return values_; }

    bool all_finite() const;

private:
    Matrix values_;
};

enum class RangeMode {
    symmetric,           // codes in [-2^(k-1), 2^(k-1)-1]
    asymmetric_shifted,  // k = 2 only, codes in [-1, 2]
};

struct QuantSpec {
    int bits = 2;
    std::size_t group_size = 64;
    RangeMode range = RangeMode::asymmetric_shifted;

    int code_min() const;
    int code_max() const;
    void validate() const;
};

// Groups are contiguous blocks of `group_size` input features inside one row.
// When cols % group_size != 0 the last block of each row is a short remainder
// group with its own scale.
struct GroupLayout {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t group_size = 0;

    GroupLayout() = default;
    GroupLayout(std::size_t rows, std::size_t cols, std::size_t group_size);

    std::size_t groups_per_row() const noexcept { return (cols + group_size - 1) / group_size; }
    std::size_t group_count() const noexcept { return rows * groups_per_row(); }
    bool has_remainder() const noexcept { return cols % group_size != 0; }
    std::size_t group_of(std::size_t r, std::size_t c) const noexcept {
        return r * groups_per_row() + c / group_size;
    }
    std::size_t col_begin(std::size_t col_group) const noexcept { return col_group * group_size; }
    std::size_t col_end(std::size_t col_group) const noexcept {
        const std::size_t e = (col_group + 1) * group_size;
        return e < cols ? e : cols;
    }
};

struct GroupedIntQuant {
    GroupLayout layout;
    QuantSpec spec;
    std::vector<std::int8_t> codes;  // row-major, rows*cols
    std::vector<double> scales;      // one per group, 0 for an all-zero group

    std::size_t rows() const noexcept { return layout.rows; }
    std::size_t cols() const noexcept { return layout.cols; }
};

struct ScalePair {
    double alpha1 = 0.0;
    double alpha2 = 0.0;

    // alpha2 < 0 < alpha1 + alpha2 < alpha1
    bool ordered() const noexcept { return alpha2 < 0.0 && alpha1 + alpha2 > 0.0; }
    bool degenerate() const noexcept { return alpha1 == 0.0 && alpha2 == 0.0; }
    bool operator==(const ScalePair&) const = default;
};

struct DualBinaryWeight {
    BitPlane plane1;
    BitPlane plane2;
    std::vector<ScalePair> scales;
    GroupLayout layout;

    std::size_t rows() const noexcept { return layout.rows; }
    std::size_t cols() const noexcept { return layout.cols; }
};

struct SignBinarized {
    BitPlane bits;               // 1 encodes +1, 0 encodes -1
    std::vector<double> scales;  // per group, mean |w|
    GroupLayout layout;
};

// Unit step with the boundary assigned to 1.
inline bool unit_step(double x) noexcept { return x >= 0.0; }

GroupedIntQuant rtn_quantize(const WeightMatrix& w, const QuantSpec& spec);
WeightMatrix dequantize(const GroupedIntQuant& q);

SignBinarized sign_binarize(const WeightMatrix& w, std::size_t group_size);
WeightMatrix reconstruct(const SignBinarized& b);

// alpha1 = 2s, alpha2 = -s per group; all-zero groups get (0, 0).
std::vector<ScalePair> fdb_init(const GroupedIntQuant& q);

// Splits every weight into the two planes by the centre thresholds
// (alpha1 + alpha2) / 2 and alpha1 * b1 + alpha2 / 2. Degenerate (0, 0)
// groups produce zero bits. Throws if a non-degenerate pair is unordered.
DualBinaryWeight fdb_split(const WeightMatrix& w, std::span<const ScalePair> pairs, std::size_t group_size);
WeightMatrix fdb_reconstruct(const DualBinaryWeight& d);

// Single-scalar versions of the split, used by the fast landscape search and
// by tests. Returns (b1, b2).
struct SplitBits {
    bool b1;
    bool b2;
};
inline SplitBits split_scalar(double w, const ScalePair& p) noexcept {
    const bool b1 = unit_step(w - (p.alpha1 + p.alpha2) / 2.0);
    const bool b2 = unit_step(-(w - p.alpha1 * (b1 ? 1.0 : 0.0) - p.alpha2 / 2.0));
    return {b1, b2};
}
inline double split_level(double w, const ScalePair& p) noexcept {
    const SplitBits b = split_scalar(w, p);
    return (b.b1 ? p.alpha1 : 0.0) + (b.b2 ? p.alpha2 : 0.0);
}

}  // namespace fdbq::quant
