#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "fdbq/matrix.hpp"
#include "fdbq/quantcore.hpp"

namespace fdbq::test {

inline quant::WeightMatrix gaussian_weights(std::size_t rows, std::size_t cols, std::mt19937_64& gen,
                                            double sigma = 1.0) {
    std::normal_distribution<double> nd(0.0, sigma);
    quant::WeightMatrix w(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) w(r, c) = nd(gen);
    return w;
}

inline std::vector<double> gaussian_vector(std::size_t n, std::mt19937_64& gen) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = nd(gen);
    return v;
}

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& gen, double sigma = 1.0) {
    std::normal_distribution<double> nd(0.0, sigma);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(gen);
    return m;
}

// Nearest of {a2, 0, a1 + a2, a1}. An exact tie at the middle threshold goes
// to a1 + a2, at either outer threshold to the level with plane-2 bit set.
inline double nearest_level(double w, double a1, double a2) {
    const double preference[4] = {a1 + a2, a2, 0.0, a1};
    double best = preference[0];
    for (double l : preference)
        if (std::abs(w - l) < std::abs(w - best)) best = l;
    return best;
}

}  // namespace fdbq::test
