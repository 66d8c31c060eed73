#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fdbq/matrix.hpp"
#include "fdbq/model.hpp"
#include "fdbq/quantcore.hpp"

namespace fdbq::landscape {

enum class Method {
    binarization,  // levels {-a, +a}, bit = (w >= 0)
    int2,          // levels s * {-1, 0, 1, 2}, round half away from zero
    fdb,           // levels {a2, 0, a1 + a2, a1}, split by the two thresholds
};

const char* to_string(Method m) noexcept;
Method parse_method(const std::string& s);

// Per-group parameters of one method. binarization uses p1 = a; int2 uses
// p1 = s and p2 = code offset (0 outside perturbation surfaces); fdb uses
// p1 = alpha1, p2 = alpha2.
struct GroupParams {
    double p1 = 0.0;
    double p2 = 0.0;
};

// Quantized value of one weight under a method's parameters.
double quantize_scalar(Method m, double w, const GroupParams& p) noexcept;

// Dense quantized matrix, every group with its own parameters.
Matrix quantize_layer(Method m, const quant::WeightMatrix& w, std::size_t group_size,
                      std::span<const GroupParams> params);

// Mean over probe rows and output channels of (x W^T - x W_hat^T)^2.
double proxy_mse(const quant::WeightMatrix& w, const Matrix& w_hat, const Matrix& probes);

// Standard normal probe activations, (batch x cols).
Matrix gaussian_probes(std::size_t batch, std::size_t cols, std::uint64_t seed);

// Inputs seen by one linear layer of `model` while it processes `sequences`,
// one row per token position, at most max_rows rows.
Matrix record_layer_inputs(const model::TransformerLM& model, const std::string& layer,
                           const std::vector<std::vector<int>>& sequences, std::size_t max_rows);

// Scale axes sweep linspace(factor_min, factor_max, steps) times the method's
// initial scale: mean |w| for binarization, max |w| / 2 for int2 and, for
// fdb, alpha1 = 2 s0 f1 and alpha2 = -s0 f2 over the full steps x steps grid.
struct GridSpec {
    double factor_min = 0.25;
    double factor_max = 2.0;
    std::size_t steps = 101;

    void validate() const;
    std::vector<double> factors() const;
};

struct GroupOptimum {
    GroupParams params;
    double loss = 0.0;  // ||X_g (w_g - w_hat_g)||^2 / batch
    std::size_t evaluated = 0;
};

// Exhaustive grid search of one group's parameters minimizing the group's
// own output error on the probes (probe_cols holds the group's input columns).
GroupOptimum grid_search_levels(std::span<const double> weights, const Matrix& probe_cols, Method m,
                                const GridSpec& spec);

// Same objective evaluated by direct matrix products at every grid point;
// slow, kept as the reference for the fast search.
GroupOptimum grid_search_levels_direct(std::span<const double> weights, const Matrix& probe_cols, Method m,
                                       const GridSpec& spec);

struct LayerOptimum {
    Method method = Method::fdb;
    std::vector<GroupParams> params;
    // Sum of the per-group minima divided by rows: the layer proxy error with
    // cross-group output terms left out, which is what the search minimizes.
    double min_loss = 0.0;
    // proxy_mse of the full layer at the found parameters.
    double layer_proxy_mse = 0.0;
};

LayerOptimum search_layer(const quant::WeightMatrix& w, const Matrix& probes, std::size_t group_size, Method m,
                          const GridSpec& spec);

struct LandscapeGrid {
    Method method = Method::fdb;
    std::vector<double> axis1, axis2;
    Matrix loss;  // axis1.size() x axis2.size()
    double min_loss = 0.0;
    std::size_t argmin1 = 0, argmin2 = 0;
    std::string axis1_name, axis2_name;
};

// Loss surface of the layer proxy_mse around `center`. Offsets are in units
// of each group's int2 step `unit[g]`:
//   fdb:          alpha1 + d1 * unit, alpha2 + d2 * unit
//   int2:         s * (1 + d1), code offset d2
//   binarization: a + d1 * unit, axis 2 has no effect
// Perturbed fdb pairs that lose their ordering are projected back.
LandscapeGrid perturb_surface(const quant::WeightMatrix& w, const Matrix& probes, std::size_t group_size, Method m,
                              std::span<const GroupParams> center, std::span<const double> unit,
                              std::span<const double> deltas);

// Evenly spaced offsets in [-radius, radius].
std::vector<double> symmetric_deltas(double radius, std::size_t steps);

// Mean loss over the grid divided by its minimum; 1 for a flat zero grid,
// +inf when the minimum is 0 but some cell is not.
double flatness(const LandscapeGrid& g);

std::string grid_csv(const LandscapeGrid& g);

struct MethodResult {
    LayerOptimum optimum;
    LandscapeGrid surface;
    double flatness = 0.0;
};

// Grid search plus perturbation surface for all three methods on one layer.
// Every surface uses the int2 optimum's per-group step as its offset unit.
struct LayerComparison {
    MethodResult binarization, int2, fdb;
    bool fdb_le_int2 = false;  // min(fdb) <= min(int2) + 1e-9
    bool int2_le_bin = false;  // min(int2) + 1e-9 <= min(binarization)
    bool fdb_flatter = false;  // flatness(fdb) <= flatness(int2)
};

LayerComparison compare_methods(const quant::WeightMatrix& w, const Matrix& probes, std::size_t group_size,
                                const GridSpec& spec, std::span<const double> deltas);

}  // namespace fdbq::landscape
