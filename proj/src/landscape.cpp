#include "fdbq/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "fdbq/error.hpp"
#include "fdbq/rng.hpp"

namespace fdbq::landscape {

const char* to_string(Method m) noexcept {
    switch (m) {
        case Method::binarization: return "binarization";
        case Method::int2: return "2bit";
        case Method::fdb: return "fdb";
    }
    return "unknown";
}

Method parse_method(const std::string& s) {
    if (s == "binarization" || s == "sign") return Method::binarization;
    if (s == "2bit" || s == "int2") return Method::int2;
    if (s == "fdb") return Method::fdb;
    throw Error(ErrorKind::invalid_argument, "unknown landscape method '" + s + "' (expected binarization, 2bit, fdb)");
}

namespace {

// Index of the level a weight maps to, in ascending level order. Monotone
// non-decreasing in w for every method.
int level_index(Method m, double w, const GroupParams& p) noexcept {
    switch (m) {
        case Method::binarization: return quant::unit_step(w) ? 1 : 0;
        case Method::int2: {
            const double c = std::round(w / p.p1 - p.p2);
            return static_cast<int>(std::clamp(c, -1.0, 2.0)) + 1;
        }
        case Method::fdb: {
            const auto b = quant::split_scalar(w, {p.p1, p.p2});
            if (b.b1) return b.b2 ? 2 : 3;
            return b.b2 ? 0 : 1;
        }
    }
    return 0;
}

int level_count(Method m) noexcept { return m == Method::binarization ? 2 : 4; }

void levels_of(Method m, const GroupParams& p, double* out) noexcept {
    switch (m) {
        case Method::binarization:
            out[0] = -p.p1;
            out[1] = p.p1;
            break;
        case Method::int2:
            for (int k = 0; k < 4; ++k) out[k] = p.p1 * (static_cast<double>(k - 1) + p.p2);
            break;
        case Method::fdb:
            out[0] = p.p2;
            out[1] = 0.0;
            out[2] = p.p1 + p.p2;
            out[3] = p.p1;
            break;
    }
}

bool fdb_valid(const GroupParams& p) noexcept { return p.p2 < 0.0 && p.p1 + p.p2 > 0.0; }

double mean_abs(std::span<const double> w) {
    double s = 0.0;
    for (double v : w) s += std::abs(v);
    return s / static_cast<double>(w.size());
}

double max_abs(std::span<const double> w) {
    double s = 0.0;
    for (double v : w) s = std::max(s, std::abs(v));
    return s;
}

// Candidate parameter sets of a method, in a fixed scan order.
template <typename F>
void for_each_candidate(Method m, std::span<const double> w, const GridSpec& spec, F&& f) {
    const auto fs = spec.factors();
    switch (m) {
        case Method::binarization: {
            const double a0 = mean_abs(w);
            for (double x : fs) f(GroupParams{a0 * x, 0.0});
            break;
        }
        case Method::int2: {
            const double s0 = max_abs(w) / 2.0;
            for (double x : fs) f(GroupParams{s0 * x, 0.0});
            break;
        }
        case Method::fdb: {
            const double s0 = max_abs(w) / 2.0;
            for (double f1 : fs)
                for (double f2 : fs) {
                    const GroupParams p{2.0 * s0 * f1, -(s0 * f2)};
                    if (fdb_valid(p)) f(p);
                }
            break;
        }
    }
}

// Evaluates the group objective for many parameter sets using sorted weights
// and 2-D prefix sums of the permuted Gram matrix: each candidate costs a few
// binary searches and a handful of block sums instead of a matrix product.
class GroupEvaluator {
public:
    GroupEvaluator(std::span<const double> w, const Matrix& gram, double batch) : n_(w.size()), batch_(batch) {
        std::vector<std::size_t> perm(n_);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) { return w[a] < w[b]; });
        sorted_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) sorted_[i] = w[perm[i]];
        const std::size_t stride = n_ + 1;
        prefix_.assign(stride * stride, 0.0);
        for (std::size_t i = 0; i < n_; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < n_; ++j) {
                row += gram(static_cast<Eigen::Index>(perm[i]), static_cast<Eigen::Index>(perm[j]));
                prefix_[(i + 1) * stride + j + 1] = prefix_[i * stride + j + 1] + row;
            }
        }
        gw_prefix_.assign(n_ + 1, 0.0);
        wgw_ = 0.0;
        for (std::size_t i = 0; i < n_; ++i) {
            double gw = 0.0;
            for (std::size_t j = 0; j < n_; ++j)
                gw += gram(static_cast<Eigen::Index>(perm[i]), static_cast<Eigen::Index>(perm[j])) * sorted_[j];
            gw_prefix_[i + 1] = gw_prefix_[i] + gw;
            wgw_ += sorted_[i] * gw;
        }
    }

    double loss(Method m, const GroupParams& p) const {
        const int K = level_count(m);
        std::size_t cut[5];
        cut[0] = 0;
        cut[K] = n_;
        for (int k = 1; k < K; ++k) {
            const auto it = std::partition_point(sorted_.begin(), sorted_.end(),
                                                 [&](double x) { return level_index(m, x, p) < k; });
            cut[k] = static_cast<std::size_t>(it - sorted_.begin());
        }
        double lv[4];
        levels_of(m, p, lv);
        double quad = 0.0, cross = 0.0;
        for (int a = 0; a < K; ++a) {
            if (cut[a] == cut[a + 1] || lv[a] == 0.0) continue;
            cross += lv[a] * (gw_prefix_[cut[a + 1]] - gw_prefix_[cut[a]]);
            for (int b = 0; b < K; ++b) {
                if (cut[b] == cut[b + 1] || lv[b] == 0.0) continue;
                quad += lv[a] * lv[b] * block(cut[a], cut[a + 1], cut[b], cut[b + 1]);
            }
        }
        return std::max(0.0, (quad - 2.0 * cross + wgw_) / batch_);
    }

private:
    double block(std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) const {
        const std::size_t s = n_ + 1;
        return prefix_[r1 * s + c1] - prefix_[r0 * s + c1] - prefix_[r1 * s + c0] + prefix_[r0 * s + c0];
    }

    std::size_t n_;
    double batch_;
    std::vector<double> sorted_;
    std::vector<double> prefix_;
    std::vector<double> gw_prefix_;
    double wgw_ = 0.0;
};

GroupOptimum search_with(std::span<const double> w, Method m, const GridSpec& spec,
                         const std::function<double(const GroupParams&)>& eval) {
    GroupOptimum best;
    best.loss = std::numeric_limits<double>::infinity();
    if (max_abs(w) == 0.0) {
        best.loss = 0.0;
        return best;
    }
    for_each_candidate(m, w, spec, [&](const GroupParams& p) {
        const double l = eval(p);
        ++best.evaluated;
        if (l < best.loss) {
            best.loss = l;
            best.params = p;
        }
    });
    if (best.evaluated == 0) throw Error(ErrorKind::invalid_argument, "grid_search_levels: empty grid");
    return best;
}

}  // namespace

double quantize_scalar(Method m, double w, const GroupParams& p) noexcept {
    if (p.p1 == 0.0 && p.p2 == 0.0) return 0.0;
    double lv[4];
    levels_of(m, p, lv);
    return lv[level_index(m, w, p)];
}

Matrix quantize_layer(Method m, const quant::WeightMatrix& w, std::size_t group_size,
                      std::span<const GroupParams> params) {
    const quant::GroupLayout layout(w.rows(), w.cols(), group_size);
    if (params.size() != layout.group_count())
        throw Error(ErrorKind::shape_mismatch, "quantize_layer: one parameter set per group expected");
    Matrix out(static_cast<Eigen::Index>(w.rows()), static_cast<Eigen::Index>(w.cols()));
    for (std::size_t r = 0; r < w.rows(); ++r)
        for (std::size_t c = 0; c < w.cols(); ++c)
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                quantize_scalar(m, w(r, c), params[layout.group_of(r, c)]);
    return out;
}

double proxy_mse(const quant::WeightMatrix& w, const Matrix& w_hat, const Matrix& probes) {
    if (w_hat.rows() != w.values().rows() || w_hat.cols() != w.values().cols())
        throw Error(ErrorKind::shape_mismatch, "proxy_mse: quantized weights differ in shape");
    if (probes.cols() != w.values().cols() || probes.rows() == 0)
        throw Error(ErrorKind::shape_mismatch, "proxy_mse: probe width must equal the layer's input features");
    const Matrix diff = probes * (w.values() - w_hat).transpose();
    return diff.squaredNorm() / static_cast<double>(diff.size());
}

Matrix gaussian_probes(std::size_t batch, std::size_t cols, std::uint64_t seed) {
    Rng rng(seed, 0x70726f6265);
    Matrix x(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    return x;
}

Matrix record_layer_inputs(const model::TransformerLM& model, const std::string& layer,
                           const std::vector<std::vector<int>>& sequences, std::size_t max_rows) {
    std::size_t block = 0;
    std::string kind;
    {
        const std::string prefix = "layers.";
        const auto dot = layer.find('.', prefix.size());
        if (layer.rfind(prefix, 0) != 0 || dot == std::string::npos)
            throw Error(ErrorKind::invalid_argument, "record_layer_inputs: bad layer name '" + layer + "'");
        block = std::stoul(layer.substr(prefix.size(), dot - prefix.size()));
        kind = layer.substr(dot + 1);
        if (block >= model.blocks.size())
            throw Error(ErrorKind::invalid_argument, "record_layer_inputs: no block " + std::to_string(block));
    }
    std::vector<Eigen::RowVectorXd> rows;
    model::ForwardCache cache;
    for (const auto& seq : sequences) {
        if (rows.size() >= max_rows) break;
        model.forward(seq, cache);
        const model::BlockCache& c = cache.blocks[block];
        const Matrix* src = nullptr;
        if (kind == "attn.q" || kind == "attn.k" || kind == "attn.v")
            src = &c.h1;
        else if (kind == "attn.o")
            src = &c.attn;
        else if (kind == "ffn.up")
            src = &c.h2;
        else if (kind == "ffn.down")
            src = &c.up_act;
        else
            throw Error(ErrorKind::invalid_argument, "record_layer_inputs: unknown layer kind '" + kind + "'");
        for (Eigen::Index t = 0; t < src->rows() && rows.size() < max_rows; ++t) rows.push_back(src->row(t));
    }
    if (rows.empty()) throw Error(ErrorKind::invalid_argument, "record_layer_inputs: no input rows recorded");
    Matrix x(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = rows[i];
    return x;
}

void GridSpec::validate() const {
    if (steps == 0) throw Error(ErrorKind::invalid_argument, "grid spec: steps must be positive (empty grid)");
    if (!(factor_min > 0.0) || !(factor_max >= factor_min) || !std::isfinite(factor_max))
        throw Error(ErrorKind::invalid_argument, "grid spec: need 0 < factor_min <= factor_max");
}

std::vector<double> GridSpec::factors() const {
    validate();
    std::vector<double> f(steps);
    if (steps == 1) {
        f[0] = factor_min;
        return f;
    }
    for (std::size_t i = 0; i < steps; ++i)
        f[i] = factor_min + (factor_max - factor_min) * static_cast<double>(i) / static_cast<double>(steps - 1);
    return f;
}

GroupOptimum grid_search_levels(std::span<const double> weights, const Matrix& probe_cols, Method m,
                                const GridSpec& spec) {
    spec.validate();
    if (weights.empty()) throw Error(ErrorKind::invalid_argument, "grid_search_levels: empty group");
    if (static_cast<std::size_t>(probe_cols.cols()) != weights.size() || probe_cols.rows() == 0)
        throw Error(ErrorKind::shape_mismatch, "grid_search_levels: probe columns must match the group width");
    const Matrix gram = probe_cols.transpose() * probe_cols;
    const GroupEvaluator ev(weights, gram, static_cast<double>(probe_cols.rows()));
    return search_with(weights, m, spec, [&](const GroupParams& p) { return ev.loss(m, p); });
}

GroupOptimum grid_search_levels_direct(std::span<const double> weights, const Matrix& probe_cols, Method m,
                                       const GridSpec& spec) {
    spec.validate();
    if (weights.empty()) throw Error(ErrorKind::invalid_argument, "grid_search_levels: empty group");
    if (static_cast<std::size_t>(probe_cols.cols()) != weights.size() || probe_cols.rows() == 0)
        throw Error(ErrorKind::shape_mismatch, "grid_search_levels: probe columns must match the group width");
    Vector diff(static_cast<Eigen::Index>(weights.size()));
    return search_with(weights, m, spec, [&](const GroupParams& p) {
        for (std::size_t i = 0; i < weights.size(); ++i)
            diff(static_cast<Eigen::Index>(i)) = weights[i] - quantize_scalar(m, weights[i], p);
        return (probe_cols * diff).squaredNorm() / static_cast<double>(probe_cols.rows());
    });
}

LayerOptimum search_layer(const quant::WeightMatrix& w, const Matrix& probes, std::size_t group_size, Method m,
                          const GridSpec& spec) {
    spec.validate();
    const quant::GroupLayout layout(w.rows(), w.cols(), group_size);
    if (static_cast<std::size_t>(probes.cols()) != w.cols() || probes.rows() == 0)
        throw Error(ErrorKind::shape_mismatch, "search_layer: probe width must equal the layer's input features");
    const double batch = static_cast<double>(probes.rows());
    std::vector<Matrix> grams;
    for (std::size_t cg = 0; cg < layout.groups_per_row(); ++cg) {
        const auto b = static_cast<Eigen::Index>(layout.col_begin(cg));
        const auto n = static_cast<Eigen::Index>(layout.col_end(cg) - layout.col_begin(cg));
        grams.push_back(probes.middleCols(b, n).transpose() * probes.middleCols(b, n));
    }
    LayerOptimum out;
    out.method = m;
    out.params.resize(layout.group_count());
    double total = 0.0;
    for (std::size_t r = 0; r < w.rows(); ++r) {
        for (std::size_t cg = 0; cg < layout.groups_per_row(); ++cg) {
            const std::span<const double> gw(w.row(r) + layout.col_begin(cg), layout.col_end(cg) - layout.col_begin(cg));
            const GroupEvaluator ev(gw, grams[cg], batch);
            const GroupOptimum best = search_with(gw, m, spec, [&](const GroupParams& p) { return ev.loss(m, p); });
            out.params[r * layout.groups_per_row() + cg] = best.params;
            total += best.loss;
        }
    }
    out.min_loss = total / static_cast<double>(w.rows());
    out.layer_proxy_mse = proxy_mse(w, quantize_layer(m, w, group_size, out.params), probes);
    return out;
}

std::vector<double> symmetric_deltas(double radius, std::size_t steps) {
    if (steps == 0 || !(radius >= 0.0)) throw Error(ErrorKind::invalid_argument, "symmetric_deltas: bad radius or steps");
    std::vector<double> d(steps, 0.0);
    if (steps == 1) return d;
    for (std::size_t i = 0; i < steps; ++i)
        d[i] = -radius + 2.0 * radius * static_cast<double>(i) / static_cast<double>(steps - 1);
    // exact zero at the centre of an odd-length axis
    if (steps % 2 == 1) d[steps / 2] = 0.0;
    return d;
}

LandscapeGrid perturb_surface(const quant::WeightMatrix& w, const Matrix& probes, std::size_t group_size, Method m,
                              std::span<const GroupParams> center, std::span<const double> unit,
                              std::span<const double> deltas) {
    const quant::GroupLayout layout(w.rows(), w.cols(), group_size);
    if (center.size() != layout.group_count() || unit.size() != layout.group_count())
        throw Error(ErrorKind::shape_mismatch, "perturb_surface: one centre and unit per group expected");
    if (deltas.empty()) throw Error(ErrorKind::invalid_argument, "perturb_surface: empty delta axis");
    if (static_cast<std::size_t>(probes.cols()) != w.cols() || probes.rows() == 0)
        throw Error(ErrorKind::shape_mismatch, "perturb_surface: probe width must equal the layer's input features");

    LandscapeGrid g;
    g.method = m;
    g.axis1.assign(deltas.begin(), deltas.end());
    g.axis2.assign(deltas.begin(), deltas.end());
    switch (m) {
        case Method::binarization:
            g.axis1_name = "d_alpha";
            g.axis2_name = "unused";
            break;
        case Method::int2:
            g.axis1_name = "d_scale_rel";
            g.axis2_name = "d_code_offset";
            break;
        case Method::fdb:
            g.axis1_name = "d_alpha1";
            g.axis2_name = "d_alpha2";
            break;
    }
    const auto n = static_cast<Eigen::Index>(deltas.size());
    g.loss.resize(n, n);
    const Matrix gram = probes.transpose() * probes;
    const double denom = static_cast<double>(probes.rows()) * static_cast<double>(w.rows());
    std::vector<GroupParams> params(center.size());

    auto evaluate = [&](double d1, double d2) {
        for (std::size_t k = 0; k < center.size(); ++k) {
            GroupParams p = center[k];
            if (p.p1 == 0.0 && p.p2 == 0.0) {
                params[k] = p;
                continue;
            }
            switch (m) {
                case Method::binarization: p.p1 += d1 * unit[k]; break;
                case Method::int2:
                    p.p1 *= 1.0 + d1;
                    p.p2 += d2;
                    break;
                case Method::fdb: {
                    p.p1 += d1 * unit[k];
                    p.p2 += d2 * unit[k];
                    const double margin = 1e-8 * unit[k];
                    p.p2 = std::min(p.p2, -margin);
                    p.p1 = std::max(p.p1, -p.p2 + margin);
                    break;
                }
            }
            params[k] = p;
        }
        const Matrix diff = w.values() - quantize_layer(m, w, group_size, params);
        return (diff * gram).cwiseProduct(diff).sum() / denom;
    };

    for (Eigen::Index i = 0; i < n; ++i) {
        if (m == Method::binarization) {
            const double l = evaluate(deltas[static_cast<std::size_t>(i)], 0.0);
            g.loss.row(i).setConstant(l);
            continue;
        }
        for (Eigen::Index j = 0; j < n; ++j)
            g.loss(i, j) = evaluate(deltas[static_cast<std::size_t>(i)], deltas[static_cast<std::size_t>(j)]);
    }
    Eigen::Index ai = 0, aj = 0;
    g.min_loss = g.loss.minCoeff(&ai, &aj);
    g.argmin1 = static_cast<std::size_t>(ai);
    g.argmin2 = static_cast<std::size_t>(aj);
    return g;
}

double flatness(const LandscapeGrid& g) {
    const double mean = g.loss.mean();
    if (g.min_loss > 0.0) return mean / g.min_loss;
    return mean == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
}

std::string grid_csv(const LandscapeGrid& g) {
    std::ostringstream out;
    out.precision(17);
    out << g.axis1_name << ',' << g.axis2_name << ",loss\n";
    for (std::size_t i = 0; i < g.axis1.size(); ++i)
        for (std::size_t j = 0; j < g.axis2.size(); ++j)
            out << g.axis1[i] << ',' << g.axis2[j] << ','
                << g.loss(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) << '\n';
    out << "# min_loss," << g.min_loss << ",argmin," << g.argmin1 << ',' << g.argmin2 << '\n';
    return out.str();
}

LayerComparison compare_methods(const quant::WeightMatrix& w, const Matrix& probes, std::size_t group_size,
                                const GridSpec& spec, std::span<const double> deltas) {
    LayerComparison c;
    c.int2.optimum = search_layer(w, probes, group_size, Method::int2, spec);
    c.fdb.optimum = search_layer(w, probes, group_size, Method::fdb, spec);
    c.binarization.optimum = search_layer(w, probes, group_size, Method::binarization, spec);
    std::vector<double> unit;
    for (const auto& p : c.int2.optimum.params) unit.push_back(p.p1);
    for (MethodResult* r : {&c.binarization, &c.int2, &c.fdb}) {
        r->surface = perturb_surface(w, probes, group_size, r->optimum.method, r->optimum.params, unit, deltas);
        r->flatness = flatness(r->surface);
    }
    c.fdb_le_int2 = c.fdb.optimum.min_loss <= c.int2.optimum.min_loss + 1e-9;
    c.int2_le_bin = c.int2.optimum.min_loss + 1e-9 <= c.binarization.optimum.min_loss;
    c.fdb_flatter = c.fdb.flatness <= c.int2.flatness;
    return c;
}

}  // namespace fdbq::landscape
