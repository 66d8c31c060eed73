#include "fdbq/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "fdbq/error.hpp"
#include "fdbq/rng.hpp"

namespace fdbq::model {

namespace {

constexpr double rms_eps = 1e-5;

// tanh approximation of GELU and its derivative
constexpr double gelu_c = 0.7978845608028654;  // sqrt(2/pi)

double gelu(double x) {
    const double inner = gelu_c * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(inner));
}

double gelu_grad(double x) {
    const double inner = gelu_c * (x + 0.044715 * x * x * x);
    const double t = std::tanh(inner);
    const double d_inner = gelu_c * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner;
}

Matrix rmsnorm(const Matrix& x, const Vector& gain, Vector& inv_rms) {
    const Eigen::Index n = x.rows(), d = x.cols();
    Matrix y(n, d);
    inv_rms.resize(n);
    for (Eigen::Index t = 0; t < n; ++t) {
        const double ms = x.row(t).squaredNorm() / static_cast<double>(d);
        const double r = 1.0 / std::sqrt(ms + rms_eps);
        inv_rms(t) = r;
        y.row(t) = (x.row(t).array() * gain.transpose().array() * r).matrix();
    }
    return y;
}

// Returns dx; accumulates dgain when requested.
Matrix rmsnorm_backward(const Matrix& x, const Vector& gain, const Vector& inv_rms, const Matrix& dy, Vector* dgain) {
    const Eigen::Index n = x.rows(), d = x.cols();
    Matrix dx(n, d);
    for (Eigen::Index t = 0; t < n; ++t) {
        const double r = inv_rms(t);
        const Eigen::RowVectorXd gdy = (dy.row(t).array() * gain.transpose().array()).matrix();
        const double dot = gdy.dot(x.row(t));
        dx.row(t) = r * gdy - (r * r * r / static_cast<double>(d)) * dot * x.row(t);
        if (dgain) *dgain += (dy.row(t).array() * x.row(t).array() * r).matrix().transpose();
    }
    return dx;
}

void softmax_inplace(double* row, std::size_t n) {
    double mx = row[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        row[i] = std::exp(row[i] - mx);
        sum += row[i];
    }
    for (std::size_t i = 0; i < n; ++i) row[i] /= sum;
}

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
    return m;
}

// dW += dy^T x for an fp layer, or the scale-pair gradient for a dual-binary
// layer, depending on the gradient mode.
void accumulate_linear_grad(const QuantLinear& lin, const Matrix& x, const Matrix& dy, GradMode mode, Matrix* dweight,
                            std::vector<kernel::ScaleGrad>* dscales) {
    if (mode == GradMode::all_parameters) {
        dweight->noalias() += dy.transpose() * x;
        return;
    }
    if (lin.mode() != LinearMode::fdb) return;
    const Matrix wgrad = dy.transpose() * x;
    const auto g = kernel::fdb_scale_grad(*lin.fdb(), wgrad);
    for (std::size_t i = 0; i < g.size(); ++i) {
        (*dscales)[i].d_alpha1 += g[i].d_alpha1;
        (*dscales)[i].d_alpha2 += g[i].d_alpha2;
    }
}

}  // namespace

const char* to_string(LinearMode m) noexcept {
    switch (m) {
        case LinearMode::fp: return "fp";
        case LinearMode::rtn: return "rtn";
        case LinearMode::sign: return "sign";
        case LinearMode::fdb: return "fdb";
    }
    return "unknown";
}

LinearMode parse_linear_mode(const std::string& s) {
    if (s == "fp") return LinearMode::fp;
    if (s == "rtn") return LinearMode::rtn;
    if (s == "sign") return LinearMode::sign;
    if (s == "fdb") return LinearMode::fdb;
    throw Error(ErrorKind::invalid_argument, "unknown linear mode '" + s + "'");
}

const char* to_string(QuantMethod m) noexcept {
    switch (m) {
        case QuantMethod::rtn: return "rtn";
        case QuantMethod::sign: return "sign";
        case QuantMethod::fdb: return "fdb";
    }
    return "unknown";
}

QuantMethod parse_quant_method(const std::string& s) {
    if (s == "rtn") return QuantMethod::rtn;
    if (s == "sign") return QuantMethod::sign;
    if (s == "fdb") return QuantMethod::fdb;
    throw Error(ErrorKind::invalid_argument, "unknown quantization method '" + s + "' (expected rtn, sign, fdb)");
}

void ModelConfig::validate() const {
    if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ffn == 0 || max_seq_len == 0)
        throw Error(ErrorKind::invalid_argument, "ModelConfig: dimensions must be positive");
    if (d_model % n_heads != 0) throw Error(ErrorKind::invalid_argument, "ModelConfig: d_model must be divisible by n_heads");
    if (vocab_size < 2) throw Error(ErrorKind::invalid_argument, "ModelConfig: vocab_size must be >= 2");
    const auto names = linear_names();
    for (const auto& [name, mode] : quant_mode) {
        (void)mode;
        if (std::find(names.begin(), names.end(), name) == names.end())
            throw Error(ErrorKind::invalid_argument, "ModelConfig: unknown linear layer '" + name + "'");
    }
}

LinearMode ModelConfig::mode_of(const std::string& linear) const {
    const auto it = quant_mode.find(linear);
    return it == quant_mode.end() ? LinearMode::fp : it->second;
}

std::vector<std::string> ModelConfig::linear_names() const {
    std::vector<std::string> names;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        for (const char* n : {"attn.q", "attn.k", "attn.v", "attn.o", "ffn.up", "ffn.down"}) names.push_back(p + n);
    }
    return names;
}

// ---------------------------------------------------------------- QuantLinear

QuantLinear::QuantLinear(std::string name, Matrix weight) : name_(std::move(name)), weight_(std::move(weight)) {}

void QuantLinear::clear_payloads() {
    rtn_.reset();
    sign_.reset();
    fdb_.reset();
}

void QuantLinear::set_fp() {
    clear_payloads();
    mode_ = LinearMode::fp;
    effective_.resize(0, 0);
}

void QuantLinear::quantize_rtn(const quant::QuantSpec& spec) {
    clear_payloads();
    rtn_ = quant::rtn_quantize(quant::WeightMatrix(weight_), spec);
    effective_ = quant::dequantize(*rtn_).values();
    mode_ = LinearMode::rtn;
}

void QuantLinear::quantize_sign(std::size_t group_size) {
    clear_payloads();
    sign_ = quant::sign_binarize(quant::WeightMatrix(weight_), group_size);
    effective_ = quant::reconstruct(*sign_).values();
    mode_ = LinearMode::sign;
}

void QuantLinear::quantize_fdb(std::size_t group_size) {
    const quant::QuantSpec spec{2, group_size, quant::RangeMode::asymmetric_shifted};
    const auto q = quant::rtn_quantize(quant::WeightMatrix(weight_), spec);
    const auto pairs = quant::fdb_init(q);
    clear_payloads();
    fdb_ = quant::fdb_split(quant::WeightMatrix(weight_), pairs, group_size);
    effective_ = quant::fdb_reconstruct(*fdb_).values();
    mode_ = LinearMode::fdb;
}

void QuantLinear::set_fdb_scales(std::span<const quant::ScalePair> scales) {
    if (mode_ != LinearMode::fdb) throw Error(ErrorKind::invalid_argument, name_ + ": not a dual-binary layer");
    const std::size_t g = fdb_->layout.group_size;
    fdb_ = quant::fdb_split(quant::WeightMatrix(weight_), scales, g);
    effective_ = quant::fdb_reconstruct(*fdb_).values();
}

void QuantLinear::load_rtn(quant::GroupedIntQuant q) {
    clear_payloads();
    rtn_ = std::move(q);
    effective_ = quant::dequantize(*rtn_).values();
    mode_ = LinearMode::rtn;
}

void QuantLinear::load_sign(quant::SignBinarized b) {
    clear_payloads();
    sign_ = std::move(b);
    effective_ = quant::reconstruct(*sign_).values();
    mode_ = LinearMode::sign;
}

void QuantLinear::load_fdb(quant::DualBinaryWeight d) {
    clear_payloads();
    fdb_ = std::move(d);
    effective_ = quant::fdb_reconstruct(*fdb_).values();
    mode_ = LinearMode::fdb;
}

Matrix QuantLinear::apply(const Matrix& inputs) const {
    if (static_cast<std::size_t>(inputs.cols()) != in_features())
        throw Error(ErrorKind::shape_mismatch, name_ + ": input width does not match in_features");
    if (mode_ == LinearMode::fdb) return kernel::fdb_forward_batch(*fdb_, inputs);
    return inputs * effective().transpose();
}

// ---------------------------------------------------------------- Gradients

void Gradients::zero() {
    for (auto& m : params) m.setZero();
    for (auto& v : gains) v.setZero();
    for (auto& s : scales) std::fill(s.begin(), s.end(), kernel::ScaleGrad{});
}

// ---------------------------------------------------------------- TransformerLM

TransformerLM::TransformerLM(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto d = static_cast<Eigen::Index>(config_.d_model);
    const auto f = static_cast<Eigen::Index>(config_.d_ffn);
    const auto v = static_cast<Eigen::Index>(config_.vocab_size);
    tok_emb = Matrix::Zero(v, d);
    pos_emb = Matrix::Zero(static_cast<Eigen::Index>(config_.max_seq_len), d);
    norm_final = Vector::Ones(d);
    head = Matrix::Zero(v, d);
    blocks.resize(config_.n_layers);
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        auto& b = blocks[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        b.norm1 = Vector::Ones(d);
        b.norm2 = Vector::Ones(d);
        b.q = QuantLinear(p + "attn.q", Matrix::Zero(d, d));
        b.k = QuantLinear(p + "attn.k", Matrix::Zero(d, d));
        b.v = QuantLinear(p + "attn.v", Matrix::Zero(d, d));
        b.o = QuantLinear(p + "attn.o", Matrix::Zero(d, d));
        b.up = QuantLinear(p + "ffn.up", Matrix::Zero(f, d));
        b.down = QuantLinear(p + "ffn.down", Matrix::Zero(d, f));
    }
    // Layers start in full precision; the config's modes are applied by
    // quantize_model or by loading a checkpoint.
    config_.quant_mode.clear();
}

TransformerLM TransformerLM::random_init(const ModelConfig& config, std::uint64_t seed) {
    ModelConfig fp_config = config;
    fp_config.quant_mode.clear();
    TransformerLM m(fp_config);
    Rng rng(seed, 0x6d6f64656c);
    const auto d = static_cast<Eigen::Index>(config.d_model);
    const auto f = static_cast<Eigen::Index>(config.d_ffn);
    const double std_main = 0.02;
    const double std_resid = 0.02 / std::sqrt(2.0 * static_cast<double>(config.n_layers));
    m.tok_emb = random_matrix(rng, m.tok_emb.rows(), d, std_main);
    m.pos_emb = random_matrix(rng, m.pos_emb.rows(), d, std_main);
    for (auto& b : m.blocks) {
        b.q.mutable_weight() = random_matrix(rng, d, d, std_main);
        b.k.mutable_weight() = random_matrix(rng, d, d, std_main);
        b.v.mutable_weight() = random_matrix(rng, d, d, std_main);
        b.o.mutable_weight() = random_matrix(rng, d, d, std_resid);
        b.up.mutable_weight() = random_matrix(rng, f, d, std_main);
        b.down.mutable_weight() = random_matrix(rng, d, f, std_resid);
    }
    m.head = random_matrix(rng, m.head.rows(), d, std_main);
    return m;
}

std::vector<ParamRef> TransformerLM::parameters() {
    std::vector<ParamRef> ps;
    ps.push_back({"tok_emb", &tok_emb, false});
    ps.push_back({"pos_emb", &pos_emb, false});
    for (auto& b : blocks)
        for (QuantLinear* l : {&b.q, &b.k, &b.v, &b.o, &b.up, &b.down})
            ps.push_back({l->name() + ".weight", &l->mutable_weight(), true});
    ps.push_back({"head", &head, true});
    return ps;
}

std::vector<GainRef> TransformerLM::gains() {
    std::vector<GainRef> gs;
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        gs.push_back({p + "norm1", &blocks[l].norm1});
        gs.push_back({p + "norm2", &blocks[l].norm2});
    }
    gs.push_back({"norm_final", &norm_final});
    return gs;
}

std::vector<QuantLinear*> TransformerLM::linears() {
    std::vector<QuantLinear*> out;
    for (auto& b : blocks)
        for (QuantLinear* l : {&b.q, &b.k, &b.v, &b.o, &b.up, &b.down}) out.push_back(l);
    return out;
}

std::vector<const QuantLinear*> TransformerLM::linears() const {
    std::vector<const QuantLinear*> out;
    for (const auto& b : blocks)
        for (const QuantLinear* l : {&b.q, &b.k, &b.v, &b.o, &b.up, &b.down}) out.push_back(l);
    return out;
}

QuantLinear& TransformerLM::linear(const std::string& name) {
    for (QuantLinear* l : linears())
        if (l->name() == name) return *l;
    throw Error(ErrorKind::invalid_argument, "no linear layer named '" + name + "'");
}

void TransformerLM::sync_quant_modes() {
    config_.quant_mode.clear();
    for (const QuantLinear* l : std::as_const(*this).linears())
        if (l->mode() != LinearMode::fp) config_.quant_mode[l->name()] = l->mode();
}

Gradients TransformerLM::make_gradients() const {
    Gradients g;
    auto& self = const_cast<TransformerLM&>(*this);
    for (const auto& p : self.parameters()) g.params.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    for (const auto& p : self.gains()) g.gains.push_back(Vector::Zero(p.value->size()));
    for (const QuantLinear* l : linears())
        g.scales.emplace_back(l->mode() == LinearMode::fdb ? l->fdb()->scales.size() : 0);
    return g;
}

void TransformerLM::check_tokens(std::span<const int> tokens) const {
    if (tokens.empty()) throw Error(ErrorKind::invalid_argument, "forward: empty token sequence");
    if (tokens.size() > config_.max_seq_len) {
        std::ostringstream msg;
        msg << "forward: sequence length " << tokens.size() << " exceeds max_seq_len " << config_.max_seq_len;
        throw Error(ErrorKind::invalid_argument, msg.str());
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= config_.vocab_size) {
            std::ostringstream msg;
            msg << "forward: token id " << tokens[i] << " at position " << i << " is outside [0, " << config_.vocab_size
                << ")";
            throw Error(ErrorKind::invalid_argument, msg.str());
        }
    }
}

LogitsBatch TransformerLM::forward(std::span<const int> tokens) const {
    ForwardCache cache;
    return forward(tokens, cache);
}

LogitsBatch TransformerLM::forward(std::span<const int> tokens, ForwardCache& cache) const {
    check_tokens(tokens);
    const auto T = static_cast<Eigen::Index>(tokens.size());
    const auto d = static_cast<Eigen::Index>(config_.d_model);
    const auto H = static_cast<Eigen::Index>(config_.n_heads);
    const auto dh = static_cast<Eigen::Index>(config_.head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    cache.tokens.assign(tokens.begin(), tokens.end());
    cache.blocks.resize(blocks.size());

    Matrix x(T, d);
    for (Eigen::Index t = 0; t < T; ++t) x.row(t) = tok_emb.row(tokens[t]) + pos_emb.row(t);

    for (std::size_t l = 0; l < blocks.size(); ++l) {
        const Block& b = blocks[l];
        BlockCache& c = cache.blocks[l];
        c.x_in = x;
        c.h1 = rmsnorm(x, b.norm1, c.inv_rms1);
        c.q = b.q.apply(c.h1);
        c.k = b.k.apply(c.h1);
        c.v = b.v.apply(c.h1);
        c.attn = Matrix::Zero(T, d);
        c.probs.resize(static_cast<std::size_t>(H));
        for (Eigen::Index h = 0; h < H; ++h) {
            Matrix s = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
            for (Eigen::Index i = 0; i < T; ++i) {
                for (Eigen::Index j = i + 1; j < T; ++j) s(i, j) = -std::numeric_limits<double>::infinity();
                softmax_inplace(s.row(i).data(), static_cast<std::size_t>(T));
            }
            c.attn.middleCols(h * dh, dh).noalias() = s * c.v.middleCols(h * dh, dh);
            c.probs[static_cast<std::size_t>(h)] = std::move(s);
        }
        x += b.o.apply(c.attn);
        c.x_mid = x;
        c.h2 = rmsnorm(x, b.norm2, c.inv_rms2);
        c.up_pre = b.up.apply(c.h2);
        c.up_act = c.up_pre.unaryExpr([](double u) { return gelu(u); });
        x += b.down.apply(c.up_act);
    }
    cache.x_final = x;
    cache.h_final = rmsnorm(x, norm_final, cache.inv_rms_final);
    return cache.h_final * head.transpose();
}

void TransformerLM::backward(const ForwardCache& cache, const Matrix& dlogits, Gradients& grads, GradMode mode) const {
    const bool full = mode == GradMode::all_parameters;
    if (full) {
        for (const QuantLinear* l : linears())
            if (l->mode() != LinearMode::fp)
                throw Error(ErrorKind::invalid_argument, "backward: full-parameter gradients need an fp model");
    }
    const auto T = static_cast<Eigen::Index>(cache.tokens.size());
    const auto H = static_cast<Eigen::Index>(config_.n_heads);
    const auto dh = static_cast<Eigen::Index>(config_.head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::size_t n_mats = 3 + 6 * blocks.size();  // tok, pos, 6 per block, head
    auto& P = grads.params;

    if (full) P[n_mats - 1].noalias() += dlogits.transpose() * cache.h_final;
    Matrix dh_final = dlogits * head;
    Vector dgain_f = Vector::Zero(static_cast<Eigen::Index>(config_.d_model));
    Matrix dx = rmsnorm_backward(cache.x_final, norm_final, cache.inv_rms_final, dh_final, full ? &dgain_f : nullptr);
    if (full) grads.gains[2 * blocks.size()] += dgain_f;

    for (std::size_t li = blocks.size(); li-- > 0;) {
        const Block& b = blocks[li];
        const BlockCache& c = cache.blocks[li];
        const std::size_t base = 2 + 6 * li;
        const std::size_t lin_base = 6 * li;
        auto scale_slot = [&](std::size_t k) { return &grads.scales[lin_base + k]; };

        // feed-forward
        const Matrix d_act = dx * b.down.effective();
        accumulate_linear_grad(b.down, c.up_act, dx, mode, &P[base + 5], scale_slot(5));
        Matrix d_pre = d_act;
        for (Eigen::Index i = 0; i < d_pre.size(); ++i) d_pre.data()[i] *= gelu_grad(c.up_pre.data()[i]);
        accumulate_linear_grad(b.up, c.h2, d_pre, mode, &P[base + 4], scale_slot(4));
        const Matrix dh2 = d_pre * b.up.effective();
        Vector dg2 = Vector::Zero(dx.cols());
        dx += rmsnorm_backward(c.x_mid, b.norm2, c.inv_rms2, dh2, full ? &dg2 : nullptr);

        // attention
        const Matrix d_attn = dx * b.o.effective();
        accumulate_linear_grad(b.o, c.attn, dx, mode, &P[base + 3], scale_slot(3));
        Matrix dq = Matrix::Zero(T, dx.cols()), dk = Matrix::Zero(T, dx.cols()), dv = Matrix::Zero(T, dx.cols());
        for (Eigen::Index h = 0; h < H; ++h) {
            const Matrix& p = c.probs[static_cast<std::size_t>(h)];
            const auto dah = d_attn.middleCols(h * dh, dh);
            const Matrix dp = dah * c.v.middleCols(h * dh, dh).transpose();
            dv.middleCols(h * dh, dh).noalias() = p.transpose() * dah;
            Matrix ds = p.cwiseProduct(dp);
            const Vector rows = ds.rowwise().sum();
            ds -= p.cwiseProduct(rows.replicate(1, T));
            ds *= scale;
            dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
            dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
        }
        accumulate_linear_grad(b.q, c.h1, dq, mode, &P[base + 0], scale_slot(0));
        accumulate_linear_grad(b.k, c.h1, dk, mode, &P[base + 1], scale_slot(1));
        accumulate_linear_grad(b.v, c.h1, dv, mode, &P[base + 2], scale_slot(2));
        const Matrix dh1 = dq * b.q.effective() + dk * b.k.effective() + dv * b.v.effective();
        Vector dg1 = Vector::Zero(dx.cols());
        dx += rmsnorm_backward(c.x_in, b.norm1, c.inv_rms1, dh1, full ? &dg1 : nullptr);
        if (full) {
            grads.gains[2 * li] += dg1;
            grads.gains[2 * li + 1] += dg2;
        }
    }
    if (full) {
        for (Eigen::Index t = 0; t < T; ++t) {
            P[0].row(cache.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
            P[1].row(t) += dx.row(t);
        }
    }
}

// ---------------------------------------------------------------- Decoder

Decoder::Decoder(const TransformerLM& model) : model_(model) {
    const auto d = static_cast<Eigen::Index>(model.config().d_model);
    const auto T = static_cast<Eigen::Index>(model.config().max_seq_len);
    keys_.assign(model.blocks.size(), Matrix::Zero(T, d));
    values_.assign(model.blocks.size(), Matrix::Zero(T, d));
}

Vector Decoder::step(int token) {
    const auto& cfg = model_.config();
    if (pos_ >= cfg.max_seq_len) throw Error(ErrorKind::invalid_argument, "Decoder: max_seq_len reached");
    if (token < 0 || static_cast<std::size_t>(token) >= cfg.vocab_size)
        throw Error(ErrorKind::invalid_argument, "Decoder: token id out of range");
    const auto d = static_cast<Eigen::Index>(cfg.d_model);
    const auto H = static_cast<Eigen::Index>(cfg.n_heads);
    const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
    const auto t = static_cast<Eigen::Index>(pos_);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix x = model_.tok_emb.row(token) + model_.pos_emb.row(t);
    Vector inv;
    for (std::size_t l = 0; l < model_.blocks.size(); ++l) {
        const Block& b = model_.blocks[l];
        const Matrix h1 = rmsnorm(x, b.norm1, inv);
        const Matrix q = b.q.apply(h1);
        keys_[l].row(t) = b.k.apply(h1).row(0);
        values_[l].row(t) = b.v.apply(h1).row(0);
        Matrix attn = Matrix::Zero(1, d);
        std::vector<double> s(static_cast<std::size_t>(t + 1));
        for (Eigen::Index h = 0; h < H; ++h) {
            for (Eigen::Index j = 0; j <= t; ++j)
                s[static_cast<std::size_t>(j)] = q.row(0).segment(h * dh, dh).dot(keys_[l].row(j).segment(h * dh, dh)) * scale;
            softmax_inplace(s.data(), s.size());
            for (Eigen::Index j = 0; j <= t; ++j)
                attn.row(0).segment(h * dh, dh) += s[static_cast<std::size_t>(j)] * values_[l].row(j).segment(h * dh, dh);
        }
        x += b.o.apply(attn);
        const Matrix h2 = rmsnorm(x, b.norm2, inv);
        const Matrix act = b.up.apply(h2).unaryExpr([](double u) { return gelu(u); });
        x += b.down.apply(act);
    }
    const Matrix hf = rmsnorm(x, model_.norm_final, inv);
    ++pos_;
    return (model_.head * hf.row(0).transpose());
}

// ---------------------------------------------------------------- evaluation

void log_softmax_row(const double* logits, std::size_t n, double* out) {
    double mx = logits[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += std::exp(logits[i] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t i = 0; i < n; ++i) out[i] = logits[i] - lse;
}

std::vector<double> token_nll(const TransformerLM& model, std::span<const int> tokens) {
    if (tokens.size() < 2) throw Error(ErrorKind::invalid_argument, "perplexity: need at least two tokens");
    const std::size_t window = model.config().max_seq_len;
    if (window < 2) throw Error(ErrorKind::invalid_argument, "perplexity: max_seq_len must be >= 2");
    const std::size_t V = model.config().vocab_size;
    std::vector<double> nll;
    nll.reserve(tokens.size() - 1);
    std::vector<double> lp(V);
    std::size_t start = 0;
    while (start + 1 < tokens.size()) {
        const std::size_t end = std::min(start + window, tokens.size());
        const auto logits = model.forward(tokens.subspan(start, end - start));
        for (std::size_t i = 0; i + 1 < end - start; ++i) {
            log_softmax_row(logits.row(static_cast<Eigen::Index>(i)).data(), V, lp.data());
            nll.push_back(-lp[static_cast<std::size_t>(tokens[start + i + 1])]);
        }
        start = end - 1;
    }
    return nll;
}

double perplexity(const TransformerLM& model, std::span<const int> tokens) {
    const auto nll = token_nll(model, tokens);
    double sum = 0.0;
    for (double v : nll) sum += v;
    return std::exp(sum / static_cast<double>(nll.size()));
}

std::vector<int> sample(const TransformerLM& model, std::span<const int> prompt, std::size_t n_tokens,
                        double temperature, std::uint64_t seed) {
    if (!(temperature > 0.0)) throw Error(ErrorKind::invalid_argument, "sample: temperature must be > 0");
    if (prompt.empty()) throw Error(ErrorKind::invalid_argument, "sample: prompt must hold at least one token");
    if (prompt.size() + n_tokens > model.config().max_seq_len + 1)
        throw Error(ErrorKind::invalid_argument, "sample: prompt plus continuation exceeds max_seq_len");
    Rng rng(seed, 0x73616d706c65);
    Decoder dec(model);
    std::vector<int> out(prompt.begin(), prompt.end());
    Vector logits;
    for (int tok : prompt) logits = dec.step(tok);
    const std::size_t V = model.config().vocab_size;
    std::vector<double> p(V);
    for (std::size_t n = 0; n < n_tokens; ++n) {
        for (std::size_t i = 0; i < V; ++i) p[i] = logits(static_cast<Eigen::Index>(i)) / temperature;
        softmax_inplace(p.data(), V);
        const double u = rng.uniform();
        double cum = 0.0;
        std::size_t pick = V - 1;
        for (std::size_t i = 0; i < V; ++i) {
            cum += p[i];
            if (u < cum) {
                pick = i;
                break;
            }
        }
        // Guard against the cumulative sum falling short of 1 by rounding.
        while (p[pick] == 0.0 && pick > 0) --pick;
        out.push_back(static_cast<int>(pick));
        if (n + 1 < n_tokens) logits = dec.step(static_cast<int>(pick));
    }
    return out;
}

void quantize_model(TransformerLM& model, QuantMethod method, const quant::QuantSpec& spec) {
    for (QuantLinear* l : model.linears()) {
        if (l->in_features() % spec.group_size != 0) {
            // Remainder groups are legal but flagged; the toy layers are
            // expected to tile exactly.
            std::ostringstream msg;
            msg << l->name() << ": in_features " << l->in_features() << " is not a multiple of group size "
                << spec.group_size;
            throw Error(ErrorKind::invalid_argument, msg.str());
        }
        switch (method) {
            case QuantMethod::rtn: l->quantize_rtn(spec); break;
            case QuantMethod::sign: l->quantize_sign(spec.group_size); break;
            case QuantMethod::fdb: l->quantize_fdb(spec.group_size); break;
        }
    }
    model.sync_quant_modes();
}

}  // namespace fdbq::model
