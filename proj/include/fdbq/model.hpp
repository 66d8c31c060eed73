#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fdbq/kernels.hpp"
#include "fdbq/matrix.hpp"
#include "fdbq/quantcore.hpp"

namespace fdbq::model {

// Per-position logits, (positions x vocab).
using LogitsBatch = Matrix;

enum class LinearMode { fp, rtn, sign, fdb };

const char* to_string(LinearMode m) noexcept;
LinearMode parse_linear_mode(const std::string& s);

struct ModelConfig {
    std::size_t n_layers = 2;
    std::size_t d_model = 128;
    std::size_t n_heads = 4;
    std::size_t d_ffn = 512;
    std::size_t vocab_size = 256;
    std::size_t max_seq_len = 64;
    // Linear layers absent from the map run in full precision.
    std::map<std::string, LinearMode> quant_mode;

    void validate() const;
    std::size_t head_dim() const noexcept { return d_model / n_heads; }
    LinearMode mode_of(const std::string& linear) const;
    // "layers.<i>.attn.{q,k,v,o}" and "layers.<i>.ffn.{up,down}".
    std::vector<std::string> linear_names() const;

    bool operator==(const ModelConfig&) const = default;
};

// A projection y = W x whose weight may be held in a quantized form. `weight`
// is the full-precision (latent) matrix; `effective` is the dense matrix the
// layer actually applies, kept in sync with the quantized payload.
class QuantLinear {
public:
    QuantLinear() = default;
    QuantLinear(std::string name, Matrix weight);

    const std::string& name() const noexcept { return name_; }
    LinearMode mode() const noexcept { return mode_; }
    std::size_t out_features() const noexcept { return static_cast<std::size_t>(weight_.rows()); }
    std::size_t in_features() const noexcept { return static_cast<std::size_t>(weight_.cols()); }

    const Matrix& weight() const noexcept { return weight_; }
    Matrix& mutable_weight() noexcept { return weight_; }
    const Matrix& effective() const noexcept { return mode_ == LinearMode::fp ? weight_ : effective_; }

    void set_fp();
    void quantize_rtn(const quant::QuantSpec& spec);
    void quantize_sign(std::size_t group_size);
    // Scales from an asymmetric-shifted 2-bit RTN pass, then split.
    void quantize_fdb(std::size_t group_size);
    // Re-split the frozen latent weights with new scales.
    void set_fdb_scales(std::span<const quant::ScalePair> scales);

    // Restore a payload read from a checkpoint.
    void load_rtn(quant::GroupedIntQuant q);
    void load_sign(quant::SignBinarized b);
    void load_fdb(quant::DualBinaryWeight d);

    const std::optional<quant::GroupedIntQuant>& rtn() const noexcept { return rtn_; }
    const std::optional<quant::SignBinarized>& sign() const noexcept { return sign_; }
    const std::optional<quant::DualBinaryWeight>& fdb() const noexcept { return fdb_; }

    // inputs (n x in) -> (n x out). Dual-binary layers go through the
    // bit-plane kernel; every other mode multiplies by the dense matrix.
    Matrix apply(const Matrix& inputs) const;

private:
    void clear_payloads();

    std::string name_;
    LinearMode mode_ = LinearMode::fp;
    Matrix weight_;
    Matrix effective_;
    std::optional<quant::GroupedIntQuant> rtn_;
    std::optional<quant::SignBinarized> sign_;
    std::optional<quant::DualBinaryWeight> fdb_;
};

struct Block {
    Vector norm1;
    Vector norm2;
    QuantLinear q, k, v, o, up, down;
};

struct BlockCache {
    Matrix x_in, h1, q, k, v, attn, x_mid, h2, up_pre, up_act;
    Vector inv_rms1, inv_rms2;
    std::vector<Matrix> probs;  // one (T x T) matrix per head
};

struct ForwardCache {
    std::vector<int> tokens;
    std::vector<BlockCache> blocks;
    Matrix x_final, h_final;
    Vector inv_rms_final;
};

// Full-precision parameter tensor, for the optimizer and for checkpoints.
struct ParamRef {
    std::string name;
    Matrix* value;
    bool decay;
};

// RMSNorm gain vector.
struct GainRef {
    std::string name;
    Vector* value;
};

struct Gradients {
    std::vector<Matrix> params;                          // aligned with parameters()
    std::vector<Vector> gains;                           // aligned with gains()
    std::vector<std::vector<kernel::ScaleGrad>> scales;  // aligned with linears()

    void zero();
};

enum class GradMode {
    all_parameters,  // every full-precision tensor; quantized layers not allowed
    fdb_scales,      // only scale pairs of dual-binary layers
};

class TransformerLM {
public:
    TransformerLM() = default;
    explicit TransformerLM(ModelConfig config);  // all weights zero

    static TransformerLM random_init(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return config_; }

    LogitsBatch forward(std::span<const int> tokens) const;
    LogitsBatch forward(std::span<const int> tokens, ForwardCache& cache) const;
    void backward(const ForwardCache& cache, const Matrix& dlogits, Gradients& grads, GradMode mode) const;

    Gradients make_gradients() const;

    std::vector<ParamRef> parameters();
    std::vector<GainRef> gains();
    std::vector<QuantLinear*> linears();
    std::vector<const QuantLinear*> linears() const;
    QuantLinear& linear(const std::string& name);

    // Refreshes config().quant_mode after layers were (re)quantized.
    void sync_quant_modes();

    Matrix tok_emb;   // vocab x d
    Matrix pos_emb;   // max_seq x d
    std::vector<Block> blocks;
    Vector norm_final;
    Matrix head;      // vocab x d

private:
    void check_tokens(std::span<const int> tokens) const;

    ModelConfig config_;
};

// Token-at-a-time evaluation with cached keys and values; produces the same
// logits as TransformerLM::forward on the growing prefix.
class Decoder {
public:
    explicit Decoder(const TransformerLM& model);
    Vector step(int token);
    std::size_t position() const noexcept { return pos_; }

private:
    const TransformerLM& model_;
    std::size_t pos_ = 0;
    std::vector<Matrix> keys_;
    std::vector<Matrix> values_;
};

// exp of the mean next-token negative log-likelihood. Sequences longer than
// max_seq_len are scored in consecutive windows that overlap by one token,
// so every token after the first is predicted exactly once.
double perplexity(const TransformerLM& model, std::span<const int> tokens);
// Per-target negative log-likelihoods in the same order.
std::vector<double> token_nll(const TransformerLM& model, std::span<const int> tokens);

// Ancestral sampling at the given temperature from a seeded stream.
std::vector<int> sample(const TransformerLM& model, std::span<const int> prompt, std::size_t n_tokens,
                        double temperature, std::uint64_t seed);

enum class QuantMethod { rtn, sign, fdb };
QuantMethod parse_quant_method(const std::string& s);
const char* to_string(QuantMethod m) noexcept;

// Quantizes every linear projection; embeddings and LM head stay fp.
void quantize_model(TransformerLM& model, QuantMethod method, const quant::QuantSpec& spec);

// Numerically stable log-softmax of one row.
void log_softmax_row(const double* logits, std::size_t n, double* out);

}  // namespace fdbq::model
