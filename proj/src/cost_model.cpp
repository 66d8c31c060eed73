#include "fdbq/cost_model.hpp"

#include "fdbq/error.hpp"

namespace fdbq::kernel {

ArchDims llama1_7b() { return {"llama1-7b", 32, 4096, 11008, 32000, 32, true}; }

ArchDims toy_arch() { return {"toy", 2, 128, 512, 256, 4, false}; }

ArchDims arch_preset(const std::string& name) {
    if (name == "llama1-7b") return llama1_7b();
    if (name == "toy") return toy_arch();
    throw Error(ErrorKind::invalid_argument, "unknown architecture preset '" + name + "' (expected llama1-7b or toy)");
}

const char* to_string(CostMethod m) noexcept {
    switch (m) {
        case CostMethod::fp16: return "fp16";
        case CostMethod::int3: return "3bit";
        case CostMethod::int2: return "2bit";
        case CostMethod::binarization: return "binarization";
        case CostMethod::fdb: return "fdb";
    }
    return "unknown";
}

CostMethod parse_cost_method(const std::string& name) {
    if (name == "fp16") return CostMethod::fp16;
    if (name == "3bit") return CostMethod::int3;
    if (name == "2bit") return CostMethod::int2;
    if (name == "binarization") return CostMethod::binarization;
    if (name == "fdb") return CostMethod::fdb;
    throw Error(ErrorKind::invalid_argument, "unknown cost method '" + name + "' (expected fp16, 3bit, 2bit, binarization, fdb)");
}

CostReport cost_model(const ArchDims& arch, std::size_t seq_len, CostMethod method, PlaneSparsity sparsity,
                      std::size_t group_size) {
    if (arch.layers == 0 || arch.hidden == 0 || arch.ffn == 0 || arch.vocab == 0 || arch.heads == 0)
        throw Error(ErrorKind::invalid_argument, "cost_model: architecture dimensions must be positive");
    if (group_size == 0) throw Error(ErrorKind::invalid_argument, "cost_model: group_size must be positive");
    for (double s : {sparsity.plane1, sparsity.plane2})
        if (!(s >= 0.0 && s <= 1.0)) throw Error(ErrorKind::invalid_argument, "cost_model: sparsity must lie in [0, 1]");

    const double h = static_cast<double>(arch.hidden);
    const double ffn_mats = arch.gated_ffn ? 3.0 : 2.0;
    const double per_layer = 4.0 * h * h + ffn_mats * h * static_cast<double>(arch.ffn);
    const double quant_params = static_cast<double>(arch.layers) * per_layer;
    const double other_params = 2.0 * static_cast<double>(arch.vocab) * h + (2.0 * static_cast<double>(arch.layers) + 1.0) * h;
    const double groups = quant_params / static_cast<double>(group_size);
    const double seq = static_cast<double>(seq_len);

    CostReport rep;
    rep.method = method;
    rep.seq_len = seq_len;
    rep.flops_weight_fp = 2.0 * quant_params * seq;
    const double head = 2.0 * static_cast<double>(arch.vocab) * h * seq;
    const double attention = static_cast<double>(arch.layers) * 2.0 * 2.0 * seq * seq * h;
    rep.flops_nonweight = head + attention;
    rep.flops_fp = rep.flops_weight_fp + rep.flops_nonweight;

    double bits_per_plane = 16.0;
    double planes = 1.0;
    double scales_per_group = 0.0;
    switch (method) {
        case CostMethod::fp16:
            sparsity = {0.0, 0.0};
            break;
        case CostMethod::int3:
            bits_per_plane = 3.0;
            scales_per_group = 1.0;
            sparsity.plane2 = sparsity.plane1;
            break;
        case CostMethod::int2:
            bits_per_plane = 2.0;
            scales_per_group = 1.0;
            sparsity.plane2 = sparsity.plane1;
            break;
        case CostMethod::binarization:
            // Sign planes encode -1 rather than 0, so nothing is skippable.
            bits_per_plane = 1.0;
            scales_per_group = 1.0;
            sparsity = {0.0, 0.0};
            break;
        case CostMethod::fdb:
            bits_per_plane = 1.0;
            planes = 2.0;
            scales_per_group = 2.0;
            break;
    }
    rep.sparsity_plane1 = sparsity.plane1;
    rep.sparsity_plane2 = sparsity.plane2;
    rep.sparsity_avg = (sparsity.plane1 + sparsity.plane2) / 2.0;

    const double discount = bits_per_plane / 16.0;
    double weight_equiv = 0.0;
    if (planes == 2.0) {
        weight_equiv = rep.flops_weight_fp * discount * ((1.0 - sparsity.plane1) + (1.0 - sparsity.plane2));
    } else {
        weight_equiv = rep.flops_weight_fp * discount * (1.0 - sparsity.plane1);
    }
    rep.equiv_flops_method = weight_equiv + rep.flops_nonweight;

    const double bytes = method == CostMethod::fp16
                             ? 2.0 * (quant_params + other_params)
                             : 2.0 * other_params + quant_params * planes * bits_per_plane / 8.0 +
                                   2.0 * scales_per_group * groups;
    rep.model_size_bytes = static_cast<std::uint64_t>(bytes);
    rep.formula =
        "equiv_flops = sum_planes(2*MACs_weight*(bits_per_plane/16)*(1-plane_sparsity)) + "
        "2*MACs_attention + 2*MACs_lm_head; fp16 uses bits_per_plane=16 and sparsity 0";
    return rep;
}

}  // namespace fdbq::kernel
