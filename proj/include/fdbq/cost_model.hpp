#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace fdbq::kernel {

struct ArchDims {
    std::string name;
    std::size_t layers = 0;
    std::size_t hidden = 0;
    std::size_t ffn = 0;
    std::size_t vocab = 0;
    std::size_t heads = 0;
    bool gated_ffn = false;  // gate/up/down instead of up/down
};

ArchDims llama1_7b();
ArchDims toy_arch();
// Accepts "llama1-7b" and "toy"; throws for anything else.
ArchDims arch_preset(const std::string& name);

enum class CostMethod { fp16, int3, int2, binarization, fdb };

const char* to_string(CostMethod m) noexcept;
CostMethod parse_cost_method(const std::string& name);

struct PlaneSparsity {
    double plane1 = 0.0;
    double plane2 = 0.0;
    static PlaneSparsity uniform(double s) { return {s, s}; }
};

struct CostReport {
    CostMethod method = CostMethod::fp16;
    std::size_t seq_len = 0;
    std::uint64_t model_size_bytes = 0;
    double sparsity_plane1 = 0.0;
    double sparsity_plane2 = 0.0;
    double sparsity_avg = 0.0;
    double flops_fp = 0.0;            // whole forward pass at fp16
    double flops_weight_fp = 0.0;     // quantizable projections only
    double flops_nonweight = 0.0;     // attention products + LM head
    double equiv_flops_method = 0.0;
    std::string formula;
};

// FLOPs count every multiply-accumulate as two operations. Quantized
// projections cost bits/16 of an fp16 MAC per stored bit plane, discounted
// by that plane's zero fraction; attention products and the LM head stay at
// fp16. Sign binarization always reports sparsity 0.
CostReport cost_model(const ArchDims& arch, std::size_t seq_len, CostMethod method, PlaneSparsity sparsity,
                      std::size_t group_size = 64);

}  // namespace fdbq::kernel
