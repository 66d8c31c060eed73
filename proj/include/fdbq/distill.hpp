#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fdbq/model.hpp"

namespace fdbq::distill {

struct DistillConfig {
    double gamma = 0.1;
    double lambda = 0.1;
    double learning_rate = 1e-5;
    std::size_t batch_size = 2;
    std::size_t epochs = 1;
    // 0 runs `epochs` full passes; otherwise exactly this many steps, cycling
    // through the calibration set.
    std::size_t steps = 0;
    std::size_t calib_samples = 512;
    std::size_t calib_len = 64;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    std::uint64_t seed = 7;

    void validate() const;
    std::size_t total_steps() const noexcept;
};

// calib_samples sequences of calib_len tokens sampled from the teacher at
// temperature 1. The first token of every sequence is drawn uniformly from
// the vocabulary; sample i uses its own stream derived from `seed`.
std::vector<std::vector<int>> generate_calibration(const model::TransformerLM& teacher, std::size_t samples,
                                                   std::size_t length, std::uint64_t seed);

struct TraceRow {
    std::size_t step = 0;
    double ce = 0.0;
    double dad = 0.0;
    double total = 0.0;
    double alpha_drift = 0.0;  // mean |alpha - alpha_init| over trainable scales
};

struct FinetuneResult {
    std::vector<TraceRow> trace;
    std::size_t trainable_groups = 0;
    std::size_t frozen_groups = 0;  // degenerate (0, 0) pairs, never updated
    std::vector<std::string> warnings;
};

// Restores alpha2 <= -margin and alpha1 >= -alpha2 + margin. Degenerate pairs
// are returned unchanged.
quant::ScalePair project_scales(quant::ScalePair p, double margin) noexcept;

// Trains only the scale pairs of the student's dual-binary layers against the
// teacher's soft targets with lambda * DAD + CE. Planes are re-split from the
// frozen latent weights after every update.
FinetuneResult finetune_fdb(model::TransformerLM& student, const model::TransformerLM& teacher,
                            const std::vector<std::vector<int>>& calib, const DistillConfig& cfg,
                            const std::function<void(const TraceRow&)>& on_step = {});

// Loss trace as CSV with header "step,ce,dad,total,alpha_drift".
std::string trace_csv(const std::vector<TraceRow>& trace);

}  // namespace fdbq::distill
