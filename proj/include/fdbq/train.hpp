#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "fdbq/model.hpp"

namespace fdbq::train {

struct AdamWConfig {
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.1;
};

// One decoupled-weight-decay Adam step on a flat array. `step` is 1-based.
void adamw_step(double* param, const double* grad, double* m, double* v, std::size_t n, const AdamWConfig& cfg,
                double lr, double weight_decay, std::uint64_t step);

struct TrainConfig {
    std::size_t steps = 2000;
    std::size_t batch_size = 8;
    std::size_t seq_len = 64;
    AdamWConfig optim;
    std::size_t warmup_steps = 100;
    double min_lr_ratio = 0.1;  // cosine floor as a fraction of optim.lr
    double grad_clip = 1.0;     // global L2 norm; 0 disables
    std::uint64_t seed = 1234;
};

struct TrainResult {
    std::vector<double> loss_trace;  // mean CE per step
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// Learning rate at 0-based step: linear warmup then cosine decay.
double scheduled_lr(const TrainConfig& cfg, std::size_t step);

// Next-token cross-entropy training on random windows of `tokens`. Throws
// Error(numeric) naming the step when the loss stops being finite.
TrainResult train_teacher(model::TransformerLM& model, const std::vector<int>& tokens, const TrainConfig& cfg,
                          const std::function<void(std::size_t, double)>& on_step = {});

}  // namespace fdbq::train
