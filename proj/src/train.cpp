#include "fdbq/train.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "fdbq/error.hpp"
#include "fdbq/rng.hpp"

namespace fdbq::train {

void adamw_step(double* param, const double* grad, double* m, double* v, std::size_t n, const AdamWConfig& cfg,
                double lr, double weight_decay, std::uint64_t step) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + weight_decay * param[i]);
    }
}

double scheduled_lr(const TrainConfig& cfg, std::size_t step) {
    const double base = cfg.optim.lr;
    if (step < cfg.warmup_steps) return base * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
    const std::size_t span = cfg.steps > cfg.warmup_steps ? cfg.steps - cfg.warmup_steps : 1;
    const double progress = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(span));
    const double floor = base * cfg.min_lr_ratio;
    return floor + (base - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainResult train_teacher(model::TransformerLM& model, const std::vector<int>& tokens, const TrainConfig& cfg,
                          const std::function<void(std::size_t, double)>& on_step) {
    const auto& mc = model.config();
    if (cfg.seq_len < 2 || cfg.seq_len > mc.max_seq_len)
        throw Error(ErrorKind::invalid_argument, "train_teacher: seq_len must be in [2, max_seq_len]");
    if (cfg.batch_size == 0) throw Error(ErrorKind::invalid_argument, "train_teacher: batch_size must be positive");
    if (tokens.size() < cfg.seq_len + 1)
        throw Error(ErrorKind::invalid_argument, "train_teacher: corpus shorter than one training window");
    for (int t : tokens)
        if (t < 0 || static_cast<std::size_t>(t) >= mc.vocab_size)
            throw Error(ErrorKind::invalid_argument, "train_teacher: corpus token outside the model vocabulary");

    auto params = model.parameters();
    auto gains = model.gains();
    model::Gradients grads = model.make_gradients();
    std::vector<Matrix> pm, pv;
    std::vector<Vector> gm, gv;
    for (const auto& p : params) {
        pm.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
        pv.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    }
    for (const auto& g : gains) {
        gm.push_back(Vector::Zero(g.value->size()));
        gv.push_back(Vector::Zero(g.value->size()));
    }

    Rng rng(cfg.seed, 0x747261696e);
    const std::size_t V = mc.vocab_size;
    const std::size_t T = cfg.seq_len;
    const std::size_t max_start = tokens.size() - T - 1;
    TrainResult result;
    model::ForwardCache cache;
    std::vector<double> lp(V);

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        grads.zero();
        double loss = 0.0;
        const double scale = 1.0 / static_cast<double>(cfg.batch_size * T);
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const std::size_t start = rng.below(max_start + 1);
            const std::span<const int> input(tokens.data() + start, T);
            const Matrix logits = model.forward(input, cache);
            Matrix dlogits(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(V));
            for (std::size_t t = 0; t < T; ++t) {
                const auto r = static_cast<Eigen::Index>(t);
                model::log_softmax_row(logits.row(r).data(), V, lp.data());
                const auto target = static_cast<std::size_t>(tokens[start + t + 1]);
                loss -= lp[target];
                for (std::size_t i = 0; i < V; ++i) dlogits(r, static_cast<Eigen::Index>(i)) = std::exp(lp[i]) * scale;
                dlogits(r, static_cast<Eigen::Index>(target)) -= scale;
            }
            model.backward(cache, dlogits, grads, model::GradMode::all_parameters);
        }
        loss *= scale;
        if (!std::isfinite(loss)) {
            std::ostringstream msg;
            msg << "training diverged: loss is " << loss << " at step " << step;
            throw Error(ErrorKind::numeric, msg.str());
        }
        result.loss_trace.push_back(loss);
        if (on_step) on_step(step, loss);

        if (cfg.grad_clip > 0.0) {
            double sq = 0.0;
            for (const auto& g : grads.params) sq += g.squaredNorm();
            for (const auto& g : grads.gains) sq += g.squaredNorm();
            const double norm = std::sqrt(sq);
            if (!std::isfinite(norm)) {
                std::ostringstream msg;
                msg << "training diverged: gradient norm is " << norm << " at step " << step;
                throw Error(ErrorKind::numeric, msg.str());
            }
            if (norm > cfg.grad_clip) {
                const double c = cfg.grad_clip / norm;
                for (auto& g : grads.params) g *= c;
                for (auto& g : grads.gains) g *= c;
            }
        }
        const double lr = scheduled_lr(cfg, step);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double wd = params[i].decay ? cfg.optim.weight_decay : 0.0;
            adamw_step(params[i].value->data(), grads.params[i].data(), pm[i].data(), pv[i].data(),
                       static_cast<std::size_t>(params[i].value->size()), cfg.optim, lr, wd, step + 1);
        }
        for (std::size_t i = 0; i < gains.size(); ++i)
            adamw_step(gains[i].value->data(), grads.gains[i].data(), gm[i].data(), gv[i].data(),
                       static_cast<std::size_t>(gains[i].value->size()), cfg.optim, lr, 0.0, step + 1);
    }
    if (!result.loss_trace.empty()) {
        result.initial_loss = result.loss_trace.front();
        result.final_loss = result.loss_trace.back();
    }
    return result;
}

}  // namespace fdbq::train
