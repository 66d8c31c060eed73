#include "fdbq/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fdbq/error.hpp"
#include "fdbq/losses.hpp"
#include "fdbq/rng.hpp"
#include "fdbq/train.hpp"

namespace fdbq::distill {

void DistillConfig::validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error(ErrorKind::invalid_argument, "distill: gamma must be in [0, 1]");
    if (!(lambda >= 0.0)) throw Error(ErrorKind::invalid_argument, "distill: lambda must be >= 0");
    if (!(learning_rate >= 0.0)) throw Error(ErrorKind::invalid_argument, "distill: learning rate must be >= 0");
    if (batch_size == 0) throw Error(ErrorKind::invalid_argument, "distill: batch_size must be positive");
    if (calib_samples == 0) throw Error(ErrorKind::invalid_argument, "distill: calib_samples must be positive");
    if (calib_len < 2) throw Error(ErrorKind::invalid_argument, "distill: calib_len must be >= 2");
    if (!(weight_decay >= 0.0)) throw Error(ErrorKind::invalid_argument, "distill: weight_decay must be >= 0");
}

std::size_t DistillConfig::total_steps() const noexcept {
    if (steps > 0) return steps;
    return epochs * ((calib_samples + batch_size - 1) / batch_size);
}

std::vector<std::vector<int>> generate_calibration(const model::TransformerLM& teacher, std::size_t samples,
                                                   std::size_t length, std::uint64_t seed) {
    const auto& cfg = teacher.config();
    if (length < 1 || length > cfg.max_seq_len)
        throw Error(ErrorKind::invalid_argument, "generate_calibration: length must be in [1, max_seq_len]");
    Rng root(seed, 0x63616c6962);
    std::vector<std::vector<int>> out;
    out.reserve(samples);
    for (std::size_t i = 0; i < samples; ++i) {
        Rng r = root.derive(i);
        const int first = static_cast<int>(r.below(cfg.vocab_size));
        const int prompt[] = {first};
        out.push_back(model::sample(teacher, prompt, length - 1, 1.0, r.next_u64()));
    }
    return out;
}

quant::ScalePair project_scales(quant::ScalePair p, double margin) noexcept {
    if (p.degenerate()) return p;
    p.alpha2 = std::min(p.alpha2, -margin);
    p.alpha1 = std::max(p.alpha1, -p.alpha2 + margin);
    return p;
}

FinetuneResult finetune_fdb(model::TransformerLM& student, const model::TransformerLM& teacher,
                            const std::vector<std::vector<int>>& calib, const DistillConfig& cfg,
                            const std::function<void(const TraceRow&)>& on_step) {
    cfg.validate();
    const auto& sc = student.config();
    const auto& tc = teacher.config();
    if (sc.n_layers != tc.n_layers || sc.d_model != tc.d_model || sc.n_heads != tc.n_heads || sc.d_ffn != tc.d_ffn ||
        sc.vocab_size != tc.vocab_size || sc.max_seq_len != tc.max_seq_len)
        throw Error(ErrorKind::invalid_argument, "distill: teacher and student architectures differ");
    if (calib.empty()) throw Error(ErrorKind::invalid_argument, "distill: empty calibration set");

    auto layers = student.linears();
    FinetuneResult result;
    struct LayerState {
        model::QuantLinear* layer;
        std::size_t index;              // position in linears()
        std::vector<double> alpha;      // interleaved alpha1, alpha2
        std::vector<double> init;
        std::vector<double> margin;     // per group
        std::vector<bool> frozen;
        std::vector<double> m, v;
    };
    std::vector<LayerState> states;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i]->mode() != model::LinearMode::fdb) continue;
        LayerState s{layers[i], i, {}, {}, {}, {}, {}, {}};
        for (const auto& p : layers[i]->fdb()->scales) {
            s.alpha.push_back(p.alpha1);
            s.alpha.push_back(p.alpha2);
            // alpha1 + alpha2 equals the initial RTN step s0
            s.margin.push_back(1e-8 * (p.alpha1 + p.alpha2));
            s.frozen.push_back(p.degenerate());
            if (p.degenerate())
                ++result.frozen_groups;
            else
                ++result.trainable_groups;
        }
        s.init = s.alpha;
        s.m.assign(s.alpha.size(), 0.0);
        s.v.assign(s.alpha.size(), 0.0);
        states.push_back(std::move(s));
    }
    if (states.empty()) throw Error(ErrorKind::invalid_argument, "distill: student has no dual-binary layers");
    if (result.frozen_groups > 0) {
        std::ostringstream msg;
        msg << result.frozen_groups << " all-zero groups have degenerate scales and stay frozen";
        result.warnings.push_back(msg.str());
    }

    const train::AdamWConfig optim{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay};
    Rng order_rng(cfg.seed, 0x6f72646572);
    std::vector<std::size_t> order(calib.size());
    std::size_t cursor = calib.size();  // forces a shuffle on the first step

    model::Gradients grads = student.make_gradients();
    model::ForwardCache cache;
    const std::size_t steps = cfg.total_steps();
    std::vector<double> flat;

    for (std::size_t step = 0; step < steps; ++step) {
        grads.zero();
        TraceRow row;
        row.step = step;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            if (cursor == calib.size()) {
                std::iota(order.begin(), order.end(), std::size_t{0});
                for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
                cursor = 0;
            }
            const auto& seq = calib[order[cursor++]];
            const Matrix t_logits = teacher.forward(seq);
            const Matrix s_logits = student.forward(seq, cache);
            Matrix dlogits;
            const loss::BatchLoss l = loss::batch_loss(t_logits, s_logits, cfg.gamma, cfg.lambda, &dlogits);
            dlogits /= static_cast<double>(cfg.batch_size);
            student.backward(cache, dlogits, grads, model::GradMode::fdb_scales);
            row.ce += l.ce;
            row.dad += l.dad;
        }
        row.ce /= static_cast<double>(cfg.batch_size);
        row.dad /= static_cast<double>(cfg.batch_size);
        row.total = cfg.lambda * row.dad + row.ce;
        if (!std::isfinite(row.total)) {
            std::ostringstream msg;
            msg << "distill diverged: loss is " << row.total << " at step " << step;
            throw Error(ErrorKind::numeric, msg.str());
        }

        double drift = 0.0;
        std::size_t drift_n = 0;
        for (auto& s : states) {
            const auto& g = grads.scales[s.index];
            flat.assign(s.alpha.size(), 0.0);
            for (std::size_t k = 0; k < g.size(); ++k) {
                if (s.frozen[k]) continue;
                flat[2 * k] = g[k].d_alpha1;
                flat[2 * k + 1] = g[k].d_alpha2;
            }
            train::adamw_step(s.alpha.data(), flat.data(), s.m.data(), s.v.data(), s.alpha.size(), optim,
                              cfg.learning_rate, cfg.weight_decay, step + 1);
            std::vector<quant::ScalePair> pairs(g.size());
            for (std::size_t k = 0; k < pairs.size(); ++k) {
                if (s.frozen[k]) {
                    s.alpha[2 * k] = s.init[2 * k];
                    s.alpha[2 * k + 1] = s.init[2 * k + 1];
                    pairs[k] = {s.init[2 * k], s.init[2 * k + 1]};
                    continue;
                }
                pairs[k] = project_scales({s.alpha[2 * k], s.alpha[2 * k + 1]}, s.margin[k]);
                s.alpha[2 * k] = pairs[k].alpha1;
                s.alpha[2 * k + 1] = pairs[k].alpha2;
                drift += std::abs(pairs[k].alpha1 - s.init[2 * k]) + std::abs(pairs[k].alpha2 - s.init[2 * k + 1]);
                drift_n += 2;
            }
            s.layer->set_fdb_scales(pairs);
        }
        row.alpha_drift = drift_n ? drift / static_cast<double>(drift_n) : 0.0;
        result.trace.push_back(row);
        if (on_step) on_step(row);
    }
    return result;
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
    std::ostringstream out;
    out.precision(17);
    out << "step,ce,dad,total,alpha_drift\n";
    for (const auto& r : trace) out << r.step << ',' << r.ce << ',' << r.dad << ',' << r.total << ',' << r.alpha_drift << '\n';
    return out.str();
}

}  // namespace fdbq::distill
