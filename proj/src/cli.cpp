#include "fdbq/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "fdbq/checkpoint.hpp"
#include "fdbq/codec.hpp"
#include "fdbq/corpus.hpp"
#include "fdbq/cost_model.hpp"
#include "fdbq/diagnostics.hpp"
#include "fdbq/distill.hpp"
#include "fdbq/kernels.hpp"
#include "fdbq/landscape.hpp"
#include "fdbq/report.hpp"
#include "fdbq/rng.hpp"
#include "fdbq/train.hpp"

namespace fdbq::cli {

using nlohmann::json;
namespace fs = std::filesystem;

int exit_code_for(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::invalid_argument: return exit_usage;
        case ErrorKind::io: return exit_io;
        case ErrorKind::shape_mismatch:
        case ErrorKind::format: return exit_data;
        case ErrorKind::numeric: return exit_numeric;
    }
    return exit_internal;
}

namespace {

struct Output {
    fs::path path;
    report::Report report;
};

struct Context {
    std::string command;
    json cfg;
    std::ostream& log;
};

struct Command {
    std::string name;
    std::string help;
    json defaults;
    std::vector<std::string> required;  // keys that must be non-empty strings
    std::function<std::vector<Output>(Context&)> run;
};

// ------------------------------------------------------------------ config

json coerce(const json& def, const std::string& key, const json& value) {
    auto bad = [&](const char* want) {
        return Error(ErrorKind::invalid_argument, "config key '" + key + "' expects " + want + ", got " + value.dump());
    };
    if (def.is_boolean()) {
        if (!value.is_boolean()) throw bad("a boolean");
        return value;
    }
    if (def.is_number_integer()) {
        if (value.is_number_unsigned()) return value;
        if (value.is_number_integer() && value.get<std::int64_t>() >= 0) return json(value.get<std::uint64_t>());
        throw bad("a non-negative integer");
    }
    if (def.is_number_float()) {
        if (!value.is_number()) throw bad("a number");
        const double d = value.get<double>();
        if (!std::isfinite(d)) throw bad("a finite number");
        return json(d);
    }
    if (!value.is_string()) throw bad("a string");
    return value;
}

json parse_text_value(const json& def, const std::string& key, const std::string& text) {
    auto bad = [&](const char* want) {
        return Error(ErrorKind::invalid_argument, "config key '" + key + "' expects " + want + ", got '" + text + "'");
    };
    if (def.is_boolean()) {
        if (text == "true" || text == "1" || text == "yes") return true;
        if (text == "false" || text == "0" || text == "no") return false;
        throw bad("true or false");
    }
    if (def.is_number_integer()) {
        if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos)
            throw bad("a non-negative integer");
        try {
            return json(static_cast<std::uint64_t>(std::stoull(text)));
        } catch (const std::exception&) {
            throw bad("a non-negative integer");
        }
    }
    if (def.is_number_float()) {
        std::size_t used = 0;
        double d = 0.0;
        try {
            d = std::stod(text, &used);
        } catch (const std::exception&) {
            throw bad("a number");
        }
        if (used != text.size() || !std::isfinite(d)) throw bad("a finite number");
        return json(d);
    }
    return json(text);
}

std::string dashed(std::string key) {
    for (char& c : key)
        if (c == '_') c = '-';
    return key;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::string str(const json& cfg, const char* key) { return cfg.at(key).get<std::string>(); }
std::size_t uint(const json& cfg, const char* key) { return cfg.at(key).get<std::size_t>(); }
double num(const json& cfg, const char* key) { return cfg.at(key).get<double>(); }

fs::path resolve_report_path(const std::string& command, const json& cfg, const std::string& suffix = "") {
    const std::string explicit_path = cfg.value("report", std::string());
    if (!explicit_path.empty()) return explicit_path + suffix;
    if (const char* dir = std::getenv(report_dir_env); dir && *dir)
        return fs::path(dir) / (command + suffix + ".json");
    if (cfg.contains("out") && !str(cfg, "out").empty()) return str(cfg, "out") + suffix + ".report.json";
    return command + suffix + ".report.json";
}

report::Report make_report(const Context& ctx, std::uint64_t seed) {
    report::Report r;
    r.command = ctx.command;
    r.config = ctx.cfg;
    r.seed = seed;
    return r;
}

model::ModelConfig model_config(const json& cfg) {
    model::ModelConfig c;
    c.n_layers = uint(cfg, "n_layers");
    c.d_model = uint(cfg, "d_model");
    c.n_heads = uint(cfg, "n_heads");
    c.d_ffn = uint(cfg, "d_ffn");
    c.vocab_size = uint(cfg, "vocab_size");
    c.max_seq_len = uint(cfg, "max_seq_len");
    c.validate();
    return c;
}

std::vector<int> read_tokens(const std::string& path, std::size_t vocab_size) {
    const auto tokens = corpus::tokenize_bytes(corpus::read_text_file(path));
    for (int t : tokens)
        if (static_cast<std::size_t>(t) >= vocab_size)
            throw Error(ErrorKind::invalid_argument, "'" + path + "' contains a byte outside the model vocabulary");
    return tokens;
}

// Non-quantized tensors at 2 bytes per value, quantized weights at their bit
// width, and one 2-byte value per stored group scale.
std::uint64_t storage_bytes(const model::TransformerLM& m) {
    double bytes = 0.0;
    bytes += 2.0 * static_cast<double>(m.tok_emb.size() + m.pos_emb.size() + m.head.size() + m.norm_final.size());
    for (const auto& b : m.blocks) bytes += 2.0 * static_cast<double>(b.norm1.size() + b.norm2.size());
    for (const model::QuantLinear* l : m.linears()) {
        const double n = static_cast<double>(l->weight().size());
        switch (l->mode()) {
            case model::LinearMode::fp: bytes += 2.0 * n; break;
            case model::LinearMode::rtn:
                bytes += n * l->rtn()->spec.bits / 8.0 + 2.0 * static_cast<double>(l->rtn()->scales.size());
                break;
            case model::LinearMode::sign:
                bytes += n / 8.0 + 2.0 * static_cast<double>(l->sign()->scales.size());
                break;
            case model::LinearMode::fdb:
                bytes += 2.0 * n / 8.0 + 4.0 * static_cast<double>(l->fdb()->scales.size());
                break;
        }
    }
    return static_cast<std::uint64_t>(bytes);
}

// ------------------------------------------------------------------ commands

std::vector<Output> cmd_gen_corpus(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const std::string text = corpus::synthetic_text(uint(cfg, "bytes"), cfg.at("seed").get<std::uint64_t>());
    corpus::write_text_file(str(cfg, "out"), text);
    const auto freq = corpus::token_frequencies(corpus::tokenize_bytes(text), 256);
    std::size_t distinct = 0;
    for (auto f : freq) distinct += f > 0;
    auto r = make_report(ctx, cfg.at("seed").get<std::uint64_t>());
    r.metrics = {{"bytes", text.size()}, {"distinct_bytes", distinct}};
    return {{resolve_report_path(ctx.command, cfg), r}};
}

std::vector<Output> cmd_train_teacher(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto mc = model_config(cfg);
    const auto tokens = read_tokens(str(cfg, "corpus"), mc.vocab_size);
    train::TrainConfig tc;
    tc.steps = uint(cfg, "steps");
    tc.batch_size = uint(cfg, "batch_size");
    tc.seq_len = uint(cfg, "seq_len");
    tc.optim = {num(cfg, "lr"), num(cfg, "beta1"), num(cfg, "beta2"), num(cfg, "eps"), num(cfg, "weight_decay")};
    tc.warmup_steps = uint(cfg, "warmup_steps");
    tc.min_lr_ratio = num(cfg, "min_lr_ratio");
    tc.grad_clip = num(cfg, "grad_clip");
    tc.seed = cfg.at("seed").get<std::uint64_t>();

    auto model = model::TransformerLM::random_init(mc, tc.seed);
    const std::size_t every = std::max<std::size_t>(1, uint(cfg, "log_every"));
    const auto result = train::train_teacher(model, tokens, tc, [&](std::size_t step, double loss) {
        if (step % every == 0 || step + 1 == tc.steps) ctx.log << "[train-teacher] step " << step << " loss " << loss << '\n';
    });

    ckpt::Checkpoint ck{model, tc.seed, json{{"command", ctx.command}, {"corpus", str(cfg, "corpus")}}};
    ckpt::save(str(cfg, "out"), ck);

    std::size_t n_params = 0;
    for (const auto& p : model.parameters()) n_params += static_cast<std::size_t>(p.value->size());
    for (const auto& g : model.gains()) n_params += static_cast<std::size_t>(g.value->size());
    auto r = make_report(ctx, tc.seed);
    r.metrics = {{"initial_loss", result.initial_loss},
                 {"final_loss", result.final_loss},
                 {"loss_trace", result.loss_trace},
                 {"parameters", n_params},
                 {"corpus_tokens", tokens.size()},
                 {"optimizer",
                  {{"name", "adamw"},
                   {"lr", tc.optim.lr},
                   {"beta1", tc.optim.beta1},
                   {"beta2", tc.optim.beta2},
                   {"eps", tc.optim.eps},
                   {"weight_decay", tc.optim.weight_decay},
                   {"warmup_steps", tc.warmup_steps},
                   {"min_lr_ratio", tc.min_lr_ratio},
                   {"grad_clip", tc.grad_clip},
                   {"schedule", "linear warmup, cosine decay"}}}};
    return {{resolve_report_path(ctx.command, cfg), r}};
}

std::vector<Output> cmd_quantize(Context& ctx) {
    const auto& cfg = ctx.cfg;
    auto ck = ckpt::load(str(cfg, "checkpoint"));
    const auto method = model::parse_quant_method(str(cfg, "method"));
    quant::QuantSpec spec;
    spec.bits = static_cast<int>(uint(cfg, "bits"));
    spec.group_size = uint(cfg, "group_size");
    const std::string range = str(cfg, "range");
    if (range == "symmetric")
        spec.range = quant::RangeMode::symmetric;
    else if (range == "asymmetric_shifted")
        spec.range = quant::RangeMode::asymmetric_shifted;
    else
        throw Error(ErrorKind::invalid_argument, "range must be symmetric or asymmetric_shifted, got '" + range + "'");
    if (method == model::QuantMethod::fdb && (spec.bits != 2 || spec.range != quant::RangeMode::asymmetric_shifted))
        throw Error(ErrorKind::invalid_argument, "fdb starts from 2-bit asymmetric_shifted scales (bits=2, range=asymmetric_shifted)");
    if (spec.group_size == 0) throw Error(ErrorKind::invalid_argument, "group_size must be positive");
    if (method == model::QuantMethod::rtn) spec.validate();

    std::ostringstream problems;
    for (const model::QuantLinear* l : std::as_const(ck.model).linears())
        if (l->in_features() % spec.group_size != 0)
            problems << "\n  " << l->name() << ": in_features " << l->in_features() << " is not a multiple of group_size "
                     << spec.group_size;
    if (!problems.str().empty())
        throw Error(ErrorKind::invalid_argument, "incompatible group size:" + problems.str());

    model::quantize_model(ck.model, method, spec);

    json layers = json::object();
    double weights = 0.0, s1 = 0.0, s2 = 0.0, eff = 0.0;
    for (const model::QuantLinear* l : std::as_const(ck.model).linears()) {
        json info{{"mode", model::to_string(l->mode())}};
        const double n = static_cast<double>(l->weight().size());
        double p1 = 0.0, p2 = 0.0, bits = 0.0;
        switch (l->mode()) {
            case model::LinearMode::fdb:
                p1 = kernel::plane_sparsity(l->fdb()->plane1);
                p2 = kernel::plane_sparsity(l->fdb()->plane2);
                bits = codec::effective_bits(*l->fdb());
                info["effective_bits"] = bits;
                info["sparsity_plane1"] = p1;
                info["sparsity_plane2"] = p2;
                info["sparsity_avg"] = (p1 + p2) / 2.0;
                break;
            case model::LinearMode::sign:
                // sign planes encode -1, never 0
                info["sparsity_plane1"] = 0.0;
                info["sparsity_avg"] = 0.0;
                bits = 1.0;
                break;
            case model::LinearMode::rtn: {
                std::size_t zeros = 0;
                for (auto c : l->rtn()->codes) zeros += c == 0;
                p1 = p2 = static_cast<double>(zeros) / n;
                info["zero_code_fraction"] = p1;
                info["sparsity_avg"] = p1;
                bits = spec.bits;
                break;
            }
            case model::LinearMode::fp: break;
        }
        layers[l->name()] = info;
        weights += n;
        s1 += p1 * n;
        s2 += p2 * n;
        eff += bits * n;
    }
    auto r = make_report(ctx, ck.rng_seed);
    r.metrics = {{"layers", layers},
                 {"sparsity_plane1", s1 / weights},
                 {"sparsity_plane2", s2 / weights},
                 {"sparsity_avg", (s1 + s2) / (2.0 * weights)},
                 {"effective_bits", eff / weights},
                 {"model_size_bytes", storage_bytes(ck.model)},
                 {"reference_llama",
                  {{"note", "published LLaMA measurements, for comparison only"},
                   {"sparsity_avg_above", 0.60},
                   {"sparsity_plane2_above", 0.70},
                   {"effective_bits_approx", 1.88}}}};
    ck.meta = json{{"command", ctx.command}, {"source", str(cfg, "checkpoint")}, {"method", str(cfg, "method")}};
    ckpt::save(str(cfg, "out"), ck);
    return {{resolve_report_path(ctx.command, cfg), r}};
}

std::vector<Output> cmd_eval(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto ck = ckpt::load(str(cfg, "checkpoint"));
    auto tokens = read_tokens(str(cfg, "text"), ck.model.config().vocab_size);
    const std::size_t max_tokens = uint(cfg, "max_tokens");
    if (max_tokens > 0 && tokens.size() > max_tokens) tokens.resize(max_tokens);
    if (tokens.size() < 2) throw Error(ErrorKind::invalid_argument, "eval text '" + str(cfg, "text") + "' needs at least two bytes");
    const auto nll = model::token_nll(ck.model, tokens);
    double sum = 0.0;
    for (double v : nll) sum += v;
    const double mean = sum / static_cast<double>(nll.size());
    const std::string csv = str(cfg, "nll_csv");
    if (!csv.empty()) {
        std::ostringstream out;
        out.precision(17);
        out << "index,target,nll\n";
        for (std::size_t i = 0; i < nll.size(); ++i) out << i + 1 << ',' << tokens[i + 1] << ',' << nll[i] << '\n';
        corpus::write_text_file(csv, out.str());
    }
    json modes = json::object();
    for (const auto& [name, mode] : ck.model.config().quant_mode) modes[name] = model::to_string(mode);
    auto r = make_report(ctx, ck.rng_seed);
    r.metrics = {{"perplexity", std::exp(mean)}, {"mean_nll", mean}, {"tokens", tokens.size()},
                 {"predictions", nll.size()}, {"quant_mode", modes}};
    return {{resolve_report_path(ctx.command, cfg), r}};
}

std::string format_gamma(double g) {
    std::ostringstream s;
    s << g;
    return s.str();
}

std::vector<Output> cmd_distill(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto student = ckpt::load(str(cfg, "student"));
    const auto teacher = ckpt::load(str(cfg, "teacher"));
    distill::DistillConfig dc;
    dc.gamma = num(cfg, "gamma");
    dc.lambda = cfg.at("no_dad").get<bool>() ? 0.0 : num(cfg, "lambda");
    dc.learning_rate = num(cfg, "lr");
    dc.batch_size = uint(cfg, "batch_size");
    dc.epochs = uint(cfg, "epochs");
    dc.steps = uint(cfg, "steps");
    dc.calib_samples = uint(cfg, "calib_samples");
    dc.calib_len = uint(cfg, "calib_len");
    dc.beta1 = num(cfg, "beta1");
    dc.beta2 = num(cfg, "beta2");
    dc.weight_decay = num(cfg, "weight_decay");
    dc.seed = cfg.at("seed").get<std::uint64_t>();
    dc.validate();

    std::vector<double> gammas;
    for (const auto& item : split_list(str(cfg, "gamma_sweep")))
        gammas.push_back(parse_text_value(json(0.0), "gamma_sweep", item).get<double>());
    const bool sweep = !gammas.empty();
    if (!sweep) gammas.push_back(dc.gamma);

    ctx.log << "[distill] generating " << dc.calib_samples << " calibration samples of " << dc.calib_len << " tokens\n";
    const auto calib = distill::generate_calibration(teacher.model, dc.calib_samples, dc.calib_len, dc.seed);

    std::vector<int> eval_tokens;
    double ppl_init = 0.0;
    if (!str(cfg, "eval_text").empty()) {
        eval_tokens = read_tokens(str(cfg, "eval_text"), student.model.config().vocab_size);
        ppl_init = model::perplexity(student.model, eval_tokens);
    }

    std::vector<Output> outputs;
    for (double g : gammas) {
        distill::DistillConfig run_cfg = dc;
        run_cfg.gamma = g;
        ckpt::Checkpoint out{student.model, student.rng_seed, student.meta};
        const std::size_t every = std::max<std::size_t>(1, uint(cfg, "log_every"));
        const auto result = distill::finetune_fdb(out.model, teacher.model, calib, run_cfg, [&](const distill::TraceRow& row) {
            if (row.step % every == 0)
                ctx.log << "[distill] gamma " << g << " step " << row.step << " total " << row.total << " ce " << row.ce
                        << " dad " << row.dad << '\n';
        });
        const std::string suffix = sweep ? ".gamma-" + format_gamma(g) : "";
        const std::string out_path = str(cfg, "out") + suffix;
        ckpt::save(out_path, out);
        const std::string trace_path = str(cfg, "trace").empty() ? out_path + ".trace.csv" : str(cfg, "trace") + suffix;
        corpus::write_text_file(trace_path, distill::trace_csv(result.trace));

        auto r = make_report(ctx, dc.seed);
        json m{{"gamma", g},
               {"lambda", run_cfg.lambda},
               {"steps", result.trace.size()},
               {"trainable_groups", result.trainable_groups},
               {"frozen_groups", result.frozen_groups},
               {"warnings", result.warnings},
               {"checkpoint", out_path},
               {"trace_csv", trace_path},
               {"calibration", {{"samples", calib.size()}, {"length", dc.calib_len}}}};
        if (!result.trace.empty()) {
            m["initial_total"] = result.trace.front().total;
            m["final_total"] = result.trace.back().total;
            m["final_ce"] = result.trace.back().ce;
            m["final_dad"] = result.trace.back().dad;
            m["final_alpha_drift"] = result.trace.back().alpha_drift;
        }
        if (!eval_tokens.empty()) {
            m["perplexity_init"] = ppl_init;
            m["perplexity_final"] = model::perplexity(out.model, eval_tokens);
        }
        r.metrics = m;
        outputs.push_back({resolve_report_path(ctx.command, cfg, suffix), r});
    }
    return outputs;
}

std::vector<Output> cmd_bench(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto arch = kernel::arch_preset(str(cfg, "arch"));
    const std::size_t seq = uint(cfg, "seq_len");
    json rows = json::array();
    std::vector<double> flops;
    std::vector<kernel::CostMethod> methods;
    for (const auto& name : split_list(str(cfg, "methods"))) methods.push_back(kernel::parse_cost_method(name));
    if (methods.empty()) throw Error(ErrorKind::invalid_argument, "bench: no methods given");
    std::string formula;
    for (auto m : methods) {
        kernel::PlaneSparsity sp;
        switch (m) {
            case kernel::CostMethod::fp16: break;
            case kernel::CostMethod::int3: sp = kernel::PlaneSparsity::uniform(num(cfg, "sparsity_3bit")); break;
            case kernel::CostMethod::int2: sp = kernel::PlaneSparsity::uniform(num(cfg, "sparsity_2bit")); break;
            case kernel::CostMethod::binarization: break;
            case kernel::CostMethod::fdb: sp = {num(cfg, "sparsity_fdb_plane1"), num(cfg, "sparsity_fdb_plane2")}; break;
        }
        const auto rep = kernel::cost_model(arch, seq, m, sp, uint(cfg, "group_size"));
        formula = rep.formula;
        rows.push_back({{"method", kernel::to_string(m)},
                        {"model_size_bytes", rep.model_size_bytes},
                        {"sparsity_plane1", rep.sparsity_plane1},
                        {"sparsity_plane2", rep.sparsity_plane2},
                        {"sparsity_avg", rep.sparsity_avg},
                        {"flops_fp", rep.flops_fp},
                        {"flops_weight_fp", rep.flops_weight_fp},
                        {"flops_nonweight", rep.flops_nonweight},
                        {"equiv_flops", rep.equiv_flops_method},
                        {"equiv_gflops", rep.equiv_flops_method / 1e9}});
        flops.push_back(rep.equiv_flops_method);
    }
    // Expected order fdb < binarization < 2bit < 3bit < fp16 among the
    // methods present.
    auto rank = [](kernel::CostMethod m) {
        switch (m) {
            case kernel::CostMethod::fdb: return 0;
            case kernel::CostMethod::binarization: return 1;
            case kernel::CostMethod::int2: return 2;
            case kernel::CostMethod::int3: return 3;
            case kernel::CostMethod::fp16: return 4;
        }
        return 5;
    };
    bool ordered = true;
    for (std::size_t i = 0; i < methods.size(); ++i)
        for (std::size_t j = 0; j < methods.size(); ++j)
            if (rank(methods[i]) < rank(methods[j]) && !(flops[i] < flops[j])) ordered = false;
    auto r = make_report(ctx, 0);
    r.metrics = {{"arch", arch.name}, {"seq_len", seq}, {"rows", rows}, {"ordering_holds", ordered}, {"formula", formula}};
    if (arch.name == "llama1-7b" && seq == 32)
        r.metrics["reference_gflops"] = {{"fp16", 423.4}, {"3bit", 88.2}, {"2bit", 37.3}, {"binarization", 36.4}, {"fdb", 29.8}};
    return {{resolve_report_path(ctx.command, cfg), r}};
}

json method_json(const landscape::MethodResult& m) {
    return {{"min_loss", m.optimum.min_loss},
            {"layer_proxy_mse", m.optimum.layer_proxy_mse},
            {"surface_min", m.surface.min_loss},
            {"surface_mean", m.surface.loss.mean()},
            {"surface_argmin", {m.surface.argmin1, m.surface.argmin2}},
            {"flatness", m.flatness}};
}

std::vector<Output> cmd_landscape(Context& ctx) {
    const auto& cfg = ctx.cfg;
    landscape::GridSpec spec{num(cfg, "factor_min"), num(cfg, "factor_max"), uint(cfg, "steps")};
    spec.validate();
    const auto deltas = landscape::symmetric_deltas(num(cfg, "radius"), uint(cfg, "surface_steps"));
    const std::size_t group = uint(cfg, "group_size");
    if (group == 0) throw Error(ErrorKind::invalid_argument, "landscape: group_size must be positive");
    const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
    const std::size_t batch = uint(cfg, "batch");
    const std::string source = str(cfg, "source");
    const fs::path report_path = resolve_report_path(ctx.command, cfg);
    const std::string csv_prefix = str(cfg, "csv_prefix").empty() ? report_path.string() : str(cfg, "csv_prefix");

    struct Layer {
        std::string name;
        quant::WeightMatrix w;
        Matrix probes;
    };
    std::vector<Layer> layers;
    if (source == "synthetic") {
        Rng root(seed, 0x6c616e64);
        for (std::size_t i = 0; i < uint(cfg, "layers"); ++i) {
            Rng r = root.derive(i);
            quant::WeightMatrix w(uint(cfg, "rows"), uint(cfg, "cols"));
            for (Eigen::Index k = 0; k < w.values().size(); ++k) w.values().data()[k] = r.normal();
            layers.push_back({"synthetic." + std::to_string(i), std::move(w),
                              landscape::gaussian_probes(batch, uint(cfg, "cols"), r.next_u64())});
        }
    } else {
        auto ck = ckpt::load(source);
        const std::string name = str(cfg, "layer");
        const auto& lin = ck.model.linear(name);
        Matrix probes;
        if (str(cfg, "probe") == "recorded") {
            const auto tokens = read_tokens(str(cfg, "probe_text"), ck.model.config().vocab_size);
            std::vector<std::vector<int>> seqs;
            const std::size_t T = ck.model.config().max_seq_len;
            for (std::size_t s = 0; s + T <= tokens.size(); s += T) seqs.emplace_back(tokens.begin() + s, tokens.begin() + s + T);
            probes = landscape::record_layer_inputs(ck.model, name, seqs, batch);
        } else if (str(cfg, "probe") == "gaussian") {
            probes = landscape::gaussian_probes(batch, lin.in_features(), seed);
        } else {
            throw Error(ErrorKind::invalid_argument, "landscape: probe must be gaussian or recorded");
        }
        layers.push_back({name, quant::WeightMatrix(lin.weight()), std::move(probes)});
    }

    json per_layer = json::array();
    std::size_t flatter = 0, nested = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& L = layers[i];
        ctx.log << "[landscape] " << L.name << '\n';
        const auto c = landscape::compare_methods(L.w, L.probes, group, spec, deltas);
        for (const landscape::MethodResult* m : {&c.binarization, &c.int2, &c.fdb})
            corpus::write_text_file(csv_prefix + ".layer" + std::to_string(i) + "." +
                                        landscape::to_string(m->optimum.method) + ".csv",
                                    landscape::grid_csv(m->surface));
        flatter += c.fdb_flatter;
        nested += c.fdb_le_int2 && c.int2_le_bin;
        per_layer.push_back({{"name", L.name},
                             {"binarization", method_json(c.binarization)},
                             {"2bit", method_json(c.int2)},
                             {"fdb", method_json(c.fdb)},
                             {"nesting_holds", c.fdb_le_int2 && c.int2_le_bin},
                             {"fdb_flatter", c.fdb_flatter}});
    }
    auto r = make_report(ctx, seed);
    r.metrics = {{"layers", per_layer},
                 {"nesting_holds_count", nested},
                 {"fdb_flatter_count", flatter},
                 {"layer_count", layers.size()},
                 {"flatness_definition", "mean surface loss / min surface loss"}};
    return {{report_path, r}};
}

std::vector<Output> cmd_diagnose(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto student = ckpt::load(str(cfg, "student"));
    const auto teacher = ckpt::load(str(cfg, "teacher"));
    const std::size_t V = teacher.model.config().vocab_size;
    const auto corpus_tokens = read_tokens(str(cfg, "corpus"), V);
    const auto partition = diag::frequency_partition(corpus::token_frequencies(corpus_tokens, V), num(cfg, "head_quantile"));
    const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
    const auto contexts = distill::generate_calibration(teacher.model, uint(cfg, "contexts"), uint(cfg, "context_len"), seed);
    const auto tb = diag::head_tail_bias(teacher.model, contexts, partition);
    const auto sb = diag::head_tail_bias(student.model, contexts, partition);

    const auto eval_tokens = read_tokens(str(cfg, "text"), V);
    std::vector<std::vector<int>> eval_set;
    const std::size_t T = teacher.model.config().max_seq_len;
    for (std::size_t s = 0; s + T <= eval_tokens.size() && eval_set.size() < uint(cfg, "eval_sequences"); s += T)
        eval_set.emplace_back(eval_tokens.begin() + s, eval_tokens.begin() + s + T);
    const auto corr = diag::entropy_loss_correlation(student.model, teacher.model, eval_set);
    const fs::path report_path = resolve_report_path(ctx.command, cfg);
    const std::string csv = str(cfg, "csv").empty() ? report_path.string() + ".entropy_loss.csv" : str(cfg, "csv");
    corpus::write_text_file(csv, diag::correlation_csv(corr));

    auto bias_json = [](const diag::BiasReport& b) {
        return json{{"head_count", b.head_count},   {"tail_count", b.tail_count},   {"other_count", b.other_count},
                    {"predictions", b.predictions}, {"head_size", b.head_size},     {"tail_size", b.tail_size},
                    {"head_tail_ratio", b.head_tail_ratio},
                    {"head_ranks", {b.head_rank_first, b.head_rank_last}},
                    {"tail_ranks", {b.tail_rank_first, b.tail_rank_last}}};
    };
    auto r = make_report(ctx, seed);
    r.metrics = {{"bias_teacher", bias_json(tb)},
                 {"bias_student", bias_json(sb)},
                 {"bias_student_over_teacher", sb.head_tail_ratio / tb.head_tail_ratio},
                 {"correlation",
                  {{"teacher_spearman", corr.teacher_spearman},
                   {"student_spearman", corr.student_spearman},
                   {"points", corr.points.size()},
                   {"flags", corr.flags},
                   {"csv", csv}}}};
    return {{report_path, r}};
}

// ------------------------------------------------------------------ table

std::vector<Command> commands() {
    const json model_keys{{"n_layers", 2u},   {"d_model", 128u},    {"n_heads", 4u},
                          {"d_ffn", 512u},    {"vocab_size", 256u}, {"max_seq_len", 64u}};
    std::vector<Command> cs;
    cs.push_back({"gen-corpus", "Write synthetic training or held-out text",
                  {{"out", ""}, {"bytes", 200000u}, {"seed", 1u}, {"report", ""}}, {"out"}, cmd_gen_corpus});
    json train{{"corpus", ""}, {"out", ""}, {"report", ""}, {"seed", 1234u}, {"steps", 2000u}, {"batch_size", 8u},
               {"seq_len", 64u}, {"lr", 3e-3}, {"beta1", 0.9}, {"beta2", 0.95}, {"eps", 1e-8}, {"weight_decay", 0.1},
               {"warmup_steps", 100u}, {"min_lr_ratio", 0.1}, {"grad_clip", 1.0}, {"log_every", 100u}};
    train.update(model_keys);
    cs.push_back({"train-teacher", "Train the full-precision teacher", train, {"corpus", "out"}, cmd_train_teacher});
    cs.push_back({"quantize", "Quantize every linear projection of a checkpoint",
                  {{"checkpoint", ""}, {"out", ""}, {"report", ""}, {"method", "fdb"}, {"bits", 2u},
                   {"group_size", 64u}, {"range", "asymmetric_shifted"}},
                  {"checkpoint", "out"}, cmd_quantize});
    cs.push_back({"distill", "Fine-tune dual-binary scales against the teacher",
                  {{"student", ""}, {"teacher", ""}, {"out", ""}, {"report", ""}, {"trace", ""}, {"eval_text", ""},
                   {"gamma", 0.1}, {"lambda", 0.1}, {"lr", 1e-5}, {"batch_size", 2u}, {"epochs", 1u}, {"steps", 0u},
                   {"calib_samples", 512u}, {"calib_len", 64u}, {"beta1", 0.9}, {"beta2", 0.999},
                   {"weight_decay", 0.0}, {"seed", 7u}, {"no_dad", false}, {"gamma_sweep", ""}, {"log_every", 20u}},
                  {"student", "teacher", "out"}, cmd_distill});
    cs.push_back({"eval", "Perplexity of a checkpoint on a text file",
                  {{"checkpoint", ""}, {"text", ""}, {"report", ""}, {"nll_csv", ""}, {"max_tokens", 0u}},
                  {"checkpoint", "text"}, cmd_eval});
    cs.push_back({"bench", "Model size, sparsity and FLOPs table",
                  {{"arch", "llama1-7b"}, {"seq_len", 32u}, {"methods", "fp16,3bit,2bit,binarization,fdb"},
                   {"sparsity_3bit", 0.0}, {"sparsity_2bit", 0.483}, {"sparsity_fdb_plane1", 0.628},
                   {"sparsity_fdb_plane2", 0.628}, {"group_size", 64u}, {"report", ""}},
                  {}, cmd_bench});
    cs.push_back({"landscape", "Grid-searched levels and loss surfaces for binarization, 2-bit and FDB",
                  {{"source", "synthetic"}, {"layer", "layers.0.ffn.up"}, {"probe", "gaussian"}, {"probe_text", ""},
                   {"layers", 1u}, {"rows", 256u}, {"cols", 256u}, {"batch", 256u}, {"group_size", 64u},
                   {"seed", 11u}, {"factor_min", 0.25}, {"factor_max", 2.0}, {"steps", 101u}, {"radius", 0.1},
                   {"surface_steps", 21u}, {"csv_prefix", ""}, {"report", ""}},
                  {}, cmd_landscape});
    cs.push_back({"diagnose", "Head/tail prediction bias and entropy-loss correlation",
                  {{"student", ""}, {"teacher", ""}, {"corpus", ""}, {"text", ""}, {"report", ""}, {"csv", ""},
                   {"contexts", 64u}, {"context_len", 64u}, {"head_quantile", 0.2}, {"eval_sequences", 32u},
                   {"seed", 5u}},
                  {"student", "teacher", "corpus", "text"}, cmd_diagnose});
    return cs;
}

json resolve_config(const Command& c, const std::string& config_path, const std::vector<std::string>& sets,
                    const std::map<std::string, std::string>& flags, const std::map<std::string, bool>& bool_flags) {
    json cfg = c.defaults;
    if (!config_path.empty()) {
        json file;
        try {
            file = json::parse(corpus::read_text_file(config_path));
        } catch (const json::exception& e) {
            throw Error(ErrorKind::invalid_argument, "config file '" + config_path + "' is not valid JSON: " + e.what());
        }
        // A report can be replayed: its resolved config is used as is.
        if (file.is_object() && file.contains("schema_version") && file.contains("config")) {
            const auto r = report::from_json(file);
            if (r.command != c.name)
                throw Error(ErrorKind::invalid_argument, "report '" + config_path + "' was written by '" + r.command + "'");
            file = r.config;
        }
        if (!file.is_object()) throw Error(ErrorKind::invalid_argument, "config file '" + config_path + "' must hold an object");
        for (const auto& [key, value] : file.items()) {
            if (!c.defaults.contains(key))
                throw Error(ErrorKind::invalid_argument, "unknown config key '" + key + "' for " + c.name);
            cfg[key] = coerce(c.defaults.at(key), key, value);
        }
    }
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw Error(ErrorKind::invalid_argument, "--set expects key=value, got '" + s + "'");
        const std::string key = s.substr(0, eq);
        if (!c.defaults.contains(key)) throw Error(ErrorKind::invalid_argument, "unknown config key '" + key + "' for " + c.name);
        cfg[key] = parse_text_value(c.defaults.at(key), key, s.substr(eq + 1));
    }
    for (const auto& [key, text] : flags) cfg[key] = parse_text_value(c.defaults.at(key), key, text);
    for (const auto& [key, on] : bool_flags)
        if (on) cfg[key] = true;
    for (const auto& key : c.required)
        if (cfg.at(key).get<std::string>().empty())
            throw Error(ErrorKind::invalid_argument, c.name + ": missing required setting '" + key + "' (--" + dashed(key) + ")");
    return cfg;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    const auto cmds = commands();
    CLI::App app{"fdbq: dual-binary weight quantization toolkit"};
    app.require_subcommand(1);
    struct Parsed {
        std::string config;
        std::vector<std::string> sets;
        std::map<std::string, std::string> values;
        std::map<std::string, bool> bools;
    };
    std::map<std::string, Parsed> parsed;
    std::map<std::string, CLI::App*> subs;
    std::map<std::string, std::map<std::string, CLI::Option*>> options;
    for (const auto& c : cmds) {
        auto* sub = app.add_subcommand(c.name, c.help);
        subs[c.name] = sub;
        auto& p = parsed[c.name];
        sub->add_option("--config", p.config, "JSON config file (or a report to replay)");
        sub->add_option("--set", p.sets, "Override one config key, key=value");
        for (const auto& [key, def] : c.defaults.items()) {
            std::string names = "--" + dashed(key);
            if (dashed(key) != key) names += ",--" + key;
            if (def.is_boolean()) {
                options[c.name][key] = sub->add_flag(names, p.bools[key], "Set " + key + " to true");
            } else {
                options[c.name][key] = sub->add_option(names, p.values[key], "default: " + def.dump());
            }
        }
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "error[usage]: " << e.what() << '\n';
        return exit_usage;
    }

    const Command* chosen = nullptr;
    for (const auto& c : cmds)
        if (subs[c.name]->parsed()) chosen = &c;
    if (!chosen) {
        err << "error[usage]: no command given\n";
        return exit_usage;
    }
    auto& p = parsed[chosen->name];
    std::map<std::string, std::string> given;
    for (const auto& [key, opt] : options[chosen->name])
        if (opt->count() > 0 && p.values.count(key)) given[key] = p.values[key];

    try {
        Context ctx{chosen->name, resolve_config(*chosen, p.config, p.sets, given, p.bools), err};
        const auto start = std::chrono::steady_clock::now();
        auto outputs = chosen->run(ctx);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        for (const auto& o : outputs) {
            report::write(o.path, o.report, secs);
            out << o.path.string() << '\n';
        }
        return exit_ok;
    } catch (const Error& e) {
        err << "error[" << to_string(e.kind()) << "]: " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const fs::filesystem_error& e) {
        err << "error[io]: " << e.what() << '\n';
        return exit_io;
    } catch (const std::exception& e) {
        err << "error[internal]: " << e.what() << '\n';
        return exit_internal;
    }
}

}  // namespace fdbq::cli
