#include "fdbq/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "fdbq/error.hpp"
#include "fdbq/losses.hpp"

namespace fdbq::diag {

Partition frequency_partition(std::span<const std::size_t> frequencies, double head_quantile) {
    if (!(head_quantile > 0.0 && head_quantile < 1.0))
        throw Error(ErrorKind::invalid_argument, "frequency_partition: head quantile must be in (0, 1)");
    std::vector<int> observed;
    for (std::size_t i = 0; i < frequencies.size(); ++i)
        if (frequencies[i] > 0) observed.push_back(static_cast<int>(i));
    if (observed.size() < 2)
        throw Error(ErrorKind::invalid_argument, "frequency_partition: need at least two observed tokens");
    std::stable_sort(observed.begin(), observed.end(),
                     [&](int a, int b) { return frequencies[static_cast<std::size_t>(a)] > frequencies[static_cast<std::size_t>(b)]; });
    auto n_head = static_cast<std::size_t>(std::ceil(head_quantile * static_cast<double>(observed.size())));
    n_head = std::clamp<std::size_t>(n_head, 1, observed.size() - 1);
    Partition p;
    p.head_quantile = head_quantile;
    p.head.assign(observed.begin(), observed.begin() + static_cast<std::ptrdiff_t>(n_head));
    p.tail.assign(observed.begin() + static_cast<std::ptrdiff_t>(n_head), observed.end());
    return p;
}

BiasReport head_tail_bias(const model::TransformerLM& model, const std::vector<std::vector<int>>& contexts,
                          const Partition& partition) {
    const std::size_t V = model.config().vocab_size;
    std::vector<int> side(V, 0);  // 0 other, 1 head, 2 tail
    for (int t : partition.head) side.at(static_cast<std::size_t>(t)) = 1;
    for (int t : partition.tail) side.at(static_cast<std::size_t>(t)) = 2;

    BiasReport r;
    r.head_size = partition.head.size();
    r.tail_size = partition.tail.size();
    if (r.head_size == 0 || r.tail_size == 0)
        throw Error(ErrorKind::invalid_argument, "head_tail_bias: both partition sides must be non-empty");
    r.head_rank_first = 0;
    r.head_rank_last = r.head_size - 1;
    r.tail_rank_first = r.head_size;
    r.tail_rank_last = r.head_size + r.tail_size - 1;

    std::vector<std::size_t> ties;
    for (const auto& ctx : contexts) {
        const Matrix logits = model.forward(ctx);
        for (Eigen::Index t = 0; t < logits.rows(); ++t) {
            const double mx = logits.row(t).maxCoeff();
            ties.clear();
            for (std::size_t i = 0; i < V; ++i)
                if (logits(t, static_cast<Eigen::Index>(i)) == mx) ties.push_back(i);
            const double credit = 1.0 / static_cast<double>(ties.size());
            for (std::size_t i : ties) {
                if (side[i] == 1)
                    r.head_count += credit;
                else if (side[i] == 2)
                    r.tail_count += credit;
                else
                    r.other_count += credit;
            }
            ++r.predictions;
        }
    }
    const double head_rate = r.head_count / static_cast<double>(r.head_size);
    const double tail_rate = r.tail_count / static_cast<double>(r.tail_size);
    r.head_tail_ratio = tail_rate > 0.0 ? head_rate / tail_rate : std::numeric_limits<double>::infinity();
    return r;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
        i = j + 1;
    }
    return rank;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw Error(ErrorKind::shape_mismatch, "spearman: inputs differ in length");
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (x.size() < 2) return nan;
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mean = (n + 1.0) / 2.0;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        const double a = rx[i] - mean, b = ry[i] - mean;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if (sxx == 0.0 || syy == 0.0) return nan;
    return sxy / std::sqrt(sxx * syy);
}

CorrelationReport entropy_loss_correlation(const model::TransformerLM& student, const model::TransformerLM& teacher,
                                           const std::vector<std::vector<int>>& eval_set) {
    const std::size_t V = student.config().vocab_size;
    if (teacher.config().vocab_size != V)
        throw Error(ErrorKind::invalid_argument, "entropy_loss_correlation: vocabularies differ");
    CorrelationReport r;
    std::vector<double> lp(V);
    for (std::size_t s = 0; s < eval_set.size(); ++s) {
        const auto& seq = eval_set[s];
        if (seq.size() < 2) continue;
        const Matrix lt = teacher.forward(seq);
        const Matrix ls = student.forward(seq);
        for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
            const auto row = static_cast<Eigen::Index>(t);
            const auto target = static_cast<std::size_t>(seq[t + 1]);
            EntropyLossPoint p;
            p.sequence = s;
            p.position = t;
            p.teacher_entropy = loss::entropy_of_logits(lt.row(row).data(), V);
            model::log_softmax_row(lt.row(row).data(), V, lp.data());
            p.teacher_loss = -lp[target];
            p.student_entropy = loss::entropy_of_logits(ls.row(row).data(), V);
            model::log_softmax_row(ls.row(row).data(), V, lp.data());
            p.student_loss = -lp[target];
            r.points.push_back(p);
        }
    }
    std::vector<double> te, tl, se, sl;
    for (const auto& p : r.points) {
        te.push_back(p.teacher_entropy);
        tl.push_back(p.teacher_loss);
        se.push_back(p.student_entropy);
        sl.push_back(p.student_loss);
    }
    r.teacher_spearman = spearman(te, tl);
    r.student_spearman = spearman(se, sl);
    auto constant = [](const std::vector<double>& v) {
        return v.size() < 2 || std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
    };
    if (r.points.size() < 2) r.flags.push_back("fewer than two points: correlation undefined");
    if (constant(te)) r.flags.push_back("teacher entropy is constant: teacher correlation undefined");
    if (constant(tl)) r.flags.push_back("teacher loss is constant: teacher correlation undefined");
    if (constant(se)) r.flags.push_back("student entropy is constant: student correlation undefined");
    if (constant(sl)) r.flags.push_back("student loss is constant: student correlation undefined");
    return r;
}

std::string correlation_csv(const CorrelationReport& r) {
    std::ostringstream out;
    out.precision(17);
    out << "sequence,position,teacher_entropy,teacher_loss,student_entropy,student_loss\n";
    for (const auto& p : r.points)
        out << p.sequence << ',' << p.position << ',' << p.teacher_entropy << ',' << p.teacher_loss << ','
            << p.student_entropy << ',' << p.student_loss << '\n';
    return out.str();
}

}  // namespace fdbq::diag
