#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fdbq/model.hpp"

namespace fdbq::diag {

// Vocabulary split by corpus frequency rank. Tokens that never occur in the
// corpus belong to neither side.
struct Partition {
    std::vector<int> head;  // most frequent first
    std::vector<int> tail;
    double head_quantile = 0.0;
};

// head = the ceil(q * observed) most frequent observed tokens (ties broken by
// smaller id), tail = every other observed token.
Partition frequency_partition(std::span<const std::size_t> frequencies, double head_quantile);

struct BiasReport {
    double head_count = 0.0;   // greedy predictions landing in the head
    double tail_count = 0.0;
    double other_count = 0.0;  // predictions of tokens outside both sides
    std::size_t predictions = 0;
    std::size_t head_size = 0;
    std::size_t tail_size = 0;
    // (head_count / head_size) / (tail_count / tail_size)
    double head_tail_ratio = 0.0;
    // Frequency ranks covered by each side, [first, last] inclusive.
    std::size_t head_rank_first = 0, head_rank_last = 0;
    std::size_t tail_rank_first = 0, tail_rank_last = 0;
};

// Greedy next-token predictions at every position of every context. When
// several tokens share the maximum logit, each receives an equal fraction of
// the prediction.
BiasReport head_tail_bias(const model::TransformerLM& model, const std::vector<std::vector<int>>& contexts,
                          const Partition& partition);

// Spearman rank correlation with average ranks for ties. Returns NaN when
// either side is constant or the inputs hold fewer than two points.
double spearman(std::span<const double> x, std::span<const double> y);

struct EntropyLossPoint {
    std::size_t sequence = 0;
    std::size_t position = 0;
    double teacher_entropy = 0.0;
    double teacher_loss = 0.0;
    double student_entropy = 0.0;
    double student_loss = 0.0;
};

struct CorrelationReport {
    std::vector<EntropyLossPoint> points;
    double teacher_spearman = 0.0;
    double student_spearman = 0.0;
    // Empty when both coefficients are defined; otherwise explains the NaN.
    std::vector<std::string> flags;
};

// Per-position prediction entropy against next-token NLL on held-out text.
CorrelationReport entropy_loss_correlation(const model::TransformerLM& student, const model::TransformerLM& teacher,
                                           const std::vector<std::vector<int>>& eval_set);

std::string correlation_csv(const CorrelationReport& r);

}  // namespace fdbq::diag
