#pragma once

#include <cstddef>
#include <span>

#include "fdbq/matrix.hpp"

namespace fdbq::loss {

// Shannon entropy in nats with 0 log 0 = 0. Rejects negative entries and
// distributions that do not sum to 1 within 1e-9.
double entropy(std::span<const double> p);

// -sum p_t log p_s over explicit distributions. Returns +inf when p_s puts
// zero mass where p_t does not.
double soft_ce(std::span<const double> p_t, std::span<const double> p_s);

// H(p_t)^gamma * H(p_s)^(1-gamma) * soft_ce(p_t, p_s), with 0^0 = 1.
double dad_loss(std::span<const double> p_t, std::span<const double> p_s, double gamma);

double total_loss(std::span<const double> p_t, std::span<const double> p_s, double gamma, double lambda);

// Per-row forms on logits. All softmax and log terms go through a
// max-subtracted log-sum-exp, so no zero probability is ever taken the log of.
struct RowLoss {
    double ce = 0.0;
    double dad = 0.0;
    double h_teacher = 0.0;
    double h_student = 0.0;
};

// Evaluates one position and, when dz is non-null, writes
// d(lambda * dad + ce)/dz_student into dz[0..n).
RowLoss row_loss(const double* teacher_logits, const double* student_logits, std::size_t n, double gamma,
                 double lambda, double* dz);

struct BatchLoss {
    double ce = 0.0;
    double dad = 0.0;
    double total = 0.0;
};

// Averages over rows (positions). When dstudent is non-null it receives the
// gradient of the averaged total with respect to student_logits.
BatchLoss batch_loss(const Matrix& teacher_logits, const Matrix& student_logits, double gamma, double lambda,
                     Matrix* dstudent);

// Entropy of softmax(z) in nats.
double entropy_of_logits(const double* z, std::size_t n);

// softmax(z) computed via log-sum-exp.
void softmax_row(const double* z, std::size_t n, double* out);

}  // namespace fdbq::loss
