#include "fdbq/losses.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "fdbq/error.hpp"
#include "fdbq/model.hpp"

namespace fdbq::loss {

namespace {

void check_distribution(std::span<const double> p, const char* what) {
    if (p.empty()) throw Error(ErrorKind::invalid_argument, std::string(what) + ": empty distribution");
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!(p[i] >= 0.0) || !std::isfinite(p[i])) {
            std::ostringstream msg;
            msg << what << ": invalid probability " << p[i] << " at index " << i;
            throw Error(ErrorKind::invalid_argument, msg.str());
        }
        sum += p[i];
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        std::ostringstream msg;
        msg << what << ": probabilities sum to " << sum;
        throw Error(ErrorKind::invalid_argument, msg.str());
    }
}

// H^e with 0^0 = 1; std::pow already follows that convention, spelled out
// here so the dependence is visible.
double entropy_power(double h, double e) {
    if (e == 0.0) return 1.0;
    return std::pow(h, e);
}

}  // namespace

double entropy(std::span<const double> p) {
    check_distribution(p, "entropy");
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

double soft_ce(std::span<const double> p_t, std::span<const double> p_s) {
    if (p_t.size() != p_s.size()) throw Error(ErrorKind::shape_mismatch, "soft_ce: distribution sizes differ");
    check_distribution(p_t, "soft_ce teacher");
    check_distribution(p_s, "soft_ce student");
    double ce = 0.0;
    for (std::size_t i = 0; i < p_t.size(); ++i) {
        if (p_t[i] == 0.0) continue;
        if (p_s[i] == 0.0) return std::numeric_limits<double>::infinity();
        ce -= p_t[i] * std::log(p_s[i]);
    }
    return ce;
}

double dad_loss(std::span<const double> p_t, std::span<const double> p_s, double gamma) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error(ErrorKind::invalid_argument, "dad_loss: gamma must be in [0, 1]");
    const double ht = entropy(p_t);
    const double hs = entropy(p_s);
    const double w = entropy_power(ht, gamma) * entropy_power(hs, 1.0 - gamma);
    if (w == 0.0) return 0.0;
    return w * soft_ce(p_t, p_s);
}

double total_loss(std::span<const double> p_t, std::span<const double> p_s, double gamma, double lambda) {
    if (!(lambda >= 0.0)) throw Error(ErrorKind::invalid_argument, "total_loss: lambda must be >= 0");
    const double ce = soft_ce(p_t, p_s);
    if (lambda == 0.0) return ce;
    return lambda * dad_loss(p_t, p_s, gamma) + ce;
}

void softmax_row(const double* z, std::size_t n, double* out) {
    model::log_softmax_row(z, n, out);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(out[i]);
}

double entropy_of_logits(const double* z, std::size_t n) {
    std::vector<double> lp(n);
    model::log_softmax_row(z, n, lp.data());
    double h = 0.0;
    for (std::size_t i = 0; i < n; ++i) h -= std::exp(lp[i]) * lp[i];
    return h;
}

RowLoss row_loss(const double* teacher_logits, const double* student_logits, std::size_t n, double gamma,
                 double lambda, double* dz) {
    std::vector<double> lpt(n), lps(n);
    model::log_softmax_row(teacher_logits, n, lpt.data());
    model::log_softmax_row(student_logits, n, lps.data());
    RowLoss r;
    for (std::size_t i = 0; i < n; ++i) {
        const double pt = std::exp(lpt[i]);
        const double ps = std::exp(lps[i]);
        r.ce -= pt * lps[i];
        r.h_teacher -= pt * lpt[i];
        r.h_student -= ps * lps[i];
    }
    const double wt = entropy_power(r.h_teacher, gamma);
    const double ws = entropy_power(r.h_student, 1.0 - gamma);
    r.dad = wt * ws * r.ce;
    if (!dz) return r;

    // d ce / dz = p_s - p_t
    // d H_s / dz_i = -p_s,i (log p_s,i + H_s)
    // d H_s^(1-g) = (1-g) H_s^(-g) dH_s, taken as 0 where H_s underflows to 0
    double dws_dh = 0.0;
    if (gamma < 1.0 && r.h_student > 0.0) dws_dh = (1.0 - gamma) * std::pow(r.h_student, -gamma);
    for (std::size_t i = 0; i < n; ++i) {
        const double pt = std::exp(lpt[i]);
        const double ps = std::exp(lps[i]);
        const double dce = ps - pt;
        const double dhs = -ps * (lps[i] + r.h_student);
        const double ddad = wt * (dws_dh * dhs * r.ce + ws * dce);
        dz[i] = lambda * ddad + dce;
    }
    return r;
}

BatchLoss batch_loss(const Matrix& teacher_logits, const Matrix& student_logits, double gamma, double lambda,
                     Matrix* dstudent) {
    if (teacher_logits.rows() != student_logits.rows() || teacher_logits.cols() != student_logits.cols())
        throw Error(ErrorKind::shape_mismatch, "batch_loss: teacher and student logits differ in shape");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error(ErrorKind::invalid_argument, "batch_loss: gamma must be in [0, 1]");
    if (!(lambda >= 0.0)) throw Error(ErrorKind::invalid_argument, "batch_loss: lambda must be >= 0");
    const auto rows = teacher_logits.rows();
    const auto n = static_cast<std::size_t>(teacher_logits.cols());
    if (dstudent) dstudent->resize(rows, teacher_logits.cols());
    BatchLoss b;
    const double inv = 1.0 / static_cast<double>(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        double* dz = dstudent ? dstudent->row(r).data() : nullptr;
        const RowLoss l = row_loss(teacher_logits.row(r).data(), student_logits.row(r).data(), n, gamma, lambda, dz);
        b.ce += l.ce;
        b.dad += l.dad;
        if (dz)
            for (std::size_t i = 0; i < n; ++i) dz[i] *= inv;
    }
    b.ce *= inv;
    b.dad *= inv;
    b.total = lambda * b.dad + b.ce;
    return b;
}

}  // namespace fdbq::loss
