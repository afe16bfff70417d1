#pragma once

// Eigensystem Realization Algorithm core: Hankel construction, SVD-based
// realization, and the discrete <-> continuous conversions used to get from
// the realized W_ERA(z) back to a Laplace-domain model.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gfmid/error.hpp"
#include "gfmid/signals.hpp"

namespace gfmid {

struct DiscreteStateSpace {
    Eigen::MatrixXd A, B, C, D;
    double dt = 0.0;

    void validate() const {
        const auto n = A.rows();
        if (A.cols() != n || B.rows() != n || C.cols() != n || D.rows() != C.rows() || D.cols() != B.cols())
            throw Error(ErrorCode::InvalidArgument, "inconsistent state-space dimensions");
        if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "discrete system needs dt > 0");
    }
    Eigen::Index order() const { return A.rows(); }
};

struct ContinuousStateSpace {
    Eigen::MatrixXd A, B, C, D;
    double source_dt = 0.0;  // sample period of the data it was identified from (0 if none)

    void validate() const {
        const auto n = A.rows();
        if (A.cols() != n || B.rows() != n || C.cols() != n || D.rows() != C.rows() || D.cols() != B.cols())
            throw Error(ErrorCode::InvalidArgument, "inconsistent state-space dimensions");
    }
    Eigen::Index order() const { return A.rows(); }
};

/// C (sI - A)^{-1} B + D for the (0,0) channel at s = j 2 pi f.
inline Complex evaluate_siso(const ContinuousStateSpace& sys, double f_hz) {
    const Eigen::Index n = sys.order();
    const Complex s(0.0, 2.0 * std::numbers::pi * f_hz);
    Complex d = sys.D.size() ? Complex(sys.D(0, 0), 0.0) : Complex(0.0, 0.0);
    if (n == 0) return d;
    Eigen::MatrixXcd M = -sys.A.cast<Complex>();
    M.diagonal().array() += s;
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(M);
    Eigen::VectorXcd x = lu.solve(sys.B.col(0).cast<Complex>());
    if (!x.allFinite()) throw Error(ErrorCode::EvaluationAtPole, "f = " + std::to_string(f_hz) + " Hz");
    return (sys.C.row(0).cast<Complex>() * x)(0, 0) + d;
}

/// Principal matrix logarithm through the eigendecomposition M = V diag(l) V^-1.
/// Any eigenvalue on the closed negative real axis has no real logarithm and
/// signals a mode aliased onto the Nyquist line.
inline Eigen::MatrixXd matrix_log_real(const Eigen::MatrixXd& M) {
    const Eigen::Index n = M.rows();
    if (n == 0) return M;
    Eigen::EigenSolver<Eigen::MatrixXd> es(M);
    if (es.info() != Eigen::Success) throw Error(ErrorCode::LogBranchAmbiguity, "eigendecomposition failed");
    const Eigen::VectorXcd lambda = es.eigenvalues();
    const double scale = std::max(1.0, lambda.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < n; ++i) {
        const Complex l = lambda(i);
        if (std::abs(l.imag()) <= 1e-12 * scale && l.real() <= 0.0)
            throw Error(ErrorCode::LogBranchAmbiguity,
                        "eigenvalue " + std::to_string(l.real()) + " on the negative real axis");
    }
    const Eigen::MatrixXcd V = es.eigenvectors();
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(V);
    Eigen::VectorXcd log_lambda = lambda.unaryExpr([](Complex l) { return std::log(l); });
    Eigen::MatrixXcd L = V * log_lambda.asDiagonal() * lu.inverse();
    if (!L.allFinite()) throw Error(ErrorCode::LogBranchAmbiguity, "defective eigenvector basis");
    return L.real();
}

/// Integral of e^{A tau} over [0, dt], read off the augmented exponential exp([[A, I], [0, 0]] dt).
inline Eigen::MatrixXd exp_integral(const Eigen::MatrixXd& A, double dt) {
    const Eigen::Index n = A.rows();
    Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    aug.topLeftCorner(n, n) = A * dt;
    aug.topRightCorner(n, n) = Eigen::MatrixXd::Identity(n, n) * dt;
    Eigen::MatrixXd e = aug.exp();
    return e.topRightCorner(n, n);
}

/// Zero-order-hold discretization.
inline DiscreteStateSpace c2d_zoh(const ContinuousStateSpace& sys, double dt) {
    sys.validate();
    if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "c2d needs dt > 0");
    DiscreteStateSpace out;
    out.A = (sys.A * dt).exp();
    out.B = exp_integral(sys.A, dt) * sys.B;
    out.C = sys.C;
    out.D = sys.D;
    out.dt = dt;
    return out;
}

/// Inverse of c2d_zoh: A_c = log(A_d)/dt and (int_0^dt e^{A_c tau} dtau) B_c = B_d.
inline ContinuousStateSpace d2c_zoh(const DiscreteStateSpace& sys) {
    sys.validate();
    ContinuousStateSpace out;
    out.A = matrix_log_real(sys.A) / sys.dt;
    const Eigen::MatrixXd gamma = exp_integral(out.A, sys.dt);
    out.B = gamma.fullPivLu().solve(sys.B);
    out.C = sys.C;
    out.D = sys.D;
    out.source_dt = sys.dt;
    return out;
}

/// Continuous system whose impulse response, sampled at dt, equals the Markov
/// parameters of `sys` (k >= 1): A_c = log(A_d)/dt, B_c = A_d^{-1} B_d, D dropped.
/// This inverts W_ERA(z) = Z{ L^-1{ g P(s)/s } } exactly for noiseless data.
inline ContinuousStateSpace d2c_impulse_invariant(const DiscreteStateSpace& sys) {
    sys.validate();
    ContinuousStateSpace out;
    out.A = matrix_log_real(sys.A) / sys.dt;
    out.B = sys.A.fullPivLu().solve(sys.B);
    out.C = sys.C;
    out.D = Eigen::MatrixXd::Zero(sys.C.rows(), sys.B.cols());
    out.source_dt = sys.dt;
    return out;
}

// ---------------------------------------------------------------------------
// Hankel + ERA
// ---------------------------------------------------------------------------

struct HankelMatrix {
    Eigen::MatrixXd entries;

    Eigen::Index rows() const { return entries.rows(); }
    Eigen::Index cols() const { return entries.cols(); }
};

/// entry(i, j) = h[i + j + 1 + shift]. h[0] is the sample at the perturbation
/// instant (the feedthrough term), so the Hankel only sees h[k >= 1].
inline HankelMatrix build_hankel(std::span<const double> h, std::size_t rows, std::size_t cols, int shift) {
    if (shift != 0 && shift != 1) throw Error(ErrorCode::InvalidArgument, "Hankel shift must be 0 or 1");
    if (rows == 0 || cols == 0) throw Error(ErrorCode::InvalidArgument, "Hankel needs positive size");
    const std::size_t required = rows + cols + static_cast<std::size_t>(shift);
    if (required > h.size())
        throw Error(ErrorCode::NotEnoughData, "need " + std::to_string(required) + " samples, have " +
                                                  std::to_string(h.size()));
    HankelMatrix H;
    H.entries.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t j = 0; j < cols; ++j)
        for (std::size_t i = 0; i < rows; ++i)
            H.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                h[i + j + 1 + static_cast<std::size_t>(shift)];
    return H;
}

struct ThinSvd {
    Eigen::MatrixXd U;
    Eigen::VectorXd sigma;  // descending
    Eigen::MatrixXd V;
};

/// Truncated SVD of a tall or square matrix that is close to low rank.
/// A column-pivoted QR finds the significant subspace; the SVD is then taken of
/// the leading rows of R only. Singular values beyond that subspace are reported
/// as the trailing |R_ii|, which bound them from the same side of the rank
/// threshold.
inline ThinSvd thin_svd(const Eigen::MatrixXd& M, Eigen::Index max_kept = 256) {
    const Eigen::Index m = M.rows(), n = M.cols();
    const Eigen::Index p = std::min(m, n);
    ThinSvd out{Eigen::MatrixXd::Zero(m, 0), Eigen::VectorXd::Zero(p), Eigen::MatrixXd::Zero(n, 0)};
    if (p == 0) return out;

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
    const Eigen::MatrixXd& QR = qr.matrixQR();
    const double r00 = std::abs(QR(0, 0));
    if (r00 == 0.0) return out;
    const double tol = 1e-3 * static_cast<double>(std::max(m, n)) * std::numeric_limits<double>::epsilon() * r00;
    Eigen::Index significant = 0;
    while (significant < p && std::abs(QR(significant, significant)) > tol) ++significant;
    const Eigen::Index k = std::min({p, significant + 8, std::max(max_kept, significant)});

    Eigen::MatrixXd Rk = QR.topRows(k).triangularView<Eigen::Upper>();
    Rk = Rk * qr.colsPermutation().transpose();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Rk, Eigen::ComputeThinU | Eigen::ComputeThinV);

    Eigen::MatrixXd Qk = Eigen::MatrixXd::Identity(m, k);
    Qk.applyOnTheLeft(qr.householderQ());
    out.U = Qk * svd.matrixU();
    out.V = svd.matrixV();
    out.sigma.head(k) = svd.singularValues();
    for (Eigen::Index i = k; i < p; ++i) out.sigma(i) = std::abs(QR(i, i));
    return out;
}

struct EraDiagnostics {
    std::vector<double> singular_values;  // descending
    std::size_t chosen_order = 0;
    std::size_t rank_budget = 0;
    std::size_t hankel_rows = 0;
    std::size_t hankel_cols = 0;
};

/// Numerical rank: singular values above max(rows, cols) * eps * sigma_1.
inline std::size_t numerical_rank(const std::vector<double>& sv, std::size_t rows, std::size_t cols) {
    if (sv.empty() || sv.front() <= 0.0) return 0;
    const double tol = static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon() * sv.front();
    return static_cast<std::size_t>(std::count_if(sv.begin(), sv.end(), [&](double s) { return s > tol; }));
}

/// Knee of the singular-value curve: the order with the largest log-gap to its successor.
inline std::size_t order_by_largest_gap(const std::vector<double>& sv, std::size_t rank_budget,
                                        std::size_t max_order = 20) {
    const std::size_t limit = std::min({rank_budget, max_order, sv.size()});
    if (limit <= 1) return limit;
    std::size_t best = 1;
    double best_gap = -1.0;
    for (std::size_t i = 1; i < limit; ++i) {
        const double gap = std::log(sv[i - 1]) - std::log(sv[i]);
        if (gap > best_gap) {
            best_gap = gap;
            best = i;
        }
    }
    if (limit == rank_budget && limit < sv.size()) {
        // The drop from the last significant value to the noise floor counts too.
        const double floor_value = std::max(sv[limit], std::numeric_limits<double>::min());
        if (std::log(sv[limit - 1]) - std::log(floor_value) > best_gap) best = limit;
    }
    return best;
}

/// Classical single-input single-output ERA on the sequence h (h[0] = D).
/// `order` = nullopt picks the order automatically from the singular values.
inline std::pair<DiscreteStateSpace, EraDiagnostics> era_realize(std::span<const double> h, double dt,
                                                                 std::optional<std::size_t> order) {
    if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "ERA needs dt > 0");
    if (order && *order == 0) throw Error(ErrorCode::InvalidArgument, "ERA order must be at least 1");
    if (h.size() < 4) throw Error(ErrorCode::NotEnoughData, "need at least 4 samples");
    // Largest near-square pair H0/H1 the record allows: rows + cols + 1 <= len(h).
    const std::size_t rows = (h.size() - 1) / 2;
    const std::size_t cols = h.size() - 1 - rows;
    const std::size_t needed_side = order ? 2 * *order : 2;
    if (rows < needed_side || cols < needed_side)
        throw Error(ErrorCode::NotEnoughData, "need " + std::to_string(2 * needed_side + 1) + " samples, have " +
                                                  std::to_string(h.size()));

    const HankelMatrix H0 = build_hankel(h, rows, cols, 0);
    const HankelMatrix H1 = build_hankel(h, rows, cols, 1);
    const ThinSvd svd = thin_svd(H0.entries);

    EraDiagnostics diag;
    diag.hankel_rows = rows;
    diag.hankel_cols = cols;
    const Eigen::VectorXd& sigma = svd.sigma;
    diag.singular_values.assign(sigma.data(), sigma.data() + sigma.size());
    diag.rank_budget = std::min(numerical_rank(diag.singular_values, rows, cols),
                                static_cast<std::size_t>(svd.U.cols()));

    const std::size_t n = order ? *order : order_by_largest_gap(diag.singular_values, diag.rank_budget);
    if (n == 0 || n > diag.rank_budget)
        throw Error(ErrorCode::OrderExceedsRank, "order " + std::to_string(n) + " > numerical rank " +
                                                     std::to_string(diag.rank_budget));
    diag.chosen_order = n;

    const auto ni = static_cast<Eigen::Index>(n);
    const Eigen::MatrixXd Un = svd.U.leftCols(ni);
    const Eigen::MatrixXd Vn = svd.V.leftCols(ni);
    const Eigen::VectorXd s_half = sigma.head(ni).cwiseSqrt();
    const Eigen::VectorXd s_inv_half = s_half.cwiseInverse();

    DiscreteStateSpace sys;
    sys.A = s_inv_half.asDiagonal() * (Un.transpose() * H1.entries * Vn) * s_inv_half.asDiagonal();
    sys.B = (s_half.asDiagonal() * Vn.transpose()).leftCols(1);
    sys.C = (Un * s_half.asDiagonal()).topRows(1);
    sys.D = Eigen::MatrixXd::Constant(1, 1, h[0]);
    sys.dt = dt;
    return {std::move(sys), std::move(diag)};
}

/// h[k] = C A^{k-1} B for k >= 1, h[0] = D.
inline std::vector<double> markov_parameters(const DiscreteStateSpace& sys, std::size_t count) {
    std::vector<double> h(count, 0.0);
    if (count == 0) return h;
    h[0] = sys.D(0, 0);
    Eigen::VectorXd x = sys.B.col(0);
    for (std::size_t k = 1; k < count; ++k) {
        h[k] = (sys.C.row(0) * x)(0, 0);
        x = sys.A * x;
    }
    return h;
}

}  // namespace gfmid
