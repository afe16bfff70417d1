#pragma once

// Admittance from step records through ERA.
//
// A step of height g on the source makes each current channel respond with the
// step response of g P(s). Read as a discrete impulse response, that sequence
// is realized by ERA as W_ERA(z); its continuous counterpart W(s) = g P(s) / s
// carries the integrator pole of the step, so P(s) = s W(s) / g and the
// admittance is Y = -s W(s) / g.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gfmid/dq_admittance.hpp"
#include "gfmid/era_realization.hpp"
#include "gfmid/error.hpp"
#include "gfmid/experiments.hpp"
#include "gfmid/ratfit.hpp"

namespace gfmid {

struct EraOptions {
    std::optional<std::size_t> order = 6;  // nullopt: knee of the singular values
    double f_min = 0.1;                    // Hz; sets the origin-pole cancellation tolerance
};

namespace detail {

inline std::vector<Complex> eigenvalues(const Eigen::MatrixXd& A) {
    if (A.rows() == 0) return {};
    Eigen::EigenSolver<Eigen::MatrixXd> es(A, false);
    std::vector<Complex> out(static_cast<std::size_t>(A.rows()));
    for (Eigen::Index i = 0; i < A.rows(); ++i) out[static_cast<std::size_t>(i)] = es.eigenvalues()(i);
    return out;
}

/// Rational form of -s C (sI - A)^{-1} B / g via characteristic polynomials:
/// C (sI - A)^{-1} B = (det(sI - A + BC) - det(sI - A)) / det(sI - A).
inline RationalTransferFunction rational_from_realization(const ContinuousStateSpace& w, double g_abs,
                                                          double tol_origin, bool& approximate) {
    std::vector<Complex> poles = eigenvalues(w.A);
    double log_sum = 0.0;
    std::size_t counted = 0;
    for (const Complex& p : poles)
        if (std::abs(p) > tol_origin) {
            log_sum += std::log(std::abs(p));
            ++counted;
        }
    const double scale = counted ? std::exp(log_sum / static_cast<double>(counted)) : 1.0;

    std::vector<Complex> shifted = eigenvalues(w.A - w.B * w.C);
    for (auto& p : poles) p /= scale;
    for (auto& p : shifted) p /= scale;
    const std::vector<double> pa = poly::from_roots(poles);
    const std::vector<double> pm = poly::from_roots(shifted);

    // W = (pm - pa) / pa in sigma = s / scale; the leading terms cancel.
    std::vector<double> diff(pa.size() - 1);
    for (std::size_t i = 1; i < pa.size(); ++i) diff[i - 1] = pm[i] - pa[i];

    std::size_t nearest = 0;
    for (std::size_t i = 1; i < poles.size(); ++i)
        if (std::abs(poles[i]) < std::abs(poles[nearest])) nearest = i;

    if (!poles.empty() && std::abs(poles[nearest]) * scale < tol_origin) {
        // s = scale sigma and sigma / (sigma - lambda_0) -> 1: Y = -scale (pm - pa) / (g q),
        // with pa = (sigma - lambda_0) q.
        std::vector<Complex> rest = poles;
        rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(nearest));
        std::vector<double> num(diff);
        for (double& v : num) v *= -scale / g_abs;
        approximate = false;
        return RationalTransferFunction(num, poly::from_roots(rest), scale);
    }
    // Keep the explicit s factor: Y = -scale sigma (pm - pa) / (g pa).
    std::vector<double> num(diff);
    for (double& v : num) v *= -scale / g_abs;
    num.push_back(0.0);
    approximate = true;
    return RationalTransferFunction(num, pa, scale);
}

}  // namespace detail

/// One channel: realize the step response h (h[0] at the step instant), map the
/// realization back to continuous time and form Y = -s W(s) / g.
inline AdmittanceChannel era_channel(std::span<const double> h, double dt, double g_abs, const EraOptions& opts) {
    if (!(g_abs > 0.0)) throw Error(ErrorCode::InvalidArgument, "step height must be positive");
    AdmittanceChannel ch;
    if (std::all_of(h.begin(), h.end(), [](double v) { return v == 0.0; })) {
        ContinuousStateSpace zero;
        zero.A = Eigen::MatrixXd::Zero(0, 0);
        zero.B = Eigen::MatrixXd::Zero(0, 1);
        zero.C = Eigen::MatrixXd::Zero(1, 0);
        zero.D = Eigen::MatrixXd::Zero(1, 1);
        zero.source_dt = dt;
        ch.realization = zero;
        ch.rational = RationalTransferFunction::constant(0.0);
        ch.zero_response = true;
        ch.era = EraDiagnostics{};
        return ch;
    }

    auto [dsys, diag] = era_realize(h, dt, opts.order);
    const ContinuousStateSpace w = d2c_impulse_invariant(dsys);

    // s C (sI - A)^{-1} B = C A (sI - A)^{-1} B + C B.
    ContinuousStateSpace y;
    y.A = w.A;
    y.B = w.B;
    y.C = -(w.C * w.A) / g_abs;
    y.D = -(w.C * w.B) / g_abs;
    y.source_dt = dt;
    ch.realization = y;

    const double tol_origin = 1e-3 * 2.0 * std::numbers::pi * opts.f_min;
    bool approximate = false;
    try {
        ch.rational = detail::rational_from_realization(w, g_abs, tol_origin, approximate);
        ch.rational_approximate = approximate;
    } catch (const Error&) {
        ch.rational_approximate = true;  // pointwise evaluation still available
    }
    ch.era = std::move(diag);
    return ch;
}

/// Four channels from a step pair: Ydd, Yqd from the D-axis record, Ydq, Yqq from the Q-axis record.
inline DqAdmittance era_admittance(const StepExperimentPair& pair, const EraOptions& opts = {}) {
    DqAdmittance y;
    y.method = Method::Era;
    y.valid_lo = 0.0;
    y.valid_hi = 0.5 / pair.dt;
    for (Channel c : kAllChannels) {
        const StepRecord& r = pair.record_for(c);
        const TimeSeries h = r.from_step(pair.response(c));
        try {
            y[c] = era_channel(h.view(), pair.dt, r.g_abs, opts);
        } catch (const Error& e) {
            throw e.with_context("era " + std::string(channel_name(c)));
        }
    }
    return y;
}

}  // namespace gfmid
