#pragma once

// Test-only oracles: random stable systems and their exact sampled step
// responses, computed with plain matrix exponentials rather than any of the
// library's discretization code.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include "gfmid/era_realization.hpp"
#include "gfmid/experiments.hpp"

namespace testing_support {

using gfmid::Complex;
using gfmid::ContinuousStateSpace;

/// Stable SISO system of the given order: real and complex-pair modes between
/// `slow` and `fast` rad/s, mixed by a random well-conditioned similarity.
inline ContinuousStateSpace random_stable_system(std::mt19937_64& rng, int order, double slow = 2.0 * std::numbers::pi,
                                                 double fast = 2.0 * std::numbers::pi * 150.0) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto log_uniform = [&] { return slow * std::pow(fast / slow, unit(rng)); };

    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(order, order);
    int i = 0;
    while (i < order) {
        if (order - i >= 2 && unit(rng) < 0.5) {
            const double wn = log_uniform();
            const double zeta = 0.1 + 0.8 * unit(rng);
            const double re = -zeta * wn, im = wn * std::sqrt(1.0 - zeta * zeta);
            J(i, i) = re;
            J(i, i + 1) = im;
            J(i + 1, i) = -im;
            J(i + 1, i + 1) = re;
            i += 2;
        } else {
            J(i, i) = -log_uniform();
            i += 1;
        }
    }
    Eigen::MatrixXd T(order, order);
    for (int r = 0; r < order; ++r)
        for (int c = 0; c < order; ++c) T(r, c) = (r == c ? 2.0 : 0.0) + 0.4 * normal(rng);

    ContinuousStateSpace sys;
    sys.A = T * J * T.inverse();
    sys.B = Eigen::MatrixXd(order, 1);
    sys.C = Eigen::MatrixXd(1, order);
    for (int r = 0; r < order; ++r) {
        sys.B(r, 0) = normal(rng) * 50.0;
        sys.C(0, r) = normal(rng);
    }
    sys.D = Eigen::MatrixXd::Constant(1, 1, 0.2 * normal(rng));
    return sys;
}

/// y(k dt) for a step of height g at t = 0: D g + C A^{-1} (e^{A t} - I) B g.
inline std::vector<double> exact_step_samples(const ContinuousStateSpace& sys, double g, std::size_t n, double dt) {
    const Eigen::MatrixXd Ainv = sys.A.inverse();
    const Eigen::MatrixXd step = (sys.A * dt).exp();
    const Eigen::Index order = sys.A.rows();
    Eigen::MatrixXd E = Eigen::MatrixXd::Identity(order, order);
    std::vector<double> y(n);
    for (std::size_t k = 0; k < n; ++k) {
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(order, order);
        y[k] = sys.D(0, 0) * g + (sys.C * Ainv * (E - I) * sys.B)(0, 0) * g;
        E = step * E;
    }
    return y;
}

/// Exact transfer value C (sI - A)^{-1} B + D at f Hz.
inline Complex transfer(const ContinuousStateSpace& sys, double f_hz) {
    const Complex s(0.0, 2.0 * std::numbers::pi * f_hz);
    Eigen::MatrixXcd M = s * Eigen::MatrixXcd::Identity(sys.A.rows(), sys.A.cols()) - sys.A.cast<Complex>();
    return (sys.C.cast<Complex>() * M.fullPivLu().solve(sys.B.cast<Complex>()))(0, 0) + sys.D(0, 0);
}

/// A step-experiment pair whose four current responses are the exact step responses
/// of `systems` (indexed by channel) to a source step of g_abs volts. The currents
/// are negated so the identified admittance equals the systems themselves.
inline gfmid::StepExperimentPair synthetic_pair(const std::array<ContinuousStateSpace, 4>& systems, double g_abs,
                                                double dt, std::size_t pre, std::size_t post) {
    using namespace gfmid;
    const std::size_t n = pre + post;
    auto record = [&](int in) {
        std::vector<double> v(n, 0.0), zero(n, 0.0);
        for (std::size_t k = pre; k < n; ++k) v[k] = g_abs;
        std::array<std::vector<double>, 2> i{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
        for (int out = 0; out < 2; ++out) {
            const auto y = exact_step_samples(systems[static_cast<std::size_t>(2 * out + in)], g_abs, post, dt);
            for (std::size_t k = 0; k < post; ++k) i[out][pre + k] = -y[k];
        }
        const TimeSeries vd(in == 0 ? v : zero, dt), vq(in == 1 ? v : zero, dt);
        const DqSignal vg(vd, vq), io(TimeSeries(i[0], dt), TimeSeries(i[1], dt));
        SimulationRecord raw{vg, io, true, Eigen::VectorXd(), 1};
        return StepRecord{raw, vg, io, pre, g_abs};
    };
    return StepExperimentPair{record(0), record(1), 0.01, dt, Eigen::VectorXd(), 2};
}

}  // namespace testing_support
