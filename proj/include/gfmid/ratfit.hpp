#pragma once

// Continuous-time rational transfer-function estimation.
//
// Frequency-domain entry: Sanathanan-Koerner iteration. Each pass solves the
// linear least-squares problem
//     min sum_k | N(s_k) - G_k D(s_k) |^2 / |D_prev(s_k)|^2
// with D monic, so that at convergence the weighted error approaches the true
// output error |N/D - G|^2. Frequencies are normalized by their geometric mean
// to keep the Vandermonde columns comparable.
//
// Time-domain entry (step records): the empirical response is estimated from
// single-frequency sums of the differenced records, corrected for the
// zero-order hold, then handed to the frequency-domain fitter. The quality
// score is recomputed in the time domain by driving the fitted model with the
// measured input.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "gfmid/era_realization.hpp"
#include "gfmid/error.hpp"
#include "gfmid/signals.hpp"

namespace gfmid {

namespace poly {

/// Horner evaluation, coefficients in descending powers.
inline Complex eval(const std::vector<double>& c, Complex x) {
    Complex acc{0.0, 0.0};
    for (double v : c) acc = acc * x + v;
    return acc;
}

/// sum |c_k| |x|^k, the scale against which a vanishing value is judged.
inline double abs_scale(const std::vector<double>& c, double ax) {
    double acc = 0.0;
    for (double v : c) acc = acc * ax + std::abs(v);
    return acc;
}

/// Real polynomial (descending) with the given roots; conjugate pairs give real coefficients.
inline std::vector<double> from_roots(const std::vector<Complex>& roots) {
    std::vector<Complex> c{Complex(1.0, 0.0)};
    for (const Complex& r : roots) {
        std::vector<Complex> next(c.size() + 1, Complex(0.0, 0.0));
        for (std::size_t i = 0; i < c.size(); ++i) {
            next[i] += c[i];
            next[i + 1] -= c[i] * r;
        }
        c = std::move(next);
    }
    std::vector<double> out(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i].real();
    return out;
}

/// Roots via companion-matrix eigenvalues.
inline std::vector<Complex> roots(const std::vector<double>& c) {
    std::size_t first = 0;
    while (first < c.size() && c[first] == 0.0) ++first;
    if (first + 1 >= c.size()) return {};
    const auto n = static_cast<Eigen::Index>(c.size() - first - 1);
    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) comp(0, j) = -c[first + 1 + static_cast<std::size_t>(j)] / c[first];
    for (Eigen::Index i = 1; i < n; ++i) comp(i, i - 1) = 1.0;
    Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
    std::vector<Complex> out(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = es.eigenvalues()(i);
    return out;
}

}  // namespace poly

/// N(sigma)/D(sigma) with sigma = s / scale_frequency. Coefficients are in
/// descending powers and D is monic.
class RationalTransferFunction {
public:
    RationalTransferFunction() : num_{0.0}, den_{1.0} {}

    RationalTransferFunction(std::vector<double> num, std::vector<double> den, double scale_frequency = 1.0)
        : num_(std::move(num)), den_(std::move(den)), scale_(scale_frequency) {
        if (!(scale_ > 0.0) || !std::isfinite(scale_))
            throw Error(ErrorCode::InvalidArgument, "scale_frequency must be positive");
        auto strip = [](std::vector<double>& c) {
            std::size_t first = 0;
            while (first + 1 < c.size() && c[first] == 0.0) ++first;
            c.erase(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(first));
        };
        if (num_.empty()) num_ = {0.0};
        if (den_.empty()) throw Error(ErrorCode::InvalidArgument, "empty denominator");
        strip(num_);
        strip(den_);
        if (den_.front() == 0.0) throw Error(ErrorCode::InvalidArgument, "zero denominator");
        for (double v : num_)
            if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite numerator coefficient");
        for (double v : den_)
            if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite denominator coefficient");
        const double lead = den_.front();
        for (double& v : num_) v /= lead;
        for (double& v : den_) v /= lead;
    }

    static RationalTransferFunction constant(double k) { return RationalTransferFunction({k}, {1.0}); }

    const std::vector<double>& num() const noexcept { return num_; }
    const std::vector<double>& den() const noexcept { return den_; }
    double scale_frequency() const noexcept { return scale_; }
    std::size_t num_degree() const noexcept { return num_.size() - 1; }
    std::size_t den_degree() const noexcept { return den_.size() - 1; }
    bool is_proper() const noexcept { return num_degree() <= den_degree(); }
    bool is_zero() const noexcept { return num_.size() == 1 && num_[0] == 0.0; }

    /// Value at a physical Laplace variable s.
    Complex operator()(Complex s) const {
        const Complex sigma = s / scale_;
        const Complex d = poly::eval(den_, sigma);
        if (std::abs(d) <= 1e-14 * poly::abs_scale(den_, std::abs(sigma)))
            throw Error(ErrorCode::EvaluationAtPole, "s = " + std::to_string(s.real()) + "+j" + std::to_string(s.imag()));
        return poly::eval(num_, sigma) / d;
    }

    Complex at_frequency(double f_hz) const { return (*this)(Complex(0.0, 2.0 * std::numbers::pi * f_hz)); }

    std::vector<Complex> poles() const {
        auto r = poly::roots(den_);
        for (auto& p : r) p *= scale_;
        return r;
    }

    std::vector<Complex> zeros() const {
        auto r = poly::roots(num_);
        for (auto& z : r) z *= scale_;
        return r;
    }

    bool has_unstable_poles() const {
        const auto p = poles();
        return std::any_of(p.begin(), p.end(), [](Complex z) { return z.real() > 0.0; });
    }

    RationalTransferFunction scaled(double k) const {
        RationalTransferFunction out = *this;
        for (double& v : out.num_) v *= k;
        if (k == 0.0) out.num_ = {0.0};
        return out;
    }

    /// Coefficients in powers of the physical s, denominator monic.
    std::vector<double> num_in_s() const { return rescaled(num_); }
    std::vector<double> den_in_s() const { return rescaled(den_); }

    /// Controllable canonical realization in physical time units. Requires a proper function.
    ContinuousStateSpace to_state_space() const {
        if (!is_proper()) throw Error(ErrorCode::ImproperTransferFunction, "numerator degree exceeds denominator");
        const std::size_t n = den_degree();
        ContinuousStateSpace sys;
        std::vector<double> b(n + 1, 0.0);
        std::copy(num_.begin(), num_.end(), b.begin() + static_cast<std::ptrdiff_t>(n + 1 - num_.size()));
        const double d = b[0];
        const auto ni = static_cast<Eigen::Index>(n);
        sys.A = Eigen::MatrixXd::Zero(ni, ni);
        sys.B = Eigen::MatrixXd::Zero(ni, 1);
        sys.C = Eigen::MatrixXd::Zero(1, ni);
        sys.D = Eigen::MatrixXd::Constant(1, 1, d);
        if (n == 0) return sys;
        for (Eigen::Index j = 0; j < ni; ++j) {
            sys.A(0, j) = -den_[static_cast<std::size_t>(j) + 1] * scale_;
            sys.C(0, j) = b[static_cast<std::size_t>(j) + 1] - d * den_[static_cast<std::size_t>(j) + 1];
        }
        for (Eigen::Index i = 1; i < ni; ++i) sys.A(i, i - 1) = scale_;
        sys.B(0, 0) = scale_;
        return sys;
    }

private:
    std::vector<double> rescaled(const std::vector<double>& c) const {
        // sum c_k (s/w)^k with both polynomials multiplied by w^deg(den).
        const std::size_t n = den_degree();
        std::vector<double> out(c.size());
        const std::size_t deg = c.size() - 1;
        for (std::size_t i = 0; i < c.size(); ++i) {
            const std::size_t power = deg - i;
            out[i] = c[i] * std::pow(scale_, static_cast<double>(n) - static_cast<double>(power));
        }
        return out;
    }

    std::vector<double> num_;
    std::vector<double> den_;
    double scale_ = 1.0;
};

/// tf(j 2 pi f) for every f.
inline FrequencyResponse evaluate(const RationalTransferFunction& tf, const std::vector<double>& f_hz) {
    FrequencyResponse out;
    out.frequency_hz = f_hz;
    out.value.reserve(f_hz.size());
    for (double f : f_hz) {
        if (!(f > 0.0)) throw Error(ErrorCode::InvalidArgument, "evaluation frequency must be positive");
        out.value.push_back(tf.at_frequency(f));
    }
    return out;
}

struct FitOptions {
    std::size_t n_poles = 4;
    std::optional<std::size_t> n_zeros;  // default n_poles - 1
    std::size_t max_iterations = 30;
    double rel_tolerance = 1e-8;
    std::vector<double> frequency_grid = log_grid(0.1, 1000.0, 200);  // time-domain entry only

    std::size_t zeros() const { return n_zeros ? *n_zeros : (n_poles == 0 ? 0 : n_poles - 1); }

    void validate() const {
        if (zeros() > n_poles) throw Error(ErrorCode::InvalidArgument, "n_zeros must not exceed n_poles");
        for (std::size_t i = 1; i < frequency_grid.size(); ++i)
            if (!(frequency_grid[i] > frequency_grid[i - 1]))
                throw Error(ErrorCode::InvalidArgument, "frequency grid must be strictly increasing");
    }
};

struct FitResult {
    RationalTransferFunction tf;
    double nrmse_percent = 0.0;
    std::size_t iterations_used = 0;
    bool converged = false;
    bool zero_response = false;        // output was identically zero; tf is the zero map
    bool unstable_poles = false;       // right-half-plane poles (reported, never reflected)
    std::size_t points_used = 0;
    std::size_t points_dropped = 0;
};

namespace detail {

inline double magnitude_nrmse(const std::vector<Complex>& measured, const std::vector<Complex>& model) {
    double m = 0.0;
    for (const auto& v : measured) m += std::abs(v);
    m /= static_cast<double>(measured.size());
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < measured.size(); ++k) {
        const double r = std::abs(measured[k]) - std::abs(model[k]);
        const double c = std::abs(measured[k]) - m;
        num += r * r;
        den += c * c;
    }
    if (den == 0.0) return num == 0.0 ? 100.0 : -std::numeric_limits<double>::infinity();
    return 100.0 * (1.0 - std::sqrt(num / den));
}

inline bool any_right_half_plane(const RationalTransferFunction& tf) {
    for (const Complex& p : tf.poles())
        if (p.real() > 0.0) return true;
    return false;
}

}  // namespace detail

/// Sanathanan-Koerner fit of a proper rational function to frequency points.
inline FitResult fit_frequency_domain(const FrequencyResponse& points, const FitOptions& opts) {
    opts.validate();
    const std::size_t n = opts.n_poles;
    const std::size_t m = opts.zeros();
    const std::size_t K = points.size();
    if (points.value.size() != K) throw Error(ErrorCode::InvalidArgument, "frequency/value length mismatch");
    if (K < n + m + 1)
        throw Error(ErrorCode::NotEnoughData, "need " + std::to_string(n + m + 1) + " points, have " + std::to_string(K));
    for (double f : points.frequency_hz)
        if (!(f > 0.0)) throw Error(ErrorCode::InvalidArgument, "fit frequencies must be positive");

    FitResult result;
    result.points_used = K;

    if (std::all_of(points.value.begin(), points.value.end(), [](Complex v) { return v == Complex(0.0, 0.0); })) {
        result.tf = RationalTransferFunction({0.0}, {1.0});
        result.nrmse_percent = 100.0;
        result.converged = true;
        result.zero_response = true;
        return result;
    }

    double log_sum = 0.0;
    for (double f : points.frequency_hz) log_sum += std::log(2.0 * std::numbers::pi * f);
    const double scale = std::exp(log_sum / static_cast<double>(K));

    std::vector<Complex> sigma(K);
    for (std::size_t k = 0; k < K; ++k) sigma[k] = Complex(0.0, 2.0 * std::numbers::pi * points.frequency_hz[k] / scale);

    const auto unknowns = static_cast<Eigen::Index>(m + 1 + n);
    std::vector<Complex> den_prev(K, Complex(1.0, 0.0));
    Eigen::VectorXd x_prev = Eigen::VectorXd::Zero(unknowns);

    std::optional<RationalTransferFunction> best;
    double best_residual = std::numeric_limits<double>::infinity();
    std::size_t best_iteration = 0;

    auto residual_of = [&](const RationalTransferFunction& tf) {
        double r = 0.0;
        for (std::size_t k = 0; k < K; ++k) r += std::norm(tf(sigma[k] * scale) - points.value[k]);
        return std::sqrt(r);
    };

    const std::size_t iterations = std::max<std::size_t>(opts.max_iterations, 1);
    for (std::size_t it = 1; it <= iterations; ++it) {
        Eigen::MatrixXd M(static_cast<Eigen::Index>(2 * K), unknowns);
        Eigen::VectorXd rhs(static_cast<Eigen::Index>(2 * K));
        for (std::size_t k = 0; k < K; ++k) {
            const Complex w = 1.0 / den_prev[k];
            const Complex G = points.value[k];
            Eigen::Index col = 0;
            for (std::size_t p = m + 1; p-- > 0;) {  // numerator sigma^m .. sigma^0
                const Complex v = std::pow(sigma[k], static_cast<int>(p)) * w;
                M(static_cast<Eigen::Index>(2 * k), col) = v.real();
                M(static_cast<Eigen::Index>(2 * k + 1), col) = v.imag();
                ++col;
            }
            for (std::size_t p = n; p-- > 0;) {  // denominator sigma^{n-1} .. sigma^0
                const Complex v = -G * std::pow(sigma[k], static_cast<int>(p)) * w;
                M(static_cast<Eigen::Index>(2 * k), col) = v.real();
                M(static_cast<Eigen::Index>(2 * k + 1), col) = v.imag();
                ++col;
            }
            const Complex r = G * std::pow(sigma[k], static_cast<int>(n)) * w;
            rhs(static_cast<Eigen::Index>(2 * k)) = r.real();
            rhs(static_cast<Eigen::Index>(2 * k + 1)) = r.imag();
        }
        Eigen::VectorXd col_norm = M.colwise().norm().transpose();
        for (Eigen::Index j = 0; j < unknowns; ++j)
            if (col_norm(j) == 0.0) col_norm(j) = 1.0;
        const Eigen::MatrixXd Ms = M * col_norm.cwiseInverse().asDiagonal();
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Ms);
        qr.setThreshold(1e-12);
        if (qr.rank() < unknowns)
            throw Error(ErrorCode::IllConditionedFit, "normal equations have rank " + std::to_string(qr.rank()) +
                                                          " < " + std::to_string(unknowns) + "; lower the order");
        const Eigen::VectorXd x = col_norm.cwiseInverse().asDiagonal() * qr.solve(rhs);

        std::vector<double> num(m + 1), den(n + 1);
        for (std::size_t i = 0; i <= m; ++i) num[i] = x(static_cast<Eigen::Index>(i));
        den[0] = 1.0;
        for (std::size_t i = 0; i < n; ++i) den[i + 1] = x(static_cast<Eigen::Index>(m + 1 + i));
        RationalTransferFunction tf(num, den, scale);

        double r = std::numeric_limits<double>::infinity();
        try {
            r = residual_of(tf);
        } catch (const Error&) {
        }
        if (r < best_residual) {
            best_residual = r;
            best = tf;
            best_iteration = it;
        }

        const double change = (x - x_prev).norm() / std::max(x.norm(), std::numeric_limits<double>::min());
        x_prev = x;
        for (std::size_t k = 0; k < K; ++k) den_prev[k] = poly::eval(den, sigma[k]);

        if (change < opts.rel_tolerance && it > 1) {
            result.tf = tf;
            result.iterations_used = it;
            result.converged = true;
            break;
        }
        if (it == iterations) {
            result.tf = *best;
            result.iterations_used = it;
            result.converged = false;
            (void)best_iteration;
        }
    }

    std::vector<Complex> fitted(K);
    for (std::size_t k = 0; k < K; ++k) fitted[k] = result.tf(sigma[k] * scale);
    result.nrmse_percent = detail::magnitude_nrmse(points.value, fitted);
    result.unstable_poles = detail::any_right_half_plane(result.tf);
    return result;
}

/// Drive tf with a zero-order-held input sampled like `input`; y[k] = C x[k] + D u[k], x[0] = 0.
inline TimeSeries simulate_response(const RationalTransferFunction& tf, const TimeSeries& input) {
    const ContinuousStateSpace sys = tf.to_state_space();
    const double d = sys.D(0, 0);
    std::vector<double> y(input.size());
    if (sys.order() == 0) {
        for (std::size_t k = 0; k < input.size(); ++k) y[k] = d * input[k];
        return TimeSeries(std::move(y), input.dt(), input.t0());
    }
    const DiscreteStateSpace dsys = c2d_zoh(sys, input.dt());
    Eigen::VectorXd x = Eigen::VectorXd::Zero(sys.order());
    const Eigen::RowVectorXd C = dsys.C.row(0);
    const Eigen::VectorXd B = dsys.B.col(0);
    for (std::size_t k = 0; k < input.size(); ++k) {
        y[k] = C.dot(x) + d * input[k];
        x = dsys.A * x + B * input[k];
    }
    return TimeSeries(std::move(y), input.dt(), input.t0());
}

/// Response to a step of height g_abs applied at t = 0, sampled at fs for `duration` seconds.
inline TimeSeries simulate_step_response(const RationalTransferFunction& tf, double g_abs, double duration,
                                         double fs) {
    if (!tf.is_proper()) throw Error(ErrorCode::ImproperTransferFunction, "numerator degree exceeds denominator");
    if (!(fs > 0.0) || !(duration > 0.0)) throw Error(ErrorCode::InvalidArgument, "fs and duration must be positive");
    const auto n = static_cast<std::size_t>(std::llround(duration * fs)) + 1;
    return simulate_response(tf, TimeSeries(std::vector<double>(n, g_abs), 1.0 / fs));
}

/// Empirical G(j w) from a persistent-perturbation record pair.
///
/// Sum_k dy[k] e^{-jwkT} / Sum_k du[k] e^{-jwkT}, with d the first difference,
/// is the sampled-data response of the plant behind a zero-order hold; dividing
/// by the hold response (1 - e^{-jwT})/(jwT) maps it back to continuous time.
/// Differencing makes the sums insensitive to where the record is cut off.
inline FrequencyResponse empirical_response(const TimeSeries& input, const TimeSeries& output,
                                            const std::vector<double>& grid, std::size_t* dropped = nullptr) {
    if (input.size() != output.size() || input.dt() != output.dt())
        throw Error(ErrorCode::InvalidArgument, "input and output must share length and dt");
    if (input.size() < 2) throw Error(ErrorCode::NotEnoughData, "need at least two samples");
    const double T = input.dt();
    const std::size_t N = input.size();
    std::vector<double> du(N - 1), dy(N - 1);
    for (std::size_t k = 1; k < N; ++k) {
        du[k - 1] = input[k] - input[k - 1];
        dy[k - 1] = output[k] - output[k - 1];
    }
    FrequencyResponse out;
    std::size_t drop = 0, considered = 0;
    for (double f : grid) {
        if (!(f > 0.0) || f >= 0.5 / T) continue;
        ++considered;
        const double w = 2.0 * std::numbers::pi * f;
        Complex U{0.0, 0.0}, Y{0.0, 0.0};
        for (std::size_t k = 0; k < du.size(); ++k) {
            if (du[k] == 0.0 && dy[k] == 0.0) continue;
            const double angle = w * T * static_cast<double>(k + 1);
            const Complex e(std::cos(angle), -std::sin(angle));
            U += du[k] * e;
            Y += dy[k] * e;
        }
        if (std::abs(U) < 1e-12) {
            ++drop;
            continue;
        }
        const Complex hold = (1.0 - std::exp(Complex(0.0, -w * T))) / Complex(0.0, w * T);
        out.frequency_hz.push_back(f);
        out.value.push_back(Y / U / hold);
    }
    if (considered == 0) throw Error(ErrorCode::AboveNyquist, "no grid frequency below Nyquist");
    if (2 * drop > considered)
        throw Error(ErrorCode::InputNotExciting, std::to_string(drop) + " of " + std::to_string(considered) +
                                                     " grid points have no input content");
    if (dropped) *dropped = drop;
    return out;
}

/// Fit from a baseline-removed input/output record pair (input: persistent step).
inline FitResult fit_time_domain(const TimeSeries& input, const TimeSeries& output, const FitOptions& opts) {
    opts.validate();
    std::size_t dropped = 0;
    const FrequencyResponse points = empirical_response(input, output, opts.frequency_grid, &dropped);

    const bool output_zero =
        std::all_of(output.samples().begin(), output.samples().end(), [](double v) { return v == 0.0; });
    if (output_zero) {
        FitResult r;
        r.tf = RationalTransferFunction({0.0}, {1.0});
        r.nrmse_percent = 100.0;
        r.converged = true;
        r.zero_response = true;
        r.points_used = points.size();
        r.points_dropped = dropped;
        return r;
    }

    FitResult r = fit_frequency_domain(points, opts);
    r.points_dropped = dropped;
    r.nrmse_percent = nrmse_fit_percent(output, simulate_response(r.tf, input));
    return r;
}

}  // namespace gfmid
