#pragma once

// Shared signal carriers and the measurement primitives every identification
// method uses: Park transforms, baseline removal, single-bin phasors and the
// NRMSE fit score.
//
// Park convention (amplitude invariant, d aligned with phase a at theta = 0):
//   d =  2/3 [a cos(th) + b cos(th - 2pi/3) + c cos(th + 2pi/3)]
//   q = -2/3 [a sin(th) + b sin(th - 2pi/3) + c sin(th + 2pi/3)]
// so a balanced set of peak amplitude V maps to (V, 0). All voltages in this
// project are therefore peak phase quantities.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gfmid/error.hpp"

namespace gfmid {

using Complex = std::complex<double>;

/// Uniformly sampled real signal. Sample k lives at t0 + k*dt.
class TimeSeries {
public:
    TimeSeries(std::vector<double> samples, double dt, double t0 = 0.0)
        : samples_(std::move(samples)), dt_(dt), t0_(t0) {
        if (!(dt_ > 0.0) || !std::isfinite(dt_))
            throw Error(ErrorCode::InvalidArgument, "TimeSeries dt must be positive");
        if (samples_.empty()) throw Error(ErrorCode::InvalidArgument, "TimeSeries needs at least one sample");
    }

    const std::vector<double>& samples() const noexcept { return samples_; }
    std::span<const double> view() const noexcept { return samples_; }
    double dt() const noexcept { return dt_; }
    double t0() const noexcept { return t0_; }
    std::size_t size() const noexcept { return samples_.size(); }
    double time(std::size_t k) const noexcept { return t0_ + static_cast<double>(k) * dt_; }
    double operator[](std::size_t k) const { return samples_[k]; }

    /// Samples [begin, end) as a new series with the matching start time.
    TimeSeries slice(std::size_t begin, std::size_t end) const {
        if (begin >= end || end > samples_.size())
            throw Error(ErrorCode::InvalidArgument, "slice outside series");
        return TimeSeries({samples_.begin() + static_cast<std::ptrdiff_t>(begin),
                           samples_.begin() + static_cast<std::ptrdiff_t>(end)},
                          dt_, time(begin));
    }

private:
    std::vector<double> samples_;
    double dt_;
    double t0_;
};

/// d/q pair sharing dt, t0 and length.
struct DqSignal {
    TimeSeries d;
    TimeSeries q;

    DqSignal(TimeSeries d_axis, TimeSeries q_axis) : d(std::move(d_axis)), q(std::move(q_axis)) {
        if (d.size() != q.size() || d.dt() != q.dt() || d.t0() != q.t0())
            throw Error(ErrorCode::InvalidArgument, "d and q series must share dt, t0 and length");
    }
};

struct Phasor {
    double frequency;  // Hz
    Complex value;     // amplitude and phase against a cosine starting at the window start
};

/// Ordered (frequency, complex value) points.
struct FrequencyResponse {
    std::vector<double> frequency_hz;
    std::vector<Complex> value;

    std::size_t size() const noexcept { return frequency_hz.size(); }
    bool empty() const noexcept { return frequency_hz.empty(); }
};

struct Dq {
    double d = 0.0;
    double q = 0.0;
};

struct Abc {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
};

inline constexpr double kTwoPiOverThree = 2.0 * std::numbers::pi / 3.0;

inline Dq park(double a, double b, double c, double theta) {
    const double k = 2.0 / 3.0;
    return {k * (a * std::cos(theta) + b * std::cos(theta - kTwoPiOverThree) + c * std::cos(theta + kTwoPiOverThree)),
            -k * (a * std::sin(theta) + b * std::sin(theta - kTwoPiOverThree) + c * std::sin(theta + kTwoPiOverThree))};
}

inline Dq park(const Abc& x, double theta) { return park(x.a, x.b, x.c, theta); }

inline Abc inverse_park(double d, double q, double theta) {
    return {d * std::cos(theta) - q * std::sin(theta),
            d * std::cos(theta - kTwoPiOverThree) - q * std::sin(theta - kTwoPiOverThree),
            d * std::cos(theta + kTwoPiOverThree) - q * std::sin(theta + kTwoPiOverThree)};
}

inline Abc inverse_park(const Dq& x, double theta) { return inverse_park(x.d, x.q, theta); }

/// Half-open sample index range.
struct SampleRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const noexcept { return end > begin ? end - begin : 0; }
};

inline double mean(std::span<const double> x) {
    if (x.empty()) throw Error(ErrorCode::InvalidArgument, "mean of empty range");
    // Kahan summation: baselines are ~1e2 while perturbations are ~1e-3.
    double sum = 0.0, comp = 0.0;
    for (double v : x) {
        double y = v - comp;
        double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    return sum / static_cast<double>(x.size());
}

/// s minus its mean over `window` (the steady-state baseline before a perturbation).
inline TimeSeries remove_dc_offset(const TimeSeries& s, SampleRange window) {
    if (window.size() == 0) throw Error(ErrorCode::EmptyBaselineWindow, "baseline window has no samples");
    if (window.end > s.size())
        throw Error(ErrorCode::InvalidArgument, "baseline window extends past the end of the series");
    const double baseline = mean(s.view().subspan(window.begin, window.size()));
    std::vector<double> out(s.samples());
    for (double& v : out) v -= baseline;
    return TimeSeries(std::move(out), s.dt(), s.t0());
}

/// Number of whole periods of f spanned by n samples at dt, or throws NonCoherentWindow.
inline long coherent_period_count(std::size_t n, double dt, double f) {
    const double periods = f * static_cast<double>(n) * dt;
    const double rounded = std::round(periods);
    if (rounded < 1.0 || std::abs(periods - rounded) > 1e-9 * std::max(1.0, periods))
        throw Error(ErrorCode::NonCoherentWindow,
                    "window of " + std::to_string(n) + " samples spans " + std::to_string(periods) +
                        " periods of " + std::to_string(f) + " Hz");
    return static_cast<long>(rounded);
}

/// Single-bin DFT of the whole series at f. The series must span an integer
/// number of periods; A cos(2 pi f t + phi) then returns A e^{j phi} exactly,
/// with DC and every other coherent tone rejected.
inline Phasor extract_phasor(const TimeSeries& s, double f) {
    if (!(f > 0.0)) throw Error(ErrorCode::InvalidArgument, "phasor frequency must be positive");
    if (f >= 0.5 / s.dt()) throw Error(ErrorCode::AboveNyquist, std::to_string(f) + " Hz");
    const std::size_t n = s.size();
    coherent_period_count(n, s.dt(), f);
    const double w = 2.0 * std::numbers::pi * f * s.dt();
    Complex acc{0.0, 0.0};
    for (std::size_t k = 0; k < n; ++k) {
        const double angle = w * static_cast<double>(k);
        acc += s[k] * Complex(std::cos(angle), -std::sin(angle));
    }
    return {f, acc * (2.0 / static_cast<double>(n))};
}

/// 100 (1 - |measured - model| / |measured - mean(measured)|). 100 means identical.
inline double nrmse_fit_percent(const TimeSeries& measured, const TimeSeries& model) {
    if (measured.size() != model.size() || measured.dt() != model.dt())
        throw Error(ErrorCode::InvalidArgument, "nrmse needs series with equal length and dt");
    const double m = mean(measured.view());
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < measured.size(); ++k) {
        const double r = measured[k] - model[k];
        const double c = measured[k] - m;
        num += r * r;
        den += c * c;
    }
    if (den == 0.0) throw Error(ErrorCode::DegenerateReference, "measured series is constant");
    return 100.0 * (1.0 - std::sqrt(num) / std::sqrt(den));
}

/// n log-spaced points from lo to hi inclusive.
inline std::vector<double> log_grid(double lo, double hi, std::size_t n) {
    if (!(lo > 0.0) || !(hi >= lo) || n == 0) throw Error(ErrorCode::InvalidArgument, "bad log grid");
    std::vector<double> out(n);
    if (n == 1) {
        out[0] = lo;
        return out;
    }
    const double a = std::log10(lo), b = std::log10(hi);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
    out.front() = lo;
    out.back() = hi;
    return out;
}

}  // namespace gfmid
