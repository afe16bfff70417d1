#pragma once

// Perturbation protocols: a pair of step experiments (one per source axis) for
// the realization and step-fit methods, and a per-frequency sine sweep.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include "gfmid/dq_admittance.hpp"
#include "gfmid/error.hpp"
#include "gfmid/plant.hpp"
#include "gfmid/signals.hpp"

namespace gfmid {

enum class Axis { D = 0, Q = 1 };

inline Dq on_axis(Axis a, double v) { return a == Axis::D ? Dq{v, 0.0} : Dq{0.0, v}; }

struct StepInjection {
    Axis axis = Axis::D;
    double g = 0.01;             // fraction of the operating-point axis voltage
    double t_step = 0.1;         // s; everything before is baseline
    double record_length = 1.0;  // s after the step

    void validate() const {
        if (!(g > 0.0) || !(g <= 0.05)) throw Error(ErrorCode::InvalidArgument, "step g must lie in (0, 0.05]");
        if (!(t_step >= 0.1)) throw Error(ErrorCode::InvalidArgument, "t_step must leave at least 0.1 s of baseline");
        if (!(record_length > 0.0)) throw Error(ErrorCode::InvalidArgument, "record_length must be positive");
    }
};

struct SineInjection {
    Axis axis = Axis::D;
    double amplitude_pp = 0.1;  // V peak-to-peak
    double frequency = 1.0;     // Hz
    unsigned cycles = 2;

    void validate() const {
        if (!(amplitude_pp > 0.0)) throw Error(ErrorCode::InvalidArgument, "amplitude_pp must be positive");
        if (cycles < 1) throw Error(ErrorCode::InvalidArgument, "cycles must be at least 1");
        if (!(frequency > 0.0)) throw Error(ErrorCode::InvalidArgument, "sine frequency must be positive");
    }
};

/// One sweep frequency after snapping to the sample grid.
struct SweepPoint {
    double requested_hz = 0.0;
    double frequency_hz = 0.0;        // exactly measured_cycles * fs / window_samples
    unsigned measured_cycles = 0;
    std::size_t window_samples = 0;
};

struct SweepPlan {
    std::vector<SweepPoint> points;
    SineInjection injection;  // frequency field unused; amplitude and configured cycles
    double fs = 2500.0;
    double settle_time = 0.0;  // minimum prelude before the measured window, s

    std::vector<double> frequencies() const {
        std::vector<double> f;
        f.reserve(points.size());
        for (const auto& p : points) f.push_back(p.frequency_hz);
        return f;
    }
};

/// Snap each requested frequency onto c * fs / N with integer N so that the
/// measured window is exactly coherent. c starts at the configured cycle count
/// and is raised only when needed to stay within 1% of the request and keep the
/// plan strictly increasing.
inline SweepPlan make_sweep_plan(const std::vector<double>& requested, const SineInjection& injection, double fs,
                                 double settle_time = 0.0) {
    injection.validate();
    if (!(fs > 0.0)) throw Error(ErrorCode::InvalidArgument, "fs must be positive");
    if (requested.empty()) throw Error(ErrorCode::InvalidArgument, "sweep needs at least one frequency");
    SweepPlan plan;
    plan.injection = injection;
    plan.fs = fs;
    plan.settle_time = settle_time;
    double previous = 0.0;
    for (double f : requested) {
        if (!(f > previous)) throw Error(ErrorCode::InvalidArgument, "sweep frequencies must be strictly increasing");
        if (!(f < 0.5 * fs)) throw Error(ErrorCode::AboveNyquist, std::to_string(f) + " Hz");
        SweepPoint pt;
        pt.requested_hz = f;
        for (unsigned c = injection.cycles; c <= injection.cycles + 1000; ++c) {
            const double n = std::round(static_cast<double>(c) * fs / f);
            if (n < 2.0) continue;
            const double snapped = static_cast<double>(c) * fs / n;
            const double floor_hz = plan.points.empty() ? 0.0 : plan.points.back().frequency_hz;
            if (std::abs(snapped / f - 1.0) <= 0.01 + 1e-12 && snapped > floor_hz && snapped < 0.5 * fs) {
                pt.frequency_hz = snapped;
                pt.measured_cycles = c;
                pt.window_samples = static_cast<std::size_t>(n);
                break;
            }
        }
        if (pt.measured_cycles == 0)
            throw Error(ErrorCode::NonCoherentWindow, "no coherent window within 1% of " + std::to_string(f) + " Hz");
        plan.points.push_back(pt);
        previous = f;
    }
    return plan;
}

/// Slowest-mode settling allowance: eight time constants of the slowest linearized
/// mode, and never less than 5 / omega_c for the inverter.
inline double settling_time_hint(const Plant& p, const Eigen::VectorXd& equilibrium) {
    const ContinuousStateSpace lin = linearize(p, equilibrium);
    Eigen::EigenSolver<Eigen::MatrixXd> es(lin.A, false);
    double slowest = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        const double decay = -es.eigenvalues()(i).real();
        if (decay > 1e-9) slowest = std::min(slowest, decay);
    }
    double hint = std::isfinite(slowest) ? 8.0 / slowest : 0.0;
    if (p.kind() == PlantKind::GfmTestbed) hint = std::max(hint, 5.0 / p.gfm().omega_c);
    return hint;
}

// ---------------------------------------------------------------------------
// Step experiments
// ---------------------------------------------------------------------------

struct StepRecord {
    SimulationRecord raw;  // absolute waveforms from t = 0 (baseline) to the end of the record
    DqSignal dv_g;         // baseline-removed source voltage
    DqSignal di_o;         // baseline-removed port current
    std::size_t step_index = 0;  // first sample at or after the step
    double g_abs = 0.0;          // step height, V

    /// Samples of a baseline-removed series from the step instant on (index 0 = step instant).
    TimeSeries from_step(const TimeSeries& s) const { return s.slice(step_index, s.size()); }
    /// Same, with one baseline sample in front so that the step edge is part of the record.
    TimeSeries with_edge(const TimeSeries& s) const { return s.slice(step_index - 1, s.size()); }
};

struct StepExperimentPair {
    StepRecord record_d;  // D-axis step: i_od^(1), i_oq^(1)
    StepRecord record_q;  // Q-axis step: i_od^(2), i_oq^(2)
    double g = 0.0;
    double dt = 0.0;
    Eigen::VectorXd equilibrium;
    std::size_t simulations = 0;

    const StepRecord& record(Axis a) const { return a == Axis::D ? record_d : record_q; }

    /// Baseline-removed response of output axis `out` to the step on input axis `in`.
    const TimeSeries& response(Channel c) const {
        const auto [out, in] = channel_axes(c);
        const StepRecord& r = in == 0 ? record_d : record_q;
        return out == 0 ? r.di_o.d : r.di_o.q;
    }
    const TimeSeries& input(Channel c) const {
        const auto [out, in] = channel_axes(c);
        (void)out;
        return in == 0 ? record_d.dv_g.d : record_q.dv_g.q;
    }
    const StepRecord& record_for(Channel c) const { return channel_axes(c).second == 0 ? record_d : record_q; }
};

/// Step height for an axis: g times the operating-point axis voltage, or times
/// V_gd when the axis voltage is zero.
inline double step_height(const Plant& p, Axis axis, double g) {
    const Dq v = p.nominal_source();
    const double base = axis == Axis::D ? std::abs(v.d) : (v.q != 0.0 ? std::abs(v.q) : std::abs(v.d));
    if (!(base > 0.0)) throw Error(ErrorCode::InvalidArgument, "source operating point is zero; step height undefined");
    return g * base;
}

inline StepRecord run_step(const Plant& p, const Eigen::VectorXd& equilibrium, const StepInjection& inj, double fs,
                           const SimulationOptions& sim = {}, double drift_tolerance = 1e-6) {
    inj.validate();
    const double g_abs = step_height(p, inj.axis, inj.g);
    const auto step_index = static_cast<std::size_t>(std::llround(inj.t_step * fs));
    const double t_step = static_cast<double>(step_index) / fs;
    const Dq jump = on_axis(inj.axis, g_abs);
    const Perturbation perturbation = [=](double t) { return t >= t_step - 1e-14 ? jump : Dq{}; };
    const double duration = t_step + inj.record_length + 0.5 / fs;

    StepRecord r{simulate(p, perturbation, duration, fs, equilibrium, sim),
                 DqSignal(TimeSeries({0.0}, 1.0 / fs), TimeSeries({0.0}, 1.0 / fs)),
                 DqSignal(TimeSeries({0.0}, 1.0 / fs), TimeSeries({0.0}, 1.0 / fs)), step_index, g_abs};
    const SampleRange baseline{0, step_index};

    const double tol = drift_tolerance * p.current_base();
    for (const TimeSeries* s : {&r.raw.i_o.d, &r.raw.i_o.q}) {
        const auto [lo, hi] = std::minmax_element(s->samples().begin(), s->samples().begin() + static_cast<std::ptrdiff_t>(step_index));
        if (*hi - *lo > tol)
            throw Error(ErrorCode::NotAtEquilibrium,
                        "pre-step current drifts by " + std::to_string(*hi - *lo) + " A (tolerance " + std::to_string(tol) + " A)");
    }
    r.dv_g = DqSignal(remove_dc_offset(r.raw.v_g.d, baseline), remove_dc_offset(r.raw.v_g.q, baseline));
    r.di_o = DqSignal(remove_dc_offset(r.raw.i_o.d, baseline), remove_dc_offset(r.raw.i_o.q, baseline));
    return r;
}

/// Two step experiments from the same operating point, one per source axis.
inline StepExperimentPair run_step_pair(const Plant& p, const Eigen::VectorXd& equilibrium, StepInjection inj,
                                        double fs, const SimulationOptions& sim = {}) {
    StepInjection d = inj, q = inj;
    d.axis = Axis::D;
    q.axis = Axis::Q;
    StepExperimentPair pair{run_step(p, equilibrium, d, fs, sim), run_step(p, equilibrium, q, fs, sim), inj.g,
                            1.0 / fs, equilibrium, 2};
    return pair;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

struct SweepDataset {
    SweepPlan plan;
    std::array<FrequencyResponse, 4> channels;  // indexed by Channel, minus sign applied
    std::size_t simulations = 0;

    const FrequencyResponse& operator[](Channel c) const { return channels[static_cast<std::size_t>(c)]; }
};

/// Worker count: GFMID_WORKERS if set to a positive integer, else the hardware concurrency.
inline unsigned worker_count() {
    if (const char* env = std::getenv("GFMID_WORKERS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(std::min<long>(v, 256));
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs job(i) for i in [0, n) on `workers` threads. Results must be written by index;
/// the first exception (lowest index) is rethrown after all workers stop.
template <class Job>
void parallel_for(std::size_t n, unsigned workers, Job&& job) {
    workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), n));
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::vector<std::exception_ptr> errors(n);
    auto run = [&] {
        for (std::size_t i = next++; i < n && !failed; i = next++) {
            try {
                job(i);
            } catch (...) {
                errors[i] = std::current_exception();
                failed = true;
            }
        }
    };
    if (workers <= 1) {
        run();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct SinePhasors {
    Complex v_d, v_q, i_d, i_q;
};

/// One sine experiment: settle, then measure phasors over the coherent window.
inline SinePhasors run_sine(const Plant& p, const Eigen::VectorXd& equilibrium, const SweepPoint& pt, Axis axis,
                            double amplitude_pp, double fs, double settle_time, const SimulationOptions& sim = {}) {
    const double f = pt.frequency_hz;
    const double settle = std::max(2.0 / f, settle_time);
    const auto prelude = static_cast<std::size_t>(std::ceil(settle * fs - 1e-9));
    const std::size_t total = prelude + pt.window_samples;
    const double amplitude = 0.5 * amplitude_pp;
    const double w = 2.0 * std::numbers::pi * f;
    const Perturbation perturbation = [=](double t) { return on_axis(axis, amplitude * std::sin(w * t)); };

    const SimulationRecord rec = simulate(p, perturbation, static_cast<double>(total) / fs, fs, equilibrium, sim);
    const Dq v0 = p.nominal_source();
    const Dq i0 = p.output(equilibrium);
    auto phasor = [&](const TimeSeries& s, double offset) {
        std::vector<double> x(s.samples().begin() + static_cast<std::ptrdiff_t>(prelude), s.samples().end());
        for (double& v : x) v -= offset;
        TimeSeries ts(std::move(x), s.dt());
        return extract_phasor(remove_dc_offset(ts, SampleRange{0, ts.size()}), f).value;
    };
    return {phasor(rec.v_g.d, v0.d), phasor(rec.v_g.q, v0.q), phasor(rec.i_o.d, i0.d), phasor(rec.i_o.q, i0.q)};
}

/// Two sine experiments per plan point (D then Q injection), run on a worker pool and
/// merged by index.
inline SweepDataset run_sweep(const Plant& p, const Eigen::VectorXd& equilibrium, const SweepPlan& plan,
                              const SimulationOptions& sim = {}, unsigned workers = worker_count()) {
    const std::size_t n = plan.points.size();
    std::vector<SinePhasors> results(2 * n);
    parallel_for(2 * n, workers, [&](std::size_t job) {
        const std::size_t i = job / 2;
        const Axis axis = job % 2 == 0 ? Axis::D : Axis::Q;
        try {
            results[job] = run_sine(p, equilibrium, plan.points[i], axis, plan.injection.amplitude_pp, plan.fs,
                                    plan.settle_time, sim);
        } catch (const Error& e) {
            throw e.with_context(std::to_string(plan.points[i].frequency_hz) + " Hz, " + (axis == Axis::D ? "d" : "q") +
                                 " injection");
        }
    });

    SweepDataset ds;
    ds.plan = plan;
    ds.simulations = 2 * n;
    for (auto& ch : ds.channels) {
        ch.frequency_hz = plan.frequencies();
        ch.value.resize(n);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const SinePhasors& d = results[2 * i];
        const SinePhasors& q = results[2 * i + 1];
        ds.channels[0].value[i] = -d.i_d / d.v_d;
        ds.channels[1].value[i] = -q.i_d / q.v_q;
        ds.channels[2].value[i] = -d.i_q / d.v_d;
        ds.channels[3].value[i] = -q.i_q / q.v_q;
        for (const auto& ch : ds.channels)
            if (!std::isfinite(ch.value[i].real()) || !std::isfinite(ch.value[i].imag()))
                throw Error(ErrorCode::SimulationDiverged, "non-finite sweep point at " +
                                                                std::to_string(plan.points[i].frequency_hz) + " Hz");
    }
    return ds;
}

}  // namespace gfmid
