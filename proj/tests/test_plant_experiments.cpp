#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gfmid/experiments.hpp"
#include "gfmid/plant.hpp"

using namespace gfmid;
using std::numbers::pi;

namespace {

const Plant& gfm() {
    static const Plant p = build_gfm_plant(GfmParameters{}, GridParameters{});
    return p;
}

const Eigen::VectorXd& gfm_equilibrium() {
    static const Eigen::VectorXd x = find_equilibrium(gfm());
    return x;
}

template <class F>
ErrorCode code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::InvalidArgument;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

TEST(Plant, DefaultTestbedBuildsWithSeriesRlLoad) {
    const Plant& p = gfm();
    EXPECT_EQ(p.state_size(), 15);
    EXPECT_EQ(p.load_kind(), LoadKind::ResistiveInductive);
    // 12 kW + 12 kvar at 380 V peak in the p = v.i convention: |Z| = 380^2 / |S|.
    const double z = 380.0 * 380.0 / std::hypot(12e3, 12e3);
    EXPECT_NEAR(std::hypot(p.load_resistance(), 377.0 * p.load_inductance()), z, 1e-9 * z);
    EXPECT_NEAR(p.load_resistance(), 377.0 * p.load_inductance(), 1e-9);
}

TEST(Plant, InvalidParametersNameTheField) {
    GfmParameters g;
    g.L_f = 0.0;
    try {
        build_gfm_plant(g, GridParameters{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidParameters);
        EXPECT_NE(std::string(e.what()).find("L_f"), std::string::npos);
    }
    RlParameters rl;
    rl.R = -1.0;
    EXPECT_EQ(code_of([&] { build_rl_reference_plant(rl); }), ErrorCode::InvalidParameters);
}

// ---------------------------------------------------------------------------
// RL reference
// ---------------------------------------------------------------------------

TEST(RlReference, LinearizationMatchesClosedForm) {
    const double R = 0.23, L = 318e-6, w0 = 377.0;
    const Plant p = build_rl_reference_plant(R, L, w0);
    const ContinuousStateSpace lin = linearize(p, p.analytic_equilibrium());
    for (double f : {0.1, 5.0, 60.0, 700.0}) {
        const Complex s(0.0, 2 * pi * f);
        Eigen::Matrix2cd Z;
        Z << R + s * L, -w0 * L, w0 * L, R + s * L;
        const Eigen::Matrix2cd Y = Z.inverse();
        EXPECT_LT((p.analytic_admittance(s) - Y).norm(), 1e-12 * Y.norm());
        EXPECT_LT((admittance_of(lin, s) - Y).norm(), 1e-6 * Y.norm());
        // Cross terms are antisymmetric, diagonal terms equal.
        EXPECT_NEAR(std::abs(Y(0, 1) + Y(1, 0)), 0.0, 1e-12 * Y.norm());
        EXPECT_NEAR(std::abs(Y(0, 0) - Y(1, 1)), 0.0, 1e-12 * Y.norm());
    }
}

TEST(RlReference, StationaryFrameDecouplesAxes) {
    const Plant p = build_rl_reference_plant(0.5, 1e-3, 0.0);
    const Eigen::Matrix2cd Y = p.analytic_admittance(Complex(0.0, 2 * pi * 10.0));
    EXPECT_EQ(Y(0, 1), Complex(0.0, 0.0));
    EXPECT_EQ(Y(1, 0), Complex(0.0, 0.0));

    const Eigen::VectorXd x0 = find_equilibrium(p);
    const StepRecord r = run_step(p, x0, StepInjection{Axis::D, 0.01, 0.1, 0.2}, 2500.0);
    for (double v : r.di_o.q.samples()) EXPECT_LE(std::abs(v), 1e-12);
}

TEST(RlReference, EquilibriumIsStationary) {
    const Plant p = build_rl_reference_plant(RlParameters{});
    const Eigen::VectorXd x = find_equilibrium(p);
    EXPECT_LT(p.derivative(x, p.nominal_source()).norm(), 1e-9 * p.current_base());
    EXPECT_LT(equilibrium_residual(p, x), 1e-12);
}

TEST(RlReference, StepSettlesToDcAdmittance) {
    const Plant p = build_rl_reference_plant(RlParameters{});
    const Eigen::VectorXd x0 = find_equilibrium(p);
    const StepRecord r = run_step(p, x0, StepInjection{Axis::D, 0.01, 0.1, 0.5}, 2500.0);
    const Eigen::Matrix2cd Y0 = p.analytic_admittance(Complex(0.0, 0.0));
    const double expect_d = -Y0(0, 0).real() * r.g_abs;
    const double expect_q = -Y0(1, 0).real() * r.g_abs;
    EXPECT_NEAR(r.di_o.d.samples().back(), expect_d, 1e-3 * std::abs(expect_d));
    EXPECT_NEAR(r.di_o.q.samples().back(), expect_q, 1e-3 * std::abs(expect_q));
    EXPECT_NEAR(r.g_abs, 3.8, 1e-12);
}

TEST(RlReference, SweepMatchesClosedFormAndIgnoresAmplitude) {
    const Plant p = build_rl_reference_plant(RlParameters{});
    const Eigen::VectorXd x0 = find_equilibrium(p);
    const std::vector<double> f{1.0, 10.0, 100.0};
    SineInjection inj;
    const SweepPlan small = make_sweep_plan(f, inj, 2500.0, 0.05);
    inj.amplitude_pp = 2.0;
    const SweepPlan large = make_sweep_plan(f, inj, 2500.0, 0.05);
    const SweepDataset a = run_sweep(p, x0, small, {}, 1);
    const SweepDataset b = run_sweep(p, x0, large, {}, 1);
    for (std::size_t i = 0; i < f.size(); ++i) {
        const Eigen::Matrix2cd Y = p.analytic_admittance(Complex(0.0, 2 * pi * a.plan.points[i].frequency_hz));
        for (Channel c : kAllChannels) {
            const auto [out, in] = channel_axes(c);
            const Complex ya = a[c].value[i], yb = b[c].value[i];
            EXPECT_LT(std::abs(ya - Y(out, in)), 1e-5 * Y.norm()) << channel_name(c) << " " << f[i];
            EXPECT_LT(std::abs(ya - yb), 1e-8 * Y.norm());
        }
    }
    EXPECT_EQ(a.simulations, 6u);
}

// ---------------------------------------------------------------------------
// Sweep plan
// ---------------------------------------------------------------------------

TEST(SweepPlan, DefaultGridIsCoherentAndKeepsConfiguredCyclesToHundredHertz) {
    const SweepPlan plan = make_sweep_plan(log_grid(0.1, 1000.0, 100), SineInjection{}, 2500.0);
    ASSERT_EQ(plan.points.size(), 100u);
    double previous = 0.0;
    for (const SweepPoint& pt : plan.points) {
        EXPECT_GT(pt.frequency_hz, previous);
        previous = pt.frequency_hz;
        EXPECT_LE(std::abs(pt.frequency_hz / pt.requested_hz - 1.0), 0.01 + 1e-12);
        const double periods = pt.frequency_hz * static_cast<double>(pt.window_samples) / 2500.0;
        EXPECT_NEAR(periods, static_cast<double>(pt.measured_cycles), 1e-9 * periods);
        if (pt.requested_hz <= 100.0) EXPECT_EQ(pt.measured_cycles, 2u) << pt.requested_hz;
    }
}

TEST(SweepPlan, RejectsNyquistAndDisorder) {
    EXPECT_EQ(code_of([] { make_sweep_plan({1.0, 1300.0}, SineInjection{}, 2500.0); }), ErrorCode::AboveNyquist);
    EXPECT_EQ(code_of([] { make_sweep_plan({5.0, 2.0}, SineInjection{}, 2500.0); }), ErrorCode::InvalidArgument);
}

// ---------------------------------------------------------------------------
// GFM testbed
// ---------------------------------------------------------------------------

TEST(Gfm, EquilibriumResidualAndPowerBalance) {
    const Eigen::VectorXd& x = gfm_equilibrium();
    EXPECT_LT(equilibrium_residual(gfm(), x), 1e-9);
    const PowerBalance b = power_balance(gfm(), x);
    EXPECT_LT(std::abs(b.mismatch()), 1e-6 * b.load);
    EXPECT_GT(b.load, 0.0);
}

TEST(Gfm, UnperturbedRunStaysAtEquilibrium) {
    const SimulationRecord r = simulate(gfm(), no_perturbation(), 0.5, 2500.0, gfm_equilibrium());
    const double tol = 1e-9 * gfm().current_base();
    for (const TimeSeries* s : {&r.i_o.d, &r.i_o.q}) {
        const auto [lo, hi] = std::minmax_element(s->samples().begin(), s->samples().end());
        EXPECT_LT(*hi - *lo, tol);
    }
    EXPECT_TRUE(r.steady_state_reached);
}

TEST(Gfm, NonEquilibriumStartIsRejectedByStepExperiment) {
    EXPECT_EQ(code_of([] { run_step(gfm(), gfm().initial_guess(), StepInjection{}, 2500.0); }),
              ErrorCode::NotAtEquilibrium);
}

TEST(Gfm, StepRunsAreDeterministic) {
    const StepInjection inj{Axis::Q, 0.01, 0.1, 0.3};
    const StepRecord a = run_step(gfm(), gfm_equilibrium(), inj, 2500.0);
    const StepRecord b = run_step(gfm(), gfm_equilibrium(), inj, 2500.0);
    EXPECT_EQ(a.raw.i_o.d.samples(), b.raw.i_o.d.samples());
    EXPECT_EQ(a.raw.i_o.q.samples(), b.raw.i_o.q.samples());
}

TEST(Gfm, HalvingTheInternalStepConverges) {
    const StepInjection inj{Axis::D, 0.01, 0.1, 0.2};
    auto run = [&](std::size_t sub) {
        SimulationOptions o;
        o.min_substeps = sub;
        return run_step(gfm(), gfm_equilibrium(), inj, 2500.0, o).di_o.d.samples();
    };
    const auto coarse = run(20), mid = run(40), fine = run(80);
    const double e1 = max_abs_diff(coarse, mid), e2 = max_abs_diff(mid, fine);
    // Fourth-order scheme: each halving should cut the difference by about 16.
    EXPECT_LT(e2, e1 / 8.0);
    double peak = 0.0;
    for (double v : fine) peak = std::max(peak, std::abs(v));
    EXPECT_LT(e1, 1e-4 * peak);
}

TEST(Gfm, SmallStepsScaleLinearly) {
    const StepRecord one = run_step(gfm(), gfm_equilibrium(), StepInjection{Axis::D, 0.005, 0.1, 0.3}, 2500.0);
    const StepRecord two = run_step(gfm(), gfm_equilibrium(), StepInjection{Axis::D, 0.01, 0.1, 0.3}, 2500.0);
    double peak = 0.0, err = 0.0;
    for (std::size_t k = 0; k < one.di_o.d.size(); ++k) {
        peak = std::max(peak, std::abs(two.di_o.d[k]));
        err = std::max(err, std::abs(two.di_o.d[k] - 2.0 * one.di_o.d[k]));
    }
    EXPECT_LT(err, 0.01 * peak);
}

TEST(Gfm, ZeroPowerDroopLocksTheAngle) {
    GfmParameters g;
    g.m_P = 0.0;
    const Plant p = build_gfm_plant(g, GridParameters{});
    const Eigen::VectorXd x0 = find_equilibrium(p);
    const StepRecord r = run_step(p, x0, StepInjection{Axis::D, 0.01, 0.1, 0.2}, 2500.0);
    EXPECT_EQ(r.raw.final_state(0), x0(0));
}

TEST(Gfm, SweepIsIndependentOfWorkerCount) {
    const SweepPlan plan = make_sweep_plan({40.0, 90.0}, SineInjection{}, 2500.0, 0.15);
    const SweepDataset one = run_sweep(gfm(), gfm_equilibrium(), plan, {}, 1);
    const SweepDataset three = run_sweep(gfm(), gfm_equilibrium(), plan, {}, 3);
    for (Channel c : kAllChannels) EXPECT_EQ(one[c].value, three[c].value);
}

TEST(Gfm, AbcRoundTripMeasurementAgreesWithDirectDq) {
    SimulationOptions through;
    through.measure_through_abc = true;
    const StepInjection inj{Axis::D, 0.01, 0.1, 0.1};
    const StepRecord a = run_step(gfm(), gfm_equilibrium(), inj, 2500.0);
    const StepRecord b = run_step(gfm(), gfm_equilibrium(), inj, 2500.0, through);
    EXPECT_LT(max_abs_diff(a.raw.i_o.d.samples(), b.raw.i_o.d.samples()), 1e-9 * gfm().current_base());
    EXPECT_LT(max_abs_diff(a.raw.v_g.q.samples(), b.raw.v_g.q.samples()), 1e-9 * gfm().voltage_base());
}
