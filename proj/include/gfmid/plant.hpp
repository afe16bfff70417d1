#pragma once

// Averaged time-domain models of the measurement testbed.
//
// GFM testbed: droop-controlled voltage-source inverter (power measurement
// filter, droop laws, PI voltage and current loops with decoupling and
// output-current feedforward, averaged bridge), LC filter, coupling branch to
// the PCC, a series R-L load at the PCC and an R-L grid branch to the
// controllable dq voltage source. Everything is written in the grid frame
// rotating at omega_g; the controller works in its own frame, displaced by the
// droop angle delta.
//
// Complex notation for dq pairs: x = x_d + j x_q. An inductor in the rotating
// frame obeys L di/dt = v - R i - j omega L i.
//
// State layout (15):
//   0 delta, 1 P_f, 2 Q_f, 3-4 voltage-loop integrator, 5-6 current-loop
//   integrator, 7-8 filter-inductor current, 9-10 capacitor voltage,
//   11-12 coupling current i_o (inverter -> PCC), 13-14 network current
//   (load branch for an R-L load, grid branch PCC -> source for a pure R load,
//   unused for no load).
//
// RL reference: one R-L branch fed by the source. Its current i_b flows out of
// the source, so the port current in the inverter -> grid convention is -i_b
// and the measured admittance is exactly the branch admittance.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "gfmid/era_realization.hpp"
#include "gfmid/error.hpp"
#include "gfmid/signals.hpp"

namespace gfmid {

struct GfmParameters {
    double V_ni = 381.0;
    double omega_ni = 377.0;
    double V_DC = 1000.0;
    double m_P = 9.4e-5;
    double n_Q = 1.3e-3;
    double R_c = 0.03;
    double L_c = 1e-3;
    double R_f = 0.001;
    double L_f = 0.3e-3;
    double C_f = 10e-6;
    double K_PV = 0.1;
    double K_IV = 420.0;
    double K_PC = 15.0;
    double K_IC = 20000.0;
    double omega_b = 377.0;
    double F = 0.75;
    double omega_c = 37.7;

    void validate() const {
        auto positive = [](double v, const char* name) {
            if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidParameters, name);
        };
        auto nonnegative = [](double v, const char* name) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidParameters, name);
        };
        positive(V_ni, "V_ni");
        positive(omega_ni, "omega_ni");
        positive(V_DC, "V_DC");
        nonnegative(m_P, "m_P");
        nonnegative(n_Q, "n_Q");
        positive(R_c, "R_c");
        positive(L_c, "L_c");
        positive(R_f, "R_f");
        positive(L_f, "L_f");
        positive(C_f, "C_f");
        nonnegative(K_PV, "K_PV");
        nonnegative(K_IV, "K_IV");
        nonnegative(K_PC, "K_PC");
        nonnegative(K_IC, "K_IC");
        positive(omega_b, "omega_b");
        nonnegative(F, "F");
        positive(omega_c, "omega_c");
        if (!(omega_c < omega_b)) throw Error(ErrorCode::InvalidParameters, "omega_c (must be below omega_b)");
    }
};

struct GridParameters {
    double omega_g = 377.0;
    double R_grid = 0.23;
    double L_grid = 318e-6;
    double V_gd = 380.0;
    double V_gq = 0.0;
    double P_load = 12e3;
    double Q_load = 12e3;

    void validate() const {
        auto positive = [](double v, const char* name) {
            if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidParameters, name);
        };
        auto nonnegative = [](double v, const char* name) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidParameters, name);
        };
        positive(omega_g, "omega_g");
        positive(R_grid, "R_grid");
        positive(L_grid, "L_grid");
        if (!std::isfinite(V_gd)) throw Error(ErrorCode::InvalidParameters, "V_gd");
        if (!std::isfinite(V_gq)) throw Error(ErrorCode::InvalidParameters, "V_gq");
        nonnegative(P_load, "P_load");
        nonnegative(Q_load, "Q_load");
        if (P_load == 0.0 && Q_load > 0.0)
            throw Error(ErrorCode::InvalidParameters, "Q_load (a purely inductive load needs P_load > 0)");
    }
};

struct RlParameters {
    double R = 0.23;
    double L = 318e-6;
    double omega0 = 377.0;
    double V_d = 380.0;  // source operating point; the admittance does not depend on it
    double V_q = 0.0;

    void validate() const {
        if (!(R > 0.0) || !std::isfinite(R)) throw Error(ErrorCode::InvalidParameters, "R");
        if (!(L > 0.0) || !std::isfinite(L)) throw Error(ErrorCode::InvalidParameters, "L");
        if (!(omega0 >= 0.0) || !std::isfinite(omega0)) throw Error(ErrorCode::InvalidParameters, "omega0");
        if (!std::isfinite(V_d)) throw Error(ErrorCode::InvalidParameters, "V_d");
        if (!std::isfinite(V_q)) throw Error(ErrorCode::InvalidParameters, "V_q");
    }
};

enum class PlantKind { GfmTestbed, RlReference };

enum class LoadKind { None, Resistive, ResistiveInductive };

/// Perturbation of the source voltage around its operating point, (dv_gd, dv_gq) at time t.
using Perturbation = std::function<Dq(double)>;

inline Perturbation no_perturbation() {
    return [](double) { return Dq{}; };
}

class Plant {
public:
    using State = Eigen::VectorXd;

    PlantKind kind() const noexcept { return kind_; }
    Eigen::Index state_size() const noexcept { return kind_ == PlantKind::GfmTestbed ? 15 : 2; }
    const GfmParameters& gfm() const noexcept { return gfm_; }
    const GridParameters& grid() const noexcept { return grid_; }
    const RlParameters& rl() const noexcept { return rl_; }
    LoadKind load_kind() const noexcept { return load_; }
    double load_resistance() const noexcept { return R_load_; }
    double load_inductance() const noexcept { return L_load_; }

    /// Source voltage operating point.
    Dq nominal_source() const {
        return kind_ == PlantKind::GfmTestbed ? Dq{grid_.V_gd, grid_.V_gq} : Dq{rl_.V_d, rl_.V_q};
    }

    /// Frame frequency used for abc reconstruction.
    double frame_frequency() const noexcept { return kind_ == PlantKind::GfmTestbed ? grid_.omega_g : rl_.omega0; }

    /// Per-state magnitude used for per-unit residuals and the divergence bound.
    State state_scale() const {
        State s(state_size());
        if (kind_ == PlantKind::RlReference) {
            s.setConstant(current_base());
            return s;
        }
        const double V = voltage_base(), I = current_base(), S = V * I, w = grid_.omega_g;
        s << 1.0, S, S, V / w, V / w, I / w, I / w, I, I, V, V, I, I, I, I;
        return s;
    }

    double voltage_base() const {
        const Dq v = nominal_source();
        return std::max({std::hypot(v.d, v.q), kind_ == PlantKind::GfmTestbed ? gfm_.V_ni : 0.0, 1.0});
    }

    double current_base() const {
        if (kind_ == PlantKind::RlReference) return voltage_base() / std::hypot(rl_.R, rl_.omega0 * rl_.L);
        const double S = std::max(std::hypot(grid_.P_load, grid_.Q_load), 1e3);
        return S / voltage_base();
    }

    /// Largest internal integration step that keeps the fastest modes well resolved.
    double max_internal_step() const {
        if (kind_ == PlantKind::RlReference) return std::numeric_limits<double>::infinity();
        // Current-loop and L-C poles sit near K_PC / L_f; keep |lambda h| below one.
        const double fastest = std::max({gfm_.K_PC / gfm_.L_f, 1.0 / std::sqrt(gfm_.L_f * gfm_.C_f),
                                         gfm_.R_c / gfm_.L_c, grid_.R_grid / grid_.L_grid});
        return 1.0 / fastest;
    }

    /// dx/dt at state x with absolute source voltage vg.
    State derivative(const State& x, Dq vg) const {
        State dx(state_size());
        derivative(x, vg, dx);
        return dx;
    }

    void derivative(const State& x, Dq vg, State& dx) const {
        if (kind_ == PlantKind::RlReference) {
            const Complex i(x(0), x(1));
            const Complex v(vg.d, vg.q);
            const Complex di = (v - rl_.R * i - Complex(0.0, rl_.omega0 * rl_.L) * i) / rl_.L;
            dx(0) = di.real();
            dx(1) = di.imag();
            return;
        }
        gfm_derivative(x, vg, dx);
    }

    /// Port current (inverter -> grid direction).
    Dq output(const State& x) const {
        if (kind_ == PlantKind::RlReference) return {-x(0), -x(1)};
        return {x(11), x(12)};
    }

    /// Closed-form admittance of the RL reference: inverse of [[R+sL, -w0 L], [w0 L, R+sL]].
    Eigen::Matrix2cd analytic_admittance(Complex s) const {
        if (kind_ != PlantKind::RlReference)
            throw Error(ErrorCode::InvalidArgument, "closed-form admittance exists only for the RL reference");
        const Complex z = rl_.R + s * rl_.L;
        const double x = rl_.omega0 * rl_.L;
        const Complex det = z * z + x * x;
        if (std::abs(det) == 0.0) throw Error(ErrorCode::EvaluationAtPole, "RL branch impedance is singular");
        Eigen::Matrix2cd Y;
        Y << z / det, x / det, -x / det, z / det;
        return Y;
    }

    /// Closed-form operating point of the RL reference.
    State analytic_equilibrium() const {
        if (kind_ != PlantKind::RlReference)
            throw Error(ErrorCode::InvalidArgument, "closed-form equilibrium exists only for the RL reference");
        const Complex i = Complex(rl_.V_d, rl_.V_q) / Complex(rl_.R, rl_.omega0 * rl_.L);
        State x(2);
        x << i.real(), i.imag();
        return x;
    }

    /// Starting point for the equilibrium search from a phasor estimate.
    State initial_guess() const {
        if (kind_ == PlantKind::RlReference) return analytic_equilibrium();
        State x = State::Zero(15);
        const Complex vg(grid_.V_gd, grid_.V_gq);
        x(9) = vg.real();
        x(10) = vg.imag();
        if (load_ == LoadKind::ResistiveInductive) {
            const Complex il = vg / Complex(R_load_, grid_.omega_g * L_load_);
            x(13) = il.real();
            x(14) = il.imag();
        }
        return x;
    }

    /// Load current at the PCC, and current into the grid branch (PCC -> source).
    std::pair<Complex, Complex> network_currents(const State& x) const {
        const Complex io(x(11), x(12));
        const Complex extra(x(13), x(14));
        switch (load_) {
            case LoadKind::ResistiveInductive: return {extra, io - extra};
            case LoadKind::Resistive: return {io - extra, extra};
            case LoadKind::None: break;
        }
        return {Complex(0.0, 0.0), io};
    }

    /// PCC voltage implied by the state (the PCC node carries no capacitance).
    Complex pcc_voltage(const State& x, Dq vg) const {
        const Complex io(x(11), x(12));
        const double w = grid_.omega_g;
        const Complex zc(gfm_.R_c, w * gfm_.L_c), zg(grid_.R_grid, w * grid_.L_grid);
        const Complex v_o(x(9), x(10));
        const Complex v_g(vg.d, vg.q);
        switch (load_) {
            case LoadKind::Resistive: return R_load_ * (io - Complex(x(13), x(14)));
            case LoadKind::ResistiveInductive: {
                const Complex zl(R_load_, w * L_load_);
                const Complex il(x(13), x(14));
                const Complex ig = io - il;
                return ((v_o - zc * io) / gfm_.L_c + zl * il / L_load_ + (v_g + zg * ig) / grid_.L_grid) /
                       (1.0 / gfm_.L_c + 1.0 / L_load_ + 1.0 / grid_.L_grid);
            }
            case LoadKind::None: break;
        }
        return ((v_o - zc * io) / gfm_.L_c + (v_g + zg * io) / grid_.L_grid) / (1.0 / gfm_.L_c + 1.0 / grid_.L_grid);
    }

    /// Bridge voltage reference in the grid frame (after the modulation clamp).
    Complex bridge_voltage(const State& x) const {
        const auto ctl = control(x);
        return ctl.v_bridge;
    }

private:
    friend Plant build_gfm_plant(const GfmParameters&, const GridParameters&);
    friend Plant build_rl_reference_plant(const RlParameters&);

    struct ControlOutputs {
        Complex v_bridge;
        Complex e_v;  // voltage error, controller frame
        Complex e_i;  // current error, controller frame
        double omega;
        double p;
        double q;
    };

    ControlOutputs control(const State& x) const {
        const GfmParameters& g = gfm_;
        const Complex rot = std::polar(1.0, -x(0));
        const Complex il = Complex(x(7), x(8)) * rot;
        const Complex vo_w(x(9), x(10));
        const Complex io_w(x(11), x(12));
        const Complex vo = vo_w * rot;
        const Complex io = io_w * rot;

        ControlOutputs out{};
        out.p = vo_w.real() * io_w.real() + vo_w.imag() * io_w.imag();
        out.q = vo_w.imag() * io_w.real() - vo_w.real() * io_w.imag();
        out.omega = g.omega_ni - g.m_P * x(1);
        const Complex v_ref(g.V_ni - g.n_Q * x(2), 0.0);
        out.e_v = v_ref - vo;
        const Complex il_ref = g.F * io + Complex(0.0, g.omega_b * g.C_f) * vo + g.K_PV * out.e_v +
                               g.K_IV * Complex(x(3), x(4));
        out.e_i = il_ref - il;
        Complex vi = Complex(0.0, g.omega_b * g.L_f) * il + g.K_PC * out.e_i + g.K_IC * Complex(x(5), x(6));
        const double limit = 0.5 * g.V_DC;
        if (std::abs(vi) > limit) vi *= limit / std::abs(vi);
        out.v_bridge = vi * std::conj(rot);
        return out;
    }

    void gfm_derivative(const State& x, Dq vg, State& dx) const {
        const GfmParameters& g = gfm_;
        const double w = grid_.omega_g;
        const ControlOutputs c = control(x);

        const Complex il(x(7), x(8));
        const Complex vo(x(9), x(10));
        const Complex io(x(11), x(12));
        const Complex vp = pcc_voltage(x, vg);

        const Complex dil = (c.v_bridge - vo - Complex(g.R_f, w * g.L_f) * il) / g.L_f;
        const Complex dvo = (il - io - Complex(0.0, w * g.C_f) * vo) / g.C_f;
        const Complex dio = (vo - vp - Complex(g.R_c, w * g.L_c) * io) / g.L_c;

        dx(0) = c.omega - w;
        dx(1) = g.omega_c * (c.p - x(1));
        dx(2) = g.omega_c * (c.q - x(2));
        dx(3) = c.e_v.real();
        dx(4) = c.e_v.imag();
        dx(5) = c.e_i.real();
        dx(6) = c.e_i.imag();
        dx(7) = dil.real();
        dx(8) = dil.imag();
        dx(9) = dvo.real();
        dx(10) = dvo.imag();
        dx(11) = dio.real();
        dx(12) = dio.imag();

        const Complex extra(x(13), x(14));
        Complex dextra;
        switch (load_) {
            case LoadKind::ResistiveInductive:
                dextra = (vp - Complex(R_load_, w * L_load_) * extra) / L_load_;
                break;
            case LoadKind::Resistive:
                dextra = (vp - Complex(vg.d, vg.q) - Complex(grid_.R_grid, w * grid_.L_grid) * extra) / grid_.L_grid;
                break;
            case LoadKind::None:
                dextra = -w * extra;  // unused slot relaxes to zero
                break;
        }
        dx(13) = dextra.real();
        dx(14) = dextra.imag();
    }

    PlantKind kind_ = PlantKind::RlReference;
    GfmParameters gfm_;
    GridParameters grid_;
    RlParameters rl_;
    LoadKind load_ = LoadKind::None;
    double R_load_ = 0.0;
    double L_load_ = 0.0;
};

/// Constant-impedance load sized from P + jQ at the nominal source voltage:
/// Z = |V|^2 / conj(S), realized as series R-L.
inline Plant build_gfm_plant(const GfmParameters& g, const GridParameters& n) {
    g.validate();
    n.validate();
    Plant p;
    p.kind_ = PlantKind::GfmTestbed;
    p.gfm_ = g;
    p.grid_ = n;
    const double v2 = n.V_gd * n.V_gd + n.V_gq * n.V_gq;
    if (n.P_load == 0.0 && n.Q_load == 0.0) {
        p.load_ = LoadKind::None;
    } else {
        if (!(v2 > 0.0)) throw Error(ErrorCode::InvalidParameters, "V_gd (load sizing needs a nonzero source voltage)");
        const Complex z = v2 / std::conj(Complex(n.P_load, n.Q_load));
        p.R_load_ = z.real();
        p.L_load_ = z.imag() / n.omega_g;
        p.load_ = n.Q_load > 0.0 ? LoadKind::ResistiveInductive : LoadKind::Resistive;
    }
    return p;
}

inline Plant build_rl_reference_plant(const RlParameters& rl) {
    rl.validate();
    Plant p;
    p.kind_ = PlantKind::RlReference;
    p.rl_ = rl;
    return p;
}

inline Plant build_rl_reference_plant(double R, double L, double omega0) {
    RlParameters rl;
    rl.R = R;
    rl.L = L;
    rl.omega0 = omega0;
    return build_rl_reference_plant(rl);
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

struct SimulationOptions {
    std::size_t min_substeps = 10;    // internal steps per output sample (at least)
    bool measure_through_abc = false;  // reconstruct abc waveforms and re-apply the Park transform
    double steady_tolerance = 1e-6;    // relative peak-to-peak over the trailing window
    double steady_window = 0.1;        // s
    double divergence_factor = 1e6;
};

struct SimulationRecord {
    DqSignal v_g;
    DqSignal i_o;
    bool steady_state_reached = false;
    Eigen::VectorXd final_state;
    std::size_t substeps = 0;
};

namespace detail {

inline double peak_to_peak(const std::vector<double>& x, std::size_t from) {
    const auto [lo, hi] = std::minmax_element(x.begin() + static_cast<std::ptrdiff_t>(from), x.end());
    return *hi - *lo;
}

}  // namespace detail

/// Fixed-step RK4. Output sample k (k = 0 .. round(duration fs) - 1) is taken at
/// t = k / fs before stepping; final_state is the state at t = duration.
inline SimulationRecord simulate(const Plant& p, const Perturbation& perturbation, double duration, double fs,
                                 const Eigen::VectorXd& initial_state, const SimulationOptions& opts = {}) {
    if (!(fs > 0.0) || !std::isfinite(fs)) throw Error(ErrorCode::InvalidArgument, "fs must be positive");
    if (!(duration > 0.0) || !std::isfinite(duration)) throw Error(ErrorCode::InvalidArgument, "duration must be positive");
    if (initial_state.size() != p.state_size())
        throw Error(ErrorCode::InvalidArgument, "initial state has " + std::to_string(initial_state.size()) +
                                                    " entries, plant needs " + std::to_string(p.state_size()));
    const auto n = static_cast<std::size_t>(std::llround(duration * fs));
    if (n == 0) throw Error(ErrorCode::InvalidArgument, "duration shorter than one sample");
    const double dt = 1.0 / fs;
    std::size_t sub = std::max<std::size_t>(opts.min_substeps, 1);
    const double hmax = p.max_internal_step();
    if (std::isfinite(hmax)) sub = std::max(sub, static_cast<std::size_t>(std::ceil(dt / hmax)));
    const double h = dt / static_cast<double>(sub);

    const Dq v0 = p.nominal_source();
    const Eigen::VectorXd scale = p.state_scale();
    const double bound = opts.divergence_factor * scale.norm();
    const double w_frame = p.frame_frequency();

    std::vector<double> vgd(n), vgq(n), iod(n), ioq(n);
    Eigen::VectorXd x = initial_state;
    Eigen::VectorXd k1(x.size()), k2(x.size()), k3(x.size()), k4(x.size()), tmp(x.size());
    auto source = [&](double t) {
        const Dq d = perturbation(t);
        return Dq{v0.d + d.d, v0.q + d.q};
    };

    for (std::size_t k = 0; k < n; ++k) {
        const double tk = static_cast<double>(k) * dt;
        const Dq vg = source(tk);
        Dq io = p.output(x);
        Dq v = vg;
        if (opts.measure_through_abc) {
            const double theta = w_frame * tk;
            v = park(inverse_park(vg, theta), theta);
            io = park(inverse_park(io, theta), theta);
        }
        vgd[k] = v.d;
        vgq[k] = v.q;
        iod[k] = io.d;
        ioq[k] = io.q;

        for (std::size_t s = 0; s < sub; ++s) {
            const double t = tk + static_cast<double>(s) * h;
            p.derivative(x, source(t), k1);
            tmp = x + 0.5 * h * k1;
            p.derivative(tmp, source(t + 0.5 * h), k2);
            tmp = x + 0.5 * h * k2;
            p.derivative(tmp, source(t + 0.5 * h), k3);
            tmp = x + h * k3;
            // Left limit: a source step at t + h belongs to the next substep.
            p.derivative(tmp, source(t + h * (1.0 - 1e-6)), k4);
            x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        const double norm = x.norm();
        if (!std::isfinite(norm) || norm > bound)
            throw Error(ErrorCode::SimulationDiverged,
                        "state norm " + std::to_string(norm) + " at t = " + std::to_string(tk + dt) + " s");
    }

    SimulationRecord rec{DqSignal(TimeSeries(std::move(vgd), dt), TimeSeries(std::move(vgq), dt)),
                         DqSignal(TimeSeries(std::move(iod), dt), TimeSeries(std::move(ioq), dt)), false, x, sub};
    const auto window = static_cast<std::size_t>(std::llround(opts.steady_window * fs));
    if (window >= 2 && window <= n) {
        const double tol = opts.steady_tolerance * p.current_base();
        rec.steady_state_reached = detail::peak_to_peak(rec.i_o.d.samples(), n - window) < tol &&
                                   detail::peak_to_peak(rec.i_o.q.samples(), n - window) < tol;
    }
    return rec;
}

// ---------------------------------------------------------------------------
// Equilibrium and linearization
// ---------------------------------------------------------------------------

/// max_i |f_i(x)| / (omega_ref * scale_i): rates per unit of the state magnitude per rad.
inline double equilibrium_residual(const Plant& p, const Eigen::VectorXd& x) {
    const Eigen::VectorXd f = p.derivative(x, p.nominal_source());
    const Eigen::VectorXd s = p.state_scale();
    const double w = std::max(p.frame_frequency(), 1.0);
    return (f.array() / (w * s.array())).abs().maxCoeff();
}

struct EquilibriumOptions {
    double settle_time = 2.0;  // s of simulation before Newton polishing
    double tolerance = 1e-9;
    std::size_t max_newton = 50;
};

/// Central-difference Jacobians of the state equation at x: (df/dx, df/dv_g).
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> jacobians(const Plant& p, const Eigen::VectorXd& x, Dq vg) {
    const Eigen::Index n = x.size();
    const Eigen::VectorXd scale = p.state_scale();
    Eigen::MatrixXd A(n, n), B(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double h = 1e-6 * std::max(scale(i), std::abs(x(i)));
        Eigen::VectorXd xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        A.col(i) = (p.derivative(xp, vg) - p.derivative(xm, vg)) / (2.0 * h);
    }
    const double hv = 1e-6 * p.voltage_base();
    B.col(0) = (p.derivative(x, {vg.d + hv, vg.q}) - p.derivative(x, {vg.d - hv, vg.q})) / (2.0 * hv);
    B.col(1) = (p.derivative(x, {vg.d, vg.q + hv}) - p.derivative(x, {vg.d, vg.q - hv})) / (2.0 * hv);
    return {A, B};
}

/// Operating point: simulate to quiescence from a phasor guess, then Newton polish.
inline Eigen::VectorXd find_equilibrium(const Plant& p, const EquilibriumOptions& opts = {}) {
    if (p.kind() == PlantKind::RlReference) return p.analytic_equilibrium();

    Eigen::VectorXd x = p.initial_guess();
    if (opts.settle_time > 0.0) {
        try {
            x = simulate(p, no_perturbation(), opts.settle_time, 2500.0, x).final_state;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::SimulationDiverged) throw;
            x = p.initial_guess();
        }
    }

    const Eigen::VectorXd scale = p.state_scale();
    const Dq vg = p.nominal_source();
    double r = equilibrium_residual(p, x);
    for (std::size_t it = 0; it < opts.max_newton && r > 1e-13; ++it) {
        const Eigen::VectorXd f = p.derivative(x, vg);
        const Eigen::MatrixXd J = jacobians(p, x, vg).first * scale.asDiagonal();
        const Eigen::VectorXd step = scale.asDiagonal() * J.colPivHouseholderQr().solve(-f);
        // Backtrack until the residual decreases.
        double lambda = 1.0;
        Eigen::VectorXd trial = x + step;
        double r_trial = equilibrium_residual(p, trial);
        while (!(r_trial < r) && lambda > 1e-4) {
            lambda *= 0.5;
            trial = x + lambda * step;
            r_trial = equilibrium_residual(p, trial);
        }
        if (!(r_trial < r)) break;
        x = trial;
        r = r_trial;
    }
    if (!(r < opts.tolerance))
        throw Error(ErrorCode::EquilibriumNotFound, "per-unit residual " + std::to_string(r));
    return x;
}

/// Small-signal model around x: inputs (dv_gd, dv_gq), outputs (i_od, i_oq).
inline ContinuousStateSpace linearize(const Plant& p, const Eigen::VectorXd& x) {
    auto [A, B] = jacobians(p, x, p.nominal_source());
    ContinuousStateSpace sys;
    sys.A = std::move(A);
    sys.B = std::move(B);
    sys.C = Eigen::MatrixXd::Zero(2, x.size());
    if (p.kind() == PlantKind::RlReference) {
        sys.C(0, 0) = -1.0;
        sys.C(1, 1) = -1.0;
    } else {
        sys.C(0, 11) = 1.0;
        sys.C(1, 12) = 1.0;
    }
    sys.D = Eigen::MatrixXd::Zero(2, 2);
    return sys;
}

/// -(C (sI - A)^{-1} B + D): the admittance seen at the port in the inverter -> grid convention.
inline Eigen::Matrix2cd admittance_of(const ContinuousStateSpace& sys, Complex s) {
    Eigen::MatrixXcd M = -sys.A.cast<Complex>();
    M.diagonal().array() += s;
    const Eigen::MatrixXcd X = M.partialPivLu().solve(sys.B.cast<Complex>());
    return -(sys.C.cast<Complex>() * X + sys.D.cast<Complex>());
}

/// Active power bookkeeping (p = v_d i_d + v_q i_q, the convention used by the controller and the load sizing).
struct PowerBalance {
    double source = 0.0;    // delivered by the voltage source into the network
    double inverter = 0.0;  // delivered by the bridge
    double load = 0.0;
    double losses = 0.0;    // R_f, R_c and R_grid
    double mismatch() const { return source + inverter - load - losses; }
};

inline PowerBalance power_balance(const Plant& p, const Eigen::VectorXd& x) {
    if (p.kind() != PlantKind::GfmTestbed) throw Error(ErrorCode::InvalidArgument, "power balance needs the GFM testbed");
    const Dq vgd = p.nominal_source();
    const Complex vg(vgd.d, vgd.q);
    const Complex il(x(7), x(8)), io(x(11), x(12));
    const auto [i_load, i_grid] = p.network_currents(x);
    auto dot = [](Complex a, Complex b) { return a.real() * b.real() + a.imag() * b.imag(); };
    PowerBalance b;
    b.source = -dot(vg, i_grid);
    b.inverter = dot(p.bridge_voltage(x), il);
    b.load = p.load_resistance() * std::norm(i_load);
    b.losses = p.gfm().R_f * std::norm(il) + p.gfm().R_c * std::norm(io) + p.grid().R_grid * std::norm(i_grid);
    return b;
}

}  // namespace gfmid
