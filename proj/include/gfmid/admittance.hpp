#pragma once

// Per-method assembly of the dq admittance, Bode tables and cross-method
// agreement metrics.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "gfmid/dq_admittance.hpp"
#include "gfmid/error.hpp"
#include "gfmid/experiments.hpp"
#include "gfmid/plant.hpp"
#include "gfmid/ratfit.hpp"
#include "gfmid/signals.hpp"

namespace gfmid {

/// Step-fit admittance: each channel is a rational fit of the current response to
/// the step on its input axis, negated for the inverter -> grid convention.
inline DqAdmittance assemble_sem(const StepExperimentPair& pair, const FitOptions& opts) {
    DqAdmittance y;
    y.method = Method::Sem;
    y.valid_lo = 0.0;
    y.valid_hi = 0.5 / pair.dt;
    for (Channel c : kAllChannels) {
        const StepRecord& r = pair.record_for(c);
        try {
            FitResult fit = fit_time_domain(r.with_edge(pair.input(c)), r.with_edge(pair.response(c)), opts);
            AdmittanceChannel& ch = y[c];
            ch.rational = fit.tf.scaled(-1.0);
            ch.zero_response = fit.zero_response;
            ch.fit = std::move(fit);
        } catch (const Error& e) {
            throw e.with_context("sem " + std::string(channel_name(c)));
        }
    }
    return y;
}

/// Sweep admittance: raw points (already negated) plus a rational fit of each channel.
inline DqAdmittance assemble_sfra(const SweepDataset& ds, const FitOptions& opts) {
    DqAdmittance y;
    y.method = Method::Sfra;
    y.prefer_measured = true;
    const auto f = ds.plan.frequencies();
    y.valid_lo = f.front();
    y.valid_hi = f.back();
    for (Channel c : kAllChannels) {
        AdmittanceChannel& ch = y[c];
        ch.measured = ds[c];
        try {
            FitResult fit = fit_frequency_domain(ds[c], opts);
            ch.rational = fit.tf;
            ch.zero_response = fit.zero_response;
            ch.fit = std::move(fit);
        } catch (const Error& e) {
            throw e.with_context("sfra " + std::string(channel_name(c)));
        }
    }
    return y;
}

/// Exact small-signal admittance of a plant at an operating point.
inline DqAdmittance reference_admittance(const Plant& p, const Eigen::VectorXd& equilibrium) {
    const ContinuousStateSpace lin = linearize(p, equilibrium);
    DqAdmittance y;
    y.method = Method::Reference;
    y.valid_lo = 0.0;
    y.valid_hi = std::numeric_limits<double>::infinity();
    for (Channel c : kAllChannels) {
        const auto [out, in] = channel_axes(c);
        ContinuousStateSpace s;
        s.A = lin.A;
        s.B = lin.B.col(in);
        s.C = -lin.C.row(out);
        s.D = -lin.D.block(out, in, 1, 1);
        y[c].realization = std::move(s);
    }
    return y;
}

// ---------------------------------------------------------------------------
// Bode
// ---------------------------------------------------------------------------

struct BodeRow {
    double f_hz;
    Channel channel;
    Method method;
    double mag_db;
    double phase_deg;
};

using BodeTable = std::vector<BodeRow>;

inline double magnitude_db(Complex v) { return 20.0 * std::log10(std::abs(v)); }

/// Wrap to (-180, 180].
inline double wrap_degrees(double d) {
    double w = std::fmod(d, 360.0);
    if (w <= -180.0) w += 360.0;
    if (w > 180.0) w -= 360.0;
    return w;
}

/// Phase in degrees, first value in (-180, 180], later values continued without jumps over 180.
inline std::vector<double> unwrap_degrees(const std::vector<Complex>& v) {
    std::vector<double> out(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) {
        const double raw = wrap_degrees(std::arg(v[k]) * 180.0 / std::numbers::pi);
        if (k == 0) {
            out[k] = raw;
            continue;
        }
        out[k] = out[k - 1] + wrap_degrees(raw - out[k - 1]);
    }
    return out;
}

/// Rows per channel in grid order. Point-based admittances list only the grid
/// frequencies that match a measured point.
inline BodeTable bode(const DqAdmittance& y, const std::vector<double>& grid) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] > 0.0)) throw Error(ErrorCode::InvalidArgument, "Bode grid must be positive");
        if (i > 0 && !(grid[i] > grid[i - 1])) throw Error(ErrorCode::InvalidArgument, "Bode grid must increase");
    }
    BodeTable table;
    for (Channel c : kAllChannels) {
        std::vector<double> f;
        std::vector<Complex> v;
        for (double x : grid) {
            if (y.uses_points()) {
                if (auto m = y[c].measured_at(x)) {
                    f.push_back(x);
                    v.push_back(*m);
                }
                continue;
            }
            if (x >= y.valid_hi)
                throw Error(ErrorCode::BandOutOfRange, std::to_string(x) + " Hz is at or above the valid range");
            f.push_back(x);
            v.push_back(y.value_at(c, x));
        }
        const auto phase = unwrap_degrees(v);
        for (std::size_t k = 0; k < f.size(); ++k) table.push_back({f[k], c, y.method, magnitude_db(v[k]), phase[k]});
    }
    return table;
}

// ---------------------------------------------------------------------------
// Agreement
// ---------------------------------------------------------------------------

struct ChannelAgreement {
    Channel channel;
    double max_dmag_db = 0.0;
    double max_dphase_deg = 0.0;
    double mean_dmag_db = 0.0;
    double mean_dphase_deg = 0.0;
    double worst_mag_hz = 0.0;
    double worst_phase_hz = 0.0;
    std::size_t points = 0;
};

struct AgreementReport {
    double f_lo = 0.0;
    double f_hi = 0.0;
    std::array<ChannelAgreement, 4> channels;

    bool within(double mag_db, double phase_deg) const {
        return std::all_of(channels.begin(), channels.end(), [&](const ChannelAgreement& c) {
            return c.max_dmag_db <= mag_db && c.max_dphase_deg <= phase_deg;
        });
    }
};

namespace detail {

inline void check_band(const DqAdmittance& y, double lo, double hi) {
    const std::string name(method_name(y.method));
    if (y.uses_points()) {
        if (lo < y.valid_lo * (1.0 - 1e-9) || hi > y.valid_hi * (1.0 + 1e-9))
            throw Error(ErrorCode::BandOutOfRange, name + " points cover " + std::to_string(y.valid_lo) + " to " +
                                                       std::to_string(y.valid_hi) + " Hz");
    } else if (!(lo > y.valid_lo) || !(hi < y.valid_hi)) {
        throw Error(ErrorCode::BandOutOfRange,
                    name + " is valid on (" + std::to_string(y.valid_lo) + ", " + std::to_string(y.valid_hi) + ") Hz");
    }
}

inline std::vector<double> points_in_band(const DqAdmittance& y, double lo, double hi) {
    std::set<double> f;
    for (const auto& ch : y.channels)
        if (ch.measured)
            for (double x : ch.measured->frequency_hz)
                if (x >= lo * (1.0 - 1e-12) && x <= hi * (1.0 + 1e-12)) f.insert(x);
    return {f.begin(), f.end()};
}

}  // namespace detail

/// Deviations of a against b over [lo, hi]. Model-vs-model comparisons use a log
/// grid of grid_points; when a side is point-based its points in the band are
/// used (shared points when both are).
inline AgreementReport compare(const DqAdmittance& a, const DqAdmittance& b, double lo, double hi,
                               std::size_t grid_points = 50) {
    if (!(lo > 0.0) || !(hi > lo)) throw Error(ErrorCode::InvalidArgument, "band must satisfy 0 < lo < hi");
    if (grid_points < 10) throw Error(ErrorCode::InvalidArgument, "grid_points must be at least 10");
    detail::check_band(a, lo, hi);
    detail::check_band(b, lo, hi);

    std::vector<double> grid;
    if (a.uses_points() && b.uses_points()) {
        const auto fa = detail::points_in_band(a, lo, hi);
        for (double f : detail::points_in_band(b, lo, hi))
            if (std::any_of(fa.begin(), fa.end(), [&](double x) { return std::abs(x - f) <= 1e-9 * f; }))
                grid.push_back(f);
    } else if (a.uses_points()) {
        grid = detail::points_in_band(a, lo, hi);
    } else if (b.uses_points()) {
        grid = detail::points_in_band(b, lo, hi);
    } else {
        grid = log_grid(lo, hi, grid_points);
    }
    if (grid.empty()) throw Error(ErrorCode::BandOutOfRange, "no shared frequencies in the band");

    AgreementReport rep;
    rep.f_lo = lo;
    rep.f_hi = hi;
    for (Channel c : kAllChannels) {
        ChannelAgreement& r = rep.channels[static_cast<std::size_t>(c)];
        r.channel = c;
        double sum_mag = 0.0, sum_phase = 0.0;
        for (double f : grid) {
            const Complex va = a.value_at(c, f);
            const Complex vb = b.value_at(c, f);
            double dmag, dphase;
            if (va == Complex(0.0, 0.0) && vb == Complex(0.0, 0.0)) {
                dmag = dphase = 0.0;
            } else {
                dmag = std::abs(magnitude_db(va) - magnitude_db(vb));
                dphase = std::abs(wrap_degrees((std::arg(va) - std::arg(vb)) * 180.0 / std::numbers::pi));
            }
            if (dmag > r.max_dmag_db || r.points == 0) {
                r.max_dmag_db = dmag;
                r.worst_mag_hz = f;
            }
            if (dphase > r.max_dphase_deg || r.points == 0) {
                r.max_dphase_deg = dphase;
                r.worst_phase_hz = f;
            }
            sum_mag += dmag;
            sum_phase += dphase;
            ++r.points;
        }
        r.mean_dmag_db = sum_mag / static_cast<double>(r.points);
        r.mean_dphase_deg = sum_phase / static_cast<double>(r.points);
    }
    return rep;
}

}  // namespace gfmid
