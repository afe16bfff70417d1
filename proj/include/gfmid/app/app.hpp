#pragma once

// Orchestration behind the command-line verbs: run the identification pipeline,
// render every artifact in memory, then write them (and a hashed manifest) in
// one pass at the end.

#include <openssl/evp.h>

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "gfmid/gfmid.hpp"
#include "gfmid/app/config.hpp"
#include "gfmid/app/csv_io.hpp"

namespace gfmid::app {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

enum ExitCode { kOk = 0, kThresholdFailure = 1, kInputError = 2, kRuntimeError = 3 };

struct MethodSet {
    bool era = false;
    bool sem = false;
    bool sfra = false;

    bool any() const { return era || sem || sfra; }
};

/// "all" or a comma-separated subset of era, sem, sfra.
inline MethodSet parse_methods(const std::string& text) {
    MethodSet m;
    if (detail::trim(text) == "all") return {true, true, true};
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const std::string t = detail::trim(item);
        if (t == "era") m.era = true;
        else if (t == "sem") m.sem = true;
        else if (t == "sfra") m.sfra = true;
        else throw InputError("--methods: unknown method '" + t + "' (expected era, sem, sfra or all)");
    }
    if (!m.any()) throw InputError("--methods: no method selected");
    return m;
}

/// "A:B" with two positive numbers.
inline std::pair<double, double> parse_pair(const std::string& option, const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw InputError(option + ": expected A:B, got '" + text + "'");
    const double a = detail::parse_double(option, text.substr(0, colon));
    const double b = detail::parse_double(option, text.substr(colon + 1));
    if (!(a > 0.0) || !(b > 0.0)) throw InputError(option + ": both values must be positive");
    return {a, b};
}

inline std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

inline Plant make_plant(const RunConfig& c) {
    return c.model == PlantModel::Gfm ? build_gfm_plant(c.gfm, c.grid) : build_rl_reference_plant(c.rl);
}

struct RunResult {
    RunConfig config;
    MethodSet methods;
    Plant plant;
    Eigen::VectorXd equilibrium;
    SweepPlan plan;  // always built: its frequencies are the Bode grid of every method
    std::vector<StepExperimentPair> pairs;
    std::optional<std::size_t> era_pair, sem_pair;
    std::optional<SweepDataset> sweep;
    std::optional<DqAdmittance> era, sem, sfra;

    std::size_t step_experiments() const {
        std::size_t n = 0;
        for (const auto& p : pairs) n += p.simulations;
        return n;
    }
    std::size_t sweep_simulations() const { return sweep ? sweep->simulations : 0; }
};

using Log = std::function<void(const std::string&)>;

inline RunResult run_pipeline(const RunConfig& cfg, const MethodSet& methods, const Log& log = {}) {
    auto say = [&](const std::string& s) {
        if (log) log(s);
    };
    RunResult r{cfg, methods, make_plant(cfg), {}, {}, {}, {}, {}, {}, {}, {}, {}};
    say("finding the operating point");
    r.equilibrium = find_equilibrium(r.plant);
    r.plan = make_sweep_plan(cfg.sweep_frequencies(), cfg.sine(), cfg.fs, settling_time_hint(r.plant, r.equilibrium));

    auto pair_for = [&](double g) {
        for (std::size_t i = 0; i < r.pairs.size(); ++i)
            if (r.pairs[i].g == g) return i;
        say("running step experiments (g = " + format_g(g) + ")");
        r.pairs.push_back(run_step_pair(r.plant, r.equilibrium, cfg.step(g), cfg.fs));
        return r.pairs.size() - 1;
    };
    if (methods.era) r.era_pair = pair_for(cfg.era_g);
    if (methods.sem) r.sem_pair = pair_for(cfg.sem_g);

    if (methods.era) {
        say("realizing (ERA)");
        r.era = era_admittance(r.pairs[*r.era_pair], EraOptions{cfg.era_order, cfg.sfra_f_min});
    }
    if (methods.sem) {
        say("fitting step records (SEM)");
        r.sem = assemble_sem(r.pairs[*r.sem_pair], cfg.sem_fit());
    }
    if (methods.sfra) {
        say("sweeping " + std::to_string(r.plan.points.size()) + " frequencies on " + std::to_string(worker_count()) +
            " worker(s) (SFRA)");
        r.sweep = run_sweep(r.plant, r.equilibrium, r.plan);
        r.sfra = assemble_sfra(*r.sweep, cfg.sfra_fit());
    }
    return r;
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

/// Relative path -> content, written in path order.
using ArtifactContents = std::map<std::string, std::string>;

struct ArtifactSet {
    fs::path directory;
    std::vector<std::string> files;  // relative paths, manifest last
};

namespace detail {

inline Json complex_list(const std::vector<Complex>& v) {
    Json a = Json::array();
    for (const Complex& z : v) a.push_back({z.real(), z.imag()});
    return a;
}

inline Json rational_json(const RationalTransferFunction& tf) {
    Json j;
    j["num"] = tf.num_in_s();
    j["den"] = tf.den_in_s();
    try {
        j["poles"] = complex_list(tf.poles());
    } catch (const Error&) {
        j["poles"] = nullptr;
    }
    return j;
}

inline Json fit_json(const FitResult& f) {
    Json j;
    j["nrmse_percent"] = f.nrmse_percent;
    j["iterations"] = f.iterations_used;
    j["converged"] = f.converged;
    j["zero_response"] = f.zero_response;
    j["unstable_poles"] = f.unstable_poles;
    j["points_used"] = f.points_used;
    j["points_dropped"] = f.points_dropped;
    j["tf"] = rational_json(f.tf);
    return j;
}

inline Json channel_json(const AdmittanceChannel& ch) {
    Json j = Json::object();
    if (ch.era) {
        const EraDiagnostics& d = *ch.era;
        const std::size_t keep = std::min<std::size_t>(d.singular_values.size(), 30);
        j["chosen_order"] = d.chosen_order;
        j["rank_budget"] = d.rank_budget;
        j["hankel_shape"] = {d.hankel_rows, d.hankel_cols};
        j["singular_values"] = std::vector<double>(d.singular_values.begin(), d.singular_values.begin() + keep);
    }
    if (ch.rational) {
        j["admittance"] = rational_json(*ch.rational);
        j["admittance"]["approximate"] = ch.rational_approximate;
    }
    if (ch.fit) j["fit"] = fit_json(*ch.fit);
    j["zero_response"] = ch.zero_response;
    return j;
}

inline Json admittance_json(const DqAdmittance& y) {
    Json j;
    j["sign_convention"] = y.sign_convention;
    j["valid_hz"] = {y.valid_lo, y.valid_hi};
    for (Channel c : kAllChannels) j["channels"][std::string(channel_name(c))] = channel_json(y[c]);
    return j;
}

inline std::string gnuplot_header(const std::string& title) {
    return "# gnuplot script; run from this directory: gnuplot -p " + title + ".gp\n"
           "set datafile separator whitespace\nset grid\nset key outside right\n";
}

inline std::string dat_row(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ' ';
        out += format_sci(v[i]);
    }
    return out + "\n";
}

/// Step response figure: baseline-removed source voltage and port current.
inline void step_plot(ArtifactContents& out, const std::string& name, const StepRecord& r, const std::string& axis) {
    std::string dat = "# t dv_gd dv_gq di_od di_oq\n";
    for (std::size_t k = 0; k < r.di_o.d.size(); ++k)
        dat += dat_row({r.di_o.d.time(k), r.dv_g.d[k], r.dv_g.q[k], r.di_o.d[k], r.di_o.q[k]});
    std::string gp = gnuplot_header(name);
    gp += "set multiplot layout 2,1 title 'Step on v_g" + axis + "'\n";
    gp += "set ylabel 'V'\nplot '" + name + ".dat' u 1:2 w l t 'dv_gd', '' u 1:3 w l t 'dv_gq'\n";
    gp += "set xlabel 't [s]'\nset ylabel 'A'\nplot '" + name + ".dat' u 1:4 w l t 'di_od', '' u 1:5 w l t 'di_oq'\n";
    gp += "unset multiplot\n";
    out["plots/" + name + ".dat"] = dat;
    out["plots/" + name + ".gp"] = gp;
}

/// Step-fit figure: recorded current against the simulated fitted model, per channel.
inline void sem_plot(ArtifactContents& out, const StepExperimentPair& pair, const DqAdmittance& sem) {
    const std::string name = "fig5_sem_time_fit";
    std::vector<TimeSeries> measured, model;
    for (Channel c : kAllChannels) {
        const StepRecord& r = pair.record_for(c);
        measured.push_back(r.with_edge(pair.response(c)));
        model.push_back(simulate_response(sem[c].fit->tf, r.with_edge(pair.input(c))));
    }
    std::string dat = "# t then measured/model per channel Ydd Ydq Yqd Yqq\n";
    for (std::size_t k = 0; k < measured[0].size(); ++k) {
        std::vector<double> row{measured[0].time(k)};
        for (std::size_t c = 0; c < 4; ++c) {
            row.push_back(measured[c][k]);
            row.push_back(model[c][k]);
        }
        dat += dat_row(row);
    }
    std::string gp = gnuplot_header(name) + "set multiplot layout 2,2\nset xlabel 't [s]'\nset ylabel 'A'\n";
    for (std::size_t c = 0; c < 4; ++c) {
        const std::string ch(channel_name(kAllChannels[c]));
        char nrmse[32];
        std::snprintf(nrmse, sizeof nrmse, "%.2f", sem[kAllChannels[c]].fit->nrmse_percent);
        gp += "set title '" + ch + "'\nplot '" + name + ".dat' u 1:" + std::to_string(2 + 2 * c) +
              " w l t 'measured', '' u 1:" + std::to_string(3 + 2 * c) + " w l dt 2 t 'model (NRMSE " + nrmse +
              "%)'\n";
    }
    gp += "unset multiplot\n";
    out["plots/" + name + ".dat"] = dat;
    out["plots/" + name + ".gp"] = gp;
}

/// Sweep figure: raw points against the rational fit.
inline void sfra_plot(ArtifactContents& out, const DqAdmittance& sfra) {
    const std::string name = "fig6_sfra_fit";
    const auto& f = sfra[Channel::Ydd].measured->frequency_hz;
    std::vector<std::vector<double>> cols;
    for (Channel c : kAllChannels) {
        std::vector<Complex> meas = sfra[c].measured->value, fit;
        for (double x : f) fit.push_back(sfra[c].rational->at_frequency(x));
        std::vector<double> mm, mf;
        for (auto& v : meas) mm.push_back(magnitude_db(v));
        for (auto& v : fit) mf.push_back(magnitude_db(v));
        cols.push_back(mm);
        cols.push_back(unwrap_degrees(meas));
        cols.push_back(mf);
        cols.push_back(unwrap_degrees(fit));
    }
    std::string dat = "# f_hz then per channel (Ydd Ydq Yqd Yqq): mag_meas phase_meas mag_fit phase_fit\n";
    for (std::size_t k = 0; k < f.size(); ++k) {
        std::vector<double> row{f[k]};
        for (const auto& col : cols) row.push_back(col[k]);
        dat += dat_row(row);
    }
    std::string gp = gnuplot_header(name) + "set logscale x\nset multiplot layout 2,4\n";
    for (std::size_t c = 0; c < 4; ++c) {
        const std::string ch(channel_name(kAllChannels[c]));
        const std::size_t base = 2 + 4 * c;
        gp += "set title '" + ch + " magnitude'\nset ylabel 'dB'\nplot '" + name + ".dat' u 1:" +
              std::to_string(base) + " w p pt 7 ps 0.5 t 'measured', '' u 1:" + std::to_string(base + 2) +
              " w l t 'fit'\n";
    }
    for (std::size_t c = 0; c < 4; ++c) {
        const std::string ch(channel_name(kAllChannels[c]));
        const std::size_t base = 3 + 4 * c;
        gp += "set title '" + ch + " phase'\nset ylabel 'deg'\nset xlabel 'f [Hz]'\nplot '" + name + ".dat' u 1:" +
              std::to_string(base) + " w p pt 7 ps 0.5 t 'measured', '' u 1:" + std::to_string(base + 2) +
              " w l t 'fit'\n";
    }
    gp += "unset multiplot\n";
    out["plots/" + name + ".dat"] = dat;
    out["plots/" + name + ".gp"] = gp;
}

/// Bode comparison figure across every method that ran. Rows are the sweep grid;
/// missing values are written as NaN.
inline void bode_plot(ArtifactContents& out, const std::vector<double>& grid,
                      const std::vector<std::pair<std::string, BodeTable>>& tables) {
    const std::string name = "fig7_bode_comparison";
    std::string header = "# f_hz";
    std::vector<std::vector<double>> cols;
    for (const auto& [method, table] : tables) {
        for (Channel c : kAllChannels) {
            std::vector<double> mag(grid.size(), std::nan("")), phase(grid.size(), std::nan(""));
            for (const BodeRow& row : table) {
                if (row.channel != c) continue;
                const auto it = std::find_if(grid.begin(), grid.end(),
                                             [&](double x) { return std::abs(x - row.f_hz) <= 1e-9 * x; });
                if (it == grid.end()) continue;
                const auto k = static_cast<std::size_t>(it - grid.begin());
                mag[k] = row.mag_db;
                phase[k] = row.phase_deg;
            }
            cols.push_back(mag);
            cols.push_back(phase);
            header += " " + method + "_" + std::string(channel_name(c)) + "_mag " + method + "_" +
                      std::string(channel_name(c)) + "_phase";
        }
    }
    std::string dat = header + "\n";
    for (std::size_t k = 0; k < grid.size(); ++k) {
        std::vector<double> row{grid[k]};
        for (const auto& col : cols) row.push_back(col[k]);
        dat += dat_row(row);
    }
    std::string gp = gnuplot_header(name) + "set logscale x\nset multiplot layout 2,4\n";
    for (int part = 0; part < 2; ++part) {
        for (std::size_t c = 0; c < 4; ++c) {
            const std::string ch(channel_name(kAllChannels[c]));
            gp += "set title '" + ch + (part == 0 ? " magnitude'\nset ylabel 'dB'\n" : " phase'\nset ylabel 'deg'\n");
            if (part == 1) gp += "set xlabel 'f [Hz]'\n";
            gp += "plot ";
            for (std::size_t m = 0; m < tables.size(); ++m) {
                const std::size_t col = 2 + (m * 4 + c) * 2 + static_cast<std::size_t>(part);
                if (m) gp += ", ";
                gp += "'" + name + ".dat' u 1:" + std::to_string(col) + " w lp ps 0.4 t '" + tables[m].first + "'";
            }
            gp += "\n";
        }
    }
    gp += "unset multiplot\n";
    out["plots/" + name + ".dat"] = dat;
    out["plots/" + name + ".gp"] = gp;
}

}  // namespace detail

/// Protocol counters recorded in the manifest.
inline Json protocol_json(const RunResult& r) {
    const RunConfig& c = r.config;
    Json p;
    p["model"] = c.model == PlantModel::Gfm ? "gfm" : "rl_reference";
    p["fs_hz"] = c.fs;
    p["methods"] = Json::array();
    if (r.methods.era) p["methods"].push_back("era");
    if (r.methods.sem) p["methods"].push_back("sem");
    if (r.methods.sfra) p["methods"].push_back("sfra");
    p["step_experiments"] = r.step_experiments();
    p["step_g"] = Json::array();
    for (const auto& pair : r.pairs) p["step_g"].push_back(pair.g);
    p["step_record_length_s"] = c.record_length;
    p["sweep_simulations"] = r.sweep_simulations();
    if (r.sweep) {
        const SweepPlan& plan = r.sweep->plan;
        unsigned lo = ~0u, hi = 0;
        bool exact_below_100 = true;
        for (const SweepPoint& pt : plan.points) {
            lo = std::min(lo, pt.measured_cycles);
            hi = std::max(hi, pt.measured_cycles);
            if (pt.frequency_hz <= 100.0 && pt.measured_cycles != plan.injection.cycles) exact_below_100 = false;
        }
        p["sweep_points"] = plan.points.size();
        p["sweep_amplitude_pp_v"] = plan.injection.amplitude_pp;
        p["sweep_cycles_configured"] = plan.injection.cycles;
        p["sweep_cycles_measured_min"] = lo;
        p["sweep_cycles_measured_max"] = hi;
        p["sweep_cycles_exact_up_to_100hz"] = exact_below_100;
        p["sweep_settle_time_s"] = plan.settle_time;
        p["sweep_f_first_hz"] = plan.points.front().frequency_hz;
        p["sweep_f_last_hz"] = plan.points.back().frequency_hz;
    }
    if (r.era) p["era_order"] = c.era_order ? Json(*c.era_order) : Json("auto");
    if (r.sem) p["sem_n_poles"] = c.sem_n_poles;
    if (r.sfra) p["sfra_n_poles"] = c.sfra_n_poles;
    return p;
}

/// Every data artifact of a run, keyed by relative path. The manifest is added on write.
inline ArtifactContents render_artifacts(const RunResult& r) {
    ArtifactContents out;
    const RunConfig& c = r.config;
    out["effective_config.ini"] = render_config(c);

    if (c.emit_timeseries) {
        const bool shared = r.pairs.size() == 1;
        for (std::size_t i = 0; i < r.pairs.size(); ++i) {
            std::string prefix = "timeseries/";
            if (!shared) prefix += (r.era_pair && *r.era_pair == i) ? "era_" : "sem_";
            out[prefix + "step_d.csv"] = timeseries_csv(r.pairs[i].record_d.raw);
            out[prefix + "step_q.csv"] = timeseries_csv(r.pairs[i].record_q.raw);
        }
    }

    const std::vector<double> grid = r.plan.frequencies();
    std::vector<std::pair<std::string, BodeTable>> tables;
    auto add_bode = [&](const std::optional<DqAdmittance>& y, const std::string& name) {
        if (!y) return;
        try {
            BodeTable t = bode(*y, grid);
            out["bode_" + name + ".csv"] = bode_csv(t);
            tables.emplace_back(name, std::move(t));
        } catch (const Error& e) {
            throw e.with_context(name + " bode");
        }
    };
    add_bode(r.era, "era");
    add_bode(r.sem, "sem");
    add_bode(r.sfra, "sfra");

    Json diag;
    diag["plant"]["model"] = c.model == PlantModel::Gfm ? "gfm" : "rl_reference";
    diag["plant"]["equilibrium_residual"] = equilibrium_residual(r.plant, r.equilibrium);
    diag["plant"]["equilibrium_state"] = std::vector<double>(r.equilibrium.data(), r.equilibrium.data() + r.equilibrium.size());
    const Dq i0 = r.plant.output(r.equilibrium);
    diag["plant"]["operating_current"] = {i0.d, i0.q};
    if (r.plant.kind() == PlantKind::GfmTestbed) {
        const PowerBalance b = power_balance(r.plant, r.equilibrium);
        diag["plant"]["power_balance_w"] = {{"source", b.source},
                                            {"inverter", b.inverter},
                                            {"load", b.load},
                                            {"losses", b.losses},
                                            {"mismatch", b.mismatch()}};
    }
    for (const auto& pair : r.pairs) {
        Json s;
        s["g"] = pair.g;
        s["g_abs_v"] = {pair.record_d.g_abs, pair.record_q.g_abs};
        s["steady_state_reached"] = {pair.record_d.raw.steady_state_reached, pair.record_q.raw.steady_state_reached};
        s["internal_substeps"] = pair.record_d.raw.substeps;
        diag["step_experiments"].push_back(s);
    }
    if (r.era) diag["era"] = detail::admittance_json(*r.era);
    if (r.sem) diag["sem"] = detail::admittance_json(*r.sem);
    if (r.sfra) {
        diag["sfra"] = detail::admittance_json(*r.sfra);
        Json pts = Json::array();
        for (const SweepPoint& pt : r.sweep->plan.points)
            pts.push_back({{"requested_hz", pt.requested_hz},
                           {"frequency_hz", pt.frequency_hz},
                           {"measured_cycles", pt.measured_cycles},
                           {"window_samples", pt.window_samples}});
        diag["sfra"]["sweep_points"] = pts;
    }
    out["diagnostics.json"] = diag.dump(2) + "\n";

    if (!r.pairs.empty()) {
        const StepExperimentPair& pair = r.pairs[r.sem_pair ? *r.sem_pair : *r.era_pair];
        detail::step_plot(out, "fig3_step_d", pair.record_d, "d");
        detail::step_plot(out, "fig4_step_q", pair.record_q, "q");
    }
    if (r.sem) detail::sem_plot(out, r.pairs[*r.sem_pair], *r.sem);
    if (r.sfra) detail::sfra_plot(out, *r.sfra);
    if (!tables.empty()) detail::bode_plot(out, grid, tables);
    return out;
}

/// Writes the artifacts plus manifest.json (hash per file, protocol, timestamp).
/// On failure everything this call created is removed again.
inline ArtifactSet write_artifacts(const fs::path& dir, const ArtifactContents& files, const std::string& command,
                                   const Json& protocol) {
    std::vector<fs::path> created_files;
    std::vector<fs::path> created_dirs;
    auto make_dirs = [&](const fs::path& d) {
        std::vector<fs::path> missing;
        for (fs::path p = d; !p.empty() && !fs::exists(p); p = p.parent_path()) {
            missing.push_back(p);
            if (p == p.parent_path()) break;
        }
        for (auto it = missing.rbegin(); it != missing.rend(); ++it) {
            fs::create_directory(*it);
            created_dirs.push_back(*it);
        }
    };
    auto write = [&](const std::string& rel, const std::string& content) {
        const fs::path p = dir / rel;
        make_dirs(p.parent_path());
        std::ofstream o(p, std::ios::binary | std::ios::trunc);
        if (!o) throw std::runtime_error("cannot write " + p.string());
        created_files.push_back(p);
        o << content;
        if (!o.flush()) throw std::runtime_error("write failed for " + p.string());
    };

    ArtifactSet set{dir, {}};
    try {
        Json manifest;
        manifest["command"] = command;
        manifest["created_utc"] = utc_timestamp();
        manifest["protocol"] = protocol;
        manifest["files"] = Json::array();
        for (const auto& [rel, content] : files) {
            write(rel, content);
            set.files.push_back(rel);
            manifest["files"].push_back({{"path", rel}, {"bytes", content.size()}, {"sha256", sha256_hex(content)}});
        }
        write("manifest.json", manifest.dump(2) + "\n");
        set.files.push_back("manifest.json");
    } catch (...) {
        std::error_code ec;
        for (const auto& p : created_files) fs::remove(p, ec);
        for (auto it = created_dirs.rbegin(); it != created_dirs.rend(); ++it) fs::remove(*it, ec);
        throw;
    }
    return set;
}

// ---------------------------------------------------------------------------
// Verbs
// ---------------------------------------------------------------------------

/// Maps exceptions to the exit-code contract and prints the message.
template <class Body>
int guarded(Body&& body, std::ostream& err = std::cerr) {
    try {
        return body();
    } catch (const InputError& e) {
        err << "error: " << e.what() << "\n";
        return kInputError;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kRuntimeError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
}

struct RunOptions {
    std::optional<std::string> config_path;
    std::string methods = "all";
    std::optional<std::string> out_dir;
};

inline int cmd_run(const RunOptions& opts, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return guarded(
        [&] {
            RunConfig cfg = opts.config_path ? load_config(*opts.config_path) : RunConfig{};
            if (opts.out_dir) cfg.output_directory = *opts.out_dir;
            const MethodSet methods = parse_methods(opts.methods);
            const RunResult r = run_pipeline(cfg, methods, [&](const std::string& s) { err << "-- " << s << "\n"; });
            const ArtifactContents files = render_artifacts(r);
            const ArtifactSet set = write_artifacts(cfg.output_directory, files, "run", protocol_json(r));

            out << "operating point residual " << format_g(equilibrium_residual(r.plant, r.equilibrium)) << "\n";
            auto fit_line = [&](const std::optional<DqAdmittance>& y, const char* name) {
                if (!y) return;
                out << name << " fit NRMSE %:";
                for (Channel c : kAllChannels) {
                    char buf[48];
                    std::snprintf(buf, sizeof buf, " %s=%.2f", std::string(channel_name(c)).c_str(),
                                  (*y)[c].fit->nrmse_percent);
                    out << buf;
                }
                out << "\n";
            };
            fit_line(r.sem, "sem");
            fit_line(r.sfra, "sfra");
            out << "wrote " << set.files.size() << " files to " << set.directory.string() << "\n";
            return int(kOk);
        },
        err);
}

struct CompareOptions {
    std::string a;
    std::string b;
    std::string band = "1:100";
    std::string out = "report.csv";
    std::string thresholds = "1:5";
};

inline std::string agreement_summary(const AgreementReport& rep, const std::string& a, const std::string& b,
                                     double mag_tol, double phase_tol) {
    std::ostringstream s;
    s << "agreement of " << a << " against " << b << " over " << format_g(rep.f_lo) << " to " << format_g(rep.f_hi)
      << " Hz (limits " << format_g(mag_tol) << " dB, " << format_g(phase_tol) << " deg)\n";
    for (const ChannelAgreement& c : rep.channels) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "  %s  max %.4f dB at %.4g Hz, max %.4f deg at %.4g Hz, mean %.4f dB %.4f deg, %zu points  %s\n",
                      std::string(channel_name(c.channel)).c_str(), c.max_dmag_db, c.worst_mag_hz, c.max_dphase_deg,
                      c.worst_phase_hz, c.mean_dmag_db, c.mean_dphase_deg, c.points,
                      c.max_dmag_db <= mag_tol && c.max_dphase_deg <= phase_tol ? "ok" : "EXCEEDED");
        s << buf;
    }
    s << (rep.within(mag_tol, phase_tol) ? "within limits\n" : "limits exceeded\n");
    return s.str();
}

inline int cmd_compare(const CompareOptions& opts, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return guarded(
        [&] {
            const auto [lo, hi] = parse_pair("--band", opts.band);
            if (!(hi > lo)) throw InputError("--band: HI must exceed LO");
            const auto [mag_tol, phase_tol] = parse_pair("--thresholds", opts.thresholds);
            const DqAdmittance a = load_bode_csv(opts.a);
            const DqAdmittance b = load_bode_csv(opts.b);
            AgreementReport rep;
            try {
                rep = compare(a, b, lo, hi);
            } catch (const Error& e) {
                if (e.code() == ErrorCode::BandOutOfRange) throw InputError(e.what());
                throw;
            }
            const std::string summary = agreement_summary(rep, opts.a, opts.b, mag_tol, phase_tol);
            const fs::path report(opts.out);
            fs::path summary_path = report;
            summary_path.replace_extension(".txt");
            if (summary_path == report) summary_path += ".summary";
            ArtifactContents files{{report.filename().string(), report_csv(rep)},
                                   {summary_path.filename().string(), summary}};
            const fs::path dir = report.has_parent_path() ? report.parent_path() : fs::path(".");
            // Reports are single files; no manifest.
            std::vector<fs::path> written;
            try {
                fs::create_directories(dir);
                for (const auto& [name, content] : files) {
                    std::ofstream o(dir / name, std::ios::binary | std::ios::trunc);
                    if (!o) throw std::runtime_error("cannot write " + (dir / name).string());
                    written.push_back(dir / name);
                    o << content;
                }
            } catch (...) {
                std::error_code ec;
                for (const auto& p : written) fs::remove(p, ec);
                throw;
            }
            out << summary;
            return int(rep.within(mag_tol, phase_tol) ? kOk : kThresholdFailure);
        },
        err);
}

// ---------------------------------------------------------------------------
// Oracle
// ---------------------------------------------------------------------------

struct OracleOptions {
    std::string out_dir = "oracle_out";
    std::optional<std::string> tolerance;  // "PCT:DEG" overriding every method's limits
    std::optional<std::string> flip;       // "method:channel" negates that channel (negative control)
};

struct OracleRow {
    Method method;
    Channel channel;
    double f_hz;
    double mag_err_pct;
    double phase_err_deg;
    double mag_tol_pct;
    double phase_tol_deg;
    bool pass() const { return mag_err_pct <= mag_tol_pct && phase_err_deg <= phase_tol_deg; }
};

struct OracleOutcome {
    std::vector<OracleRow> rows;
    RunResult run;

    bool pass() const {
        return std::all_of(rows.begin(), rows.end(), [](const OracleRow& r) { return r.pass(); });
    }
};

/// RL reference plant through all three methods, scored against the closed form on a
/// 30-point grid over 1-100 Hz.
inline OracleOutcome run_oracle(const OracleOptions& opts, const Log& log = {}) {
    RunConfig cfg;
    cfg.model = PlantModel::RlReference;
    cfg.era_order = 3;
    cfg.sem_n_poles = 2;
    cfg.sfra_n_poles = 2;
    cfg.sfra_f_min = 1.0;
    cfg.sfra_f_max = 100.0;
    cfg.sfra_points = 30;
    cfg.emit_timeseries = false;
    validate(cfg);

    std::optional<std::pair<double, double>> override_tol;
    if (opts.tolerance) override_tol = parse_pair("--tolerance", *opts.tolerance);
    std::optional<std::pair<Method, Channel>> flip;
    if (opts.flip) {
        const auto colon = opts.flip->find(':');
        const auto m = colon == std::string::npos ? std::nullopt : parse_method(opts.flip->substr(0, colon));
        const auto c = colon == std::string::npos ? std::nullopt : parse_channel(opts.flip->substr(colon + 1));
        if (!m || !c || *m == Method::Reference) throw InputError("--flip-sign: expected METHOD:CHANNEL, e.g. era:Ydq");
        flip = std::make_pair(*m, *c);
    }

    OracleOutcome o{{}, run_pipeline(cfg, {true, true, true}, log)};
    RunResult& r = o.run;
    if (flip) {
        DqAdmittance& y = flip->first == Method::Era ? *r.era : flip->first == Method::Sem ? *r.sem : *r.sfra;
        AdmittanceChannel& ch = y[flip->second];
        if (ch.realization) {
            ch.realization->C *= -1.0;
            ch.realization->D *= -1.0;
        }
        if (ch.rational) ch.rational = ch.rational->scaled(-1.0);
        if (ch.measured)
            for (auto& v : ch.measured->value) v = -v;
    }

    const std::vector<double> grid = log_grid(1.0, 100.0, 30);
    const std::vector<double> sweep_grid = r.plan.frequencies();
    auto score = [&](const DqAdmittance& y, const std::vector<double>& f, double mag_tol, double phase_tol) {
        if (override_tol) std::tie(mag_tol, phase_tol) = *override_tol;
        for (Channel c : kAllChannels) {
            const auto [out, in] = channel_axes(c);
            for (double x : f) {
                const Complex truth = r.plant.analytic_admittance(Complex(0.0, 2.0 * std::numbers::pi * x))(out, in);
                const Complex v = y.value_at(c, x);
                const double mag = 100.0 * std::abs(std::abs(v) / std::abs(truth) - 1.0);
                const double phase = std::abs(wrap_degrees(std::arg(v / truth) * 180.0 / std::numbers::pi));
                o.rows.push_back({y.method, c, x, mag, phase, mag_tol, phase_tol});
            }
        }
    };
    score(*r.era, grid, 2.0, 2.0);
    score(*r.sem, grid, 2.0, 2.0);
    score(*r.sfra, sweep_grid, 0.5, 0.5);
    return o;
}

inline std::string oracle_csv(const OracleOutcome& o) {
    std::string out = "method,channel,f_hz,mag_err_pct,phase_err_deg,mag_tol_pct,phase_tol_deg,status\n";
    for (const OracleRow& r : o.rows)
        out += std::string(method_name(r.method)) + "," + std::string(channel_name(r.channel)) + "," + format_g(r.f_hz) +
               "," + format_g(r.mag_err_pct) + "," + format_g(r.phase_err_deg) + "," + format_g(r.mag_tol_pct) + "," +
               format_g(r.phase_tol_deg) + "," + (r.pass() ? "pass" : "fail") + "\n";
    return out;
}

inline int cmd_oracle(const OracleOptions& opts, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return guarded(
        [&] {
            const OracleOutcome o = run_oracle(opts, [&](const std::string& s) { err << "-- " << s << "\n"; });
            ArtifactContents files = render_artifacts(o.run);
            files["oracle.csv"] = oracle_csv(o);
            Json protocol = protocol_json(o.run);
            protocol["oracle_pass"] = o.pass();
            write_artifacts(opts.out_dir, files, "oracle", protocol);

            out << "method channel  max_mag_err_%  max_phase_err_deg  status\n";
            for (Method m : {Method::Era, Method::Sem, Method::Sfra}) {
                for (Channel c : kAllChannels) {
                    double mag = 0.0, phase = 0.0;
                    bool ok = true;
                    for (const OracleRow& r : o.rows)
                        if (r.method == m && r.channel == c) {
                            mag = std::max(mag, r.mag_err_pct);
                            phase = std::max(phase, r.phase_err_deg);
                            ok = ok && r.pass();
                        }
                    char buf[128];
                    std::snprintf(buf, sizeof buf, "%-6s %-7s %13.3e %18.3e  %s\n", std::string(method_name(m)).c_str(),
                                  std::string(channel_name(c)).c_str(), mag, phase, ok ? "PASS" : "FAIL");
                    out << buf;
                }
            }
            std::size_t failures = 0;
            for (const OracleRow& r : o.rows) {
                if (r.pass()) continue;
                if (failures < 20)
                    err << "oracle failure: " << method_name(r.method) << " " << channel_name(r.channel) << " at "
                        << format_g(r.f_hz) << " Hz: magnitude error " << format_g(r.mag_err_pct) << "%, phase error "
                        << format_g(r.phase_err_deg) << " deg\n";
                ++failures;
            }
            if (failures > 20) err << "... " << failures - 20 << " more failing points\n";
            out << (failures == 0 ? "oracle PASS\n" : "oracle FAIL\n");
            return int(failures == 0 ? kOk : kThresholdFailure);
        },
        err);
}

}  // namespace gfmid::app
