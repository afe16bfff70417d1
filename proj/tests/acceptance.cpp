// Acceptance run: one PASS/FAIL line per criterion; exits non-zero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include "gfmid/app/app.hpp"
#include "support.hpp"

using namespace gfmid;
using namespace gfmid::app;
namespace fs = std::filesystem;

namespace {

// Lines are collected and printed in criterion order at the end.
std::map<int, std::pair<bool, std::string>> results;

void report(int id, bool ok, const std::string& detail) {
    std::fprintf(stderr, "criterion %d done\n", id);
    results[id] = {ok, detail};
}

template <class F>
void guard(int id, F&& f) {
    try {
        f();
    } catch (const std::exception& e) {
        report(id, false, std::string("exception: ") + e.what());
    }
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::pair<double, double> worst(const AgreementReport& r) {
    double m = 0.0, p = 0.0;
    for (const auto& c : r.channels) {
        m = std::max(m, c.max_dmag_db);
        p = std::max(p, c.max_dphase_deg);
    }
    return {m, p};
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// --- 1 -------------------------------------------------------------------

void rl_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    const OracleOutcome o = run_oracle(OracleOptions{});
    const double elapsed = seconds_since(t0);
    double mag = 0.0, phase = 0.0;
    std::size_t points = 0;
    for (const OracleRow& r : o.rows) {
        mag = std::max(mag, r.mag_err_pct);
        phase = std::max(phase, r.phase_err_deg);
        ++points;
    }
    const RlParameters& rl = o.run.plant.rl();
    const bool params = rl.R == 0.23 && rl.L == 318e-6 && rl.omega0 == 377.0;
    // Every row is also held to 2 % / 2 deg here, whatever the per-method limit.
    bool within = true;
    for (const OracleRow& r : o.rows) within = within && r.mag_err_pct <= 2.0 && r.phase_err_deg <= 2.0;
    report(1, o.pass() && within && params && points == 3 * 4 * 30 && elapsed < 60.0,
           fmt("RL oracle, 3 methods x 4 channels x 30 points: worst %.3g %% / %.3g deg, %.1f s", mag, phase,
               elapsed));
}

// --- 2, 3, 4, 7, 8 ----------------------------------------------------------

void gfm_checks(const fs::path& scratch) {
    std::fprintf(stderr, "default GFM run 1 of 2...\n");
    RunConfig cfg;
    cfg.output_directory = (scratch / "run").string();
    const MethodSet all{true, true, true};
    const auto t0 = std::chrono::steady_clock::now();
    const RunResult r = run_pipeline(cfg, all);
    const double elapsed = seconds_since(t0);
    const ArtifactContents files = render_artifacts(r);
    const fs::path dir_a = scratch / "run_a";
    write_artifacts(dir_a, files, "run", protocol_json(r));

    // 2
    guard(2, [&] {
        const auto [m, p] = worst(compare(*r.era, *r.sem, 1.0, 100.0));
        const bool settings = cfg.era_order == std::optional<std::size_t>(6) && cfg.sem_n_poles == 4;
        report(2, settings && m <= 1.0 && p <= 5.0,
               fmt("GFM ERA(6) vs SEM(4 poles), 1-100 Hz: %.3f dB / %.3f deg (limit 1 dB / 5 deg), run %.0f s", m, p,
                   elapsed));
    });

    // 3
    guard(3, [&] {
        const auto [m1, p1] = worst(compare(*r.sfra, *r.era, 1.0, 100.0));
        const auto [m2, p2] = worst(compare(*r.sfra, *r.sem, 1.0, 100.0));
        report(3, m1 <= 3.0 && p1 <= 10.0 && m2 <= 3.0 && p2 <= 10.0,
               fmt("SFRA points vs ERA %.3f dB / %.3f deg, vs SEM %.3f dB / %.3f deg (limit 3 dB / 10 deg)", m1, p1,
                   m2, p2));
    });

    // 4
    guard(4, [&] {
        double lowest = 1e9;
        bool ok = true;
        for (const DqAdmittance* y : {&*r.sem, &*r.sfra})
            for (Channel c : kAllChannels) {
                const double v = (*y)[c].fit->nrmse_percent;
                lowest = std::min(lowest, v);
                ok = ok && v > 90.0;
            }
        report(4, ok, fmt("lowest NRMSE over 4 SEM and 4 SFRA fits: %.2f %% (limit > 90 %%)", lowest));
    });

    // 7
    guard(7, [&] {
        const Json m = Json::parse(read_file(dir_a / "manifest.json"));
        const Json& p = m["protocol"];
        bool g_ok = !p["step_g"].empty();
        for (const auto& g : p["step_g"]) g_ok = g_ok && g.get<double>() == 0.01;
        const bool ok = p["step_experiments"] == 2 && p["sweep_simulations"] == 200 && p["sweep_points"] == 100 &&
                        p["fs_hz"].get<double>() == 2500.0 && g_ok &&
                        p["sweep_amplitude_pp_v"].get<double>() == 0.1 && p["sweep_cycles_configured"] == 2 &&
                        p["sweep_cycles_measured_min"] == 2 && p["sweep_cycles_exact_up_to_100hz"] == true;
        std::string detail = "manifest: " + p["step_experiments"].dump() + " step experiments, " +
                             p["sweep_simulations"].dump() + " sweep simulations over " + p["sweep_points"].dump() +
                             " points, fs " + p["fs_hz"].dump() + " Hz, g " + p["step_g"].dump() + ", " +
                             p["sweep_amplitude_pp_v"].dump() + " V pp, cycles configured " +
                             p["sweep_cycles_configured"].dump() + " (measured min " +
                             p["sweep_cycles_measured_min"].dump() + ", exactly 2 up to 100 Hz: " +
                             p["sweep_cycles_exact_up_to_100hz"].dump() + ")";
        report(7, ok, detail);
    });

    // 8: an independent second run with a different worker count.
    guard(8, [&] {
        std::fprintf(stderr, "default GFM run 2 of 2...\n");
        setenv("GFMID_WORKERS", "3", 1);
        const RunResult again = run_pipeline(cfg, all);
        unsetenv("GFMID_WORKERS");
        const fs::path dir_b = scratch / "run_b";
        write_artifacts(dir_b, render_artifacts(again), "run", protocol_json(again));
        std::size_t compared = 0, differing = 0;
        for (const auto& entry : fs::recursive_directory_iterator(dir_a)) {
            if (!entry.is_regular_file()) continue;
            const fs::path rel = fs::relative(entry.path(), dir_a);
            if (rel == "manifest.json") continue;  // carries the creation time
            ++compared;
            if (read_file(entry.path()) != read_file(dir_b / rel)) {
                ++differing;
                std::fprintf(stderr, "differs: %s\n", rel.string().c_str());
            }
        }
        const Json ma = Json::parse(read_file(dir_a / "manifest.json"));
        const Json mb = Json::parse(read_file(dir_b / "manifest.json"));
        const bool hashes = ma["files"] == mb["files"] && ma["protocol"] == mb["protocol"];
        report(8, compared > 10 && differing == 0 && hashes,
               fmt("%.0f data artifacts compared between two runs (1 and 3 workers), %.0f differ; manifest hashes ",
                   static_cast<double>(compared), static_cast<double>(differing)) +
                   (hashes ? "equal" : "differ"));
    });
}

// --- 5 -------------------------------------------------------------------

void era_exact_recovery() {
    std::mt19937_64 rng(20240611);
    std::uniform_int_distribution<int> order_dist(1, 6);
    const double dt = 1.0 / 2500.0;
    const auto grid = log_grid(0.1, 100.0, 60);
    double worst_rel = 0.0, worst_sv = 0.0;
    int failed = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const int n = order_dist(rng);
        std::array<ContinuousStateSpace, 4> systems;
        for (auto& s : systems) s = testing_support::random_stable_system(rng, n);
        const StepExperimentPair pair = testing_support::synthetic_pair(systems, 3.8, dt, 250, 1251);
        try {
            // Step data carry one extra mode: the integrator of the step itself.
            const DqAdmittance y = era_admittance(pair, EraOptions{static_cast<std::size_t>(n) + 1, 0.1});
            for (Channel c : kAllChannels) {
                const auto& sys = systems[static_cast<std::size_t>(c)];
                for (double f : grid) {
                    const Complex truth = testing_support::transfer(sys, f);
                    worst_rel = std::max(worst_rel, std::abs(y.value_at(c, f) - truth) / std::abs(truth));
                }
                const auto& sv = y[c].era->singular_values;
                worst_sv = std::max(worst_sv, sv[static_cast<std::size_t>(n) + 1] / sv[0]);
            }
        } catch (const Error& e) {
            ++failed;
            std::fprintf(stderr, "trial %d (order %d): %s\n", trial, n, e.what());
        }
    }
    report(5, failed == 0 && worst_rel < 1e-6 && worst_sv < 1e-10,
           fmt("20 random systems (order <= 6), 0.1-100 Hz: worst relative error %.2e (limit 1e-6), worst trailing "
               "singular value %.2e (limit 1e-10), %.0f failed",
               worst_rel, worst_sv, static_cast<double>(failed)));
}

// --- 6 -------------------------------------------------------------------

void round_trips() {
    std::mt19937_64 rng(77);
    double c2d_err = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const ContinuousStateSpace sys = testing_support::random_stable_system(rng, 1 + trial % 6);
        const ContinuousStateSpace back = d2c_zoh(c2d_zoh(sys, 4e-4));
        c2d_err = std::max(c2d_err, (back.A - sys.A).norm() / sys.A.norm());
        c2d_err = std::max(c2d_err, (back.B - sys.B).norm() / sys.B.norm());
    }

    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double park_err = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double th = 10.0 * u(rng);
        const Dq x{u(rng), u(rng)};
        const Dq y = park(inverse_park(x, th), th);
        park_err = std::max({park_err, std::abs(y.d - x.d), std::abs(y.q - x.q)});
    }

    double phasor_err = 0.0;
    for (double f : {1.0, 10.0, 50.0, 100.0, 625.0}) {
        const double amp = 0.5 + std::abs(u(rng)), phase = 3.0 * u(rng);
        std::vector<double> s(2500);
        for (std::size_t k = 0; k < s.size(); ++k)
            s[k] = 7.0 + amp * std::cos(2 * std::numbers::pi * f * static_cast<double>(k) / 2500.0 + phase);
        const Complex p = extract_phasor(TimeSeries(s, 1.0 / 2500.0), f).value;
        phasor_err = std::max(phasor_err, std::abs(p - std::polar(amp, phase)));
    }

    double nrmse_err = 0.0;
    {
        // Residual norm 1 against a deviation norm of sqrt(5).
        const TimeSeries meas(std::vector<double>{1.0, 2.0, 3.0, 4.0}, 1.0);
        const TimeSeries model(std::vector<double>{1.0, 2.0, 3.0, 5.0}, 1.0);
        nrmse_err = std::max(nrmse_err, std::abs(nrmse_fit_percent(meas, model) - 100.0 * (1.0 - 1.0 / std::sqrt(5.0))));
        const TimeSeries flat(std::vector<double>(4, 2.5), 1.0);
        nrmse_err = std::max(nrmse_err, std::abs(nrmse_fit_percent(meas, flat)));
        nrmse_err = std::max(nrmse_err, std::abs(nrmse_fit_percent(meas, meas) - 100.0));
    }
    report(6, c2d_err < 1e-8 && park_err < 1e-12 && phasor_err < 1e-9 && nrmse_err < 1e-9,
           fmt("d2c(c2d) %.1e (1e-8), Park %.1e (1e-12), phasor %.1e (1e-9), NRMSE %.1e (1e-9)", c2d_err, park_err,
               phasor_err, nrmse_err));
}

}  // namespace

int main() {
    const fs::path scratch = fs::temp_directory_path() / ("gfmid_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(scratch);
    fs::create_directories(scratch);

    guard(1, rl_oracle);
    guard(5, era_exact_recovery);
    guard(6, round_trips);
    try {
        gfm_checks(scratch);
    } catch (const std::exception& e) {
        for (int id : {2, 3, 4, 7, 8}) report(id, false, std::string("default run failed: ") + e.what());
    }

    std::error_code ec;
    fs::remove_all(scratch, ec);
    int failures = 0;
    for (int id = 1; id <= 8; ++id) {
        const auto it = results.find(id);
        const bool ok = it != results.end() && it->second.first;
        std::printf("criterion %d: %s  %s\n", id, ok ? "PASS" : "FAIL",
                    it == results.end() ? "not evaluated" : it->second.second.c_str());
        failures += ok ? 0 : 1;
    }
    std::printf("%d of 8 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
