#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <unistd.h>

#include "gfmid/app/app.hpp"

using namespace gfmid;
using namespace gfmid::app;
using std::numbers::pi;
namespace fs = std::filesystem;

namespace {

DqAdmittance constant_admittance(double k, Method m = Method::Reference) {
    DqAdmittance y;
    y.method = m;
    y.valid_hi = std::numeric_limits<double>::infinity();
    for (Channel c : kAllChannels) y[c].rational = RationalTransferFunction::constant(k);
    return y;
}

DqAdmittance rl_reference() {
    const Plant p = build_rl_reference_plant(RlParameters{});
    return reference_admittance(p, find_equilibrium(p));
}

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("gfmid_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    fs::path operator/(const std::string& name) const { return path_ / name; }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream o(p, std::ios::binary);
    o << text;
}

std::string expect_input_error(const std::function<void()>& f) {
    try {
        f();
    } catch (const InputError& e) {
        return e.what();
    }
    ADD_FAILURE() << "expected InputError";
    return {};
}

}  // namespace

// ---------------------------------------------------------------------------
// Admittance conventions
// ---------------------------------------------------------------------------

TEST(Admittance, ReferenceUsesInverterToGridSign) {
    const Plant p = build_rl_reference_plant(RlParameters{});
    const DqAdmittance y = reference_admittance(p, find_equilibrium(p));
    for (double f : {0.5, 20.0, 300.0}) {
        const Eigen::Matrix2cd truth = p.analytic_admittance(Complex(0.0, 2 * pi * f));
        for (Channel c : kAllChannels) {
            const auto [out, in] = channel_axes(c);
            EXPECT_LT(std::abs(y.value_at(c, f) - truth(out, in)), 1e-6 * truth.norm());
        }
        // Passive branch: positive conductance on the diagonal.
        EXPECT_GT(y.value_at(Channel::Ydd, f).real(), 0.0);
        EXPECT_LT(std::abs(y.value_at(Channel::Ydq, f) + y.value_at(Channel::Yqd, f)), 1e-6 * truth.norm());
    }
}

TEST(Admittance, ChannelOrderAndNames) {
    EXPECT_EQ(channel_axes(Channel::Ydq), std::make_pair(0, 1));
    EXPECT_EQ(channel_axes(Channel::Yqd), std::make_pair(1, 0));
    for (Channel c : kAllChannels) EXPECT_EQ(parse_channel(channel_name(c)), c);
    EXPECT_FALSE(parse_channel("Yxx").has_value());
}

TEST(Bode, MinusOneIsZeroDecibelsAndHalfTurn) {
    const BodeTable t = bode(constant_admittance(-1.0), {1.0, 10.0, 100.0});
    ASSERT_EQ(t.size(), 12u);
    for (const BodeRow& r : t) {
        EXPECT_NEAR(r.mag_db, 0.0, 1e-12);
        EXPECT_NEAR(r.phase_deg, 180.0, 1e-12);
    }
}

TEST(Bode, PhaseIsUnwrappedAlongFrequency) {
    // 1 / (s + 1)^3 passes through -180 degrees.
    DqAdmittance y = constant_admittance(1.0);
    for (Channel c : kAllChannels) y[c].rational = RationalTransferFunction({1.0}, {1.0, 3.0, 3.0, 1.0});
    const BodeTable t = bode(y, log_grid(0.01, 10.0, 60));
    double previous = 0.0;
    for (std::size_t k = 0; k < 60; ++k) {
        if (k > 0) EXPECT_LT(std::abs(t[k].phase_deg - previous), 90.0);
        previous = t[k].phase_deg;
    }
    EXPECT_LT(t[59].phase_deg, -200.0);
}

TEST(Compare, SelfComparisonIsZeroAndOrderDoesNotMatter) {
    const DqAdmittance y = rl_reference();
    const AgreementReport self = compare(y, y, 1.0, 100.0);
    for (const auto& c : self.channels) {
        EXPECT_EQ(c.max_dmag_db, 0.0);
        EXPECT_EQ(c.max_dphase_deg, 0.0);
        EXPECT_EQ(c.points, 50u);
    }
    const DqAdmittance k = constant_admittance(0.3);
    const AgreementReport ab = compare(y, k, 1.0, 100.0), ba = compare(k, y, 1.0, 100.0);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_DOUBLE_EQ(ab.channels[i].max_dmag_db, ba.channels[i].max_dmag_db);
        EXPECT_DOUBLE_EQ(ab.channels[i].max_dphase_deg, ba.channels[i].max_dphase_deg);
    }
}

TEST(Compare, KnownOffsets) {
    const AgreementReport r = compare(constant_admittance(10.0), constant_admittance(-1.0), 1.0, 10.0);
    EXPECT_TRUE(r.within(20.0 + 1e-9, 180.0));
    EXPECT_FALSE(r.within(19.9, 180.0));
    for (const auto& c : r.channels) {
        EXPECT_NEAR(c.max_dmag_db, 20.0, 1e-12);
        EXPECT_NEAR(c.max_dphase_deg, 180.0, 1e-12);
    }
}

TEST(Compare, BandOutsideTheValidRangeIsRejected) {
    DqAdmittance y = constant_admittance(1.0, Method::Era);
    y.valid_hi = 1250.0;
    try {
        compare(y, y, 1.0, 2000.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::BandOutOfRange);
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

TEST(Config, DefaultsRoundTripThroughText) {
    const RunConfig c;
    const std::string text = render_config(c);
    EXPECT_EQ(render_config(parse_config(text)), text);
    EXPECT_NE(text.find("[plant]\nmodel = gfm\n"), std::string::npos);
    EXPECT_NE(text.find("R_grid = 0.23\n"), std::string::npos);
}

TEST(Config, OverridesApplyAndRoundTrip) {
    const RunConfig c = parse_config(
        "[plant]\nmodel = rl_reference\nR = 0.5\nL = 1e-3\n[era]\norder = auto\n[sfra]\npoints = 30\nf_min = 1\n"
        "f_max = 100\n[output]\nemit_timeseries = false\n");
    EXPECT_EQ(c.model, PlantModel::RlReference);
    EXPECT_DOUBLE_EQ(c.rl.R, 0.5);
    EXPECT_DOUBLE_EQ(c.rl.L, 1e-3);
    EXPECT_FALSE(c.era_order.has_value());
    EXPECT_EQ(c.sfra_points, 30u);
    EXPECT_FALSE(c.emit_timeseries);
    const std::string text = render_config(c);
    EXPECT_EQ(render_config(parse_config(text)), text);
    EXPECT_EQ(text.find("L_f"), std::string::npos);
}

TEST(Config, ErrorsNameTheOffendingKey) {
    EXPECT_NE(expect_input_error([] { parse_config("[era]\nordr = 3\n"); }).find("era.ordr: unknown key"),
              std::string::npos);
    EXPECT_NE(expect_input_error([] { parse_config("[extra]\nx = 1\n"); }).find("unknown section"), std::string::npos);
    EXPECT_NE(expect_input_error([] { parse_config("[plant]\nL_f = 0\n"); }).find("plant.L_f is invalid"),
              std::string::npos);
    EXPECT_NE(expect_input_error([] { parse_config("[plant]\nmodel = rl_reference\nL_f = 1e-3\n"); })
                  .find("not a parameter of model"),
              std::string::npos);
    EXPECT_NE(expect_input_error([] { parse_config("[sampling]\nfs = 1000\n"); }).find("sampling.fs"),
              std::string::npos);
    EXPECT_NE(expect_input_error([] { parse_config("[era]\ng = 0.2\n"); }).find("era.g"), std::string::npos);
    EXPECT_NE(expect_input_error([] { parse_config("[sem]\nn_poles = four\n"); }).find("n_poles"), std::string::npos);
}

TEST(Cli, MethodAndPairParsing) {
    const MethodSet m = parse_methods("era, sfra");
    EXPECT_TRUE(m.era);
    EXPECT_FALSE(m.sem);
    EXPECT_TRUE(m.sfra);
    EXPECT_TRUE(parse_methods("all").sem);
    expect_input_error([] { parse_methods("era,foo"); });
    EXPECT_EQ(parse_pair("--band", "1:100"), std::make_pair(1.0, 100.0));
    expect_input_error([] { parse_pair("--band", "1-100"); });
    expect_input_error([] { parse_pair("--band", "0:100"); });
}

TEST(Cli, Sha256KnownAnswer) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

// ---------------------------------------------------------------------------
// Bode CSV
// ---------------------------------------------------------------------------

TEST(BodeCsv, RoundTripPreservesValues) {
    const DqAdmittance y = rl_reference();
    const auto grid = log_grid(1.0, 100.0, 30);
    const DqAdmittance back = parse_bode_csv(bode_csv(bode(y, grid)));
    EXPECT_EQ(back.method, Method::Reference);
    for (Channel c : kAllChannels)
        for (double f : grid) {
            const Complex a = y.value_at(c, f), b = back.value_at(c, f);
            EXPECT_LT(std::abs(a - b), 1e-12 * std::abs(a));
        }
}

TEST(BodeCsv, MalformedInputReportsTheLine) {
    const std::string header = "f_hz,channel,method,mag_db,phase_deg\n";
    EXPECT_NE(expect_input_error([] { parse_bode_csv("f,channel\n"); }).find("line 1"), std::string::npos);
    EXPECT_NE(expect_input_error([&] { parse_bode_csv(header + "1,Ydd,era,0,0\n2,Ydd,era\n"); }).find("line 3"),
              std::string::npos);
    EXPECT_NE(expect_input_error([&] { parse_bode_csv(header + "1,Ydd,era,0,0\n1,Ydq,sem,0,0\n"); })
                  .find("mixed methods"),
              std::string::npos);
    EXPECT_NE(expect_input_error([&] { parse_bode_csv(header + "2,Ydd,era,0,0\n1,Ydd,era,0,0\n"); }).find("increase"),
              std::string::npos);
    EXPECT_NE(expect_input_error([&] { parse_bode_csv(header + "1,Yzz,era,0,0\n"); }).find("unknown channel"),
              std::string::npos);
    EXPECT_NE(expect_input_error([&] { parse_bode_csv(header + "1,Ydd,era,abc,0\n"); }).find("line 2"),
              std::string::npos);
    EXPECT_NE(expect_input_error([&] { parse_bode_csv(header + "1,Ydd,era,0,0\n"); }).find("has no rows"),
              std::string::npos);
}

TEST(BodeCsv, MinusInfinityMeansZero) {
    std::string text = "f_hz,channel,method,mag_db,phase_deg\n";
    for (const char* ch : {"Ydd", "Ydq", "Yqd", "Yqq"}) text += std::string("5,") + ch + ",sfra,-inf,0\n";
    const DqAdmittance y = parse_bode_csv(text);
    EXPECT_EQ(y.value_at(Channel::Ydq, 5.0), Complex(0.0, 0.0));
}

// ---------------------------------------------------------------------------
// Verbs
// ---------------------------------------------------------------------------

TEST(CompareVerb, ExitCodes) {
    TempDir dir;
    const auto grid = log_grid(1.0, 100.0, 20);
    write_file(dir / "a.csv", bode_csv(bode(constant_admittance(1.0, Method::Era), grid)));
    write_file(dir / "b.csv", bode_csv(bode(constant_admittance(1.2, Method::Sem), grid)));  // +1.58 dB
    std::ostringstream out, err;

    CompareOptions o{(dir / "a.csv").string(), (dir / "a.csv").string(), "1:100", (dir / "r.csv").string(), "1:5"};
    EXPECT_EQ(cmd_compare(o, out, err), kOk);
    EXPECT_TRUE(fs::exists(dir / "r.csv"));
    EXPECT_TRUE(fs::exists(dir / "r.txt"));

    o.b = (dir / "b.csv").string();
    EXPECT_EQ(cmd_compare(o, out, err), kThresholdFailure);
    o.thresholds = "2:5";
    EXPECT_EQ(cmd_compare(o, out, err), kOk);

    o.band = "0.5:100";
    EXPECT_EQ(cmd_compare(o, out, err), kInputError);
    o.band = "1:100";
    o.b = (dir / "missing.csv").string();
    EXPECT_EQ(cmd_compare(o, out, err), kInputError);
    write_file(dir / "bad.csv", "f_hz,channel,method,mag_db,phase_deg\n1,Ydd,era,x,0\n");
    o.b = (dir / "bad.csv").string();
    err.str("");
    EXPECT_EQ(cmd_compare(o, out, err), kInputError);
    EXPECT_NE(err.str().find("line 2"), std::string::npos);
}

TEST(RunVerb, InvalidConfigExitsWithInputErrorAndWritesNothing) {
    TempDir dir;
    write_file(dir / "bad.ini", "[plant]\nL_f = 0\n");
    std::ostringstream out, err;
    RunOptions o{(dir / "bad.ini").string(), "all", (dir / "out").string()};
    EXPECT_EQ(cmd_run(o, out, err), kInputError);
    EXPECT_NE(err.str().find("plant.L_f is invalid"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "out"));

    o.config_path = (dir / "none.ini").string();
    EXPECT_EQ(cmd_run(o, out, err), kInputError);
}

TEST(RunVerb, ReferencePlantRunWritesManifestedArtifacts) {
    TempDir dir;
    write_file(dir / "rl.ini",
               "[plant]\nmodel = rl_reference\n[era]\norder = 3\n[sem]\nn_poles = 2\n[sfra]\nn_poles = 2\n"
               "f_min = 1\nf_max = 100\npoints = 10\n");
    std::ostringstream out, err;
    RunOptions o{(dir / "rl.ini").string(), "all", (dir / "out").string()};
    ASSERT_EQ(cmd_run(o, out, err), kOk) << err.str();
    for (const char* f : {"manifest.json", "effective_config.ini", "bode_era.csv", "bode_sem.csv", "bode_sfra.csv",
                          "diagnostics.json", "timeseries/step_d.csv", "timeseries/step_q.csv",
                          "plots/fig7_bode_comparison.gp"})
        EXPECT_TRUE(fs::exists(dir / ("out/" + std::string(f)))) << f;

    std::ifstream in(dir / "out/manifest.json");
    const Json m = Json::parse(in);
    EXPECT_EQ(m["protocol"]["step_experiments"], 2);
    EXPECT_EQ(m["protocol"]["sweep_simulations"], 20);
    for (const auto& entry : m["files"]) {
        std::ifstream f(dir / ("out/" + entry["path"].get<std::string>()), std::ios::binary);
        std::ostringstream ss;
        ss << f.rdbuf();
        EXPECT_EQ(sha256_hex(ss.str()), entry["sha256"].get<std::string>()) << entry["path"];
    }

    // The written Bode files are accepted by the compare verb.
    CompareOptions c{(dir / "out/bode_era.csv").string(), (dir / "out/bode_sfra.csv").string(), "1:100",
                     (dir / "report.csv").string(), "0.5:2"};
    EXPECT_EQ(cmd_compare(c, out, err), kOk) << out.str();
}

TEST(OracleVerb, NegativeControlsFail) {
    OracleOptions flip;
    flip.out_dir = "unused";
    flip.flip = "era:Ydq";
    const OracleOutcome flipped = run_oracle(flip);
    EXPECT_FALSE(flipped.pass());
    for (const OracleRow& r : flipped.rows)
        if (r.method != Method::Era || r.channel != Channel::Ydq) EXPECT_TRUE(r.pass());

    OracleOptions tight;
    tight.tolerance = "1e-9:1e-9";
    EXPECT_FALSE(run_oracle(tight).pass());

    OracleOptions bad;
    bad.flip = "era:Yxx";
    expect_input_error([&] { run_oracle(bad); });
}
