#pragma once

// Text formats written and read by the command-line tool.
//
//   timeseries  t,v_gd,v_gq,i_od,i_oq
//   bode        f_hz,channel,method,mag_db,phase_deg
//   report      channel,f_lo,f_hi,max_dmag_db,max_dphase_deg,mean_dmag_db,mean_dphase_deg

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "gfmid/admittance.hpp"
#include "gfmid/app/config.hpp"
#include "gfmid/dq_admittance.hpp"
#include "gfmid/plant.hpp"

namespace gfmid::app {

inline std::string format_sci(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.16e", v);
    return buf;
}

inline std::string format_g(double v) { return detail::format_double(v); }

inline std::string timeseries_csv(const SimulationRecord& r) {
    std::string out = "t,v_gd,v_gq,i_od,i_oq\n";
    const TimeSeries& t = r.v_g.d;
    for (std::size_t k = 0; k < t.size(); ++k) {
        out += format_sci(t.time(k)) + "," + format_sci(r.v_g.d[k]) + "," + format_sci(r.v_g.q[k]) + "," +
               format_sci(r.i_o.d[k]) + "," + format_sci(r.i_o.q[k]) + "\n";
    }
    return out;
}

inline std::string bode_csv(const BodeTable& table) {
    std::string out = "f_hz,channel,method,mag_db,phase_deg\n";
    for (const BodeRow& r : table)
        out += format_g(r.f_hz) + "," + std::string(channel_name(r.channel)) + "," + std::string(method_name(r.method)) +
               "," + format_g(r.mag_db) + "," + format_g(r.phase_deg) + "\n";
    return out;
}

inline std::string report_csv(const AgreementReport& rep) {
    std::string out = "channel,f_lo,f_hi,max_dmag_db,max_dphase_deg,mean_dmag_db,mean_dphase_deg\n";
    for (const ChannelAgreement& c : rep.channels)
        out += std::string(channel_name(c.channel)) + "," + format_g(rep.f_lo) + "," + format_g(rep.f_hi) + "," +
               format_g(c.max_dmag_db) + "," + format_g(c.max_dphase_deg) + "," + format_g(c.mean_dmag_db) + "," +
               format_g(c.mean_dphase_deg) + "\n";
    return out;
}

/// Bode points read back as a point-based admittance covering [lowest, highest]
/// listed frequency. Frequencies must increase within each channel; every row
/// must carry the same method.
inline DqAdmittance parse_bode_csv(const std::string& text, const std::string& source = "bode csv") {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& why) -> InputError {
        return InputError(source + " line " + std::to_string(line_no) + ": " + why);
    };
    if (!std::getline(in, line)) {
        line_no = 1;
        throw fail("empty file");
    }
    ++line_no;
    if (detail::trim(line) != "f_hz,channel,method,mag_db,phase_deg")
        throw fail("expected header f_hz,channel,method,mag_db,phase_deg");

    DqAdmittance y;
    y.prefer_measured = true;
    y.valid_lo = std::numeric_limits<double>::infinity();
    y.valid_hi = 0.0;
    bool have_method = false;
    std::array<FrequencyResponse, 4> points;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cols.push_back(detail::trim(cell));
        if (cols.size() != 5) throw fail("expected 5 columns, found " + std::to_string(cols.size()));
        double f, mag, phase;
        try {
            f = detail::parse_double("f_hz", cols[0]);
            // A channel that is identically zero lists -inf dB.
            mag = cols[3] == "-inf" ? -std::numeric_limits<double>::infinity()
                                    : detail::parse_double("mag_db", cols[3]);
            phase = detail::parse_double("phase_deg", cols[4]);
        } catch (const InputError& e) {
            throw fail(e.what());
        }
        if (!(f > 0.0)) throw fail("f_hz must be positive");
        const auto ch = parse_channel(cols[1]);
        if (!ch) throw fail("unknown channel '" + cols[1] + "'");
        const auto m = parse_method(cols[2]);
        if (!m) throw fail("unknown method '" + cols[2] + "'");
        if (have_method && *m != y.method) throw fail("mixed methods in one file");
        y.method = *m;
        have_method = true;
        FrequencyResponse& fr = points[static_cast<std::size_t>(*ch)];
        if (!fr.frequency_hz.empty() && !(f > fr.frequency_hz.back()))
            throw fail("frequencies must increase within channel " + cols[1]);
        fr.frequency_hz.push_back(f);
        y.valid_lo = std::min(y.valid_lo, f);
        y.valid_hi = std::max(y.valid_hi, f);
        fr.value.push_back(std::isinf(mag) ? Complex(0.0, 0.0)
                                           : std::polar(std::pow(10.0, mag / 20.0), phase * std::numbers::pi / 180.0));
    }
    if (!have_method) throw fail("no data rows");
    for (Channel c : kAllChannels) {
        if (points[static_cast<std::size_t>(c)].empty())
            throw InputError(source + ": channel " + std::string(channel_name(c)) + " has no rows");
        y[c].measured = std::move(points[static_cast<std::size_t>(c)]);
    }
    return y;
}

inline DqAdmittance load_bode_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_bode_csv(ss.str(), path);
}

}  // namespace gfmid::app
