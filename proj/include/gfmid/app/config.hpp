#pragma once

// Run configuration: a flat INI file with sections [plant], [sampling], [era],
// [sem], [sfra] and [output]. Every key is optional; missing keys take the
// defaults below. Unknown sections or keys are errors.
//
//   [plant]
//   model = gfm            ; or rl_reference
//   L_f = 0.3e-3           ; any GfmParameters / GridParameters field (gfm)
//   R = 0.23               ; R, L, omega0, V_d, V_q (rl_reference)
//
//   [sampling]  fs, record_length, t_step
//   [era]       order (integer or "auto"), g
//   [sem]       n_poles, n_zeros, g
//   [sfra]      f_min, f_max, points, cycles, amplitude_pp, n_poles, n_zeros
//   [output]    directory, emit_timeseries (true/false)

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gfmid/error.hpp"
#include "gfmid/experiments.hpp"
#include "gfmid/plant.hpp"
#include "gfmid/ratfit.hpp"

namespace gfmid::app {

/// Bad input from the user: configuration, command line or input files.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class PlantModel { Gfm, RlReference };

struct RunConfig {
    PlantModel model = PlantModel::Gfm;
    GfmParameters gfm;
    GridParameters grid;
    RlParameters rl;

    double fs = 2500.0;
    double record_length = 1.0;
    double t_step = 0.1;

    std::optional<std::size_t> era_order = 6;
    double era_g = 0.01;

    std::size_t sem_n_poles = 4;
    std::optional<std::size_t> sem_n_zeros;
    double sem_g = 0.01;

    double sfra_f_min = 0.1;
    double sfra_f_max = 1000.0;
    std::size_t sfra_points = 100;
    unsigned sfra_cycles = 2;
    double sfra_amplitude_pp = 0.1;
    std::size_t sfra_n_poles = 4;
    std::optional<std::size_t> sfra_n_zeros;

    std::string output_directory = "out";
    bool emit_timeseries = true;

    StepInjection step(double g) const {
        StepInjection s;
        s.g = g;
        s.t_step = t_step;
        s.record_length = record_length;
        return s;
    }

    SineInjection sine() const {
        SineInjection s;
        s.amplitude_pp = sfra_amplitude_pp;
        s.cycles = sfra_cycles;
        return s;
    }

    FitOptions sem_fit() const {
        FitOptions o;
        o.n_poles = sem_n_poles;
        o.n_zeros = sem_n_zeros;
        return o;
    }

    FitOptions sfra_fit() const {
        FitOptions o;
        o.n_poles = sfra_n_poles;
        o.n_zeros = sfra_n_zeros;
        return o;
    }

    std::vector<double> sweep_frequencies() const { return log_grid(sfra_f_min, sfra_f_max, sfra_points); }
};

namespace detail {

/// Shortest text that parses back to exactly v.
inline std::string format_double(double v) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& field, const std::string& text) {
    const std::string t = trim(text);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v))
        throw InputError(field + ": expected a number, got '" + text + "'");
    return v;
}

inline std::size_t parse_count(const std::string& field, const std::string& text) {
    const std::string t = trim(text);
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
        throw InputError(field + ": expected a non-negative integer, got '" + text + "'");
    return v;
}

inline bool parse_bool(const std::string& field, const std::string& text) {
    const std::string t = trim(text);
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    throw InputError(field + ": expected true or false, got '" + text + "'");
}

/// One configurable key: how to read it, how to print it, and when it applies.
struct Field {
    std::string section;
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
    std::function<bool(const RunConfig&)> applies = [](const RunConfig&) { return true; };

    std::string name() const { return section + "." + key; }
};

inline std::vector<Field> fields() {
    std::vector<Field> f;
    auto is_gfm = [](const RunConfig& c) { return c.model == PlantModel::Gfm; };
    auto is_rl = [](const RunConfig& c) { return c.model == PlantModel::RlReference; };

    f.push_back({"plant", "model",
                 [](RunConfig& c, const std::string& v) {
                     const std::string t = trim(v);
                     if (t == "gfm") c.model = PlantModel::Gfm;
                     else if (t == "rl_reference") c.model = PlantModel::RlReference;
                     else throw InputError("plant.model: expected gfm or rl_reference, got '" + v + "'");
                 },
                 [](const RunConfig& c) { return std::string(c.model == PlantModel::Gfm ? "gfm" : "rl_reference"); }});

    auto number = [&](std::string section, std::string key, auto member, auto applies) {
        const std::string name = section + "." + key;
        f.push_back({section, key,
                     [member, name](RunConfig& c, const std::string& v) { member(c) = parse_double(name, v); },
                     [member](const RunConfig& c) { return format_double(member(const_cast<RunConfig&>(c))); },
                     applies});
    };
    auto always = [](const RunConfig&) { return true; };

#define GFMID_GFM(field) number("plant", #field, [](RunConfig& c) -> double& { return c.gfm.field; }, is_gfm)
#define GFMID_GRID(field) number("plant", #field, [](RunConfig& c) -> double& { return c.grid.field; }, is_gfm)
#define GFMID_RL(field) number("plant", #field, [](RunConfig& c) -> double& { return c.rl.field; }, is_rl)
    GFMID_GFM(V_ni);
    GFMID_GFM(omega_ni);
    GFMID_GFM(V_DC);
    GFMID_GFM(m_P);
    GFMID_GFM(n_Q);
    GFMID_GFM(R_c);
    GFMID_GFM(L_c);
    GFMID_GFM(R_f);
    GFMID_GFM(L_f);
    GFMID_GFM(C_f);
    GFMID_GFM(K_PV);
    GFMID_GFM(K_IV);
    GFMID_GFM(K_PC);
    GFMID_GFM(K_IC);
    GFMID_GFM(omega_b);
    GFMID_GFM(F);
    GFMID_GFM(omega_c);
    GFMID_GRID(omega_g);
    GFMID_GRID(R_grid);
    GFMID_GRID(L_grid);
    GFMID_GRID(V_gd);
    GFMID_GRID(V_gq);
    GFMID_GRID(P_load);
    GFMID_GRID(Q_load);
    GFMID_RL(R);
    GFMID_RL(L);
    GFMID_RL(omega0);
    GFMID_RL(V_d);
    GFMID_RL(V_q);
#undef GFMID_GFM
#undef GFMID_GRID
#undef GFMID_RL

    number("sampling", "fs", [](RunConfig& c) -> double& { return c.fs; }, always);
    number("sampling", "record_length", [](RunConfig& c) -> double& { return c.record_length; }, always);
    number("sampling", "t_step", [](RunConfig& c) -> double& { return c.t_step; }, always);

    f.push_back({"era", "order",
                 [](RunConfig& c, const std::string& v) {
                     if (trim(v) == "auto") c.era_order.reset();
                     else c.era_order = parse_count("era.order", v);
                 },
                 [](const RunConfig& c) { return c.era_order ? std::to_string(*c.era_order) : std::string("auto"); }});
    number("era", "g", [](RunConfig& c) -> double& { return c.era_g; }, always);

    auto count = [&](std::string section, std::string key, auto member) {
        const std::string name = section + "." + key;
        f.push_back({section, key, [member, name](RunConfig& c, const std::string& v) { member(c) = parse_count(name, v); },
                     [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }});
    };
    auto optional_count = [&](std::string section, std::string key, auto member) {
        const std::string name = section + "." + key;
        f.push_back({section, key,
                     [member, name](RunConfig& c, const std::string& v) {
                         if (trim(v) == "default") member(c).reset();
                         else member(c) = parse_count(name, v);
                     },
                     [member](const RunConfig& c) {
                         const auto& o = member(const_cast<RunConfig&>(c));
                         return o ? std::to_string(*o) : std::string("default");
                     }});
    };

    count("sem", "n_poles", [](RunConfig& c) -> std::size_t& { return c.sem_n_poles; });
    optional_count("sem", "n_zeros", [](RunConfig& c) -> std::optional<std::size_t>& { return c.sem_n_zeros; });
    number("sem", "g", [](RunConfig& c) -> double& { return c.sem_g; }, always);

    number("sfra", "f_min", [](RunConfig& c) -> double& { return c.sfra_f_min; }, always);
    number("sfra", "f_max", [](RunConfig& c) -> double& { return c.sfra_f_max; }, always);
    count("sfra", "points", [](RunConfig& c) -> std::size_t& { return c.sfra_points; });
    f.push_back({"sfra", "cycles",
                 [](RunConfig& c, const std::string& v) {
                     const std::size_t n = parse_count("sfra.cycles", v);
                     if (n > 1000) throw InputError("sfra.cycles: at most 1000");
                     c.sfra_cycles = static_cast<unsigned>(n);
                 },
                 [](const RunConfig& c) { return std::to_string(c.sfra_cycles); }});
    number("sfra", "amplitude_pp", [](RunConfig& c) -> double& { return c.sfra_amplitude_pp; }, always);
    count("sfra", "n_poles", [](RunConfig& c) -> std::size_t& { return c.sfra_n_poles; });
    optional_count("sfra", "n_zeros", [](RunConfig& c) -> std::optional<std::size_t>& { return c.sfra_n_zeros; });

    f.push_back({"output", "directory",
                 [](RunConfig& c, const std::string& v) {
                     const std::string t = trim(v);
                     if (t.empty()) throw InputError("output.directory: must not be empty");
                     c.output_directory = t;
                 },
                 [](const RunConfig& c) { return c.output_directory; }});
    f.push_back({"output", "emit_timeseries",
                 [](RunConfig& c, const std::string& v) { c.emit_timeseries = parse_bool("output.emit_timeseries", v); },
                 [](const RunConfig& c) { return std::string(c.emit_timeseries ? "true" : "false"); }});
    return f;
}

}  // namespace detail

/// Checks every field against the library invariants; messages start with "section.key".
inline void validate(const RunConfig& c) {
    try {
        if (c.model == PlantModel::Gfm) {
            c.gfm.validate();
            c.grid.validate();
        } else {
            c.rl.validate();
        }
    } catch (const Error& e) {
        std::string msg = e.what();
        const auto colon = msg.find(": ");
        throw InputError("plant." + (colon == std::string::npos ? msg : msg.substr(colon + 2)) + " is invalid");
    }
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw InputError(msg);
    };
    require(c.fs >= 2500.0, "sampling.fs: must be at least 2500 Hz");
    require(c.record_length > 0.0 && c.record_length <= 10.0, "sampling.record_length: must lie in (0, 10] s");
    require(c.t_step >= 0.1 && c.t_step <= 10.0, "sampling.t_step: must leave 0.1 to 10 s of baseline");
    require(!c.era_order || (*c.era_order >= 1 && *c.era_order <= 40), "era.order: must be auto or 1..40");
    require(c.era_g > 0.0 && c.era_g <= 0.05, "era.g: must lie in (0, 0.05]");
    require(c.sem_g > 0.0 && c.sem_g <= 0.05, "sem.g: must lie in (0, 0.05]");
    require(c.sem_n_poles <= 20, "sem.n_poles: at most 20");
    require(!c.sem_n_zeros || *c.sem_n_zeros <= c.sem_n_poles, "sem.n_zeros: must not exceed sem.n_poles");
    require(c.sfra_f_min > 0.0, "sfra.f_min: must be positive");
    require(c.sfra_f_max > c.sfra_f_min || (c.sfra_points == 1 && c.sfra_f_max == c.sfra_f_min),
            "sfra.f_max: must exceed sfra.f_min");
    require(c.sfra_f_max < 0.5 * c.fs, "sfra.f_max: must lie below the Nyquist frequency fs / 2");
    require(c.sfra_points >= 1 && c.sfra_points <= 10000, "sfra.points: must lie in 1..10000");
    require(c.sfra_cycles >= 1, "sfra.cycles: must be at least 1");
    require(c.sfra_amplitude_pp > 0.0, "sfra.amplitude_pp: must be positive");
    require(c.sfra_n_poles <= 20, "sfra.n_poles: at most 20");
    require(!c.sfra_n_zeros || *c.sfra_n_zeros <= c.sfra_n_poles, "sfra.n_zeros: must not exceed sfra.n_poles");
}

/// Parses INI text. Later keys override earlier ones; the model key is applied first
/// so plant fields are checked against the right parameter set.
inline RunConfig parse_config(const std::string& text) {
    boost::property_tree::ptree tree;
    try {
        std::istringstream in(text);
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw InputError("config line " + std::to_string(e.line()) + ": " + e.message());
    }
    const auto all = detail::fields();
    RunConfig c;
    auto find = [&](const std::string& section, const std::string& key) -> const detail::Field* {
        for (const auto& f : all)
            if (f.section == section && f.key == key) return &f;
        return nullptr;
    };
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw InputError(section + ": key outside of a section");
        bool known = false;
        for (const auto& f : all) known = known || f.section == section;
        if (!known) throw InputError(section + ": unknown section");
    }
    if (auto plant = tree.get_child_optional("plant"))
        if (auto model = plant->get_optional<std::string>("model")) find("plant", "model")->set(c, *model);
    for (const auto& [section, body] : tree) {
        for (const auto& [key, value] : body) {
            const detail::Field* f = find(section, key);
            if (!f) throw InputError(section + "." + key + ": unknown key");
            if (!f->applies(c))
                throw InputError(f->name() + ": not a parameter of model " + find("plant", "model")->get(c));
            f->set(c, value.data());
        }
    }
    validate(c);
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Effective configuration with every default resolved; numbers print in their
/// shortest round-trip form so parsing the text back gives the same RunConfig.
inline std::string render_config(const RunConfig& c) {
    std::string out;
    std::string current;
    for (const auto& f : detail::fields()) {
        if (!f.applies(c)) continue;
        if (f.section != current) {
            if (!current.empty()) out += "\n";
            out += "[" + f.section + "]\n";
            current = f.section;
        }
        out += f.key + " = " + f.get(c) + "\n";
    }
    return out;
}

}  // namespace gfmid::app
