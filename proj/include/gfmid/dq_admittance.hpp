#pragma once

// The 2x2 dq admittance as produced by one identification method.
//
//   [ i_od ]       [ Ydd  Ydq ] [ v_gd ]
//   [ i_oq ]  = -  [ Yqd  Yqq ] [ v_gq ]
//
// Currents are measured flowing inverter -> grid, so the minus sign is applied
// when a channel is formed and the stored values are the admittance itself.

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "gfmid/era_realization.hpp"
#include "gfmid/ratfit.hpp"
#include "gfmid/signals.hpp"

namespace gfmid {

enum class Channel { Ydd = 0, Ydq = 1, Yqd = 2, Yqq = 3 };

inline constexpr std::array<Channel, 4> kAllChannels{Channel::Ydd, Channel::Ydq, Channel::Yqd, Channel::Yqq};

constexpr std::string_view channel_name(Channel c) {
    switch (c) {
        case Channel::Ydd: return "Ydd";
        case Channel::Ydq: return "Ydq";
        case Channel::Yqd: return "Yqd";
        case Channel::Yqq: return "Yqq";
    }
    return "?";
}

inline std::optional<Channel> parse_channel(std::string_view s) {
    for (Channel c : kAllChannels)
        if (channel_name(c) == s) return c;
    return std::nullopt;
}

/// Output axis (0 = d, 1 = q) and input axis of a channel.
constexpr std::pair<int, int> channel_axes(Channel c) {
    const int i = static_cast<int>(c);
    return {i / 2, i % 2};
}

enum class Method { Era, Sem, Sfra, Reference };

constexpr std::string_view method_name(Method m) {
    switch (m) {
        case Method::Era: return "era";
        case Method::Sem: return "sem";
        case Method::Sfra: return "sfra";
        case Method::Reference: return "reference";
    }
    return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
    for (Method m : {Method::Era, Method::Sem, Method::Sfra, Method::Reference})
        if (method_name(m) == s) return m;
    return std::nullopt;
}

struct AdmittanceChannel {
    std::optional<ContinuousStateSpace> realization;  // evaluated pointwise when present
    std::optional<RationalTransferFunction> rational;
    std::optional<FrequencyResponse> measured;        // raw points (SFRA, or values read back from a file)
    std::optional<FitResult> fit;
    std::optional<EraDiagnostics> era;
    bool rational_approximate = false;  // rational form could not cancel the step-integrator pole
    bool zero_response = false;

    bool has_model() const noexcept { return realization.has_value() || rational.has_value(); }

    /// Model value at f. Realizations win over rational forms (better conditioned).
    Complex model_at(double f_hz) const {
        if (realization) return evaluate_siso(*realization, f_hz);
        if (rational) return rational->at_frequency(f_hz);
        throw Error(ErrorCode::InvalidArgument, "channel has no model");
    }

    /// Raw point at f, matched to 1e-9 relative.
    std::optional<Complex> measured_at(double f_hz) const {
        if (!measured) return std::nullopt;
        for (std::size_t k = 0; k < measured->size(); ++k)
            if (std::abs(measured->frequency_hz[k] - f_hz) <= 1e-9 * f_hz) return measured->value[k];
        return std::nullopt;
    }
};

struct DqAdmittance {
    Method method = Method::Reference;
    std::array<AdmittanceChannel, 4> channels;
    double valid_lo = 0.0;  // Hz; open lower bound for models, closed for raw points
    double valid_hi = 0.0;
    bool prefer_measured = false;  // compare against raw points rather than the fit
    std::string sign_convention = "inverter->grid current, minus sign applied";

    AdmittanceChannel& operator[](Channel c) { return channels[static_cast<std::size_t>(c)]; }
    const AdmittanceChannel& operator[](Channel c) const { return channels[static_cast<std::size_t>(c)]; }

    /// Whether comparisons use this side's raw points.
    bool uses_points() const {
        if (prefer_measured) return true;
        for (const auto& ch : channels)
            if (!ch.has_model()) return true;
        return false;
    }

    /// Value used for Bode listings and comparisons.
    Complex value_at(Channel c, double f_hz) const {
        const AdmittanceChannel& ch = (*this)[c];
        if (uses_points()) {
            if (auto v = ch.measured_at(f_hz)) return *v;
            throw Error(ErrorCode::BandOutOfRange,
                        std::string(channel_name(c)) + ": no measured point at " + std::to_string(f_hz) + " Hz");
        }
        try {
            return ch.model_at(f_hz);
        } catch (const Error& e) {
            throw e.with_context(std::string(channel_name(c)));
        }
    }
};

}  // namespace gfmid
