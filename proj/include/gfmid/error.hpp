#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gfmid {

enum class ErrorCode {
    InvalidArgument,
    EmptyBaselineWindow,
    NonCoherentWindow,
    AboveNyquist,
    DegenerateReference,
    InvalidParameters,
    SimulationDiverged,
    EquilibriumNotFound,
    NotAtEquilibrium,
    NotEnoughData,
    OrderExceedsRank,
    LogBranchAmbiguity,
    IllConditionedFit,
    InputNotExciting,
    EvaluationAtPole,
    ImproperTransferFunction,
    BandOutOfRange,
};

constexpr std::string_view error_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::EmptyBaselineWindow: return "EmptyBaselineWindow";
        case ErrorCode::NonCoherentWindow: return "NonCoherentWindow";
        case ErrorCode::AboveNyquist: return "AboveNyquist";
        case ErrorCode::DegenerateReference: return "DegenerateReference";
        case ErrorCode::InvalidParameters: return "InvalidParameters";
        case ErrorCode::SimulationDiverged: return "SimulationDiverged";
        case ErrorCode::EquilibriumNotFound: return "EquilibriumNotFound";
        case ErrorCode::NotAtEquilibrium: return "NotAtEquilibrium";
        case ErrorCode::NotEnoughData: return "NotEnoughData";
        case ErrorCode::OrderExceedsRank: return "OrderExceedsRank";
        case ErrorCode::LogBranchAmbiguity: return "LogBranchAmbiguity";
        case ErrorCode::IllConditionedFit: return "IllConditionedFit";
        case ErrorCode::InputNotExciting: return "InputNotExciting";
        case ErrorCode::EvaluationAtPole: return "EvaluationAtPole";
        case ErrorCode::ImproperTransferFunction: return "ImproperTransferFunction";
        case ErrorCode::BandOutOfRange: return "BandOutOfRange";
    }
    return "Unknown";
}

/// Every failure raised by the library. what() reads "<Name>: <detail>".
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(error_name(code)) + (detail.empty() ? "" : ": " + detail)),
          code_(code) {}

    ErrorCode code() const noexcept { return code_; }

    /// Same error with a location prefix ("Ydq: ...") so channel failures can be traced.
    Error with_context(const std::string& context) const {
        std::string msg = what();
        auto colon = msg.find(": ");
        std::string detail = colon == std::string::npos ? std::string() : msg.substr(colon + 2);
        return Error(code_, context + (detail.empty() ? "" : ": " + detail));
    }

private:
    ErrorCode code_;
};

}  // namespace gfmid
