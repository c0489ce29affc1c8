#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hgmm {

enum class ErrorKind {
    NotSymmetric,
    IndefiniteMatrix,
    DimensionMismatch,
    EmptyMixture,
    SingularCovariance,
    InvalidArgument,
    InvalidSigma,
    QpInfeasible,
    MaxIterations,
    ModelEvaluationFailure,
    NoSuccessor,
    MissingSplit,
    DegenerateVariance,
    NonFiniteDensity,
    NoFrameMatch,
    ZeroLikelihood,
    ParseError,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::NotSymmetric: return "NotSymmetric";
    case ErrorKind::IndefiniteMatrix: return "IndefiniteMatrix";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::EmptyMixture: return "EmptyMixture";
    case ErrorKind::SingularCovariance: return "SingularCovariance";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::InvalidSigma: return "InvalidSigma";
    case ErrorKind::QpInfeasible: return "QpInfeasible";
    case ErrorKind::MaxIterations: return "MaxIterations";
    case ErrorKind::ModelEvaluationFailure: return "ModelEvaluationFailure";
    case ErrorKind::NoSuccessor: return "NoSuccessor";
    case ErrorKind::MissingSplit: return "MissingSplit";
    case ErrorKind::DegenerateVariance: return "DegenerateVariance";
    case ErrorKind::NonFiniteDensity: return "NonFiniteDensity";
    case ErrorKind::NoFrameMatch: return "NoFrameMatch";
    case ErrorKind::ZeroLikelihood: return "ZeroLikelihood";
    case ErrorKind::ParseError: return "ParseError";
    }
    return "Unknown";
}

/// Single exception type for the library; `kind()` tells callers what failed.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace hgmm
