#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace subspace_probe {

enum class ErrorKind {
    ZeroRow,
    ZeroVector,
    DimensionMismatch,
    EmptyMatrix,
    NonFinite,
    TooFewSamples,
    TooFewComponents,
    NonFiniteObjective,
    RankDeficient,
    ParseError,
    EmptyPool,
    PoolTooSmall,
    CountMismatch,
    NonUnitFeature,
    RoleMismatch,
    UnknownWord,
    AuditFailure,
    IoError,
    InvariantViolation,
    BadMagic,
    TruncatedPayload,
    HeaderParseError,
    NoSuchRole,
    MethodMismatch,
    ZeroVariance,
    MissingLabels,
    AllOneClass,
    InvalidArgument,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::ZeroRow: return "ZeroRow";
        case ErrorKind::ZeroVector: return "ZeroVector";
        case ErrorKind::DimensionMismatch: return "DimensionMismatch";
        case ErrorKind::EmptyMatrix: return "EmptyMatrix";
        case ErrorKind::NonFinite: return "NonFinite";
        case ErrorKind::TooFewSamples: return "TooFewSamples";
        case ErrorKind::TooFewComponents: return "TooFewComponents";
        case ErrorKind::NonFiniteObjective: return "NonFiniteObjective";
        case ErrorKind::RankDeficient: return "RankDeficient";
        case ErrorKind::ParseError: return "ParseError";
        case ErrorKind::EmptyPool: return "EmptyPool";
        case ErrorKind::PoolTooSmall: return "PoolTooSmall";
        case ErrorKind::CountMismatch: return "CountMismatch";
        case ErrorKind::NonUnitFeature: return "NonUnitFeature";
        case ErrorKind::RoleMismatch: return "RoleMismatch";
        case ErrorKind::UnknownWord: return "UnknownWord";
        case ErrorKind::AuditFailure: return "AuditFailure";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::InvariantViolation: return "InvariantViolation";
        case ErrorKind::BadMagic: return "BadMagic";
        case ErrorKind::TruncatedPayload: return "TruncatedPayload";
        case ErrorKind::HeaderParseError: return "HeaderParseError";
        case ErrorKind::NoSuchRole: return "NoSuchRole";
        case ErrorKind::MethodMismatch: return "MethodMismatch";
        case ErrorKind::ZeroVariance: return "ZeroVariance";
        case ErrorKind::MissingLabels: return "MissingLabels";
        case ErrorKind::AllOneClass: return "AllOneClass";
        case ErrorKind::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

// Every failure raised by the toolkit carries a machine-checkable kind.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

}  // namespace subspace_probe
