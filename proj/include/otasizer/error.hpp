#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace otasizer {

enum class Errc {
    SyntaxError,
    DuplicateElement,
    UnknownElement,
    MissingField,
    MissingBias,
    InvalidElement,
    DuplicateParameter,
    BiasOutOfRange,
    NonFiniteValue,
    EmptyExpr,
    UnboundParameter,
    DivisionNearZero,
    FloatingNode,
    NoExcitation,
    PathExplosion,
    DegenerateDelta,
    SingularMatrix,
    OutOfRange,
    OutOfHull,
    TargetOutOfRange,
    UnknownCharacter,
    UnknownTokenId,
    ShapeMismatch,
    SequenceTooLong,
    NonFiniteLoss,
    MalformedOutput,
    EmptyDataset,
    GmIdOutOfRange,
    BadFormat,
    Usage,
};

constexpr std::string_view errc_name(Errc e) {
    switch (e) {
    case Errc::SyntaxError: return "SyntaxError";
    case Errc::DuplicateElement: return "DuplicateElement";
    case Errc::UnknownElement: return "UnknownElement";
    case Errc::MissingField: return "MissingField";
    case Errc::MissingBias: return "MissingBias";
    case Errc::InvalidElement: return "InvalidElement";
    case Errc::DuplicateParameter: return "DuplicateParameter";
    case Errc::BiasOutOfRange: return "BiasOutOfRange";
    case Errc::NonFiniteValue: return "NonFiniteValue";
    case Errc::EmptyExpr: return "EmptyExpr";
    case Errc::UnboundParameter: return "UnboundParameter";
    case Errc::DivisionNearZero: return "DivisionNearZero";
    case Errc::FloatingNode: return "FloatingNode";
    case Errc::NoExcitation: return "NoExcitation";
    case Errc::PathExplosion: return "PathExplosion";
    case Errc::DegenerateDelta: return "DegenerateDelta";
    case Errc::SingularMatrix: return "SingularMatrix";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::OutOfHull: return "OutOfHull";
    case Errc::TargetOutOfRange: return "TargetOutOfRange";
    case Errc::UnknownCharacter: return "UnknownCharacter";
    case Errc::UnknownTokenId: return "UnknownTokenId";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::SequenceTooLong: return "SequenceTooLong";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::MalformedOutput: return "MalformedOutput";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::GmIdOutOfRange: return "GmIdOutOfRange";
    case Errc::BadFormat: return "BadFormat";
    case Errc::Usage: return "Usage";
    }
    return "Unknown";
}

/// Domain error carrying a machine-checkable kind.
class Error : public std::runtime_error {
public:
    Error(Errc kind, const std::string& what)
        : std::runtime_error(std::string(errc_name(kind)) + ": " + what), kind_(kind) {}

    Errc kind() const noexcept { return kind_; }

private:
    Errc kind_;
};

} // namespace otasizer
