#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace prosoclap {

enum class ErrorCode {
    EmptyText,
    UnpronounceableWord,
    CorpusTooSmall,
    WaveformTooShort,
    SampleRateMismatch,
    InvalidBoundary,
    ManifestUnreadable,
    AllRowsInvalid,
    NoEligibleTokens,
    TokenNotIndexed,
    TokenDegenerate,
    EmptySequence,
    AlignmentGap,
    IndexOutOfRange,
    PositionOutOfRange,
    ShapeMismatch,
    CountMismatch,
    NonSquare,
    NonPositiveTemperature,
    NonFiniteLoss,
    TooFewContexts,
    ZeroVector,
    TokenAbsent,
    MissingTargets,
    SpecInvalid,
    ConfigInvalid,
    CheckpointInvalid,
    Io,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace prosoclap
