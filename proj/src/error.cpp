#include "prosoclap/error.hpp"

namespace prosoclap {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::EmptyText: return "EmptyText";
        case ErrorCode::UnpronounceableWord: return "UnpronounceableWord";
        case ErrorCode::CorpusTooSmall: return "CorpusTooSmall";
        case ErrorCode::WaveformTooShort: return "WaveformTooShort";
        case ErrorCode::SampleRateMismatch: return "SampleRateMismatch";
        case ErrorCode::InvalidBoundary: return "InvalidBoundary";
        case ErrorCode::ManifestUnreadable: return "ManifestUnreadable";
        case ErrorCode::AllRowsInvalid: return "AllRowsInvalid";
        case ErrorCode::NoEligibleTokens: return "NoEligibleTokens";
        case ErrorCode::TokenNotIndexed: return "TokenNotIndexed";
        case ErrorCode::TokenDegenerate: return "TokenDegenerate";
        case ErrorCode::EmptySequence: return "EmptySequence";
        case ErrorCode::AlignmentGap: return "AlignmentGap";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::PositionOutOfRange: return "PositionOutOfRange";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::CountMismatch: return "CountMismatch";
        case ErrorCode::NonSquare: return "NonSquare";
        case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::TooFewContexts: return "TooFewContexts";
        case ErrorCode::ZeroVector: return "ZeroVector";
        case ErrorCode::TokenAbsent: return "TokenAbsent";
        case ErrorCode::MissingTargets: return "MissingTargets";
        case ErrorCode::SpecInvalid: return "SpecInvalid";
        case ErrorCode::ConfigInvalid: return "ConfigInvalid";
        case ErrorCode::CheckpointInvalid: return "CheckpointInvalid";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

}  // namespace prosoclap
