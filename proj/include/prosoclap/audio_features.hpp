#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <span>
#include <string>

namespace prosoclap::audio {

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline const float kLogFloor = std::log(1e-5f);

struct FeatureConfig {
    int sample_rate = 22050;
    int frame_size = 1024;
    int hop = 256;
    int mel_bins = 80;
    double fmin = 0.0;
    double fmax = 0.0;  // 0 means Nyquist
    float log_floor = kLogFloor;
};

// F x T log-mel energies, row-major by mel bin.
struct MelSpectrogram {
    FeatureMatrix values;
    float sample_rate = 22050.0f;
    int hop = 256;

    int bins() const { return static_cast<int>(values.rows()); }
    int frames() const { return static_cast<int>(values.cols()); }
};

enum class TokenKind { Phoneme, Word };

struct TokenBoundary {
    TokenKind kind = TokenKind::Phoneme;
    std::string symbol;
    int start_frame = 0;
    int end_frame = 0;  // exclusive
};

// F x L slice of one token's speech, right-padded with the log floor.
struct SpeechSegment {
    FeatureMatrix values;
    int valid_frames = 0;
};

// Frames without centre padding: T = 1 + (len - frame) / hop.
int frame_count(std::size_t samples, int frame_size, int hop);

// HTK-scale triangular filters, shape (mel_bins x frame_size/2+1).
FeatureMatrix mel_filterbank(const FeatureConfig& config);

MelSpectrogram compute_mel(std::span<const float> waveform, int sample_rate, const FeatureConfig& config);

SpeechSegment clip_token_segment(const MelSpectrogram& mel, const TokenBoundary& boundary, int length,
                                 float floor = kLogFloor);

// `MEL1` cache: u32 F, u32 T, f32 sample_rate, u32 hop, then F*T float32 (little-endian).
void write_mel_cache(const MelSpectrogram& mel, const std::filesystem::path& path);
MelSpectrogram read_mel_cache(const std::filesystem::path& path);

}  // namespace prosoclap::audio
