#include "prosoclap/audio_features.hpp"

#include "prosoclap/binary_io.hpp"
#include "prosoclap/error.hpp"

#include <fftw3.h>

#include <algorithm>
#include <fstream>
#include <memory>
#include <numbers>
#include <vector>

namespace prosoclap::audio {

int frame_count(std::size_t samples, int frame_size, int hop) {
    if (samples < static_cast<std::size_t>(frame_size)) return 0;
    return 1 + static_cast<int>((samples - static_cast<std::size_t>(frame_size)) / static_cast<std::size_t>(hop));
}

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct FftwPlanDeleter {
    void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};

}  // namespace

FeatureMatrix mel_filterbank(const FeatureConfig& config) {
    const int bins = config.frame_size / 2 + 1;
    const double fmax = config.fmax > 0.0 ? config.fmax : config.sample_rate / 2.0;
    const double mel_lo = hz_to_mel(config.fmin);
    const double mel_hi = hz_to_mel(fmax);
    std::vector<double> edges(static_cast<std::size_t>(config.mel_bins) + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / (config.mel_bins + 1));

    FeatureMatrix fb = FeatureMatrix::Zero(config.mel_bins, bins);
    for (int m = 0; m < config.mel_bins; ++m) {
        const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
        for (int k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * config.sample_rate / config.frame_size;
            double w = 0.0;
            if (f > left && f <= centre) w = (f - left) / (centre - left);
            else if (f > centre && f < right) w = (right - f) / (right - centre);
            fb(m, k) = static_cast<float>(w);
        }
    }
    return fb;
}

MelSpectrogram compute_mel(std::span<const float> waveform, int sample_rate, const FeatureConfig& config) {
    if (sample_rate != config.sample_rate)
        throw Error(ErrorCode::SampleRateMismatch,
                    std::to_string(sample_rate) + " != " + std::to_string(config.sample_rate));
    const int frames = frame_count(waveform.size(), config.frame_size, config.hop);
    if (frames < 1)
        throw Error(ErrorCode::WaveformTooShort,
                    std::to_string(waveform.size()) + " samples < frame " + std::to_string(config.frame_size));

    const int n = config.frame_size;
    const int bins = n / 2 + 1;
    std::vector<double> window(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);  // periodic Hann

    double* in = fftw_alloc_real(static_cast<std::size_t>(n));
    fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(bins));
    std::unique_ptr<fftw_plan_s, FftwPlanDeleter> plan(fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE));

    const FeatureMatrix fb = mel_filterbank(config);
    Eigen::VectorXf magnitude(bins);
    MelSpectrogram mel;
    mel.sample_rate = static_cast<float>(sample_rate);
    mel.hop = config.hop;
    mel.values.resize(config.mel_bins, frames);
    for (int t = 0; t < frames; ++t) {
        const std::size_t offset = static_cast<std::size_t>(t) * static_cast<std::size_t>(config.hop);
        for (int i = 0; i < n; ++i) in[i] = waveform[offset + static_cast<std::size_t>(i)] * window[i];
        fftw_execute(plan.get());
        for (int k = 0; k < bins; ++k)
            magnitude(k) = static_cast<float>(std::sqrt(out[k][0] * out[k][0] + out[k][1] * out[k][1]));
        Eigen::VectorXf energies = fb * magnitude;
        for (int m = 0; m < config.mel_bins; ++m)
            mel.values(m, t) = std::max(config.log_floor, std::log(std::max(energies(m), 0.0f) + 1e-30f));
    }
    plan.reset();
    fftw_free(in);
    fftw_free(out);
    return mel;
}

SpeechSegment clip_token_segment(const MelSpectrogram& mel, const TokenBoundary& b, int length, float floor) {
    if (length < 1) throw Error(ErrorCode::ShapeMismatch, "segment length must be positive");
    if (b.start_frame < 0 || b.start_frame >= b.end_frame || b.end_frame > mel.frames())
        throw Error(ErrorCode::InvalidBoundary, "[" + std::to_string(b.start_frame) + ", " +
                                                    std::to_string(b.end_frame) + ") against " +
                                                    std::to_string(mel.frames()) + " frames");
    const int span = b.end_frame - b.start_frame;
    SpeechSegment seg;
    seg.values = FeatureMatrix::Constant(mel.bins(), length, floor);
    if (span <= length) {
        seg.values.leftCols(span) = mel.values.middleCols(b.start_frame, span);
        seg.valid_frames = span;
    } else {
        const int start = b.start_frame + (span - length) / 2;
        seg.values = mel.values.middleCols(start, length);
        seg.valid_frames = length;
    }
    return seg;
}

void write_mel_cache(const MelSpectrogram& mel, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    io::write_magic(out, "MEL1");
    io::write_u32(out, static_cast<std::uint32_t>(mel.bins()));
    io::write_u32(out, static_cast<std::uint32_t>(mel.frames()));
    io::write_f32(out, mel.sample_rate);
    io::write_u32(out, static_cast<std::uint32_t>(mel.hop));
    io::write_f32_array(out, std::span<const float>(mel.values.data(), static_cast<std::size_t>(mel.values.size())));
    if (!out) throw Error(ErrorCode::Io, "short write " + path.string());
}

MelSpectrogram read_mel_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    io::expect_magic(in, "MEL1");
    const auto bins = io::read_u32(in);
    const auto frames = io::read_u32(in);
    MelSpectrogram mel;
    mel.sample_rate = io::read_f32(in);
    mel.hop = static_cast<int>(io::read_u32(in));
    if (bins == 0 || frames == 0) throw Error(ErrorCode::Io, "empty mel cache " + path.string());
    mel.values.resize(bins, frames);
    io::read_f32_array(in, std::span<float>(mel.values.data(), static_cast<std::size_t>(mel.values.size())));
    return mel;
}

}  // namespace prosoclap::audio
