#pragma once

// 1-D residual conv network over a token's mel segment, aggregated by a
// single learned query attending over the downsampled time steps.

#include "prosoclap/audio_features.hpp"
#include "prosoclap/nn.hpp"

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace prosoclap::model {

using ag::Var;

struct ProsodyEncoderConfig {
    int residual_blocks = 4;
    int convs_per_block = 12;
    int hidden = 192;
    int kernel = 3;
    int pool_hidden = 768;
    int pool_heads = 4;
    int segment_len = 128;
    int mel_bins = 80;
    int joint_dim = 192;

    void validate() const;
    // Time steps left after the stride-2 entry of every stage.
    int pooled_length() const;
};

// Per-frame zero mean, unit variance over mel bins. Parameter free, so constant
// pad frames become zero rows without putting a degenerate LayerNorm in the graph.
ag::Matrix standardize_frames(const audio::FeatureMatrix& segment, double eps = 1e-5);

struct ResidualUnit {
    nn::LayerNorm norm1;
    nn::Conv1d conv1;
    nn::LayerNorm norm2;
    nn::Conv1d conv2;
    std::optional<nn::Conv1d> shortcut;  // strided 1x1 when downsampling

    Var operator()(const Var& x) const;
};

class ProsodyEncoder {
public:
    ProsodyEncoder() = default;
    ProsodyEncoder(const ProsodyEncoderConfig& config, nn::ParamStore& store, std::mt19937_64& rng,
                   const std::string& prefix = "speech");

    // F x L segment -> 1 x pool_hidden global encoding.
    Var forward(const audio::FeatureMatrix& segment) const;

    const ProsodyEncoderConfig& config() const { return config_; }

private:
    ProsodyEncoderConfig config_;
    nn::Linear input_;
    std::vector<ResidualUnit> units_;
    nn::LayerNorm output_norm_;
    Var positions_;  // pooled_length x hidden
    Var query_;      // 1 x hidden
    nn::MultiHeadAttention pool_;
};

}  // namespace prosoclap::model
