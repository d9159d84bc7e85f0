#include "prosoclap/prosody_encoder.hpp"

#include "prosoclap/error.hpp"

#include <cmath>

namespace prosoclap::model {

void ProsodyEncoderConfig::validate() const {
    if (residual_blocks < 1 || convs_per_block < 1 || hidden < 1 || kernel < 1 || pool_hidden < 1 ||
        pool_heads < 1 || segment_len < 1 || mel_bins < 1 || joint_dim < 1)
        throw Error(ErrorCode::ConfigInvalid, "prosody encoder counts must be >= 1");
    if (convs_per_block % 2 != 0)
        throw Error(ErrorCode::ConfigInvalid, "convs_per_block must be even (two-conv residual units)");
    if (pool_hidden % pool_heads != 0)
        throw Error(ErrorCode::ConfigInvalid, "pool_hidden must be divisible by pool_heads");
    if (kernel % 2 == 0) throw Error(ErrorCode::ConfigInvalid, "prosody conv kernel must be odd");
}

int ProsodyEncoderConfig::pooled_length() const {
    int t = segment_len;
    for (int s = 0; s < residual_blocks; ++s) t = (t + 1) / 2;
    return t;
}

ag::Matrix standardize_frames(const audio::FeatureMatrix& segment, double eps) {
    ag::Matrix x = segment.transpose().cast<double>();
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
        const double mean = x.row(t).mean();
        x.row(t).array() -= mean;
        x.row(t) /= std::sqrt(x.row(t).squaredNorm() / static_cast<double>(x.cols()) + eps);
    }
    return x;
}

Var ResidualUnit::operator()(const Var& x) const {
    Var h = conv1(ag::gelu(norm1(x)));
    h = conv2(ag::gelu(norm2(h)));
    return ag::add(h, shortcut ? (*shortcut)(x) : x);
}

ProsodyEncoder::ProsodyEncoder(const ProsodyEncoderConfig& config, nn::ParamStore& store, std::mt19937_64& rng,
                               const std::string& prefix)
    : config_(config) {
    config_.validate();
    const int h = config_.hidden;
    input_ = nn::Linear::create(store, prefix + ".input", config_.mel_bins, h, rng);
    for (int s = 0; s < config_.residual_blocks; ++s) {
        for (int u = 0; u < config_.convs_per_block / 2; ++u) {
            const std::string name = prefix + ".stage" + std::to_string(s) + ".unit" + std::to_string(u);
            const int stride = u == 0 ? 2 : 1;
            ResidualUnit unit;
            unit.norm1 = nn::LayerNorm::create(store, name + ".norm1", h);
            unit.conv1 = nn::Conv1d::create(store, name + ".conv1", h, h, config_.kernel, stride, rng);
            unit.norm2 = nn::LayerNorm::create(store, name + ".norm2", h);
            unit.conv2 = nn::Conv1d::create(store, name + ".conv2", h, h, config_.kernel, 1, rng);
            if (stride != 1) unit.shortcut = nn::Conv1d::create(store, name + ".shortcut", h, h, 1, stride, rng);
            units_.push_back(std::move(unit));
        }
    }
    output_norm_ = nn::LayerNorm::create(store, prefix + ".output_norm", h);
    positions_ = store.add(prefix + ".pool.positions", nn::normal_init(config_.pooled_length(), h, 0.02, rng));
    query_ = store.add(prefix + ".pool.query", nn::normal_init(1, h, 1.0, rng));
    pool_ = nn::MultiHeadAttention::create(store, prefix + ".pool.attn", h, h, config_.pool_hidden, config_.pool_heads,
                                           rng);
}

Var ProsodyEncoder::forward(const audio::FeatureMatrix& segment) const {
    if (segment.rows() != config_.mel_bins || segment.cols() != config_.segment_len)
        throw Error(ErrorCode::ShapeMismatch, "segment is " + std::to_string(segment.rows()) + "x" +
                                                  std::to_string(segment.cols()) + ", expected " +
                                                  std::to_string(config_.mel_bins) + "x" +
                                                  std::to_string(config_.segment_len));
    Var h = input_(Var(standardize_frames(segment)));
    for (const auto& unit : units_) h = unit(h);
    h = ag::add(output_norm_(h), positions_);
    return pool_(query_, h);
}

}  // namespace prosoclap::model
