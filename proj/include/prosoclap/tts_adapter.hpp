#pragma once

// Frozen multi-scale text encoders as a phoneme-level feature provider, and a
// small pitch/duration regression probe that measures what the features carry.

#include "prosoclap/corpus_index.hpp"
#include "prosoclap/model.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>

namespace prosoclap::adapter {

using ag::Matrix;
using ag::Var;

class FrozenFeatureProvider {
public:
    // `word` may be null (phoneme scale only).
    FrozenFeatureProvider(std::shared_ptr<const model::ClapModel> phoneme,
                          std::shared_ptr<const model::ClapModel> word = nullptr);
    static FrozenFeatureProvider load(const std::filesystem::path& phoneme_ckpt,
                                      const std::optional<std::filesystem::path>& word_ckpt = std::nullopt);

    // phonemes x hidden: phoneme-scale encoder output plus the word-scale
    // output pooled to words and expanded back over each word's phonemes.
    Matrix features(std::span<const std::string> words, std::span<const std::string> phonemes,
                    std::span<const int> ph2word) const;
    // `item` ids are interpreted in the phoneme-scale model's frontend.
    Matrix features(const text::TextItem& item) const;
    Matrix features(const corpus::Utterance& u) const { return features(u.words, u.phones, u.ph2word); }
    Matrix features_for_text(std::string_view text) const;
    // words x hidden
    Matrix word_features(const corpus::Utterance& u) const;

    int feature_dim() const;
    bool has_word_scale() const { return word_ != nullptr; }
    constexpr bool frozen() const { return true; }
    const text::TextFrontend& frontend() const { return phoneme_->frontend(); }
    // Combined parameter checksum of both encoders.
    std::uint64_t checksum() const;

private:
    std::shared_ptr<const model::ClapModel> phoneme_;
    std::shared_ptr<const model::ClapModel> word_;
};

struct ProbeConfig {
    int adapter_dim = 64;  // linear adapter from the encoder width
    int steps = 2000;
    int batch_words = 128;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    double heldout_fraction = 0.1;

    void validate() const;
};

nlohmann::json to_json(const ProbeConfig& c);
void from_json_strict(const nlohmann::json& j, ProbeConfig& c);

struct ProbeTargetStats {
    double pitch_mean = 0.0, pitch_std = 1.0;
    double dur_mean = 0.0, dur_std = 1.0;
};

// adapter (Linear) -> GELU -> Linear(2), predicting standardized (pitch, duration) per word.
struct Probe {
    ProbeConfig config;
    int feature_dim = 0;
    ProbeTargetStats stats;
    nn::ParamStore params;
    nn::Linear adapter;
    nn::Linear out;
    // Checkpoints the probe was trained on; probe-eval rebuilds the provider from these.
    std::string phoneme_ckpt;
    std::string word_ckpt;

    Probe() = default;
    Probe(const ProbeConfig& config, int feature_dim, std::mt19937_64& rng);
    Probe(Probe&&) = default;
    Probe& operator=(Probe&&) = default;

    // words x feature_dim -> words x 2 in target units (Hz, seconds).
    Matrix predict(const Matrix& word_features) const;
};

struct ProbeData {
    Matrix features;  // words x feature_dim
    Matrix targets;   // words x 2 (Hz, seconds)
};

// Word-pooled frozen features and targets for every word; throws MissingTargets.
ProbeData collect_probe_data(const FrozenFeatureProvider& provider, const corpus::Corpus& corpus);

struct ProbeHistory {
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

Probe probe_train(const FrozenFeatureProvider& provider, const corpus::Corpus& corpus, const ProbeConfig& config,
                  ProbeHistory* history = nullptr);
Probe probe_train(const ProbeData& data, const ProbeConfig& config, ProbeHistory* history = nullptr);

struct ProbeMetrics {
    double pitch_mae_hz = 0.0;
    double dur_mae_sec = 0.0;
    int words = 0;
};

ProbeMetrics probe_eval(const Probe& probe, const FrozenFeatureProvider& provider, const corpus::Corpus& corpus);
ProbeMetrics probe_eval(const Probe& probe, const ProbeData& data);

void save_probe(const Probe& probe, const std::filesystem::path& path);
Probe load_probe(const std::filesystem::path& path);

}  // namespace prosoclap::adapter
