#pragma once

// One scale's text/prosody encoder pair with projection heads and the
// learnable log-temperature, plus the EncoderCheckpoint archive format.

#include "prosoclap/contrastive.hpp"
#include "prosoclap/corpus_index.hpp"
#include "prosoclap/prosody_encoder.hpp"
#include "prosoclap/text_encoder.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>

namespace prosoclap::model {

struct ModelConfig {
    TextEncoderConfig text;
    ProsodyEncoderConfig prosody;
    corpus::Scale scale = corpus::Scale::Phoneme;
    double temperature_init = 1.0 / 0.07;
    double temperature_max = 100.0;
};

class ClapModel {
public:
    ClapModel(const ModelConfig& config, text::TextFrontend frontend, std::uint64_t seed);
    ClapModel(const ClapModel&) = delete;
    ClapModel& operator=(const ClapModel&) = delete;

    // N x hidden pre-projection token encodings of the batch's selected tokens.
    Var token_encodings(const corpus::ContrastiveBatch& batch, std::mt19937_64* dropout_rng = nullptr) const;
    Var token_encoding(const text::TextItem& item, int position, std::mt19937_64* dropout_rng = nullptr) const;
    // N x C joint embeddings.
    Var text_embeddings(const corpus::ContrastiveBatch& batch, std::mt19937_64* dropout_rng = nullptr) const;
    Var speech_embeddings(const corpus::ContrastiveBatch& batch) const;
    Var speech_encodings(const corpus::ContrastiveBatch& batch) const;  // N x pool_hidden

    // exp(log_tau) as a differentiable scalar.
    Var temperature_var() const { return ag::exp(log_tau_); }
    double temperature() const { return std::exp(log_tau_.item()); }
    void clamp_temperature();

    const ModelConfig& config() const { return config_; }
    const text::TextFrontend& frontend() const { return frontend_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    const TextEncoder& text_encoder() const { return text_; }
    const ProsodyEncoder& prosody_encoder() const { return speech_; }
    const ProjectionHead& text_head() const { return text_head_; }
    const ProjectionHead& speech_head() const { return speech_head_; }

private:
    ModelConfig config_;
    text::TextFrontend frontend_;
    nn::ParamStore params_;
    TextEncoder text_;
    ProsodyEncoder speech_;
    ProjectionHead text_head_;
    ProjectionHead speech_head_;
    Var log_tau_;
};

// --- JSON (strict: unknown keys raise ConfigInvalid) ------------------------
nlohmann::json to_json(const TextEncoderConfig& c);
nlohmann::json to_json(const ProsodyEncoderConfig& c);
nlohmann::json to_json(const ModelConfig& c);
void from_json_strict(const nlohmann::json& j, TextEncoderConfig& c);
void from_json_strict(const nlohmann::json& j, ProsodyEncoderConfig& c);
void from_json_strict(const nlohmann::json& j, ModelConfig& c);

nlohmann::json frontend_to_json(const text::TextFrontend& f);
text::TextFrontend frontend_from_json(const nlohmann::json& j);

// Everything needed to resume training bit-exactly.
struct TrainingState {
    std::int64_t step = 0;
    nn::Adam optimizer;
    std::string sampler_rng;  // textual mt19937_64 state
    std::string dropout_rng;
};

// Archive layout (little-endian):
//   "PCK1", u32 version, string config_json,
//   u32 n_params, { string name, u32 ndim, u32 dims[ndim], f32 values[] },
//   u64 step, u32 n_moments, { string name, u32 rows, u32 cols, f64 m[], f64 v[] },
//   string sampler_rng, string dropout_rng
struct Checkpoint {
    nlohmann::json config;  // {"model": ..., "frontend": ..., "train": ...}
    std::unique_ptr<ClapModel> model;
    TrainingState state;
};

void save_checkpoint(const std::filesystem::path& path, const ClapModel& model, const TrainingState& state,
                     const nlohmann::json& extra_config = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Accepts either a checkpoint file or a run directory containing checkpoint.bin.
std::filesystem::path resolve_checkpoint(const std::filesystem::path& path_or_dir);

}  // namespace prosoclap::model
