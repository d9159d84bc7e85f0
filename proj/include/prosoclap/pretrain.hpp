#pragma once

// Contrastive pre-training loop for one scale: batch sampling, symmetric
// cross-entropy, Adam with warmup + cosine decay, checkpoints and metrics.

#include "prosoclap/corpus_index.hpp"
#include "prosoclap/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace prosoclap::pretrain {

struct TrainConfig {
    int batch_size = 8;  // N
    double lr = 5e-4;
    std::int64_t total_steps = 2000;
    std::int64_t warmup_steps = 500;
    std::int64_t checkpoint_every = 500;
    std::uint64_t seed = 1234;
    int min_occurrences = 2;
    bool occurrence_weighted = false;
    double heldout_fraction = 0.1;
    int eval_batches = 100;
    int bpe_vocab_size = 1000;

    void validate() const;
};

// Top-level JSON document: {"model": {...}, "train": {...}, ...}.
struct RunConfig {
    model::ModelConfig model;
    TrainConfig train;
    nlohmann::json extra = nlohmann::json::object();  // other modules' sections, validated by their owners
};

nlohmann::json to_json(const TrainConfig& c);
void from_json_strict(const nlohmann::json& j, TrainConfig& c);
// Known top-level sections: model, train, analysis, probe. Anything else is rejected.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Linear warmup to `lr` over warmup_steps, then cosine decay to zero at total_steps.
double learning_rate(std::int64_t step, const TrainConfig& config);

struct StepMetrics {
    std::int64_t step = 0;
    double loss = 0.0;
    double acc_t2s = 0.0;
    double acc_s2t = 0.0;
    double tau = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
    double duplication_rate = 0.0;
};

nlohmann::json to_json(const StepMetrics& m);  // {step, loss, acc_t2s, acc_s2t, tau, lr}

struct RetrievalMetrics {
    double top1_text_to_speech = 0.0;
    double top1_speech_to_text = 0.0;
    int batches = 0;
};

class Trainer {
public:
    // Fresh model initialised from config.train.seed.
    Trainer(const RunConfig& config, text::TextFrontend frontend);
    // Resume from a loaded checkpoint.
    Trainer(const RunConfig& config, model::Checkpoint checkpoint);

    // Forward both encoders, symmetric CE, backward, Adam update, clamp tau.
    StepMetrics train_step(const corpus::ContrastiveBatch& batch);
    // Samples the next batch with the trainer's own rng, then train_step.
    StepMetrics step(const corpus::TokenIndex& index, const corpus::Corpus& corpus);

    model::ClapModel& model() { return *model_; }
    const model::ClapModel& model() const { return *model_; }
    std::int64_t current_step() const { return state_step_; }
    const RunConfig& config() const { return config_; }

    void save(const std::filesystem::path& path) const;
    corpus::SamplerOptions sampler_options() const;

private:
    RunConfig config_;
    std::unique_ptr<model::ClapModel> model_;
    nn::Adam optimizer_;
    std::mt19937_64 sampler_rng_;
    std::mt19937_64 dropout_rng_;
    std::int64_t state_step_ = 0;
};

// Retrieval accuracy over held-out batches (no dropout, no gradients).
RetrievalMetrics evaluate_retrieval(const model::ClapModel& model, const std::vector<corpus::ContrastiveBatch>& batches);

// Fixed evaluation set drawn with its own seed.
std::vector<corpus::ContrastiveBatch> sample_eval_batches(const corpus::TokenIndex& index, const corpus::Corpus& corpus,
                                                         const corpus::SamplerOptions& options, int count,
                                                         std::uint64_t seed);

struct RunOptions {
    std::filesystem::path out_dir;
    bool resume = false;
    // Called after every step (e.g. progress output); may be empty.
    std::function<void(const StepMetrics&)> on_step;
};

struct RunResult {
    std::vector<StepMetrics> history;  // steps executed in this invocation
    std::filesystem::path checkpoint;
};

// Runs config.train.total_steps steps (continuing from a checkpoint in out_dir when resume is set).
// Writes out_dir/metrics.jsonl and out_dir/checkpoint.bin (also every checkpoint_every steps).
// `frontend` must be the one whose text items are attached to `train_corpus`.
RunResult run_pretraining(const RunConfig& config, const text::TextFrontend& frontend,
                          const corpus::Corpus& train_corpus, const corpus::TokenIndex& index,
                          const RunOptions& options);

}  // namespace prosoclap::pretrain
