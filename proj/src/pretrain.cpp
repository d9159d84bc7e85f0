#include "prosoclap/pretrain.hpp"

#include "prosoclap/error.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace prosoclap::pretrain {

using nlohmann::json;

void TrainConfig::validate() const {
    if (batch_size < 2) throw Error(ErrorCode::ConfigInvalid, "batch_size (N) must be >= 2");
    if (!(lr > 0.0)) throw Error(ErrorCode::ConfigInvalid, "lr must be positive");
    if (total_steps < 0 || warmup_steps < 0) throw Error(ErrorCode::ConfigInvalid, "step counts must be >= 0");
    if (checkpoint_every < 1) throw Error(ErrorCode::ConfigInvalid, "checkpoint_every must be >= 1");
    if (min_occurrences < 2) throw Error(ErrorCode::ConfigInvalid, "min_occurrences must be >= 2");
    if (heldout_fraction < 0.0 || heldout_fraction >= 1.0)
        throw Error(ErrorCode::ConfigInvalid, "heldout_fraction must be in [0, 1)");
    if (eval_batches < 0) throw Error(ErrorCode::ConfigInvalid, "eval_batches must be >= 0");
}

json to_json(const TrainConfig& c) {
    return {{"batch_size", c.batch_size},
            {"lr", c.lr},
            {"total_steps", c.total_steps},
            {"warmup_steps", c.warmup_steps},
            {"checkpoint_every", c.checkpoint_every},
            {"seed", c.seed},
            {"min_occurrences", c.min_occurrences},
            {"occurrence_weighted", c.occurrence_weighted},
            {"heldout_fraction", c.heldout_fraction},
            {"eval_batches", c.eval_batches},
            {"bpe_vocab_size", c.bpe_vocab_size}};
}

void from_json_strict(const json& j, TrainConfig& c) {
    if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "train must be an object");
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "batch_size") c.batch_size = value.get<int>();
            else if (key == "lr") c.lr = value.get<double>();
            else if (key == "total_steps") c.total_steps = value.get<std::int64_t>();
            else if (key == "warmup_steps") c.warmup_steps = value.get<std::int64_t>();
            else if (key == "checkpoint_every") c.checkpoint_every = value.get<std::int64_t>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "min_occurrences") c.min_occurrences = value.get<int>();
            else if (key == "occurrence_weighted") c.occurrence_weighted = value.get<bool>();
            else if (key == "heldout_fraction") c.heldout_fraction = value.get<double>();
            else if (key == "eval_batches") c.eval_batches = value.get<int>();
            else if (key == "bpe_vocab_size") c.bpe_vocab_size = value.get<int>();
            else throw Error(ErrorCode::ConfigInvalid, "unknown key '" + key + "' in train");
        } catch (const json::exception& e) {
            throw Error(ErrorCode::ConfigInvalid, "bad value for '" + key + "': " + e.what());
        }
    }
    c.validate();
}

RunConfig parse_run_config(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "config must be a JSON object");
    RunConfig rc;
    for (const auto& [key, value] : j.items()) {
        if (key == "model") model::from_json_strict(value, rc.model);
        else if (key == "train") from_json_strict(value, rc.train);
        else if (key == "analysis" || key == "probe") rc.extra[key] = value;
        else throw Error(ErrorCode::ConfigInvalid, "unknown top-level key '" + key + "'");
    }
    return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigInvalid, "cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigInvalid, path.string() + ": " + e.what());
    }
    return parse_run_config(j);
}

double learning_rate(std::int64_t step, const TrainConfig& c) {
    if (step < c.warmup_steps) return c.lr * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
    const auto decay_steps = std::max<std::int64_t>(1, c.total_steps - c.warmup_steps);
    const double progress = std::min(1.0, static_cast<double>(step - c.warmup_steps) / static_cast<double>(decay_steps));
    return c.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

json to_json(const StepMetrics& m) {
    return {{"step", m.step}, {"loss", m.loss}, {"acc_t2s", m.acc_t2s},
            {"acc_s2t", m.acc_s2t}, {"tau", m.tau}, {"lr", m.lr}};
}

namespace {

std::string rng_state(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void restore_rng(std::mt19937_64& rng, const std::string& state) {
    std::istringstream is(state);
    is >> rng;
    if (!is) throw Error(ErrorCode::CheckpointInvalid, "corrupt rng state");
}

}  // namespace

Trainer::Trainer(const RunConfig& config, text::TextFrontend frontend)
    : config_(config),
      model_(std::make_unique<model::ClapModel>(config.model, std::move(frontend), config.train.seed)),
      sampler_rng_(config.train.seed ^ 0x5a17c0ffee5eedULL),
      dropout_rng_(config.train.seed ^ 0xd50f0a7ULL) {
    config_.train.validate();
}

Trainer::Trainer(const RunConfig& config, model::Checkpoint checkpoint)
    : config_(config), model_(std::move(checkpoint.model)), optimizer_(std::move(checkpoint.state.optimizer)) {
    config_.train.validate();
    state_step_ = checkpoint.state.step;
    restore_rng(sampler_rng_, checkpoint.state.sampler_rng);
    restore_rng(dropout_rng_, checkpoint.state.dropout_rng);
}

corpus::SamplerOptions Trainer::sampler_options() const {
    corpus::SamplerOptions o;
    o.batch_size = config_.train.batch_size;
    o.segment_length = config_.model.prosody.segment_len;
    o.occurrence_weighted = config_.train.occurrence_weighted;
    return o;
}

StepMetrics Trainer::train_step(const corpus::ContrastiveBatch& batch) {
    auto& m = *model_;
    m.params().zero_grad();
    ag::Var text = m.text_embeddings(batch, &dropout_rng_);
    ag::Var speech = m.speech_embeddings(batch);
    ag::Var similarity = ag::matmul_nt(text, speech);
    ag::Var loss = contrastive::clip_loss(similarity, m.temperature_var());
    if (!std::isfinite(loss.item()))
        throw Error(ErrorCode::NonFiniteLoss, "step " + std::to_string(state_step_) + " token '" +
                                                  batch.token_symbol + "'");
    loss.backward();

    double sq = 0.0;
    for (const auto& [name, p] : m.params().entries())
        if (p.has_grad()) sq += p.grad().squaredNorm();

    StepMetrics out;
    out.step = state_step_ + 1;
    out.loss = loss.item();
    out.lr = learning_rate(state_step_, config_.train);
    out.grad_norm = std::sqrt(sq);
    out.duplication_rate = batch.duplication_rate();
    const auto hits = contrastive::retrieval_hits(similarity.value());
    out.acc_t2s = static_cast<double>(hits.text_to_speech) / hits.total;
    out.acc_s2t = static_cast<double>(hits.speech_to_text) / hits.total;

    optimizer_.step(m.params(), out.lr);
    m.clamp_temperature();
    m.params().round_to_float();
    m.params().zero_grad();
    out.tau = m.temperature();
    ++state_step_;
    return out;
}

StepMetrics Trainer::step(const corpus::TokenIndex& index, const corpus::Corpus& corpus) {
    auto batch = corpus::sample_contrastive_batch(index, corpus, sampler_options(), sampler_rng_);
    return train_step(batch);
}

void Trainer::save(const std::filesystem::path& path) const {
    model::TrainingState state;
    state.step = state_step_;
    state.optimizer = optimizer_;
    state.sampler_rng = rng_state(sampler_rng_);
    state.dropout_rng = rng_state(dropout_rng_);
    json extra = {{"train", to_json(config_.train)}};
    model::save_checkpoint(path, *model_, state, extra);
}

RetrievalMetrics evaluate_retrieval(const model::ClapModel& model, const std::vector<corpus::ContrastiveBatch>& batches) {
    ag::NoGradGuard no_grad;
    RetrievalMetrics r;
    long hits_t2s = 0, hits_s2t = 0, total = 0;
    for (const auto& batch : batches) {
        const auto sim = ag::matmul_nt(model.text_embeddings(batch), model.speech_embeddings(batch)).value();
        const auto hits = contrastive::retrieval_hits(sim);
        hits_t2s += hits.text_to_speech;
        hits_s2t += hits.speech_to_text;
        total += hits.total;
    }
    r.batches = static_cast<int>(batches.size());
    if (total > 0) {
        r.top1_text_to_speech = static_cast<double>(hits_t2s) / static_cast<double>(total);
        r.top1_speech_to_text = static_cast<double>(hits_s2t) / static_cast<double>(total);
    }
    return r;
}

std::vector<corpus::ContrastiveBatch> sample_eval_batches(const corpus::TokenIndex& index, const corpus::Corpus& corpus,
                                                         const corpus::SamplerOptions& options, int count,
                                                         std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<corpus::ContrastiveBatch> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(corpus::sample_contrastive_batch(index, corpus, options, rng));
    return out;
}

namespace {

// Drops metrics lines past `step` (left over from a run that died after its last checkpoint).
void truncate_metrics(const std::filesystem::path& path, std::int64_t step) {
    std::ifstream in(path);
    if (!in) return;
    std::vector<std::string> kept;
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        if (json::parse(line).at("step").get<std::int64_t>() <= step) kept.push_back(line);
    }
    in.close();
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : kept) out << l << '\n';
}

}  // namespace

RunResult run_pretraining(const RunConfig& config, const text::TextFrontend& frontend,
                          const corpus::Corpus& train_corpus, const corpus::TokenIndex& index,
                          const RunOptions& options) {
    if (index.scale != config.model.scale)
        throw Error(ErrorCode::ConfigInvalid, "index scale differs from model scale");
    std::filesystem::create_directories(options.out_dir);
    const auto ckpt_path = options.out_dir / "checkpoint.bin";
    const auto metrics_path = options.out_dir / "metrics.jsonl";

    std::unique_ptr<Trainer> trainer;
    if (options.resume && std::filesystem::exists(ckpt_path)) {
        trainer = std::make_unique<Trainer>(config, model::load_checkpoint(ckpt_path));
        truncate_metrics(metrics_path, trainer->current_step());
    } else {
        if (train_corpus.empty()) throw Error(ErrorCode::ConfigInvalid, "empty training corpus");
        trainer = std::make_unique<Trainer>(config, frontend);
        std::ofstream(metrics_path, std::ios::trunc);
    }

    RunResult result;
    std::ofstream metrics(metrics_path, std::ios::app);
    while (trainer->current_step() < config.train.total_steps) {
        auto m = trainer->step(index, train_corpus);
        metrics << to_json(m).dump() << '\n';
        metrics.flush();
        result.history.push_back(m);
        if (options.on_step) options.on_step(m);
        if (trainer->current_step() % config.train.checkpoint_every == 0 &&
            trainer->current_step() < config.train.total_steps)
            trainer->save(ckpt_path);
    }
    trainer->save(ckpt_path);
    result.checkpoint = ckpt_path;
    return result;
}

}  // namespace prosoclap::pretrain
