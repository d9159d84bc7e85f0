#include "prosoclap/model.hpp"

#include "prosoclap/binary_io.hpp"
#include "prosoclap/error.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace prosoclap::model {

using nlohmann::json;

ClapModel::ClapModel(const ModelConfig& config, text::TextFrontend frontend, std::uint64_t seed)
    : config_(config), frontend_(std::move(frontend)) {
    if (config_.text.joint_dim != config_.prosody.joint_dim)
        throw Error(ErrorCode::ConfigInvalid, "text and prosody joint_dim differ");
    if (!(config_.temperature_init > 0.0) || config_.temperature_max < config_.temperature_init)
        throw Error(ErrorCode::ConfigInvalid, "temperature_init must be in (0, temperature_max]");
    std::mt19937_64 rng(seed);
    text_ = TextEncoder(config_.text, frontend_.phoneme_vocab().size(), frontend_.bpe().vocab().size(), params_, rng);
    speech_ = ProsodyEncoder(config_.prosody, params_, rng);
    text_head_ = ProjectionHead::create(params_, "text_proj", config_.text.hidden, config_.text.joint_dim, rng);
    speech_head_ =
        ProjectionHead::create(params_, "speech_proj", config_.prosody.pool_hidden, config_.prosody.joint_dim, rng);
    log_tau_ = params_.add("log_tau", ag::Matrix::Constant(1, 1, std::log(config_.temperature_init)));
    params_.round_to_float();
}

Var ClapModel::token_encoding(const text::TextItem& item, int position, std::mt19937_64* dropout_rng) const {
    return select_token_encoding(text_.forward(item, dropout_rng), item, config_.scale, position);
}

Var ClapModel::token_encodings(const corpus::ContrastiveBatch& batch, std::mt19937_64* dropout_rng) const {
    if (batch.scale != config_.scale) throw Error(ErrorCode::ConfigInvalid, "batch scale differs from model scale");
    std::vector<Var> rows;
    rows.reserve(batch.items.size());
    for (const auto& item : batch.items) rows.push_back(token_encoding(item.text, item.token_position, dropout_rng));
    return ag::vcat(rows);
}

Var ClapModel::text_embeddings(const corpus::ContrastiveBatch& batch, std::mt19937_64* dropout_rng) const {
    return text_head_(token_encodings(batch, dropout_rng));
}

Var ClapModel::speech_encodings(const corpus::ContrastiveBatch& batch) const {
    std::vector<Var> rows;
    rows.reserve(batch.items.size());
    for (const auto& item : batch.items) rows.push_back(speech_.forward(item.speech.values));
    return ag::vcat(rows);
}

Var ClapModel::speech_embeddings(const corpus::ContrastiveBatch& batch) const {
    return speech_head_(speech_encodings(batch));
}

void ClapModel::clamp_temperature() {
    auto& v = log_tau_.mutable_value();
    v(0, 0) = std::min(v(0, 0), std::log(config_.temperature_max));
}

// --- JSON --------------------------------------------------------------------

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out, std::set<std::string>& seen) {
    if (!j.contains(key)) return;
    seen.insert(key);
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigInvalid, std::string("bad value for '") + key + "': " + e.what());
    }
}

void reject_unknown(const json& j, const std::set<std::string>& seen, const char* section) {
    if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, std::string(section) + " must be an object");
    for (const auto& [key, value] : j.items())
        if (!seen.count(key)) throw Error(ErrorCode::ConfigInvalid, std::string("unknown key '") + key + "' in " + section);
}

}  // namespace

json to_json(const TextEncoderConfig& c) {
    return {{"hidden", c.hidden},       {"ffn", c.ffn},
            {"kernel", c.kernel},       {"blocks_per_stack", c.blocks_per_stack},
            {"fusion_blocks", c.fusion_blocks}, {"heads", c.heads},
            {"dropout", c.dropout},     {"joint_dim", c.joint_dim},
            {"no_bpe", c.no_bpe}};
}

json to_json(const ProsodyEncoderConfig& c) {
    return {{"residual_blocks", c.residual_blocks}, {"convs_per_block", c.convs_per_block},
            {"hidden", c.hidden},                   {"kernel", c.kernel},
            {"pool_hidden", c.pool_hidden},         {"pool_heads", c.pool_heads},
            {"segment_len", c.segment_len},         {"mel_bins", c.mel_bins},
            {"joint_dim", c.joint_dim}};
}

json to_json(const ModelConfig& c) {
    return {{"text_encoder", to_json(c.text)},
            {"prosody_encoder", to_json(c.prosody)},
            {"scale", corpus::to_string(c.scale)},
            {"temperature_init", c.temperature_init},
            {"temperature_max", c.temperature_max}};
}

void from_json_strict(const json& j, TextEncoderConfig& c) {
    std::set<std::string> seen;
    read_field(j, "hidden", c.hidden, seen);
    read_field(j, "ffn", c.ffn, seen);
    read_field(j, "kernel", c.kernel, seen);
    read_field(j, "blocks_per_stack", c.blocks_per_stack, seen);
    read_field(j, "fusion_blocks", c.fusion_blocks, seen);
    read_field(j, "heads", c.heads, seen);
    read_field(j, "dropout", c.dropout, seen);
    read_field(j, "joint_dim", c.joint_dim, seen);
    read_field(j, "no_bpe", c.no_bpe, seen);
    reject_unknown(j, seen, "text_encoder");
    c.validate();
}

void from_json_strict(const json& j, ProsodyEncoderConfig& c) {
    std::set<std::string> seen;
    read_field(j, "residual_blocks", c.residual_blocks, seen);
    read_field(j, "convs_per_block", c.convs_per_block, seen);
    read_field(j, "hidden", c.hidden, seen);
    read_field(j, "kernel", c.kernel, seen);
    read_field(j, "pool_hidden", c.pool_hidden, seen);
    read_field(j, "pool_heads", c.pool_heads, seen);
    read_field(j, "segment_len", c.segment_len, seen);
    read_field(j, "mel_bins", c.mel_bins, seen);
    read_field(j, "joint_dim", c.joint_dim, seen);
    reject_unknown(j, seen, "prosody_encoder");
    c.validate();
}

void from_json_strict(const json& j, ModelConfig& c) {
    std::set<std::string> seen;
    if (j.contains("text_encoder")) {
        seen.insert("text_encoder");
        from_json_strict(j.at("text_encoder"), c.text);
    }
    if (j.contains("prosody_encoder")) {
        seen.insert("prosody_encoder");
        from_json_strict(j.at("prosody_encoder"), c.prosody);
    }
    std::string scale = corpus::to_string(c.scale);
    read_field(j, "scale", scale, seen);
    c.scale = corpus::parse_scale(scale);
    read_field(j, "temperature_init", c.temperature_init, seen);
    read_field(j, "temperature_max", c.temperature_max, seen);
    reject_unknown(j, seen, "model");
}

json frontend_to_json(const text::TextFrontend& f) {
    json merges = json::array();
    for (const auto& [l, r] : f.bpe().table().merges) merges.push_back({l, r});
    json lexicon = json::object();
    for (const auto& [word, phones] : f.lexicon()) lexicon[word] = phones;
    return {{"phonemes", f.phoneme_vocab().symbols()},
            {"merges", std::move(merges)},
            {"merges_too_small", f.bpe().table().too_small},
            {"lexicon", std::move(lexicon)},
            {"letter_fallback", f.letter_fallback()}};
}

text::TextFrontend frontend_from_json(const json& j) {
    text::MergeTable table;
    for (const auto& m : j.at("merges")) table.merges.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
    table.too_small = j.value("merges_too_small", false);
    text::Lexicon lexicon;
    for (const auto& [word, phones] : j.at("lexicon").items()) lexicon[word] = phones.get<std::vector<std::string>>();
    const auto phonemes = j.at("phonemes").get<std::vector<std::string>>();
    return text::TextFrontend(std::move(lexicon), text::Vocab(phonemes), text::BpeModel(std::move(table)),
                              j.value("letter_fallback", true));
}

// --- checkpoint archive -------------------------------------------------------

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;
}

void save_checkpoint(const std::filesystem::path& path, const ClapModel& model, const TrainingState& state,
                     const json& extra_config) {
    json config = extra_config;
    config["model"] = to_json(model.config());
    config["frontend"] = frontend_to_json(model.frontend());

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
        io::write_magic(out, "PCK1");
        io::write_u32(out, kCheckpointVersion);
        io::write_string(out, config.dump());

        const auto& entries = model.params().entries();
        io::write_u32(out, static_cast<std::uint32_t>(entries.size()));
        std::vector<float> buffer;
        for (const auto& [name, p] : entries) {
            io::write_string(out, name);
            io::write_u32(out, 2);
            io::write_u32(out, static_cast<std::uint32_t>(p.rows()));
            io::write_u32(out, static_cast<std::uint32_t>(p.cols()));
            buffer.resize(static_cast<std::size_t>(p.value().size()));
            for (std::size_t i = 0; i < buffer.size(); ++i) buffer[i] = static_cast<float>(p.value().data()[i]);
            io::write_f32_array(out, buffer);
        }

        io::write_u64(out, static_cast<std::uint64_t>(state.step));
        io::write_u64(out, static_cast<std::uint64_t>(state.optimizer.steps()));
        const auto& moments = state.optimizer.moments();
        io::write_u32(out, static_cast<std::uint32_t>(moments.size()));
        for (const auto& [name, mv] : moments) {
            io::write_string(out, name);
            io::write_u32(out, static_cast<std::uint32_t>(mv.first.rows()));
            io::write_u32(out, static_cast<std::uint32_t>(mv.first.cols()));
            io::write_f64_array(out, std::span<const double>(mv.first.data(), static_cast<std::size_t>(mv.first.size())));
            io::write_f64_array(out, std::span<const double>(mv.second.data(), static_cast<std::size_t>(mv.second.size())));
        }
        io::write_string(out, state.sampler_rng);
        io::write_string(out, state.dropout_rng);
        if (!out) throw Error(ErrorCode::Io, "short write " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::CheckpointInvalid, "cannot open " + path.string());
    Checkpoint ckpt;
    try {
        io::expect_magic(in, "PCK1");
        if (io::read_u32(in) != kCheckpointVersion) throw Error(ErrorCode::CheckpointInvalid, "unsupported version");
        ckpt.config = json::parse(io::read_string(in));
        ModelConfig mc;
        from_json_strict(ckpt.config.at("model"), mc);
        ckpt.model = std::make_unique<ClapModel>(mc, frontend_from_json(ckpt.config.at("frontend")), 0);

        auto& params = ckpt.model->params();
        const auto count = io::read_u32(in);
        if (count != params.size()) throw Error(ErrorCode::CheckpointInvalid, "parameter count mismatch");
        for (std::uint32_t i = 0; i < count; ++i) {
            const auto name = io::read_string(in);
            const auto ndim = io::read_u32(in);
            if (ndim != 2) throw Error(ErrorCode::CheckpointInvalid, name + ": expected 2 dims");
            const auto rows = io::read_u32(in);
            const auto cols = io::read_u32(in);
            auto& p = params.get(name);
            if (p.rows() != rows || p.cols() != cols) throw Error(ErrorCode::CheckpointInvalid, name + ": shape mismatch");
            std::vector<float> buffer(static_cast<std::size_t>(rows) * cols);
            io::read_f32_array(in, buffer);
            auto& v = p.mutable_value();
            for (std::size_t k = 0; k < buffer.size(); ++k) v.data()[k] = buffer[k];
        }

        ckpt.state.step = static_cast<std::int64_t>(io::read_u64(in));
        ckpt.state.optimizer.set_steps(static_cast<std::int64_t>(io::read_u64(in)));
        const auto n_moments = io::read_u32(in);
        for (std::uint32_t i = 0; i < n_moments; ++i) {
            const auto name = io::read_string(in);
            const auto rows = io::read_u32(in);
            const auto cols = io::read_u32(in);
            ag::Matrix m(rows, cols), v(rows, cols);
            io::read_f64_array(in, std::span<double>(m.data(), static_cast<std::size_t>(m.size())));
            io::read_f64_array(in, std::span<double>(v.data(), static_cast<std::size_t>(v.size())));
            ckpt.state.optimizer.moments()[name] = {std::move(m), std::move(v)};
        }
        ckpt.state.sampler_rng = io::read_string(in);
        ckpt.state.dropout_rng = io::read_string(in);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::CheckpointInvalid || e.code() == ErrorCode::ConfigInvalid) throw;
        throw Error(ErrorCode::CheckpointInvalid, path.string() + ": " + e.what());
    } catch (const json::exception& e) {
        throw Error(ErrorCode::CheckpointInvalid, path.string() + ": " + e.what());
    }
    return ckpt;
}

std::filesystem::path resolve_checkpoint(const std::filesystem::path& path_or_dir) {
    if (std::filesystem::is_directory(path_or_dir)) return path_or_dir / "checkpoint.bin";
    return path_or_dir;
}

}  // namespace prosoclap::model
