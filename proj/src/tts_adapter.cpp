#include "prosoclap/tts_adapter.hpp"

#include "prosoclap/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace prosoclap::adapter {

using nlohmann::json;

FrozenFeatureProvider::FrozenFeatureProvider(std::shared_ptr<const model::ClapModel> phoneme,
                                             std::shared_ptr<const model::ClapModel> word)
    : phoneme_(std::move(phoneme)), word_(std::move(word)) {
    if (!phoneme_) throw Error(ErrorCode::ConfigInvalid, "phoneme-scale model is required");
    if (word_ && word_->config().text.hidden != phoneme_->config().text.hidden)
        throw Error(ErrorCode::ShapeMismatch, "phoneme- and word-scale encoders have different widths");
}

FrozenFeatureProvider FrozenFeatureProvider::load(const std::filesystem::path& phoneme_ckpt,
                                                  const std::optional<std::filesystem::path>& word_ckpt) {
    std::shared_ptr<const model::ClapModel> ph = model::load_checkpoint(model::resolve_checkpoint(phoneme_ckpt)).model;
    std::shared_ptr<const model::ClapModel> w;
    if (word_ckpt) w = model::load_checkpoint(model::resolve_checkpoint(*word_ckpt)).model;
    return FrozenFeatureProvider(std::move(ph), std::move(w));
}

Matrix FrozenFeatureProvider::features(std::span<const std::string> words, std::span<const std::string> phonemes,
                                       std::span<const int> ph2word) const {
    ag::NoGradGuard no_grad;
    const auto item = phoneme_->frontend().build_aligned(words, phonemes, ph2word);
    Matrix out = phoneme_->text_encoder().forward(item).value();
    if (word_) {
        const auto witem = word_->frontend().build_aligned(words, phonemes, ph2word);
        const Var per_word = model::word_pool(word_->text_encoder().forward(witem), witem.ph2word, witem.word_count());
        out += model::word2ph_expand(per_word, witem.ph2word).value();
    }
    return out;
}

Matrix FrozenFeatureProvider::features(const text::TextItem& item) const {
    const auto& vocab = phoneme_->frontend().phoneme_vocab();
    std::vector<std::string> phones;
    phones.reserve(item.phonemes.size());
    for (int id : item.phonemes) phones.push_back(vocab.symbol(id));
    return features(item.words, phones, item.ph2word);
}

Matrix FrozenFeatureProvider::features_for_text(std::string_view text) const {
    const auto& fe = phoneme_->frontend();
    const auto p = text::phonemize(text, fe.lexicon(), fe.letter_fallback());
    return features(p.words, p.phonemes, p.ph2word);
}

Matrix FrozenFeatureProvider::word_features(const corpus::Utterance& u) const {
    ag::NoGradGuard no_grad;
    return model::word_pool(Var(features(u)), u.ph2word, static_cast<int>(u.words.size())).value();
}

int FrozenFeatureProvider::feature_dim() const { return phoneme_->config().text.hidden; }

std::uint64_t FrozenFeatureProvider::checksum() const {
    std::uint64_t h = phoneme_->params().checksum();
    if (word_) h = h * 1099511628211ULL ^ word_->params().checksum();
    return h;
}

void ProbeConfig::validate() const {
    if (adapter_dim < 1 || steps < 0 || batch_words < 1)
        throw Error(ErrorCode::ConfigInvalid, "probe adapter_dim/batch_words must be >= 1 and steps >= 0");
    if (!(lr > 0.0)) throw Error(ErrorCode::ConfigInvalid, "probe lr must be positive");
    if (heldout_fraction < 0.0 || heldout_fraction >= 1.0)
        throw Error(ErrorCode::ConfigInvalid, "probe heldout_fraction must be in [0, 1)");
}

json to_json(const ProbeConfig& c) {
    return {{"adapter_dim", c.adapter_dim}, {"steps", c.steps},       {"batch_words", c.batch_words},
            {"lr", c.lr},                   {"seed", c.seed},         {"heldout_fraction", c.heldout_fraction}};
}

void from_json_strict(const json& j, ProbeConfig& c) {
    if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "probe must be an object");
    for (const auto& [key, v] : j.items()) {
        try {
            if (key == "adapter_dim") c.adapter_dim = v.get<int>();
            else if (key == "steps") c.steps = v.get<int>();
            else if (key == "batch_words") c.batch_words = v.get<int>();
            else if (key == "lr") c.lr = v.get<double>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "heldout_fraction") c.heldout_fraction = v.get<double>();
            else throw Error(ErrorCode::ConfigInvalid, "unknown key '" + key + "' in probe");
        } catch (const json::exception& e) {
            throw Error(ErrorCode::ConfigInvalid, "bad value for '" + key + "': " + e.what());
        }
    }
    c.validate();
}

Probe::Probe(const ProbeConfig& cfg, int dim, std::mt19937_64& rng) : config(cfg), feature_dim(dim) {
    config.validate();
    adapter = nn::Linear::create(params, "probe.adapter", dim, config.adapter_dim, rng);
    out = nn::Linear::create(params, "probe.out", config.adapter_dim, 2, rng);
}

Matrix Probe::predict(const Matrix& word_features) const {
    if (word_features.cols() != feature_dim)
        throw Error(ErrorCode::ShapeMismatch, "probe expects " + std::to_string(feature_dim) + " features");
    ag::NoGradGuard no_grad;
    Matrix z = out(ag::gelu(adapter(Var(word_features)))).value();
    z.col(0) = z.col(0).array() * stats.pitch_std + stats.pitch_mean;
    z.col(1) = z.col(1).array() * stats.dur_std + stats.dur_mean;
    return z;
}

ProbeData collect_probe_data(const FrozenFeatureProvider& provider, const corpus::Corpus& corpus) {
    std::vector<Matrix> feats;
    Eigen::Index words = 0;
    for (const auto& u : corpus.utterances) {
        if (u.word_pitch_hz.size() != u.words.size() || u.word_dur_sec.size() != u.words.size())
            throw Error(ErrorCode::MissingTargets, "utterance " + u.id + " lacks word_pitch_hz/word_dur_sec");
        feats.push_back(provider.word_features(u));
        words += feats.back().rows();
    }
    ProbeData d;
    d.features.resize(words, provider.feature_dim());
    d.targets.resize(words, 2);
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
        const auto& u = corpus.utterances[i];
        d.features.middleRows(row, feats[i].rows()) = feats[i];
        for (std::size_t w = 0; w < u.words.size(); ++w) {
            d.targets(row + static_cast<Eigen::Index>(w), 0) = u.word_pitch_hz[w];
            d.targets(row + static_cast<Eigen::Index>(w), 1) = u.word_dur_sec[w];
        }
        row += feats[i].rows();
    }
    return d;
}

namespace {

std::pair<double, double> mean_std(const Eigen::Ref<const Eigen::VectorXd>& v) {
    const double mean = v.mean();
    const double var = (v.array() - mean).square().mean();
    // Constant targets: the probe only has to learn a zero residual, so a tiny scale
    // keeps whatever residual the optimizer leaves negligible in target units.
    return {mean, var > 1e-24 ? std::sqrt(var) : 1e-6 * std::max(std::abs(mean), 1.0)};
}

Var mse(const Var& pred, const Matrix& target) {
    Var diff = ag::sub(pred, Var(target));
    return ag::mean(ag::mul(diff, diff));
}

}  // namespace

Probe probe_train(const ProbeData& data, const ProbeConfig& config, ProbeHistory* history) {
    config.validate();
    if (data.features.rows() == 0) throw Error(ErrorCode::MissingTargets, "no words to train the probe on");
    std::mt19937_64 rng(config.seed);
    Probe probe(config, static_cast<int>(data.features.cols()), rng);
    std::tie(probe.stats.pitch_mean, probe.stats.pitch_std) = mean_std(data.targets.col(0));
    std::tie(probe.stats.dur_mean, probe.stats.dur_std) = mean_std(data.targets.col(1));

    Matrix z(data.targets.rows(), 2);
    z.col(0) = (data.targets.col(0).array() - probe.stats.pitch_mean) / probe.stats.pitch_std;
    z.col(1) = (data.targets.col(1).array() - probe.stats.dur_mean) / probe.stats.dur_std;

    auto full_loss = [&] {
        ag::NoGradGuard no_grad;
        return mse(probe.out(ag::gelu(probe.adapter(Var(data.features)))), z).item();
    };
    if (history) history->initial_loss = full_loss();

    nn::Adam adam;
    std::uniform_int_distribution<Eigen::Index> pick(0, data.features.rows() - 1);
    std::vector<int> rows(static_cast<std::size_t>(std::min<Eigen::Index>(config.batch_words, data.features.rows())));
    const Var all_features(data.features);
    const Var all_targets(z);
    for (int s = 0; s < config.steps; ++s) {
        for (auto& r : rows) r = static_cast<int>(pick(rng));
        probe.params.zero_grad();
        Var x = ag::gather_rows(all_features, rows);
        Var diff = ag::sub(probe.out(ag::gelu(probe.adapter(x))), ag::gather_rows(all_targets, rows));
        Var loss = ag::mean(ag::mul(diff, diff));
        loss.backward();
        adam.step(probe.params, config.lr);
    }
    probe.params.zero_grad();
    if (history) history->final_loss = full_loss();
    return probe;
}

Probe probe_train(const FrozenFeatureProvider& provider, const corpus::Corpus& corpus, const ProbeConfig& config,
                  ProbeHistory* history) {
    return probe_train(collect_probe_data(provider, corpus), config, history);
}

ProbeMetrics probe_eval(const Probe& probe, const ProbeData& data) {
    ProbeMetrics m;
    m.words = static_cast<int>(data.features.rows());
    if (m.words == 0) return m;
    const Matrix pred = probe.predict(data.features);
    m.pitch_mae_hz = (pred.col(0) - data.targets.col(0)).cwiseAbs().mean();
    m.dur_mae_sec = (pred.col(1) - data.targets.col(1)).cwiseAbs().mean();
    return m;
}

ProbeMetrics probe_eval(const Probe& probe, const FrozenFeatureProvider& provider, const corpus::Corpus& corpus) {
    return probe_eval(probe, collect_probe_data(provider, corpus));
}

namespace {

json matrix_json(const Matrix& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Matrix matrix_from_json(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>(), cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw Error(ErrorCode::CheckpointInvalid, "probe matrix size mismatch");
    return Eigen::Map<const Matrix>(data.data(), rows, cols);
}

}  // namespace

void save_probe(const Probe& probe, const std::filesystem::path& path) {
    json params = json::object();
    for (const auto& [name, p] : probe.params.entries()) params[name] = matrix_json(p.value());
    json j = {{"format", "prosoclap-probe"},
              {"version", 1},
              {"config", to_json(probe.config)},
              {"feature_dim", probe.feature_dim},
              {"stats",
               {{"pitch_mean", probe.stats.pitch_mean},
                {"pitch_std", probe.stats.pitch_std},
                {"dur_mean", probe.stats.dur_mean},
                {"dur_std", probe.stats.dur_std}}},
              {"phoneme_ckpt", probe.phoneme_ckpt},
              {"word_ckpt", probe.word_ckpt},
              {"params", params}};
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
        out << j.dump() << '\n';
    }
    std::filesystem::rename(tmp, path);
}

Probe load_probe(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open probe " + path.string());
    try {
        const json j = json::parse(in);
        if (j.at("format") != "prosoclap-probe") throw Error(ErrorCode::CheckpointInvalid, "not a probe file");
        ProbeConfig cfg;
        from_json_strict(j.at("config"), cfg);
        std::mt19937_64 rng(0);
        Probe p(cfg, j.at("feature_dim").get<int>(), rng);
        const auto& s = j.at("stats");
        p.stats = {s.at("pitch_mean").get<double>(), s.at("pitch_std").get<double>(), s.at("dur_mean").get<double>(),
                   s.at("dur_std").get<double>()};
        p.phoneme_ckpt = j.at("phoneme_ckpt").get<std::string>();
        p.word_ckpt = j.at("word_ckpt").get<std::string>();
        for (auto& [name, var] : p.params.entries()) {
            Matrix m = matrix_from_json(j.at("params").at(name));
            if (m.rows() != var.rows() || m.cols() != var.cols())
                throw Error(ErrorCode::CheckpointInvalid, "probe parameter " + name + " has the wrong shape");
            var.mutable_value() = std::move(m);
        }
        return p;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::CheckpointInvalid, path.string() + ": " + e.what());
    }
}

}  // namespace prosoclap::adapter
