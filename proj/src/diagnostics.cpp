#include "prosoclap/diagnostics.hpp"

#include "prosoclap/analysis.hpp"
#include "prosoclap/contrastive.hpp"
#include "prosoclap/error.hpp"
#include "prosoclap/pretrain.hpp"
#include "prosoclap/tts_adapter.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

namespace prosoclap::diagnostics {

using ag::Matrix;
using ag::Var;

double relative_error(const Matrix& a, const Matrix& b, double floor) {
    return (a - b).norm() / std::max(a.norm() + b.norm(), floor);
}

Matrix numeric_gradient(Matrix& x, const std::function<double()>& f, double h) {
    Matrix g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        double& v = x.data()[i];
        const double orig = v;
        v = orig + h;
        const double up = f();
        v = orig - h;
        const double down = f();
        v = orig;
        g.data()[i] = (up - down) / (2.0 * h);
    }
    return g;
}

double GradcheckReport::worst() const { return std::max({err_text, err_speech, err_log_tau}); }

namespace {

Matrix random_unit_rows(int n, int dim, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    Matrix m(n, dim);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    m.rowwise().normalize();
    return m;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
}

}  // namespace

GradcheckReport gradcheck_clip_loss(int n, int dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Var t(random_unit_rows(n, dim, rng), true);
    Var s(random_unit_rows(n, dim, rng), true);
    Var log_tau(Matrix::Constant(1, 1, std::log(3.0)), true);
    auto loss = [&] { return contrastive::clip_loss(ag::matmul_nt(t, s), ag::exp(log_tau)); };

    Var l = loss();
    l.backward();
    auto value = [&] {
        ag::NoGradGuard g;
        return loss().item();
    };
    GradcheckReport r;
    r.err_text = relative_error(numeric_gradient(t.mutable_value(), value), t.grad());
    r.err_speech = relative_error(numeric_gradient(s.mutable_value(), value), s.grad());
    r.err_log_tau = relative_error(numeric_gradient(log_tau.mutable_value(), value), log_tau.grad());
    return r;
}

synth::SynthSpec tiny_synth_spec(std::uint64_t seed) {
    synth::SynthSpec s;
    s.vocab_size = 12;
    s.homophone_pairs = 2;
    s.n_utterances = 40;
    s.min_words = 3;
    s.max_words = 6;
    s.seed = seed;
    return s;
}

model::ModelConfig tiny_model_config(corpus::Scale scale) {
    model::ModelConfig c;
    c.scale = scale;
    c.text.hidden = 8;
    c.text.ffn = 12;
    c.text.kernel = 3;
    c.text.blocks_per_stack = 1;
    c.text.fusion_blocks = 1;
    c.text.heads = 2;
    c.text.dropout = 0.0;
    c.text.joint_dim = 6;
    c.prosody.hidden = 8;
    c.prosody.residual_blocks = 2;
    c.prosody.convs_per_block = 2;
    c.prosody.pool_hidden = 8;
    c.prosody.pool_heads = 2;
    c.prosody.segment_len = 12;
    c.prosody.joint_dim = 6;
    return c;
}

ModelGradcheckReport gradcheck_model(std::uint64_t seed, corpus::Scale scale) {
    auto data = synth::build_corpus(tiny_synth_spec(seed));
    const auto frontend = corpus::frontend_from_corpus(data, 60);
    corpus::attach_frontend(data, frontend);
    const auto config = tiny_model_config(scale);
    model::ClapModel m(config, frontend, seed);
    // Check at a generic point. Fresh init has zero biases, so floor-padded frames reach every
    // LayerNorm as constant rows; the gradient there is exact but too curved for differences.
    std::mt19937_64 jitter_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> jitter(0.0, 0.1);
    for (auto& [name, p] : m.params().entries())
        p.mutable_value() = p.value().unaryExpr([&](double v) { return v + jitter(jitter_rng); });
    const auto index = corpus::build_token_index(data, scale, 2);
    corpus::SamplerOptions so;
    so.batch_size = 4;
    so.segment_length = config.prosody.segment_len;
    std::mt19937_64 rng(seed);
    const auto batch = corpus::sample_contrastive_batch(index, data, so, rng);

    auto loss = [&] {
        return contrastive::clip_loss(ag::matmul_nt(m.text_embeddings(batch), m.speech_embeddings(batch)),
                                      m.temperature_var());
    };
    m.params().zero_grad();
    loss().backward();
    auto value = [&] {
        ag::NoGradGuard g;
        return loss().item();
    };

    ModelGradcheckReport r;
    double diff_sq = 0.0, num_sq = 0.0, an_sq = 0.0;
    for (auto& [name, p] : m.params().entries()) {
        const Matrix analytic = p.has_grad() ? p.grad() : Matrix::Zero(p.rows(), p.cols());
        const Matrix numeric = numeric_gradient(p.mutable_value(), value, 1e-5);
        diff_sq += (numeric - analytic).squaredNorm();
        num_sq += numeric.squaredNorm();
        an_sq += analytic.squaredNorm();
        r.parameters += static_cast<std::size_t>(p.value().size());
        // Gradients that vanish by symmetry (e.g. attention key biases) are pure rounding noise.
        if (numeric.norm() + analytic.norm() > 1e-6) {
            const double e = relative_error(numeric, analytic);
            if (e > r.worst_tensor_error) {
                r.worst_tensor_error = e;
                r.worst_tensor = name;
            }
        }
    }
    r.global_error = std::sqrt(diff_sq) / std::max(std::sqrt(num_sq) + std::sqrt(an_sq), 1e-12);
    return r;
}

std::vector<CheckResult> run_gradchecks(std::uint64_t seed) {
    std::vector<CheckResult> out;
    const auto c = gradcheck_clip_loss(4, 8, seed);
    out.push_back({"clip_loss dT", c.err_text < 1e-4, "rel err " + fmt(c.err_text)});
    out.push_back({"clip_loss dS", c.err_speech < 1e-4, "rel err " + fmt(c.err_speech)});
    out.push_back({"clip_loss dlog_tau", c.err_log_tau < 1e-4, "rel err " + fmt(c.err_log_tau)});
    for (auto scale : {corpus::Scale::Phoneme, corpus::Scale::Word}) {
        const auto m = gradcheck_model(seed, scale);
        out.push_back({"model (" + corpus::to_string(scale) + ") global", m.global_error < 1e-3,
                       "rel err " + fmt(m.global_error) + " over " + std::to_string(m.parameters) + " params"});
        out.push_back({"model (" + corpus::to_string(scale) + ") worst tensor", m.worst_tensor_error < 1e-3,
                       m.worst_tensor + " rel err " + fmt(m.worst_tensor_error)});
    }
    return out;
}

namespace {

CheckResult check(const std::string& name, const std::function<std::string()>& body) {
    try {
        const std::string failure = body();
        return {name, failure.empty(), failure.empty() ? "ok" : failure};
    } catch (const std::exception& e) {
        return {name, false, std::string("threw: ") + e.what()};
    }
}

}  // namespace

std::vector<CheckResult> run_selftest(std::uint64_t seed, const std::optional<std::filesystem::path>& work_dir) {
    std::vector<CheckResult> out;
    std::mt19937_64 rng(seed);

    out.push_back(check("word_pool(word2ph_expand(x)) == x", [&]() -> std::string {
        for (int trial = 0; trial < 200; ++trial) {
            const int words = 1 + static_cast<int>(rng() % 12);
            std::vector<int> ph2word;
            for (int w = 0; w < words; ++w)
                for (int k = 0, n = 1 + static_cast<int>(rng() % 5); k < n; ++k) ph2word.push_back(w);
            Matrix x = Matrix::Random(words, 1 + static_cast<int>(rng() % 9));
            const Matrix back = model::word_pool(model::word2ph_expand(Var(x), ph2word), ph2word).value();
            if (back != x) return "mismatch at trial " + std::to_string(trial);
        }
        return {};
    }));

    out.push_back(check("clip_loss(uniform) == ln N", []() -> std::string {
        for (int n : {2, 8, 64}) {
            const double l = contrastive::clip_loss(Matrix::Constant(n, n, 0.3), 7.0);
            if (std::abs(l - std::log(n)) > 1e-6) return "N=" + std::to_string(n) + " gave " + fmt(l);
        }
        if (contrastive::clip_loss(Matrix::Constant(1, 1, 0.5), 7.0) != 0.0) return "N=1 is not 0";
        return {};
    }));

    auto data = synth::build_corpus(tiny_synth_spec(seed));
    out.push_back(check("synthetic rows validate", [&]() -> std::string {
        for (const auto& u : data.utterances)
            if (auto why = corpus::validate_utterance(u); !why.empty()) return u.id + ": " + why;
        return {};
    }));

    out.push_back(check("clean contours separate context classes", [&]() -> std::string {
        auto spec = tiny_synth_spec(seed);
        spec.n_utterances = 200;
        const auto vocab = synth::make_vocabulary(spec);
        std::vector<std::pair<int, std::vector<double>>> samples;
        for (int i = 0; i < spec.n_utterances; ++i) {
            const auto g = synth::generate_utterance(spec, vocab, i, false);
            for (std::size_t p = 0; p < g.phones.size(); ++p) {
                const auto [b, e] = g.ph_frames[p];
                samples.emplace_back(g.classes[static_cast<std::size_t>(g.ph2word[p])],
                                     synth::contour_signature(g.mel.values.middleCols(b, e - b), e - b));
            }
        }
        std::map<int, std::pair<std::vector<double>, int>> centroid;
        for (const auto& [c, sig] : samples) {
            auto& [sum, n] = centroid[c];
            sum.resize(sig.size(), 0.0);
            for (std::size_t k = 0; k < sig.size(); ++k) sum[k] += sig[k];
            ++n;
        }
        int correct = 0;
        for (const auto& [c, sig] : samples) {
            int best = -1;
            double best_d = 1e300;
            for (const auto& [k, acc] : centroid) {
                double d = 0.0;
                for (std::size_t j = 0; j < sig.size(); ++j) d += std::pow(sig[j] - acc.first[j] / acc.second, 2);
                if (d < best_d) best_d = d, best = k;
            }
            correct += best == c;
        }
        const double acc = static_cast<double>(correct) / static_cast<double>(samples.size());
        return acc > 0.95 ? std::string{} : "nearest-centroid accuracy " + fmt(acc);
    }));

    out.push_back(check("token index totals match a linear scan", [&]() -> std::string {
        for (auto scale : {corpus::Scale::Phoneme, corpus::Scale::Word}) {
            const auto index = corpus::build_token_index(data, scale, 1);
            std::map<std::string, std::size_t> counts;
            for (const auto& u : data.utterances)
                for (const auto& s : scale == corpus::Scale::Phoneme ? u.phones : u.words) ++counts[s];
            for (const auto& [sym, n] : counts)
                if (index.tokens.at(sym).size() != n) return "count differs for " + sym;
            if (counts.size() != index.tokens.size()) return "token sets differ";
        }
        return {};
    }));

    out.push_back(check("BPE training is deterministic", [&]() -> std::string {
        std::vector<std::string> texts;
        for (const auto& u : data.utterances) texts.push_back(u.text);
        const auto a = text::train_bpe(texts, 80), b = text::train_bpe(texts, 80);
        return a.merges == b.merges ? std::string{} : "merge tables differ";
    }));

    const auto frontend = corpus::frontend_from_corpus(data, 60);
    corpus::attach_frontend(data, frontend);
    const auto config = tiny_model_config();
    const auto index = corpus::build_token_index(data, corpus::Scale::Phoneme, 2);

    out.push_back(check("sampled batches share one token", [&]() -> std::string {
        corpus::SamplerOptions so;
        so.batch_size = 8;
        so.segment_length = config.prosody.segment_len;
        for (int b = 0; b < 50; ++b) {
            const auto batch = corpus::sample_contrastive_batch(index, data, so, rng);
            if (static_cast<int>(batch.items.size()) != so.batch_size) return "wrong batch size";
            for (const auto& it : batch.items)
                if (corpus::token_at(data.utterances[it.utterance], batch.scale, it.token_position) != batch.token_symbol)
                    return "item does not carry " + batch.token_symbol;
        }
        return {};
    }));

    out.push_back(check("self-similarity is permutation and scale invariant", [&]() -> std::string {
        Matrix e = Matrix::Random(6, 5);
        const double s = analysis::self_similarity(e);
        Matrix p = e.colwise().reverse();
        p.row(2) *= 3.7;
        const double sp = analysis::self_similarity(p);
        return std::abs(s - sp) < 1e-12 ? std::string{} : "s changed from " + fmt(s) + " to " + fmt(sp);
    }));

    auto ph_model = std::make_shared<model::ClapModel>(config, frontend, seed);
    auto word_model = std::make_shared<model::ClapModel>(tiny_model_config(corpus::Scale::Word), frontend, seed + 1);
    const adapter::FrozenFeatureProvider provider(ph_model, word_model);

    out.push_back(check("prosody transfer touches only the token span", [&]() -> std::string {
        const auto word_index = corpus::build_token_index(data, corpus::Scale::Word, 2);
        const auto symbols = word_index.symbols();
        for (int trial = 0; trial < 20; ++trial) {
            const auto& occ = word_index.tokens.at(symbols[rng() % symbols.size()]);
            const auto& a = occ[rng() % occ.size()];
            const auto& b = occ[rng() % occ.size()];
            const auto& src = data.utterances[a.utterance];
            const auto& ref = data.utterances[b.utterance];
            const auto r = analysis::prosody_transfer(provider, src.text_item, ref.text_item,
                                                      src.words[static_cast<std::size_t>(a.position)],
                                                      corpus::Scale::Word);
            for (Eigen::Index i = 0; i < r.source.rows(); ++i) {
                const bool inside = i >= r.span_begin && i < r.span_end;
                if (!inside && r.transferred.row(i) != r.source.row(i)) return "row outside span changed";
            }
        }
        return {};
    }));

    out.push_back(check("feature provider is side-effect free", [&]() -> std::string {
        const auto before = provider.checksum();
        const Matrix f1 = provider.features(data.utterances[0]);
        const Matrix f2 = provider.features(data.utterances[0]);
        if (f1 != f2) return "features differ between calls";
        if (f1.rows() != static_cast<Eigen::Index>(data.utterances[0].phones.size())) return "length != phoneme count";
        return provider.checksum() == before ? std::string{} : "parameters changed";
    }));

    out.push_back(check("mel frame count", [&]() -> std::string {
        std::vector<float> wave(22050);
        for (std::size_t i = 0; i < wave.size(); ++i)
            wave[i] = static_cast<float>(0.5 * std::sin(2.0 * std::numbers::pi * 220.0 * static_cast<double>(i) / 22050.0));
        const auto mel = audio::compute_mel(wave, 22050, audio::FeatureConfig{});
        if (mel.frames() != 1 + (22050 - 1024) / 256 || mel.bins() != 80) return "unexpected mel shape";
        return mel.values.allFinite() ? std::string{} : "non-finite mel";
    }));

    if (work_dir) {
        std::filesystem::create_directories(*work_dir);
        out.push_back(check("generated manifest ingests cleanly", [&]() -> std::string {
            auto spec = tiny_synth_spec(seed);
            const auto res = synth::generate(spec, *work_dir / "synth");
            const auto c = corpus::ingest_manifest(res.manifest);
            if (c.report.rejected != 0 || c.report.accepted != spec.n_utterances)
                return std::to_string(c.report.rejected) + " rows rejected";
            return {};
        }));
        out.push_back(check("checkpoint round trip", [&]() -> std::string {
            const auto path = *work_dir / "selftest.ckpt";
            model::TrainingState state;
            model::save_checkpoint(path, *ph_model, state);
            const auto loaded = model::load_checkpoint(path);
            if (loaded.model->params().checksum() != ph_model->params().checksum()) return "parameter checksum differs";
            corpus::SamplerOptions so;
            so.segment_length = config.prosody.segment_len;
            const auto batches = pretrain::sample_eval_batches(index, data, so, 5, seed);
            const auto a = pretrain::evaluate_retrieval(*ph_model, batches);
            const auto b = pretrain::evaluate_retrieval(*loaded.model, batches);
            if (a.top1_text_to_speech != b.top1_text_to_speech || a.top1_speech_to_text != b.top1_speech_to_text)
                return "retrieval metrics differ";
            return {};
        }));
    }
    return out;
}

}  // namespace prosoclap::diagnostics
