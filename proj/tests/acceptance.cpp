// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
// Criteria 4-9 share one generated corpus and one trained phoneme-scale model.

#include "prosoclap/analysis.hpp"
#include "prosoclap/contrastive.hpp"
#include "prosoclap/diagnostics.hpp"
#include "prosoclap/pretrain.hpp"
#include "prosoclap/synth_corpus.hpp"
#include "prosoclap/text_encoder.hpp"
#include "prosoclap/tts_adapter.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <sstream>

#ifndef PROSOCLAP_CONFIG_DIR
#define PROSOCLAP_CONFIG_DIR "configs"
#endif

using namespace prosoclap;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
    std::ostringstream s;
    s.precision(prec);
    s << v;
    return s.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << name << " (" << o.detail << "; "
              << fmt(seconds_since(t0), 3) << " s)" << std::endl;
}

// State shared by the training-based criteria.
struct Shared {
    fs::path work;
    pretrain::RunConfig config;
    corpus::Corpus train, held;
    std::optional<text::TextFrontend> frontend;
    std::optional<corpus::TokenIndex> train_index, held_index;
    std::vector<corpus::ContrastiveBatch> eval_batches;
    std::shared_ptr<model::ClapModel> trained;
    pretrain::RetrievalMetrics trained_metrics;
    fs::path run_a;
};

Outcome pooling_round_trip() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1);
    std::normal_distribution<double> value(0.0, 100.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const int words = 1 + static_cast<int>(rng() % 24);
        std::vector<int> ph2word;
        for (int w = 0; w < words; ++w)
            for (int k = 0, n = 1 + static_cast<int>(rng() % 8); k < n; ++k) ph2word.push_back(w);
        ag::Matrix x(words, 1 + static_cast<int>(rng() % 192));
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = value(rng);
        const ag::Matrix back = model::word_pool(model::word2ph_expand(ag::Var(x), ph2word), ph2word).value();
        if (back != x) return {false, "trial " + std::to_string(trial) + " not exact"};
    }
    const double t = seconds_since(t0);
    return {t < 5.0, "1000/1000 exact in " + fmt(t, 3) + " s"};
}

Outcome loss_oracle() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> c(-1.0, 1.0), tau(0.5, 100.0);
    for (int n : {2, 8, 64})
        for (int k = 0; k < 10; ++k) {
            const double l = contrastive::clip_loss(ag::Matrix::Constant(n, n, c(rng)), tau(rng));
            worst = std::max(worst, std::abs(l - std::log(static_cast<double>(n))));
        }
    const double single = contrastive::clip_loss(ag::Matrix::Constant(1, 1, 0.3), 14.0);
    const double t = seconds_since(t0);
    return {worst < 1e-6 && single == 0.0 && t < 1.0,
            "max |loss - ln N| " + fmt(worst, 3) + ", N=1 loss " + fmt(single + 0.0)};
}

Outcome gradient_check() {
    const auto t0 = Clock::now();
    bool ok = true;
    std::string detail;
    for (const auto& r : diagnostics::run_gradchecks(1)) {
        ok = ok && r.pass;
        detail += (detail.empty() ? "" : ", ") + r.name + " " + r.detail;
    }
    const double t = seconds_since(t0);
    return {ok && t < 120.0, detail};
}

pretrain::RunResult train_run(const Shared& s, const pretrain::RunConfig& rc, const fs::path& dir) {
    pretrain::RunOptions o;
    o.out_dir = dir;
    return pretrain::run_pretraining(rc, *s.frontend, s.train, *s.train_index, o);
}

std::string trajectory(const std::vector<pretrain::StepMetrics>& h) {
    std::string out;
    for (std::size_t start = 0; start < h.size(); start += 100) {
        double loss = 0, t2s = 0, s2t = 0;
        const std::size_t end = std::min(h.size(), start + 100);
        for (std::size_t i = start; i < end; ++i) loss += h[i].loss, t2s += h[i].acc_t2s, s2t += h[i].acc_s2t;
        const double n = static_cast<double>(end - start);
        out += "  steps " + std::to_string(start + 1) + "-" + std::to_string(end) + ": loss " + fmt(loss / n) +
               " acc_t2s " + fmt(t2s / n) + " acc_s2t " + fmt(s2t / n) + "\n";
    }
    return out;
}

Outcome synthetic_pretraining(Shared& s) {
    const auto t0 = Clock::now();
    const synth::SynthSpec spec;  // vocab 50, 2000 utterances, 4 context classes, noise 0.1
    if (spec.vocab_size != 50 || spec.n_utterances != 2000 || spec.context_classes != 4 || spec.noise != 0.1)
        return {false, "default synthetic spec drifted from the acceptance corpus"};
    const auto generated = synth::generate(spec, s.work / "corpus");
    auto all = corpus::ingest_manifest(generated.manifest);
    std::tie(s.train, s.held) = corpus::split_heldout(all, s.config.train.heldout_fraction);
    s.frontend = corpus::frontend_from_corpus(s.train, s.config.train.bpe_vocab_size);
    corpus::attach_frontend(s.train, *s.frontend);
    corpus::attach_frontend(s.held, *s.frontend);
    s.train_index = corpus::build_token_index(s.train, corpus::Scale::Phoneme, s.config.train.min_occurrences);
    s.held_index = corpus::build_token_index(s.held, corpus::Scale::Phoneme, 2);

    s.run_a = s.work / "run_a";
    const auto result = train_run(s, s.config, s.run_a);
    s.trained = model::load_checkpoint(result.checkpoint).model;

    corpus::SamplerOptions so;
    so.batch_size = s.config.train.batch_size;
    so.segment_length = s.config.model.prosody.segment_len;
    s.eval_batches = pretrain::sample_eval_batches(*s.held_index, s.held, so, s.config.train.eval_batches, 2024);
    s.trained_metrics = pretrain::evaluate_retrieval(*s.trained, s.eval_batches);

    double tail = 0.0;
    const std::size_t k = std::min<std::size_t>(100, result.history.size());
    for (std::size_t i = result.history.size() - k; i < result.history.size(); ++i) tail += result.history[i].loss / k;
    const double bound = std::log(static_cast<double>(s.config.train.batch_size)) - 0.5;
    const double t = seconds_since(t0);
    const bool pass = s.trained_metrics.top1_text_to_speech >= 0.8 && s.trained_metrics.top1_speech_to_text >= 0.8 &&
                      tail < bound && t < 1800.0;
    if (!pass) std::cout << "loss trajectory (means per 100 steps):\n" << trajectory(result.history);
    return {pass, "held-out top-1 t2s " + fmt(s.trained_metrics.top1_text_to_speech) + " s2t " +
                      fmt(s.trained_metrics.top1_speech_to_text) + " over " +
                      std::to_string(s.trained_metrics.batches) + " batches of " +
                      std::to_string(s.config.train.batch_size) + ", last-100 mean loss " + fmt(tail) + " (< " +
                      fmt(bound) + ")"};
}

Outcome self_similarity_direction(const Shared& s) {
    if (!s.trained) return {false, "no trained model"};
    const pretrain::Trainer fresh(s.config, *s.frontend);
    analysis::SweepOptions o;
    o.batches = 200;
    o.n = 8;
    o.seed = 5;
    const double untrained = analysis::self_similarity_sweep(fresh.model(), s.held, *s.held_index, o).mean_s;
    const double trained = analysis::self_similarity_sweep(*s.trained, s.held, *s.held_index, o).mean_s;
    return {untrained - trained >= 0.2,
            "sweep-mean s untrained " + fmt(untrained) + " trained " + fmt(trained) + " drop " + fmt(untrained - trained)};
}

Outcome transfer_locality(const Shared& s) {
    if (!s.trained) return {false, "no trained model"};
    const adapter::FrozenFeatureProvider provider(s.trained);
    std::mt19937_64 rng(6);
    int pairs = 0, attempts = 0, bad = 0;
    while (pairs < 100 && attempts < 100000) {
        ++attempts;
        const auto& src = s.held.utterances[rng() % s.held.size()];
        const auto& ref = s.held.utterances[rng() % s.held.size()];
        if (src.id == ref.id || src.words == ref.words) continue;
        const auto scale = pairs % 2 ? corpus::Scale::Word : corpus::Scale::Phoneme;
        const auto& a = scale == corpus::Scale::Phoneme ? src.phones : src.words;
        const auto& b = scale == corpus::Scale::Phoneme ? ref.phones : ref.words;
        std::vector<std::string> shared;
        for (const auto& t : a)
            if (std::find(b.begin(), b.end(), t) != b.end()) shared.push_back(t);
        if (shared.empty()) continue;
        const auto& token = shared[rng() % shared.size()];
        const auto r = analysis::prosody_transfer(provider, src.text_item, ref.text_item, token, scale);
        ++pairs;
        bool ok = r.transferred.rows() == r.source.rows() && r.span_begin < r.span_end;
        for (Eigen::Index i = 0; ok && i < r.source.rows(); ++i) {
            const bool inside = i >= r.span_begin && i < r.span_end;
            const bool differs = r.transferred.row(i) != r.source.row(i);
            ok = inside == differs;
        }
        bad += !ok;
    }
    return {pairs == 100 && bad == 0,
            std::to_string(pairs - bad) + "/" + std::to_string(pairs) + " pairs change exactly the token span"};
}

Outcome ablation_direction(const Shared& s) {
    if (!s.trained) return {false, "no trained model"};
    auto rc = s.config;
    rc.model.text.no_bpe = true;
    const auto no_bpe_run = train_run(s, rc, s.work / "run_no_bpe");
    const auto no_bpe = model::load_checkpoint(no_bpe_run.checkpoint).model;
    const auto m = pretrain::evaluate_retrieval(*no_bpe, s.eval_batches);
    const bool retrieval_ok = m.top1_text_to_speech <= s.trained_metrics.top1_text_to_speech &&
                              m.top1_speech_to_text <= s.trained_metrics.top1_speech_to_text;

    adapter::ProbeConfig pc;
    pc.seed = 3;
    const adapter::FrozenFeatureProvider trained(s.trained);
    // Same initialisation the trainer starts from.
    const adapter::FrozenFeatureProvider untrained(
        std::make_shared<model::ClapModel>(s.config.model, *s.frontend, s.config.train.seed));
    const auto pt = adapter::probe_train(trained, s.train, pc);
    const auto pu = adapter::probe_train(untrained, s.train, pc);
    const auto et = adapter::probe_eval(pt, trained, s.held);
    const auto eu = adapter::probe_eval(pu, untrained, s.held);
    const bool probe_ok = eu.pitch_mae_hz >= et.pitch_mae_hz && eu.dur_mae_sec >= et.dur_mae_sec;
    return {retrieval_ok && probe_ok,
            "no-BPE t2s " + fmt(m.top1_text_to_speech) + " s2t " + fmt(m.top1_speech_to_text) + " vs full " +
                fmt(s.trained_metrics.top1_text_to_speech) + "/" + fmt(s.trained_metrics.top1_speech_to_text) +
                "; probe MAE untrained " + fmt(eu.pitch_mae_hz) + " Hz " + fmt(eu.dur_mae_sec) + " s vs trained " +
                fmt(et.pitch_mae_hz) + " Hz " + fmt(et.dur_mae_sec) + " s"};
}

Outcome determinism(const Shared& s) {
    if (!s.trained) return {false, "no trained model"};
    train_run(s, s.config, s.work / "run_b");
    const std::string a = slurp(s.run_a / "metrics.jsonl"), b = slurp(s.work / "run_b" / "metrics.jsonl");
    const auto ca = model::load_checkpoint(s.run_a / "checkpoint.bin").model->params().checksum();
    const auto cb = model::load_checkpoint(s.work / "run_b" / "checkpoint.bin").model->params().checksum();
    return {!a.empty() && a == b && ca == cb,
            std::string(a == b ? "metrics logs identical" : "metrics logs differ") + " (" + std::to_string(a.size()) +
                " bytes), parameter checksums " + (ca == cb ? "equal" : "differ")};
}

Outcome checkpoint_round_trip(const Shared& s) {
    if (!s.trained) return {false, "no trained model"};
    const fs::path path = s.work / "round_trip.bin";
    model::save_checkpoint(path, *s.trained, model::TrainingState{});
    const auto loaded = model::load_checkpoint(path).model;
    const auto before = pretrain::evaluate_retrieval(*s.trained, s.eval_batches);
    const auto after = pretrain::evaluate_retrieval(*loaded, s.eval_batches);
    bool same_sim = true;
    for (const auto& b : s.eval_batches) {
        ag::NoGradGuard g;
        const auto sim = [&](const model::ClapModel& m) {
            return contrastive::similarity_matrix(m.text_embeddings(b).value(), m.speech_embeddings(b).value());
        };
        same_sim = same_sim && sim(*s.trained) == sim(*loaded);
    }
    const bool same = before.top1_text_to_speech == after.top1_text_to_speech &&
                      before.top1_speech_to_text == after.top1_speech_to_text &&
                      s.trained->params().checksum() == loaded->params().checksum() && same_sim;
    return {same, "t2s " + fmt(before.top1_text_to_speech, 17) + " -> " + fmt(after.top1_text_to_speech, 17) + ", s2t " +
                      fmt(before.top1_speech_to_text, 17) + " -> " + fmt(after.top1_speech_to_text, 17) +
                      (same_sim ? ", similarity matrices bit-identical" : ", similarity matrices differ")};
}

}  // namespace

int main(int argc, char** argv) {
    Shared s;
    const fs::path config_path = argc > 1 ? fs::path(argv[1]) : fs::path(PROSOCLAP_CONFIG_DIR) / "desk.json";
    try {
        s.config = pretrain::load_run_config(config_path);
    } catch (const std::exception& e) {
        std::cerr << "cannot load " << config_path << ": " << e.what() << '\n';
        return 2;
    }
    s.work = fs::temp_directory_path() / ("prosoclap_acceptance_" + std::to_string(std::random_device{}()));
    fs::create_directories(s.work);

    report(1, "pooling round trip", pooling_round_trip);
    report(2, "loss oracle", loss_oracle);
    report(3, "gradient check", gradient_check);
    report(4, "synthetic pre-training", [&] { return synthetic_pretraining(s); });
    report(5, "self-similarity direction", [&] { return self_similarity_direction(s); });
    report(6, "prosody-transfer locality", [&] { return transfer_locality(s); });
    report(7, "ablation direction", [&] { return ablation_direction(s); });
    report(8, "determinism", [&] { return determinism(s); });
    report(9, "checkpoint round trip", [&] { return checkpoint_round_trip(s); });

    std::error_code ec;
    fs::remove_all(s.work, ec);
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
