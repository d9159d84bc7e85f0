#include "cli.hpp"

#include "prosoclap/analysis.hpp"
#include "prosoclap/diagnostics.hpp"
#include "prosoclap/error.hpp"
#include "prosoclap/pretrain.hpp"
#include "prosoclap/synth_corpus.hpp"
#include "prosoclap/tts_adapter.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

namespace prosoclap::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_validation(ErrorCode c) {
    switch (c) {
        case ErrorCode::EmptyText:
        case ErrorCode::UnpronounceableWord:
        case ErrorCode::ManifestUnreadable:
        case ErrorCode::AllRowsInvalid:
        case ErrorCode::NoEligibleTokens:
        case ErrorCode::TokenNotIndexed:
        case ErrorCode::TokenDegenerate:
        case ErrorCode::TokenAbsent:
        case ErrorCode::MissingTargets:
        case ErrorCode::SpecInvalid:
        case ErrorCode::ConfigInvalid:
        case ErrorCode::TooFewContexts:
            return true;
        default:
            return false;
    }
}

json read_json(const fs::path& path, ErrorCode on_error) {
    std::ifstream in(path);
    if (!in) throw Error(on_error, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(on_error, path.string() + ": " + e.what());
    }
}

struct AnalysisConfig {
    int sweep_batches = 200;
    int sweep_n = 8;
    bool joint = false;
};

AnalysisConfig parse_analysis(const json& j) {
    AnalysisConfig a;
    if (j.is_null()) return a;
    if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "analysis must be an object");
    for (const auto& [key, v] : j.items()) {
        try {
            if (key == "sweep_batches") a.sweep_batches = v.get<int>();
            else if (key == "sweep_n") a.sweep_n = v.get<int>();
            else if (key == "representation") {
                const auto r = v.get<std::string>();
                if (r != "token" && r != "joint")
                    throw Error(ErrorCode::ConfigInvalid, "analysis.representation must be token or joint");
                a.joint = r == "joint";
            } else throw Error(ErrorCode::ConfigInvalid, "unknown key '" + key + "' in analysis");
        } catch (const json::exception& e) {
            throw Error(ErrorCode::ConfigInvalid, "bad value for '" + key + "': " + e.what());
        }
    }
    if (a.sweep_batches < 1 || a.sweep_n < 2) throw Error(ErrorCode::ConfigInvalid, "sweep needs batches >= 1, n >= 2");
    return a;
}

// Run config from an optional file; validates every section, including ones this command does not use.
pretrain::RunConfig load_config(const std::string& path) {
    pretrain::RunConfig rc = path.empty() ? pretrain::RunConfig{} : pretrain::load_run_config(path);
    parse_analysis(rc.extra.value("analysis", json()));
    if (rc.extra.contains("probe")) {
        adapter::ProbeConfig p;
        adapter::from_json_strict(rc.extra["probe"], p);
    }
    return rc;
}

struct LoadedModel {
    std::unique_ptr<model::ClapModel> model;
    pretrain::TrainConfig train;
};

LoadedModel load_model(const fs::path& ckpt) {
    auto c = model::load_checkpoint(model::resolve_checkpoint(ckpt));
    LoadedModel m;
    m.model = std::move(c.model);
    if (c.config.contains("train")) pretrain::from_json_strict(c.config["train"], m.train);
    return m;
}

corpus::Corpus heldout_for(const model::ClapModel& m, const fs::path& manifest, double fraction, bool load_mels) {
    auto all = corpus::ingest_manifest(manifest, corpus::IngestOptions{load_mels});
    auto held = fraction > 0.0 ? corpus::split_heldout(all, fraction).second : std::move(all);
    if (held.empty()) throw Error(ErrorCode::AllRowsInvalid, "no held-out rows in " + manifest.string());
    corpus::attach_frontend(held, m.frontend());
    return held;
}

void print_json(std::ostream& out, const json& j) { out << j.dump(2) << '\n'; }

int cmd_synth(const fs::path& spec_path, const fs::path& out_dir, std::optional<std::uint64_t> seed, std::ostream& out) {
    auto spec = synth::synth_spec_from_json(read_json(spec_path, ErrorCode::SpecInvalid));
    if (seed) spec.seed = *seed;
    const auto r = synth::generate(spec, out_dir);
    print_json(out, {{"manifest", r.manifest.string()}, {"lexicon", r.lexicon.string()}, {"utterances", r.utterances}});
    return kOk;
}

int cmd_index(const fs::path& manifest, const std::string& scale, int min_occ, const fs::path& out_path,
              std::ostream& out) {
    const auto c = corpus::ingest_manifest(manifest, corpus::IngestOptions{false});
    const auto index = corpus::build_token_index(c, corpus::parse_scale(scale), min_occ);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    corpus::save_token_index(index, out_path);
    print_json(out, {{"accepted", c.report.accepted},
                     {"rejected", c.report.rejected},
                     {"tokens", index.tokens.size()},
                     {"occurrences", index.total_occurrences()}});
    return kOk;
}

struct PretrainArgs {
    std::string config;
    fs::path manifest;
    std::string scale = "ph";
    fs::path out;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> steps;
    bool resume = false;
    bool quiet = false;
};

int cmd_pretrain(const PretrainArgs& a, std::ostream& out, std::ostream& err) {
    auto rc = load_config(a.config);
    rc.model.scale = corpus::parse_scale(a.scale);
    if (a.seed) rc.train.seed = *a.seed;
    if (a.steps) rc.train.total_steps = *a.steps;
    rc.train.validate();

    auto all = corpus::ingest_manifest(a.manifest);
    auto [train, held] = corpus::split_heldout(all, rc.train.heldout_fraction);
    if (train.empty()) throw Error(ErrorCode::AllRowsInvalid, "held-out split left no training rows");

    const auto ckpt = a.out / "checkpoint.bin";
    const text::TextFrontend frontend = a.resume && fs::exists(ckpt)
                                            ? model::load_checkpoint(ckpt).model->frontend()
                                            : corpus::frontend_from_corpus(train, rc.train.bpe_vocab_size);
    corpus::attach_frontend(train, frontend);
    const auto index = corpus::build_token_index(train, rc.model.scale, rc.train.min_occurrences);

    pretrain::RunOptions opts;
    opts.out_dir = a.out;
    opts.resume = a.resume;
    if (!a.quiet)
        opts.on_step = [&](const pretrain::StepMetrics& m) {
            if (m.step % 100 == 0 || m.step == rc.train.total_steps)
                err << "step " << m.step << " loss " << m.loss << " acc_t2s " << m.acc_t2s << " acc_s2t " << m.acc_s2t
                    << " tau " << m.tau << " lr " << m.lr << " grad_norm " << m.grad_norm << " dup "
                    << m.duplication_rate << '\n';
        };
    const auto result = pretrain::run_pretraining(rc, frontend, train, index, opts);
    json summary = {{"checkpoint", result.checkpoint.string()},
                    {"metrics", (a.out / "metrics.jsonl").string()},
                    {"steps_run", result.history.size()}};
    if (!result.history.empty()) summary["final_loss"] = result.history.back().loss;
    print_json(out, summary);
    return kOk;
}

int cmd_eval(const fs::path& ckpt, const fs::path& manifest, int batches, std::optional<std::uint64_t> seed,
             std::ostream& out) {
    const auto lm = load_model(ckpt);
    const auto held = heldout_for(*lm.model, manifest, lm.train.heldout_fraction, true);
    const auto index = corpus::build_token_index(held, lm.model->config().scale, 2);
    corpus::SamplerOptions so;
    so.batch_size = lm.train.batch_size;
    so.segment_length = lm.model->config().prosody.segment_len;
    so.occurrence_weighted = lm.train.occurrence_weighted;
    const auto eval_batches = pretrain::sample_eval_batches(index, held, so, batches > 0 ? batches : lm.train.eval_batches,
                                                            seed.value_or(lm.train.seed));
    const auto r = pretrain::evaluate_retrieval(*lm.model, eval_batches);
    print_json(out, {{"top1_text_to_speech", r.top1_text_to_speech},
                     {"top1_speech_to_text", r.top1_speech_to_text},
                     {"batches", r.batches},
                     {"batch_size", so.batch_size}});
    return kOk;
}

int cmd_selfsim(const fs::path& ckpt, const fs::path& manifest, const std::string& token, int n, int batches,
                bool joint, std::optional<std::uint64_t> seed, std::ostream& out) {
    const auto lm = load_model(ckpt);
    auto c = corpus::ingest_manifest(manifest);
    corpus::attach_frontend(c, lm.model->frontend());
    const auto index = corpus::build_token_index(c, lm.model->config().scale, 2);
    analysis::SweepOptions so;
    so.n = n;
    so.batches = batches;
    so.seed = seed.value_or(0);
    so.representation = joint ? analysis::Representation::JointEmbedding : analysis::Representation::TokenEncoding;
    if (!token.empty()) so.token = token;
    const auto r = analysis::self_similarity_sweep(*lm.model, c, index, so);
    print_json(out, {{"scale", corpus::to_string(r.scale)},
                     {"token", token.empty() ? json(nullptr) : json(token)},
                     {"n", n},
                     {"batches", r.per_batch.size()},
                     {"representation", joint ? "joint" : "token"},
                     {"mean_s", r.mean_s}});
    return kOk;
}

int cmd_simmat(const fs::path& ckpt, const fs::path& texts_path, const std::string& token, const fs::path& out_csv,
               std::ostream& out) {
    const auto lm = load_model(ckpt);
    std::ifstream in(texts_path);
    if (!in) throw Error(ErrorCode::ConfigInvalid, "cannot open " + texts_path.string());
    std::vector<std::string> sentences;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) sentences.push_back(line);
    const auto m = analysis::export_similarity_matrix(*lm.model, sentences, token, out_csv);
    print_json(out, {{"csv", out_csv.string()},
                     {"heatmap", fs::path(out_csv).replace_extension(".pgm").string()},
                     {"n", m.rows()},
                     {"s", m.rows() >= 2 ? analysis::self_similarity(m) : 1.0}});
    return kOk;
}

int cmd_transfer(const fs::path& ckpt, const std::string& word_ckpt, const std::string& src, const std::string& ref,
                 const std::string& token, const std::string& scale, const fs::path& out_path, std::ostream& out) {
    const auto provider = adapter::FrozenFeatureProvider::load(
        ckpt, word_ckpt.empty() ? std::nullopt : std::optional<fs::path>(word_ckpt));
    const auto r = analysis::prosody_transfer(provider, src, ref, token, corpus::parse_scale(scale));
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    analysis::write_features(r.transferred, out_path);
    print_json(out, {{"features", out_path.string()},
                     {"rows", r.transferred.rows()},
                     {"cols", r.transferred.cols()},
                     {"span", {r.span_begin, r.span_end}}});
    return kOk;
}

int cmd_probe(const fs::path& ckpt_ph, const std::string& ckpt_word, const fs::path& manifest, const fs::path& out_path,
              const std::string& config, std::optional<std::uint64_t> seed, std::ostream& out) {
    adapter::ProbeConfig pc;
    if (!config.empty()) {
        const auto rc = load_config(config);
        if (rc.extra.contains("probe")) adapter::from_json_strict(rc.extra["probe"], pc);
    }
    if (seed) pc.seed = *seed;
    const auto provider = adapter::FrozenFeatureProvider::load(
        ckpt_ph, ckpt_word.empty() ? std::nullopt : std::optional<fs::path>(ckpt_word));
    const auto all = corpus::ingest_manifest(manifest, corpus::IngestOptions{false});
    const auto train = corpus::split_heldout(all, pc.heldout_fraction).first;
    adapter::ProbeHistory h;
    auto probe = adapter::probe_train(provider, train, pc, &h);
    probe.phoneme_ckpt = fs::absolute(model::resolve_checkpoint(ckpt_ph)).string();
    probe.word_ckpt = ckpt_word.empty() ? "" : fs::absolute(model::resolve_checkpoint(ckpt_word)).string();
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    adapter::save_probe(probe, out_path);
    print_json(out, {{"probe", out_path.string()}, {"initial_loss", h.initial_loss}, {"final_loss", h.final_loss}});
    return kOk;
}

int cmd_probe_eval(const fs::path& probe_path, const fs::path& manifest, std::ostream& out) {
    const auto probe = adapter::load_probe(probe_path);
    const auto provider = adapter::FrozenFeatureProvider::load(
        probe.phoneme_ckpt, probe.word_ckpt.empty() ? std::nullopt : std::optional<fs::path>(probe.word_ckpt));
    const auto all = corpus::ingest_manifest(manifest, corpus::IngestOptions{false});
    const auto held = probe.config.heldout_fraction > 0.0 ? corpus::split_heldout(all, probe.config.heldout_fraction).second : all;
    const auto m = adapter::probe_eval(probe, provider, held);
    print_json(out, {{"pitch_mae_hz", m.pitch_mae_hz}, {"dur_mae_sec", m.dur_mae_sec}, {"words", m.words}});
    return kOk;
}

int report(const std::vector<diagnostics::CheckResult>& results, std::ostream& out) {
    bool ok = true;
    for (const auto& r : results) {
        out << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
        ok = ok && r.pass;
    }
    return ok ? kOk : kRuntime;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Context-aware prosody pre-training: synthetic data, contrastive pre-training and analyses",
                 args.empty() ? "prosoclap" : args[0]};
    app.require_subcommand(1);
    std::optional<std::uint64_t> seed;
    app.add_option("--seed", seed, "Seed for every stochastic step (overrides config files)");

    std::string s1, s2, s3, s4, s5, s6;
    std::string scale = "ph";
    int min_occ = 2, n = 8, batches = 0;
    bool flag = false, quiet = false;
    std::optional<std::int64_t> steps;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus (manifest, lexicon, mel caches)");
    synth->add_option("--spec", s1, "Synthetic corpus spec (JSON)")->required();
    synth->add_option("--out", s2, "Output directory")->required();

    auto* index = app.add_subcommand("index", "Build the token-occurrence index of a manifest");
    index->add_option("--manifest", s1, "Manifest (JSON lines)")->required();
    index->add_option("--scale", scale, "ph or word")->check(CLI::IsMember({"ph", "word"}));
    index->add_option("--min-occ", min_occ, "Minimum occurrences per token")->check(CLI::PositiveNumber);
    index->add_option("--out", s2, "Index file (JSON)")->required();

    auto* pre = app.add_subcommand("pretrain", "Contrastive pre-training at one scale");
    pre->add_option("--config", s1, "Run config (JSON: model, train, analysis, probe)");
    pre->add_option("--manifest", s2, "Manifest (JSON lines)")->required();
    pre->add_option("--scale", scale, "ph or word")->check(CLI::IsMember({"ph", "word"}));
    pre->add_option("--out", s3, "Run directory (checkpoint.bin, metrics.jsonl)")->required();
    pre->add_option("--steps", steps, "Override train.total_steps");
    pre->add_flag("--resume", flag, "Continue from the run directory's checkpoint");
    pre->add_flag("--quiet", quiet, "No progress output");

    auto* eval = app.add_subcommand("eval-retrieval", "Held-out top-1 retrieval accuracy in both directions");
    eval->add_option("--ckpt", s1, "Checkpoint file or run directory")->required();
    eval->add_option("--manifest", s2, "Manifest (JSON lines)")->required();
    eval->add_option("--batches", batches, "Evaluation batches (default: train.eval_batches)");

    auto* selfsim = app.add_subcommand("selfsim", "Mean self-similarity of token encodings across contexts");
    selfsim->add_option("--ckpt", s1, "Checkpoint file or run directory")->required();
    selfsim->add_option("--manifest", s2, "Manifest (JSON lines)")->required();
    selfsim->add_option("--token", s3, "Token symbol (default: sampled per batch)");
    selfsim->add_option("--n", n, "Contexts per batch")->check(CLI::Range(2, 1 << 20));
    selfsim->add_option("--batches", batches, "Number of batches (default 200)");
    selfsim->add_flag("--joint", flag, "Use joint-space embeddings instead of token encodings");

    auto* simmat = app.add_subcommand("simmat", "Export the token's similarity matrix across sentences");
    simmat->add_option("--ckpt", s1, "Checkpoint file or run directory")->required();
    simmat->add_option("--texts", s2, "One sentence per line")->required();
    simmat->add_option("--token", s3, "Token symbol")->required();
    simmat->add_option("--out", s4, "CSV path; a .pgm heatmap is written next to it")->required();

    auto* transfer = app.add_subcommand("transfer", "Token-level prosody transfer on frozen features");
    transfer->add_option("--ckpt", s1, "Phoneme-scale checkpoint")->required();
    transfer->add_option("--ckpt-word", s6, "Word-scale checkpoint (optional)");
    transfer->add_option("--src", s2, "Source text")->required();
    transfer->add_option("--ref", s3, "Reference text")->required();
    transfer->add_option("--token", s4, "Token symbol")->required();
    transfer->add_option("--scale", scale, "Token scale: ph or word")->check(CLI::IsMember({"ph", "word"}));
    transfer->add_option("--out", s5, "Feature dump (FEA1)")->required();

    auto* probe = app.add_subcommand("probe", "Train a pitch/duration probe on frozen features");
    probe->add_option("--ckpt-ph", s1, "Phoneme-scale checkpoint")->required();
    probe->add_option("--ckpt-word", s2, "Word-scale checkpoint (optional)");
    probe->add_option("--manifest", s3, "Manifest with word_pitch_hz / word_dur_sec")->required();
    probe->add_option("--out", s4, "Probe file")->required();
    probe->add_option("--config", s5, "Run config (its probe section is used)");

    auto* probe_eval = app.add_subcommand("probe-eval", "Held-out pitch/duration MAE of a trained probe");
    probe_eval->add_option("--probe", s1, "Probe file")->required();
    probe_eval->add_option("--manifest", s2, "Manifest")->required();

    app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    auto* selftest = app.add_subcommand("selftest", "Invariant sweeps over in-memory synthetic data");
    selftest->add_option("--out", s1, "Work directory for the file-based checks (skipped if absent)");

    try {
        std::vector<std::string> rev(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
        std::reverse(rev.begin(), rev.end());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kValidation;
    }

    try {
        if (synth->parsed()) return cmd_synth(s1, s2, seed, out);
        if (index->parsed()) return cmd_index(s1, scale, min_occ, s2, out);
        if (pre->parsed()) return cmd_pretrain({s1, s2, scale, s3, seed, steps, flag, quiet}, out, err);
        if (eval->parsed()) return cmd_eval(s1, s2, batches, seed, out);
        if (selfsim->parsed()) return cmd_selfsim(s1, s2, s3, n, batches > 0 ? batches : 200, flag, seed, out);
        if (simmat->parsed()) return cmd_simmat(s1, s2, s3, s4, out);
        if (transfer->parsed()) return cmd_transfer(s1, s6, s2, s3, s4, scale, s5, out);
        if (probe->parsed()) return cmd_probe(s1, s2, s3, s4, s5, seed, out);
        if (probe_eval->parsed()) return cmd_probe_eval(s1, s2, out);
        if (app.got_subcommand("gradcheck")) return report(diagnostics::run_gradchecks(seed.value_or(1)), out);
        if (selftest->parsed())
            return report(diagnostics::run_selftest(seed.value_or(1), s1.empty() ? std::nullopt : std::optional<fs::path>(s1)),
                          out);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return is_validation(e.code()) ? kValidation : kRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kValidation;
}

}  // namespace prosoclap::cli
