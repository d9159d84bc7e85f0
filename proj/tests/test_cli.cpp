#include "cli.hpp"
#include "prosoclap/diagnostics.hpp"
#include "prosoclap/pretrain.hpp"
#include "prosoclap/synth_corpus.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <fstream>
#include <sstream>

using namespace prosoclap;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "prosoclap");
    std::ostringstream out, err;
    const int code = cli::dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

void write_json(const fs::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(2); }

}  // namespace

TEST(Cli, HelpExitsZero) {
    const auto r = run({"--help"});
    EXPECT_EQ(r.code, cli::kOk);
    EXPECT_NE(r.out.find("pretrain"), std::string::npos);
}

TEST(Cli, UnknownFlagIsAValidationError) {
    const auto r = run({"index", "--bogus"});
    EXPECT_EQ(r.code, cli::kValidation);
    EXPECT_NE(r.err.find("Usage"), std::string::npos);
    EXPECT_EQ(run({}).code, cli::kValidation);
}

TEST(Cli, BadSpecIsAValidationError) {
    testkit::TempDir dir;
    write_json(dir / "spec.json", {{"vocab_size", 50}, {"flavour", "x"}});
    EXPECT_EQ(run({"synth", "--spec", (dir / "spec.json").string(), "--out", (dir / "c").string()}).code,
              cli::kValidation);
    EXPECT_EQ(run({"synth", "--spec", (dir / "missing.json").string(), "--out", (dir / "c").string()}).code,
              cli::kValidation);
}

TEST(Cli, SelftestPasses) {
    const auto r = run({"selftest"});
    EXPECT_EQ(r.code, cli::kOk) << r.out;
    EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST(Cli, EndToEndPipeline) {
    testkit::TempDir dir;
    auto spec = diagnostics::tiny_synth_spec(3);
    spec.n_utterances = 60;
    write_json(dir / "spec.json", synth::to_json(spec));
    pretrain::TrainConfig tc;
    tc.batch_size = 4;
    tc.total_steps = 4;
    tc.warmup_steps = 1;
    tc.checkpoint_every = 2;
    tc.eval_batches = 5;
    tc.heldout_fraction = 0.2;
    tc.bpe_vocab_size = 60;
    write_json(dir / "run.json",
               {{"model", model::to_json(diagnostics::tiny_model_config())}, {"train", pretrain::to_json(tc)}});
    const std::string corpus_dir = (dir / "corpus").string(), manifest = corpus_dir + "/manifest.jsonl";
    const std::string run_dir = (dir / "run").string();

    auto r = run({"synth", "--spec", (dir / "spec.json").string(), "--out", corpus_dir});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_EQ(nlohmann::json::parse(r.out)["utterances"], 60);

    r = run({"index", "--manifest", manifest, "--out", (dir / "index.json").string()});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_EQ(nlohmann::json::parse(r.out)["rejected"], 0);

    r = run({"pretrain", "--config", (dir / "run.json").string(), "--manifest", manifest, "--out", run_dir, "--quiet"});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_TRUE(fs::exists(fs::path(run_dir) / "metrics.jsonl"));
    EXPECT_TRUE(fs::exists(fs::path(run_dir) / "checkpoint.bin"));

    r = run({"eval-retrieval", "--ckpt", run_dir, "--manifest", manifest});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    const auto acc = nlohmann::json::parse(r.out);
    EXPECT_GE(acc["top1_text_to_speech"].get<double>(), 0.0);
    EXPECT_LE(acc["top1_speech_to_text"].get<double>(), 1.0);

    r = run({"selfsim", "--ckpt", run_dir, "--manifest", manifest, "--batches", "3"});
    ASSERT_EQ(r.code, cli::kOk) << r.err;

    r = run({"probe", "--ckpt-ph", run_dir, "--manifest", manifest, "--out", (dir / "probe.json").string()});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    r = run({"probe-eval", "--probe", (dir / "probe.json").string(), "--manifest", manifest});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_TRUE(nlohmann::json::parse(r.out).contains("pitch_mae_hz"));
}

TEST(Cli, MissingCheckpointIsARuntimeError) {
    testkit::TempDir dir;
    std::ofstream(dir / "m.jsonl") << "";
    const auto r = run({"eval-retrieval", "--ckpt", (dir / "nope").string(), "--manifest", (dir / "m.jsonl").string()});
    EXPECT_NE(r.code, cli::kOk);
    EXPECT_FALSE(r.err.empty());
}
