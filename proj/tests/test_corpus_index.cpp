#include "prosoclap/corpus_index.hpp"
#include "prosoclap/error.hpp"
#include "prosoclap/synth_corpus.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <random>

using namespace prosoclap;
using namespace prosoclap::corpus;

namespace {

// Two frames per phoneme; mel values encode (bin, frame) so segments are traceable.
Utterance make_utt(const std::string& id, const std::vector<std::pair<std::string, std::vector<std::string>>>& words) {
    Utterance u;
    u.id = id;
    int frame = 0;
    for (std::size_t w = 0; w < words.size(); ++w) {
        const int start = frame;
        u.words.push_back(words[w].first);
        u.text += (w ? " " : "") + words[w].first;
        for (const auto& p : words[w].second) {
            u.phones.push_back(p);
            u.ph2word.push_back(static_cast<int>(w));
            u.phone_boundaries.push_back({audio::TokenKind::Phoneme, p, frame, frame + 2});
            frame += 2;
        }
        u.word_boundaries.push_back({audio::TokenKind::Word, words[w].first, start, frame});
        u.word_pitch_hz.push_back(100.0 + w);
        u.word_dur_sec.push_back(0.01 * (frame - start));
    }
    auto mel = std::make_shared<audio::MelSpectrogram>();
    mel->values.resize(4, frame);
    for (int f = 0; f < 4; ++f)
        for (int t = 0; t < frame; ++t) mel->values(f, t) = static_cast<float>(f * 1000 + t);
    u.mel = mel;
    return u;
}

nlohmann::json to_row(const Utterance& u, const std::string& mel_path) {
    nlohmann::json ph = nlohmann::json::array(), wf = nlohmann::json::array();
    for (const auto& b : u.phone_boundaries) ph.push_back({b.start_frame, b.end_frame});
    for (const auto& b : u.word_boundaries) wf.push_back({b.start_frame, b.end_frame});
    return {{"id", u.id},        {"text", u.text},   {"mel_path", mel_path},   {"phones", u.phones},
            {"ph2word", u.ph2word}, {"words", u.words}, {"ph_frames", ph},      {"word_frames", wf},
            {"word_pitch_hz", u.word_pitch_hz},          {"word_dur_sec", u.word_dur_sec}};
}

Corpus five_ae_corpus() {
    Corpus c;
    c.utterances.push_back(make_utt("u0", {{"cat", {"K", "AE0", "T"}}, {"at", {"AE0", "T"}}}));
    c.utterances.push_back(make_utt("u1", {{"bat", {"B", "AE0", "T"}}}));
    c.utterances.push_back(make_utt("u2", {{"at", {"AE0", "T"}}, {"pat", {"P", "AE0", "T"}}, {"do", {"D", "UW"}}}));
    return c;
}

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorCode::Io;
}

}  // namespace

TEST(Ingest, EmptyManifestIsAllRowsInvalid) {
    testkit::TempDir dir;
    std::ofstream(dir / "m.jsonl") << "";
    EXPECT_EQ(code_of([&] { ingest_manifest(dir / "m.jsonl"); }), ErrorCode::AllRowsInvalid);
    EXPECT_EQ(code_of([&] { ingest_manifest(dir / "missing.jsonl"); }), ErrorCode::ManifestUnreadable);
}

TEST(Ingest, OneValidRowAmongBadOnes) {
    testkit::TempDir dir;
    const auto u = make_utt("only", {{"go", {"G", "OW"}}, {"up", {"AH", "P"}}});
    audio::write_mel_cache(*u.mel, dir / "only.mel");
    {
        std::ofstream m(dir / "m.jsonl");
        m << to_row(u, "only.mel").dump() << "\n";
        m << "{not json\n";
        auto bad = to_row(u, "only.mel");
        bad["id"] = "bad";
        bad["words"] = {"go"};  // disagrees with the text
        m << bad.dump() << "\n";
        m << to_row(u, "only.mel").dump() << "\n";  // duplicate id
    }
    const auto c = ingest_manifest(dir / "m.jsonl");
    EXPECT_EQ(c.size(), 1u);
    EXPECT_EQ(c.report.accepted, 1);
    EXPECT_EQ(c.report.rejected, 3);
    EXPECT_EQ(c.utterances[0].phones, u.phones);
    EXPECT_EQ(c.utterances[0].mel->values, u.mel->values);
}

TEST(Ingest, ValidationCatchesBrokenRows) {
    auto u = make_utt("x", {{"go", {"G", "OW"}}, {"up", {"AH", "P"}}});
    EXPECT_EQ(validate_utterance(u), "");
    auto a = u;
    a.phone_boundaries[1].start_frame = 1;  // overlaps phone 0
    EXPECT_NE(validate_utterance(a), "");
    auto b = u;
    b.word_boundaries[1].end_frame = 100;
    EXPECT_NE(validate_utterance(b), "");
    auto c = u;
    c.text = "go down";
    EXPECT_NE(validate_utterance(c), "");
    auto d = u;
    d.word_pitch_hz.pop_back();
    EXPECT_NE(validate_utterance(d), "");
}

TEST(Ingest, SyntheticManifestAcceptsEveryRow) {
    testkit::TempDir dir;
    auto spec = diagnostics::tiny_synth_spec();
    spec.n_utterances = 2000;
    synth::generate(spec, dir.path());
    const auto c = ingest_manifest(dir / "manifest.jsonl");
    EXPECT_EQ(c.report.accepted, 2000);
    EXPECT_EQ(c.report.rejected, 0);
}

TEST(TokenIndex, CountsOccurrences) {
    const auto idx = build_token_index(five_ae_corpus(), Scale::Phoneme, 2);
    ASSERT_TRUE(idx.tokens.count("AE0"));
    EXPECT_EQ(idx.tokens.at("AE0").size(), 5u);
    EXPECT_FALSE(idx.tokens.count("UW"));  // single occurrence
    const auto words = build_token_index(five_ae_corpus(), Scale::Word, 2);
    EXPECT_EQ(words.symbols(), std::vector<std::string>{"at"});
}

TEST(TokenIndex, MinimumAboveEveryCountIsRejected) {
    EXPECT_EQ(code_of([] { build_token_index(five_ae_corpus(), Scale::Phoneme, 99); }), ErrorCode::NoEligibleTokens);
}

TEST(TokenIndex, MatchesLinearScan) {
    const auto data = testkit::tiny_data();
    for (auto scale : {Scale::Phoneme, Scale::Word}) {
        std::map<std::string, std::size_t> counts;
        std::size_t total = 0;
        for (const auto& u : data.corpus.utterances)
            for (const auto& s : scale == Scale::Phoneme ? u.phones : u.words) ++counts[s];
        const auto idx = build_token_index(data.corpus, scale, 2);
        for (const auto& [s, n] : counts) {
            if (n >= 2) {
                ASSERT_TRUE(idx.tokens.count(s)) << s;
                EXPECT_EQ(idx.tokens.at(s).size(), n);
                total += n;
            } else {
                EXPECT_FALSE(idx.tokens.count(s));
            }
        }
        EXPECT_EQ(idx.total_occurrences(), total);
    }
}

TEST(TokenIndex, FileRoundTrip) {
    testkit::TempDir dir;
    const auto c = five_ae_corpus();
    const auto idx = build_token_index(c, Scale::Phoneme, 2);
    save_token_index(idx, dir / "index.json");
    const auto back = load_token_index(dir / "index.json", c);
    EXPECT_EQ(back.tokens, idx.tokens);
    EXPECT_EQ(back.scale, idx.scale);
}

TEST(Sampler, ExactCountDrawsEachOccurrenceOnce) {
    auto c = five_ae_corpus();
    const auto idx = build_token_index(c, Scale::Phoneme, 2);
    std::mt19937_64 rng(1);
    SamplerOptions o;
    o.batch_size = 5;
    o.segment_length = 4;
    const auto b = sample_contrastive_batch(idx, c, o, rng, std::string("AE0"));
    EXPECT_EQ(b.distinct_occurrences, 5);
    EXPECT_EQ(b.duplication_rate(), 0.0);
    std::set<std::pair<std::size_t, int>> seen;
    for (const auto& it : b.items) seen.insert({it.utterance, it.token_position});
    EXPECT_EQ(seen.size(), 5u);
}

TEST(Sampler, DegenerateAndMissingTokens) {
    auto c = five_ae_corpus();
    auto idx = build_token_index(c, Scale::Phoneme, 1);
    std::mt19937_64 rng(1);
    EXPECT_EQ(code_of([&] { sample_contrastive_batch(idx, c, {}, rng, std::string("UW")); }),
              ErrorCode::TokenDegenerate);
    EXPECT_EQ(code_of([&] { sample_contrastive_batch(idx, c, {}, rng, std::string("ZZ")); }),
              ErrorCode::TokenNotIndexed);
}

TEST(Sampler, WithReplacementTopUp) {
    auto c = five_ae_corpus();
    const auto idx = build_token_index(c, Scale::Phoneme, 2);
    std::mt19937_64 rng(4);
    SamplerOptions o;
    o.batch_size = 8;
    o.segment_length = 4;
    const auto b = sample_contrastive_batch(idx, c, o, rng, std::string("AE0"));
    EXPECT_EQ(b.items.size(), 8u);
    EXPECT_EQ(b.distinct_occurrences, 5);
    EXPECT_DOUBLE_EQ(b.duplication_rate(), 3.0 / 8.0);
}

TEST(Sampler, TypeSelectionIsUniform) {
    Corpus c;
    c.utterances.push_back(make_utt("a", {{"x", {"A", "B", "C"}}}));
    c.utterances.push_back(make_utt("b", {{"y", {"A", "B", "C", "A", "A", "A"}}}));
    const auto idx = build_token_index(c, Scale::Phoneme, 2);
    ASSERT_EQ(idx.tokens.size(), 3u);
    std::mt19937_64 rng(9);
    SamplerOptions o;
    o.batch_size = 2;
    o.segment_length = 2;
    std::map<std::string, int> hits;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) ++hits[sample_contrastive_batch(idx, c, o, rng).token_symbol];
    const double p = 1.0 / 3.0, sigma = std::sqrt(draws * p * (1 - p));
    for (const auto& [s, n] : hits) EXPECT_LT(std::abs(n - draws * p), 3 * sigma) << s;
}

TEST(Sampler, ItemsCarryTheTokenAndAreReproducible) {
    const auto data = testkit::tiny_data();
    for (auto scale : {Scale::Phoneme, Scale::Word}) {
        const auto idx = build_token_index(data.corpus, scale, 2);
        std::mt19937_64 a(17), b(17);
        SamplerOptions o;
        o.segment_length = 12;
        for (int i = 0; i < 50; ++i) {
            const auto x = sample_contrastive_batch(idx, data.corpus, o, a);
            const auto y = sample_contrastive_batch(idx, data.corpus, o, b);
            ASSERT_EQ(x.token_symbol, y.token_symbol);
            EXPECT_EQ(x.scale, scale);
            for (std::size_t k = 0; k < x.items.size(); ++k) {
                EXPECT_EQ(x.items[k].utterance, y.items[k].utterance);
                EXPECT_EQ(x.items[k].speech.values, y.items[k].speech.values);
                const auto& u = data.corpus.utterances[x.items[k].utterance];
                EXPECT_EQ(token_at(u, scale, x.items[k].token_position), x.token_symbol);
                // Re-tokenizing the text gives the same symbol at the same position.
                const auto again = data.frontend.build(u.text);
                if (scale == Scale::Phoneme)
                    EXPECT_EQ(data.frontend.phoneme_vocab().symbol(again.phonemes[x.items[k].token_position]),
                              x.token_symbol);
                else
                    EXPECT_EQ(again.words[x.items[k].token_position], x.token_symbol);
            }
        }
    }
}

TEST(Split, DeterministicAndDisjoint) {
    const auto data = testkit::tiny_data();
    const auto [train, held] = split_heldout(data.corpus, 0.25);
    EXPECT_EQ(train.size() + held.size(), data.corpus.size());
    std::set<std::string> ids;
    for (const auto& u : train.utterances) ids.insert(u.id);
    for (const auto& u : held.utterances) EXPECT_FALSE(ids.count(u.id));
    const auto again = split_heldout(data.corpus, 0.25);
    EXPECT_EQ(again.second.size(), held.size());
}
