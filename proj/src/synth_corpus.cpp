#include "prosoclap/synth_corpus.hpp"

#include "prosoclap/error.hpp"
#include "prosoclap/hash.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

namespace prosoclap::synth {

using nlohmann::json;

namespace {

constexpr const char* kConsonants[] = {"b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v"};
constexpr const char* kConsonantPhones[] = {"B", "D", "G", "K", "L", "M", "N", "P", "R", "S", "T", "V"};
constexpr const char* kVowels[] = {"a", "e", "i", "o", "u"};
constexpr const char* kVowelPhones[] = {"AA", "EH", "IY", "OW", "UW"};

constexpr float kBackground = -8.0f;
constexpr float kBandAmplitude = 4.0f;
constexpr double kBandWidth = 1.2;
constexpr double kBaseBin = 14.0;
constexpr double kLevelStep = 2.0;
constexpr int kPitchRegion = 40;  // pitch band lives below this bin, spectral envelope above
constexpr double kHzBase = 80.0;
constexpr double kHzPerBin = 10.0;

constexpr std::uint64_t kOffsetSeed = 0x0ff5e7ULL;
constexpr std::uint64_t kDurationSeed = 0xd0a7104ULL;
constexpr std::uint64_t kEnvelopeSeed = 0xe4e10b3ULL;

const std::string kStart = "<s>";
const std::string kEnd = "</s>";

double contour_value(Contour c, double u) {
    switch (c) {
        case Contour::Rising: return -4.0 + 8.0 * u;
        case Contour::Falling: return 4.0 - 8.0 * u;
        case Contour::Flat: return 0.0;
        case Contour::Peak: return 4.0 - 16.0 * std::abs(u - 0.5);
        case Contour::Dip: return -4.0 + 16.0 * std::abs(u - 0.5);
        case Contour::Zigzag: return u < 0.5 ? -4.0 + 16.0 * u : 12.0 - 16.0 * u;
    }
    return 0.0;
}

int base_duration(const std::string& phone) { return 3 + static_cast<int>(fnv1a(phone, kDurationSeed) % 3); }

// Pitch band centre (in mel bins) at frame t of a d-frame phoneme.
double band_centre(const TokenRender& p, int t, int d) {
    const double u = d > 1 ? static_cast<double>(t) / (d - 1) : 0.5;
    return kBaseBin + kLevelStep * p.offset_level + contour_value(contour_for_class(p.context_class), u);
}

template <typename T>
T get_field(const json& j, const std::string& key) {
    try {
        return j.get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SpecInvalid, "bad value for '" + key + "': " + e.what());
    }
}

}  // namespace

void SynthSpec::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::SpecInvalid, what); };
    if (vocab_size < 2) fail("vocab_size must be >= 2");
    if (homophone_pairs < 0 || homophone_pairs > vocab_size / 2) fail("homophone_pairs must be in [0, vocab_size/2]");
    if (vocab_size - homophone_pairs > 60 + 60 * 60) fail("vocab_size exceeds the syllable inventory");
    if (n_utterances < 1) fail("n_utterances must be >= 1");
    if (min_words < 2 || max_words < min_words) fail("need 2 <= min_words <= max_words");
    if (context_classes < 2 || context_classes > 6) fail("context_classes must be in [2, 6]");
    if (offset_levels < 1 || offset_levels > 8) fail("offset_levels must be in [1, 8]");
    if (duration_levels < 1 || duration_levels > 4) fail("duration_levels must be in [1, 4]");
    if (!(noise >= 0.0) || noise > 1.0) fail("noise must be in [0, 1]");
    if (mel_bins < 80) fail("mel_bins must be >= 80");
    if (hop < 1 || sample_rate < 1) fail("hop and sample_rate must be positive");
}

json to_json(const SynthSpec& s) {
    return {{"vocab_size", s.vocab_size},     {"homophone_pairs", s.homophone_pairs},
            {"n_utterances", s.n_utterances}, {"min_words", s.min_words},
            {"max_words", s.max_words},       {"context_classes", s.context_classes},
            {"offset_levels", s.offset_levels}, {"duration_levels", s.duration_levels},
            {"noise", s.noise},               {"seed", s.seed},
            {"mel_bins", s.mel_bins},         {"hop", s.hop},
            {"sample_rate", s.sample_rate}};
}

SynthSpec synth_spec_from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::SpecInvalid, "synth spec must be a JSON object");
    SynthSpec s;
    for (const auto& [key, v] : j.items()) {
        if (key == "vocab_size") s.vocab_size = get_field<int>(v, key);
        else if (key == "homophone_pairs") s.homophone_pairs = get_field<int>(v, key);
        else if (key == "n_utterances") s.n_utterances = get_field<int>(v, key);
        else if (key == "min_words") s.min_words = get_field<int>(v, key);
        else if (key == "max_words") s.max_words = get_field<int>(v, key);
        else if (key == "context_classes") s.context_classes = get_field<int>(v, key);
        else if (key == "offset_levels") s.offset_levels = get_field<int>(v, key);
        else if (key == "duration_levels") s.duration_levels = get_field<int>(v, key);
        else if (key == "noise") s.noise = get_field<double>(v, key);
        else if (key == "seed") s.seed = get_field<std::uint64_t>(v, key);
        else if (key == "mel_bins") s.mel_bins = get_field<int>(v, key);
        else if (key == "hop") s.hop = get_field<int>(v, key);
        else if (key == "sample_rate") s.sample_rate = get_field<int>(v, key);
        else throw Error(ErrorCode::SpecInvalid, "unknown key '" + key + "'");
    }
    s.validate();
    return s;
}

std::vector<Word> make_vocabulary(const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    const int base = spec.vocab_size - spec.homophone_pairs;
    std::vector<Word> words;
    std::set<std::string> seen;
    while (static_cast<int>(words.size()) < base) {
        Word w;
        const int syllables = 1 + static_cast<int>(rng() % 2);
        for (int s = 0; s < syllables; ++s) {
            const auto c = rng() % 12, v = rng() % 5;
            w.spelling += std::string(kConsonants[c]) + kVowels[v];
            w.phones.push_back(kConsonantPhones[c]);
            w.phones.push_back(kVowelPhones[v]);
        }
        if (seen.insert(w.spelling).second) words.push_back(std::move(w));
    }
    // 'h' never occurs in base spellings, so the variants cannot collide.
    for (int i = 0; i < spec.homophone_pairs; ++i) words.push_back({words[i].spelling + "h", words[i].phones});
    return words;
}

text::Lexicon make_lexicon(const SynthSpec& spec) {
    text::Lexicon lex;
    for (auto& w : make_vocabulary(spec)) lex.emplace(w.spelling, w.phones);
    return lex;
}

int context_class(const std::string& previous_word, int classes) {
    return static_cast<int>(fnv1a(previous_word) % static_cast<std::uint64_t>(classes));
}

Contour contour_for_class(int c) { return static_cast<Contour>(c % 6); }

TokenRender render_params(const SynthSpec& spec, const std::vector<std::string>& words, std::size_t w) {
    const std::string& prev = w == 0 ? kStart : words[w - 1];
    const std::string& next = w + 1 < words.size() ? words[w + 1] : kEnd;
    TokenRender p;
    p.context_class = context_class(prev, spec.context_classes);
    p.offset_level = static_cast<int>(fnv1a(next, kOffsetSeed) % static_cast<std::uint64_t>(spec.offset_levels));
    p.duration_level = static_cast<int>(fnv1a(next, kDurationSeed) % static_cast<std::uint64_t>(spec.duration_levels));
    return p;
}

audio::FeatureMatrix render_phoneme(const SynthSpec& spec, const std::string& phone, const TokenRender& p) {
    const int d = base_duration(phone) + 2 * p.duration_level;
    audio::FeatureMatrix m = audio::FeatureMatrix::Constant(spec.mel_bins, d, kBackground);

    // Two phone-specific envelope bumps above the pitch region.
    const auto h = fnv1a(phone, kEnvelopeSeed);
    const double f1 = kPitchRegion + 4 + static_cast<double>(h % 16);
    const double f2 = kPitchRegion + 20 + static_cast<double>((h >> 8) % 16);
    for (int b = kPitchRegion; b < spec.mel_bins; ++b) {
        const double e = 2.0 * (std::exp(-0.5 * std::pow((b - f1) / 2.5, 2)) + std::exp(-0.5 * std::pow((b - f2) / 2.5, 2)));
        m.row(b).array() += static_cast<float>(e);
    }
    for (int t = 0; t < d; ++t) {
        const double c = band_centre(p, t, d);
        for (int b = 0; b < kPitchRegion; ++b)
            m(b, t) += static_cast<float>(kBandAmplitude * std::exp(-0.5 * std::pow((b - c) / kBandWidth, 2)));
    }
    return m;
}

GeneratedUtterance generate_utterance(const SynthSpec& spec, const std::vector<Word>& vocab, int index,
                                      bool with_noise) {
    char id[32];
    std::snprintf(id, sizeof id, "synth_%05d", index);
    GeneratedUtterance g;
    g.id = id;
    std::mt19937_64 rng(spec.seed ^ fnv1a(g.id));

    const int n_words = spec.min_words + static_cast<int>(rng() % static_cast<std::uint64_t>(spec.max_words - spec.min_words + 1));
    std::vector<const Word*> chosen;
    for (int w = 0; w < n_words; ++w) {
        chosen.push_back(&vocab[rng() % vocab.size()]);
        g.words.push_back(chosen.back()->spelling);
    }

    std::vector<audio::FeatureMatrix> patches;
    int frame = 0;
    for (int w = 0; w < n_words; ++w) {
        const TokenRender p = render_params(spec, g.words, static_cast<std::size_t>(w));
        g.classes.push_back(p.context_class);
        const int word_start = frame;
        double centre_sum = 0.0;
        for (const auto& ph : chosen[static_cast<std::size_t>(w)]->phones) {
            auto patch = render_phoneme(spec, ph, p);
            const int d = static_cast<int>(patch.cols());
            for (int t = 0; t < d; ++t) centre_sum += band_centre(p, t, d);
            g.phones.push_back(ph);
            g.ph2word.push_back(w);
            g.ph_frames.emplace_back(frame, frame + d);
            frame += d;
            patches.push_back(std::move(patch));
        }
        const int frames = frame - word_start;
        g.word_frames.emplace_back(word_start, frame);
        g.word_pitch_hz.push_back(kHzBase + kHzPerBin * centre_sum / frames);
        g.word_dur_sec.push_back(static_cast<double>(frames) * spec.hop / spec.sample_rate);
    }

    g.mel.values.resize(spec.mel_bins, frame);
    g.mel.sample_rate = static_cast<float>(spec.sample_rate);
    g.mel.hop = spec.hop;
    int col = 0;
    for (const auto& p : patches) {
        g.mel.values.middleCols(col, p.cols()) = p;
        col += static_cast<int>(p.cols());
    }
    if (with_noise && spec.noise > 0.0) {
        std::normal_distribution<double> normal(0.0, spec.noise);
        const double bound = 3.0 * spec.noise;
        for (int b = 0; b < g.mel.values.rows(); ++b)
            for (int t = 0; t < g.mel.values.cols(); ++t)
                g.mel.values(b, t) += static_cast<float>(std::clamp(normal(rng), -bound, bound));
    }
    return g;
}

namespace {

std::string join_words(const std::vector<std::string>& words) {
    std::string text;
    for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
    return text;
}

}  // namespace

corpus::Utterance to_utterance(const GeneratedUtterance& g) {
    corpus::Utterance u;
    u.id = g.id;
    u.text = join_words(g.words);
    u.words = g.words;
    u.phones = g.phones;
    u.ph2word = g.ph2word;
    u.mel_path = "mel/" + g.id + ".mel";
    u.mel = std::make_shared<const audio::MelSpectrogram>(g.mel);
    for (std::size_t i = 0; i < g.phones.size(); ++i)
        u.phone_boundaries.push_back({audio::TokenKind::Phoneme, g.phones[i], g.ph_frames[i].first, g.ph_frames[i].second});
    for (std::size_t i = 0; i < g.words.size(); ++i)
        u.word_boundaries.push_back({audio::TokenKind::Word, g.words[i], g.word_frames[i].first, g.word_frames[i].second});
    u.word_pitch_hz = g.word_pitch_hz;
    u.word_dur_sec = g.word_dur_sec;
    return u;
}

corpus::Corpus build_corpus(const SynthSpec& spec, bool with_noise) {
    spec.validate();
    const auto vocab = make_vocabulary(spec);
    corpus::Corpus c;
    c.utterances.reserve(static_cast<std::size_t>(spec.n_utterances));
    for (int i = 0; i < spec.n_utterances; ++i) c.utterances.push_back(to_utterance(generate_utterance(spec, vocab, i, with_noise)));
    c.report.accepted = spec.n_utterances;
    return c;
}

GenerateResult generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    const auto vocab = make_vocabulary(spec);
    std::filesystem::create_directories(out_dir / "mel");

    GenerateResult r;
    r.manifest = out_dir / "manifest.jsonl";
    r.lexicon = out_dir / "lexicon.txt";
    text::Lexicon lex;
    for (const auto& w : vocab) lex.emplace(w.spelling, w.phones);
    text::save_lexicon(lex, r.lexicon);

    std::ofstream manifest(r.manifest, std::ios::trunc);
    if (!manifest) throw Error(ErrorCode::Io, "cannot write " + r.manifest.string());
    for (int i = 0; i < spec.n_utterances; ++i) {
        auto g = generate_utterance(spec, vocab, i);
        const std::string rel = "mel/" + g.id + ".mel";
        audio::write_mel_cache(g.mel, out_dir / rel);

        const std::string text = join_words(g.words);
        json ph_frames = json::array(), word_frames = json::array();
        for (auto [s, e] : g.ph_frames) ph_frames.push_back({s, e});
        for (auto [s, e] : g.word_frames) word_frames.push_back({s, e});
        json row = {{"id", g.id},
                    {"text", text},
                    {"mel_path", rel},
                    {"phones", g.phones},
                    {"ph2word", g.ph2word},
                    {"words", g.words},
                    {"ph_frames", ph_frames},
                    {"word_frames", word_frames},
                    {"word_pitch_hz", g.word_pitch_hz},
                    {"word_dur_sec", g.word_dur_sec}};
        manifest << row.dump() << '\n';
        ++r.utterances;
    }
    return r;
}

std::vector<double> contour_signature(const audio::FeatureMatrix& values, int valid_frames, int points) {
    if (valid_frames < 1 || valid_frames > values.cols() || values.rows() < kPitchRegion)
        throw Error(ErrorCode::ShapeMismatch, "contour_signature: bad segment");
    std::vector<double> track(static_cast<std::size_t>(valid_frames));
    for (int t = 0; t < valid_frames; ++t) {
        Eigen::Index arg = 0;
        values.col(t).head(kPitchRegion).maxCoeff(&arg);
        track[static_cast<std::size_t>(t)] = static_cast<double>(arg);
    }
    std::vector<double> sig(static_cast<std::size_t>(points));
    for (int k = 0; k < points; ++k) {
        const double u = points > 1 ? static_cast<double>(k) / (points - 1) : 0.5;
        sig[static_cast<std::size_t>(k)] = track[static_cast<std::size_t>(std::lround(u * (valid_frames - 1)))];
    }
    double mean = 0.0;
    for (double v : sig) mean += v;
    mean /= points;
    for (double& v : sig) v -= mean;
    return sig;
}

}  // namespace prosoclap::synth
