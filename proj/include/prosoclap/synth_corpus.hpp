#pragma once

// Deterministic synthetic corpus in which each token's mel pattern is a
// function of its text context:
//   family  (contour shape)      <- hash(previous word) mod context_classes
//   member  (pitch offset, length) <- hashes of the following word
// so a text encoder that reads context can, in principle, retrieve every segment.

#include "prosoclap/audio_features.hpp"
#include "prosoclap/corpus_index.hpp"
#include "prosoclap/text_frontend.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace prosoclap::synth {

enum class Contour { Rising, Falling, Flat, Peak, Dip, Zigzag };

struct SynthSpec {
    int vocab_size = 50;
    int homophone_pairs = 8;  // words sharing a pronunciation with another word
    int n_utterances = 2000;
    int min_words = 6;
    int max_words = 12;
    int context_classes = 4;
    int offset_levels = 8;
    int duration_levels = 3;
    double noise = 0.1;
    std::uint64_t seed = 7;
    int mel_bins = 80;
    int hop = 256;
    int sample_rate = 22050;

    void validate() const;
};

nlohmann::json to_json(const SynthSpec& s);
SynthSpec synth_spec_from_json(const nlohmann::json& j);  // unknown keys rejected

struct Word {
    std::string spelling;
    std::vector<std::string> phones;
};

// Word list with pronunciations; the last `homophone_pairs` entries re-use
// earlier pronunciations under a different spelling.
std::vector<Word> make_vocabulary(const SynthSpec& spec);
text::Lexicon make_lexicon(const SynthSpec& spec);

int context_class(const std::string& previous_word, int classes);
Contour contour_for_class(int context_class);

struct TokenRender {
    int context_class = 0;
    int offset_level = 0;
    int duration_level = 0;
};

// Prosody parameters for word `w` of `words` (sentence markers at the ends).
TokenRender render_params(const SynthSpec& spec, const std::vector<std::string>& words, std::size_t w);

// Clean (noise-free) mel patch for one phoneme, F x frames.
audio::FeatureMatrix render_phoneme(const SynthSpec& spec, const std::string& phone, const TokenRender& params);

struct GeneratedUtterance {
    std::string id;
    std::vector<std::string> words;
    std::vector<std::string> phones;
    std::vector<int> ph2word;
    std::vector<int> classes;  // per word
    audio::MelSpectrogram mel;
    std::vector<std::pair<int, int>> ph_frames;
    std::vector<std::pair<int, int>> word_frames;
    std::vector<double> word_pitch_hz;
    std::vector<double> word_dur_sec;
};

// Utterance `index`; each utterance derives its own seed so generation can be parallel.
GeneratedUtterance generate_utterance(const SynthSpec& spec, const std::vector<Word>& vocab, int index,
                                      bool with_noise = true);

// Manifest-equivalent in-memory row (mel attached, text item not yet built).
corpus::Utterance to_utterance(const GeneratedUtterance& g);
// Whole corpus without touching the filesystem; rows are identical to what `generate` writes.
corpus::Corpus build_corpus(const SynthSpec& spec, bool with_noise = true);

struct GenerateResult {
    std::filesystem::path manifest;
    std::filesystem::path lexicon;
    int utterances = 0;
};

// Writes out_dir/manifest.jsonl, out_dir/lexicon.txt, out_dir/mel/<id>.mel.
GenerateResult generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

// Oracle feature for a clean segment: pitch-track shape (band argmax per
// frame, mean removed) sampled at `points` normalized times.
std::vector<double> contour_signature(const audio::FeatureMatrix& values, int valid_frames, int points = 5);

}  // namespace prosoclap::synth
