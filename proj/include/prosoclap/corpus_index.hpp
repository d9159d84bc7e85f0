#pragma once

// Manifest ingestion, the per-scale token-occurrence index, and same-token
// contrastive batch sampling.

#include "prosoclap/audio_features.hpp"
#include "prosoclap/text_frontend.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace prosoclap::corpus {

enum class Scale { Phoneme, Word };

std::string to_string(Scale scale);
Scale parse_scale(const std::string& s);  // "ph"/"phoneme" or "word"

struct Utterance {
    std::string id;
    std::string text;
    std::vector<std::string> words;
    std::vector<std::string> phones;
    std::vector<int> ph2word;
    text::TextItem text_item;  // filled by attach_frontend
    std::filesystem::path mel_path;
    std::shared_ptr<const audio::MelSpectrogram> mel;
    std::vector<audio::TokenBoundary> phone_boundaries;
    std::vector<audio::TokenBoundary> word_boundaries;
    std::vector<double> word_pitch_hz;
    std::vector<double> word_dur_sec;

    const std::vector<audio::TokenBoundary>& boundaries(Scale scale) const {
        return scale == Scale::Phoneme ? phone_boundaries : word_boundaries;
    }
};

struct IngestReport {
    int accepted = 0;
    int rejected = 0;
    std::vector<std::string> errors;  // "line N: reason"
};

struct Corpus {
    std::vector<Utterance> utterances;
    IngestReport report;

    std::size_t size() const { return utterances.size(); }
    bool empty() const { return utterances.empty(); }
};

struct IngestOptions {
    bool load_mels = true;
};

// Rows failing validation are counted and skipped; throws AllRowsInvalid if none survive.
Corpus ingest_manifest(const std::filesystem::path& path, const IngestOptions& options = {});

// Validates one parsed row; empty string when valid.
std::string validate_utterance(const Utterance& u);

// Lexicon from the manifest alignments, sorted phoneme vocabulary, BPE trained on the texts.
text::TextFrontend frontend_from_corpus(const Corpus& corpus, int bpe_vocab_size);
void attach_frontend(Corpus& corpus, const text::TextFrontend& frontend);

// Deterministic split on a hash of the utterance id.
std::pair<Corpus, Corpus> split_heldout(const Corpus& corpus, double heldout_fraction);

struct Occurrence {
    std::size_t utterance = 0;  // index into Corpus::utterances
    std::string utterance_id;
    int position = 0;           // index into the scale-level token sequence

    bool operator==(const Occurrence&) const = default;
};

struct TokenIndex {
    Scale scale = Scale::Phoneme;
    int min_occurrences = 2;
    std::map<std::string, std::vector<Occurrence>> tokens;

    std::vector<std::string> symbols() const;
    std::size_t total_occurrences() const;
};

TokenIndex build_token_index(const Corpus& corpus, Scale scale, int min_occurrences = 2);

void save_token_index(const TokenIndex& index, const std::filesystem::path& path);
TokenIndex load_token_index(const std::filesystem::path& path, const Corpus& corpus);

struct BatchItem {
    text::TextItem text;
    audio::SpeechSegment speech;
    int token_position = 0;
    std::size_t utterance = 0;
};

struct ContrastiveBatch {
    Scale scale = Scale::Phoneme;
    std::string token_symbol;
    std::vector<BatchItem> items;
    int distinct_occurrences = 0;

    double duplication_rate() const {
        return items.empty() ? 0.0 : 1.0 - static_cast<double>(distinct_occurrences) / items.size();
    }
};

struct SamplerOptions {
    int batch_size = 8;
    int segment_length = 128;
    bool occurrence_weighted = false;
};

ContrastiveBatch sample_contrastive_batch(const TokenIndex& index, const Corpus& corpus, const SamplerOptions& options,
                                          std::mt19937_64& rng,
                                          const std::optional<std::string>& token_symbol = std::nullopt);

// Symbol at `position` of the item's scale-level sequence.
std::string token_at(const Utterance& u, Scale scale, int position);

}  // namespace prosoclap::corpus
