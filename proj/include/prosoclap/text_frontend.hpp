#pragma once

// Text normalization, dictionary G2P, word-internal BPE, and the TextItem
// container that carries both token streams with their word alignments.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace prosoclap::text {

class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    Vocab();
    explicit Vocab(std::span<const std::string> symbols);

    // Returns the id of `symbol`, inserting it if absent.
    int add(const std::string& symbol);
    // UNK for unknown symbols.
    int id(const std::string& symbol) const;
    bool contains(const std::string& symbol) const { return ids_.count(symbol) != 0; }
    const std::string& symbol(int id) const;
    int size() const { return static_cast<int>(symbols_.size()); }
    // Non-reserved symbols in id order.
    std::vector<std::string> symbols() const;

private:
    std::vector<std::string> symbols_;
    std::unordered_map<std::string, int> ids_;
};

using Lexicon = std::map<std::string, std::vector<std::string>>;

// `WORD<TAB>PH1 PH2 ...` per line; words are lowercased on load.
Lexicon load_lexicon(const std::filesystem::path& path);
void save_lexicon(const Lexicon& lexicon, const std::filesystem::path& path);

// Lowercase, strip punctuation, split on whitespace.
std::vector<std::string> normalize_words(std::string_view text);

// Letter-to-sound fallback; empty when the word has a non-letter.
std::vector<std::string> letter_to_sound(std::string_view word);

struct Phonemized {
    std::vector<std::string> words;
    std::vector<std::string> phonemes;
    std::vector<int> ph2word;
};

Phonemized phonemize(std::string_view text, const Lexicon& lexicon, bool letter_fallback = true);

struct MergeTable {
    std::vector<std::pair<std::string, std::string>> merges;
    // Fewer merges were possible than requested.
    bool too_small = false;
};

// Deterministic BPE: most frequent adjacent pair wins, ties broken by the
// lexicographically smallest (left, right). Merges never cross words.
MergeTable train_bpe(std::span<const std::string> corpus_texts, int vocab_size);

// One `left right` merge per line, priority order.
MergeTable load_merges(const std::filesystem::path& path);
void save_merges(const MergeTable& table, const std::filesystem::path& path);

class BpeModel {
public:
    BpeModel() = default;
    explicit BpeModel(MergeTable table);

    // Greedy lowest-rank merging inside one word.
    std::vector<std::string> segment_word(std::string_view word) const;
    // ids and bpe2word over the normalized words of `text`.
    std::pair<std::vector<int>, std::vector<int>> encode(std::string_view text) const;
    std::pair<std::vector<int>, std::vector<int>> encode_words(std::span<const std::string> words) const;
    // Concatenates the symbols of `ids` (UNK renders as empty).
    std::string decode(std::span<const int> ids) const;

    const Vocab& vocab() const { return vocab_; }
    const MergeTable& table() const { return table_; }

private:
    MergeTable table_;
    std::map<std::pair<std::string, std::string>, int> ranks_;
    Vocab vocab_;
};

struct TextItem {
    std::vector<int> phonemes;
    std::vector<int> bpes;
    std::vector<std::string> words;
    std::vector<int> ph2word;
    std::vector<int> bpe2word;

    int word_count() const { return static_cast<int>(words.size()); }
};

// Empty string when the item satisfies every invariant, otherwise the first violation.
std::string validate(const TextItem& item);

// Lexicon, phoneme vocabulary and BPE model bundled for one model/run.
class TextFrontend {
public:
    TextFrontend() = default;
    TextFrontend(Lexicon lexicon, Vocab phoneme_vocab, BpeModel bpe, bool letter_fallback = true);

    TextItem build(std::string_view text) const;
    // From externally supplied phonemes/alignment (manifest rows).
    TextItem build_aligned(std::span<const std::string> words, std::span<const std::string> phonemes,
                           std::span<const int> ph2word) const;

    const Lexicon& lexicon() const { return lexicon_; }
    const Vocab& phoneme_vocab() const { return phoneme_vocab_; }
    const BpeModel& bpe() const { return bpe_; }
    bool letter_fallback() const { return letter_fallback_; }

private:
    Lexicon lexicon_;
    Vocab phoneme_vocab_;
    BpeModel bpe_;
    bool letter_fallback_ = true;
};

TextItem build_text_item(std::string_view text, const Lexicon& lexicon, const BpeModel& bpe, Vocab& phoneme_vocab,
                         bool letter_fallback = true);

}  // namespace prosoclap::text
