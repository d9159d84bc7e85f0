#pragma once

// Dual-stream FFT text encoder: phoneme stack, BPE stack bridged to phoneme
// resolution by word pooling + word2ph expansion, additive fusion, fusion stack.

#include "prosoclap/corpus_index.hpp"
#include "prosoclap/nn.hpp"
#include "prosoclap/text_frontend.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace prosoclap::model {

using ag::Var;

struct TextEncoderConfig {
    int hidden = 192;
    int ffn = 768;
    int kernel = 5;
    int blocks_per_stack = 4;
    int fusion_blocks = 4;
    int heads = 2;
    double dropout = 0.1;
    int joint_dim = 192;
    bool no_bpe = false;

    void validate() const;
};

// Embedding (optional) + sinusoidal positions + FFT blocks.
struct FftStack {
    Var embedding;  // vocab x hidden; undefined for the fusion stack
    std::vector<nn::FftBlock> blocks;

    static FftStack create(nn::ParamStore& store, const std::string& name, std::optional<int> vocab,
                           const TextEncoderConfig& config, int blocks, std::mt19937_64& rng);

    // ids -> embedding*sqrt(hidden) + positions -> blocks.
    Var forward_ids(std::span<const int> ids, std::span<const std::uint8_t> pad_mask, double dropout,
                    std::mt19937_64* rng) const;
    Var forward_hidden(const Var& x, std::span<const std::uint8_t> pad_mask, double dropout,
                       std::mt19937_64* rng) const;
};

// Mean of the rows owned by each word; throws AlignmentGap if a word owns nothing.
Var word_pool(const Var& hidden, std::span<const int> unit2word);
Var word_pool(const Var& hidden, std::span<const int> unit2word, int words);
// Row i of the result is word_hidden[ph2word[i]].
Var word2ph_expand(const Var& word_hidden, std::span<const int> ph2word);

// LayerNorm -> Linear -> L2 normalisation, applied row-wise.
struct ProjectionHead {
    nn::LayerNorm norm;
    nn::Linear linear;

    static ProjectionHead create(nn::ParamStore& store, const std::string& name, int in, int out,
                                 std::mt19937_64& rng);
    Var operator()(const Var& x) const;
};

class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(const TextEncoderConfig& config, int phoneme_vocab, int bpe_vocab, nn::ParamStore& store,
                std::mt19937_64& rng, const std::string& prefix = "text");

    // Phoneme-level encoding (phonemes x hidden). `rng` enables dropout.
    Var forward(const text::TextItem& item, std::mt19937_64* rng = nullptr) const;
    // Same, over padded streams; rows beyond the mask are zero.
    Var forward_padded(const text::TextItem& item, std::span<const std::uint8_t> phoneme_mask,
                       std::span<const std::uint8_t> bpe_mask, std::mt19937_64* rng = nullptr) const;

    const TextEncoderConfig& config() const { return config_; }
    const FftStack& phoneme_stack() const { return phoneme_stack_; }

private:
    TextEncoderConfig config_;
    FftStack phoneme_stack_;
    FftStack bpe_stack_;
    FftStack fusion_stack_;
};

// Phoneme scale: row `position`; word scale: word-pooled row `position`. Result is 1 x hidden.
Var select_token_encoding(const Var& encodings, const text::TextItem& item, corpus::Scale scale, int position);

}  // namespace prosoclap::model
