#include "prosoclap/text_encoder.hpp"

#include "prosoclap/error.hpp"

#include <cmath>
#include <numeric>

namespace prosoclap::model {

void TextEncoderConfig::validate() const {
    if (hidden < 1 || ffn < 1 || kernel < 1 || blocks_per_stack < 1 || fusion_blocks < 1 || heads < 1 ||
        joint_dim < 1)
        throw Error(ErrorCode::ConfigInvalid, "text encoder counts must be >= 1");
    if (hidden % heads != 0) throw Error(ErrorCode::ConfigInvalid, "text hidden must be divisible by heads");
    if (kernel % 2 == 0) throw Error(ErrorCode::ConfigInvalid, "text conv kernel must be odd");
    if (dropout < 0.0 || dropout >= 1.0) throw Error(ErrorCode::ConfigInvalid, "dropout must be in [0, 1)");
}

FftStack FftStack::create(nn::ParamStore& store, const std::string& name, std::optional<int> vocab,
                          const TextEncoderConfig& config, int blocks, std::mt19937_64& rng) {
    FftStack s;
    if (vocab) {
        s.embedding = store.add(name + ".embedding",
                                nn::normal_init(*vocab, config.hidden, 1.0 / std::sqrt(config.hidden), rng));
    }
    for (int b = 0; b < blocks; ++b)
        s.blocks.push_back(nn::FftBlock::create(store, name + ".block" + std::to_string(b), config.hidden,
                                                config.ffn, config.kernel, config.heads, rng));
    return s;
}

Var FftStack::forward_ids(std::span<const int> ids, std::span<const std::uint8_t> pad_mask, double dropout,
                          std::mt19937_64* rng) const {
    if (ids.empty()) throw Error(ErrorCode::EmptySequence, "token sequence is empty");
    const int hidden = static_cast<int>(embedding.cols());
    for (int id : ids)
        if (id < 0 || id >= embedding.rows()) throw Error(ErrorCode::IndexOutOfRange, "token id " + std::to_string(id));
    Var x = ag::scale(ag::gather_rows(embedding, ids), std::sqrt(static_cast<double>(hidden)));
    x = ag::add(x, Var(nn::sinusoidal_positions(static_cast<int>(ids.size()), hidden)));
    if (rng && dropout > 0.0) x = ag::dropout(x, dropout, *rng);
    return forward_hidden(nn::mask_rows(x, pad_mask), pad_mask, dropout, rng);
}

Var FftStack::forward_hidden(const Var& x, std::span<const std::uint8_t> pad_mask, double dropout,
                             std::mt19937_64* rng) const {
    if (x.rows() == 0) throw Error(ErrorCode::EmptySequence, "hidden sequence is empty");
    Var h = x;
    for (const auto& block : blocks) h = block(h, pad_mask, dropout, rng);
    return h;
}

namespace {

int check_alignment(std::span<const int> unit2word) {
    if (unit2word.empty()) throw Error(ErrorCode::AlignmentGap, "empty alignment");
    int prev = -1;
    for (int w : unit2word) {
        if (w < prev) throw Error(ErrorCode::AlignmentGap, "alignment decreases");
        if (w > prev + 1) throw Error(ErrorCode::AlignmentGap, "word " + std::to_string(prev + 1) + " has no units");
        prev = w;
    }
    return prev + 1;
}

}  // namespace

Var word_pool(const Var& hidden, std::span<const int> unit2word) {
    return word_pool(hidden, unit2word, check_alignment(unit2word));
}

Var word_pool(const Var& hidden, std::span<const int> unit2word, int words) {
    if (static_cast<ag::Index>(unit2word.size()) != hidden.rows())
        throw Error(ErrorCode::ShapeMismatch, "alignment length differs from sequence length");
    if (check_alignment(unit2word) != words)
        throw Error(ErrorCode::AlignmentGap, "alignment does not cover all " + std::to_string(words) + " words");
    return ag::segment_mean(hidden, unit2word, words);
}

Var word2ph_expand(const Var& word_hidden, std::span<const int> ph2word) {
    for (int w : ph2word)
        if (w < 0 || w >= word_hidden.rows())
            throw Error(ErrorCode::IndexOutOfRange, "ph2word entry " + std::to_string(w));
    return ag::gather_rows(word_hidden, ph2word);
}

ProjectionHead ProjectionHead::create(nn::ParamStore& store, const std::string& name, int in, int out,
                                      std::mt19937_64& rng) {
    return {nn::LayerNorm::create(store, name + ".norm", in), nn::Linear::create(store, name + ".linear", in, out, rng)};
}

Var ProjectionHead::operator()(const Var& x) const { return ag::l2_normalize_rows(linear(norm(x))); }

TextEncoder::TextEncoder(const TextEncoderConfig& config, int phoneme_vocab, int bpe_vocab, nn::ParamStore& store,
                         std::mt19937_64& rng, const std::string& prefix)
    : config_(config) {
    config_.validate();
    phoneme_stack_ = FftStack::create(store, prefix + ".phoneme", phoneme_vocab, config_, config_.blocks_per_stack, rng);
    if (!config_.no_bpe)
        bpe_stack_ = FftStack::create(store, prefix + ".bpe", bpe_vocab, config_, config_.blocks_per_stack, rng);
    fusion_stack_ = FftStack::create(store, prefix + ".fusion", std::nullopt, config_, config_.fusion_blocks, rng);
}

Var TextEncoder::forward(const text::TextItem& item, std::mt19937_64* rng) const {
    return forward_padded(item, {}, {}, rng);
}

Var TextEncoder::forward_padded(const text::TextItem& item, std::span<const std::uint8_t> phoneme_mask,
                                std::span<const std::uint8_t> bpe_mask, std::mt19937_64* rng) const {
    const double p = config_.dropout;
    Var phonemes = phoneme_stack_.forward_ids(item.phonemes, phoneme_mask, p, rng);
    Var fused = phonemes;
    if (!config_.no_bpe) {
        Var bpes = bpe_stack_.forward_ids(item.bpes, bpe_mask, p, rng);
        if (item.bpe2word.size() != item.bpes.size()) {
            std::vector<int> prefix(item.bpe2word.size());
            std::iota(prefix.begin(), prefix.end(), 0);
            bpes = ag::gather_rows(bpes, prefix);
        }
        Var aligned = word2ph_expand(word_pool(bpes, item.bpe2word), item.ph2word);
        if (aligned.rows() != phonemes.rows()) {
            Var zeros(ag::Matrix::Zero(phonemes.rows() - aligned.rows(), phonemes.cols()));
            const Var parts[] = {aligned, zeros};
            aligned = ag::vcat(parts);
        }
        fused = ag::add(phonemes, aligned);
    }
    return fusion_stack_.forward_hidden(fused, phoneme_mask, p, rng);
}

Var select_token_encoding(const Var& encodings, const text::TextItem& item, corpus::Scale scale, int position) {
    if (scale == corpus::Scale::Phoneme) {
        if (position < 0 || position >= encodings.rows())
            throw Error(ErrorCode::PositionOutOfRange, "phoneme position " + std::to_string(position));
        const int row[] = {position};
        return ag::gather_rows(encodings, row);
    }
    if (position < 0 || position >= item.word_count())
        throw Error(ErrorCode::PositionOutOfRange, "word position " + std::to_string(position));
    Var words = word_pool(encodings, item.ph2word, item.word_count());
    const int row[] = {position};
    return ag::gather_rows(words, row);
}

}  // namespace prosoclap::model
