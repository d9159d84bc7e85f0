#include "prosoclap/corpus_index.hpp"

#include "prosoclap/error.hpp"
#include "prosoclap/hash.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

namespace prosoclap::corpus {

using nlohmann::json;

std::string to_string(Scale scale) { return scale == Scale::Phoneme ? "ph" : "word"; }

Scale parse_scale(const std::string& s) {
    if (s == "ph" || s == "phoneme") return Scale::Phoneme;
    if (s == "word") return Scale::Word;
    throw Error(ErrorCode::ConfigInvalid, "unknown scale '" + s + "' (expected ph or word)");
}

namespace {

std::vector<audio::TokenBoundary> parse_frames(const json& frames, const std::vector<std::string>& symbols,
                                               audio::TokenKind kind) {
    std::vector<audio::TokenBoundary> out;
    if (frames.size() != symbols.size()) throw std::invalid_argument("frame list length differs from token count");
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto& f = frames[i];
        if (!f.is_array() || f.size() != 2) throw std::invalid_argument("frame entry is not [start,end)");
        out.push_back({kind, symbols[i], f[0].get<int>(), f[1].get<int>()});
    }
    return out;
}

Utterance parse_row(const json& row, const std::filesystem::path& base) {
    Utterance u;
    u.id = row.at("id").get<std::string>();
    u.text = row.at("text").get<std::string>();
    u.mel_path = row.at("mel_path").get<std::string>();
    if (u.mel_path.is_relative()) u.mel_path = base / u.mel_path;
    u.phones = row.at("phones").get<std::vector<std::string>>();
    u.ph2word = row.at("ph2word").get<std::vector<int>>();
    u.words = row.at("words").get<std::vector<std::string>>();
    u.phone_boundaries = parse_frames(row.at("ph_frames"), u.phones, audio::TokenKind::Phoneme);
    u.word_boundaries = parse_frames(row.at("word_frames"), u.words, audio::TokenKind::Word);
    if (row.contains("word_pitch_hz")) u.word_pitch_hz = row.at("word_pitch_hz").get<std::vector<double>>();
    if (row.contains("word_dur_sec")) u.word_dur_sec = row.at("word_dur_sec").get<std::vector<double>>();
    return u;
}

bool ordered(const std::vector<audio::TokenBoundary>& b) {
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (b[i].start_frame < 0 || b[i].start_frame >= b[i].end_frame) return false;
        if (i > 0 && b[i].start_frame < b[i - 1].end_frame) return false;
    }
    return true;
}

}  // namespace

std::string validate_utterance(const Utterance& u) {
    if (u.id.empty()) return "empty id";
    if (u.words.empty()) return "no words";
    if (text::normalize_words(u.text) != u.words) return "words do not match normalized text";
    if (u.phones.empty() || u.phones.size() != u.ph2word.size()) return "ph2word length differs from phones";
    int expected = 0;
    for (std::size_t i = 0; i < u.ph2word.size(); ++i) {
        const int w = u.ph2word[i];
        if ((i == 0 && w != 0) || (w != expected && w != expected + 1)) return "ph2word not contiguous";
        expected = w;
    }
    if (expected != static_cast<int>(u.words.size()) - 1) return "ph2word does not cover all words";
    if (u.phone_boundaries.size() != u.phones.size()) return "ph_frames count mismatch";
    if (u.word_boundaries.size() != u.words.size()) return "word_frames count mismatch";
    if (!ordered(u.phone_boundaries) || !ordered(u.word_boundaries)) return "boundaries not ordered";
    for (std::size_t w = 0; w < u.words.size(); ++w) {
        int first = -1, last = -1;
        for (std::size_t i = 0; i < u.ph2word.size(); ++i) {
            if (u.ph2word[i] != static_cast<int>(w)) continue;
            if (first < 0) first = static_cast<int>(i);
            last = static_cast<int>(i);
        }
        if (u.phone_boundaries[first].start_frame < u.word_boundaries[w].start_frame ||
            u.phone_boundaries[last].end_frame > u.word_boundaries[w].end_frame)
            return "phoneme frames escape word " + std::to_string(w);
    }
    if (!u.word_pitch_hz.empty() && u.word_pitch_hz.size() != u.words.size()) return "word_pitch_hz count mismatch";
    if (!u.word_dur_sec.empty() && u.word_dur_sec.size() != u.words.size()) return "word_dur_sec count mismatch";
    if (u.mel) {
        const int frames = u.mel->frames();
        if (u.phone_boundaries.back().end_frame > frames || u.word_boundaries.back().end_frame > frames)
            return "boundary beyond mel length";
        for (int m = 0; m < u.mel->bins(); ++m)
            if (!u.mel->values.row(m).allFinite()) return "non-finite mel values";
    }
    return {};
}

Corpus ingest_manifest(const std::filesystem::path& path, const IngestOptions& options) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ManifestUnreadable, path.string());
    Corpus corpus;
    std::set<std::string> ids;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            Utterance u = parse_row(json::parse(line), path.parent_path());
            if (options.load_mels) u.mel = std::make_shared<audio::MelSpectrogram>(audio::read_mel_cache(u.mel_path));
            std::string why = validate_utterance(u);
            if (why.empty() && !ids.insert(u.id).second) why = "duplicate id " + u.id;
            if (!why.empty()) throw std::invalid_argument(why);
            corpus.utterances.push_back(std::move(u));
            ++corpus.report.accepted;
        } catch (const std::exception& e) {
            ++corpus.report.rejected;
            corpus.report.errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (corpus.utterances.empty())
        throw Error(ErrorCode::AllRowsInvalid, path.string() + " (" + std::to_string(corpus.report.rejected) +
                                                   " rejected rows)");
    return corpus;
}

text::TextFrontend frontend_from_corpus(const Corpus& corpus, int bpe_vocab_size) {
    text::Lexicon lexicon;
    std::set<std::string> phone_set;
    std::vector<std::string> texts;
    for (const auto& u : corpus.utterances) {
        texts.push_back(u.text);
        for (std::size_t w = 0; w < u.words.size(); ++w) {
            std::vector<std::string> phones;
            for (std::size_t i = 0; i < u.phones.size(); ++i)
                if (u.ph2word[i] == static_cast<int>(w)) phones.push_back(u.phones[i]);
            lexicon.try_emplace(u.words[w], std::move(phones));
        }
        phone_set.insert(u.phones.begin(), u.phones.end());
    }
    const std::vector<std::string> phones(phone_set.begin(), phone_set.end());
    auto table = text::train_bpe(texts, bpe_vocab_size);
    return text::TextFrontend(std::move(lexicon), text::Vocab(phones), text::BpeModel(std::move(table)));
}

void attach_frontend(Corpus& corpus, const text::TextFrontend& frontend) {
    for (auto& u : corpus.utterances) u.text_item = frontend.build_aligned(u.words, u.phones, u.ph2word);
}

std::pair<Corpus, Corpus> split_heldout(const Corpus& corpus, double heldout_fraction) {
    Corpus train, heldout;
    const auto threshold = static_cast<std::uint64_t>(heldout_fraction * 10000.0);
    for (const auto& u : corpus.utterances) {
        if (fnv1a(u.id) % 10000 < threshold) heldout.utterances.push_back(u);
        else train.utterances.push_back(u);
    }
    train.report.accepted = static_cast<int>(train.size());
    heldout.report.accepted = static_cast<int>(heldout.size());
    return {std::move(train), std::move(heldout)};
}

std::vector<std::string> TokenIndex::symbols() const {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& [sym, occ] : tokens) out.push_back(sym);
    return out;
}

std::size_t TokenIndex::total_occurrences() const {
    std::size_t n = 0;
    for (const auto& [sym, occ] : tokens) n += occ.size();
    return n;
}

std::string token_at(const Utterance& u, Scale scale, int position) {
    const auto& seq = scale == Scale::Phoneme ? u.phones : u.words;
    if (position < 0 || position >= static_cast<int>(seq.size()))
        throw Error(ErrorCode::PositionOutOfRange, std::to_string(position));
    return seq[static_cast<std::size_t>(position)];
}

TokenIndex build_token_index(const Corpus& corpus, Scale scale, int min_occurrences) {
    if (corpus.empty()) throw Error(ErrorCode::NoEligibleTokens, "empty corpus");
    std::map<std::string, std::vector<Occurrence>> all;
    for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
        const auto& u = corpus.utterances[i];
        const auto& seq = scale == Scale::Phoneme ? u.phones : u.words;
        for (std::size_t p = 0; p < seq.size(); ++p) all[seq[p]].push_back({i, u.id, static_cast<int>(p)});
    }
    TokenIndex index;
    index.scale = scale;
    index.min_occurrences = min_occurrences;
    for (auto& [sym, occ] : all) {
        if (static_cast<int>(occ.size()) < min_occurrences) continue;
        std::sort(occ.begin(), occ.end(), [](const Occurrence& a, const Occurrence& b) {
            return std::tie(a.utterance_id, a.position) < std::tie(b.utterance_id, b.position);
        });
        index.tokens.emplace(sym, std::move(occ));
    }
    if (index.tokens.empty())
        throw Error(ErrorCode::NoEligibleTokens, "no token has >= " + std::to_string(min_occurrences) + " occurrences");
    return index;
}

void save_token_index(const TokenIndex& index, const std::filesystem::path& path) {
    json j;
    j["scale"] = to_string(index.scale);
    j["min_occurrences"] = index.min_occurrences;
    json tokens = json::object();
    for (const auto& [sym, occ] : index.tokens) {
        json list = json::array();
        for (const auto& o : occ) list.push_back({o.utterance_id, o.position});
        tokens[sym] = std::move(list);
    }
    j["tokens"] = std::move(tokens);
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out << j.dump() << '\n';
}

TokenIndex load_token_index(const std::filesystem::path& path, const Corpus& corpus) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    const json j = json::parse(in);
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < corpus.utterances.size(); ++i) by_id[corpus.utterances[i].id] = i;
    TokenIndex index;
    index.scale = parse_scale(j.at("scale").get<std::string>());
    index.min_occurrences = j.at("min_occurrences").get<int>();
    for (const auto& [sym, list] : j.at("tokens").items()) {
        auto& occ = index.tokens[sym];
        for (const auto& e : list) {
            const auto id = e.at(0).get<std::string>();
            auto it = by_id.find(id);
            if (it == by_id.end()) throw Error(ErrorCode::TokenNotIndexed, "index refers to unknown utterance " + id);
            occ.push_back({it->second, id, e.at(1).get<int>()});
        }
    }
    return index;
}

ContrastiveBatch sample_contrastive_batch(const TokenIndex& index, const Corpus& corpus, const SamplerOptions& options,
                                          std::mt19937_64& rng, const std::optional<std::string>& token_symbol) {
    if (index.tokens.empty()) throw Error(ErrorCode::NoEligibleTokens, "empty index");
    if (options.batch_size < 2) throw Error(ErrorCode::ConfigInvalid, "batch size must be >= 2");

    const std::vector<Occurrence>* occ = nullptr;
    std::string symbol;
    if (token_symbol) {
        auto it = index.tokens.find(*token_symbol);
        if (it == index.tokens.end()) throw Error(ErrorCode::TokenNotIndexed, *token_symbol);
        symbol = it->first;
        occ = &it->second;
    } else if (options.occurrence_weighted) {
        std::uniform_int_distribution<std::size_t> pick(0, index.total_occurrences() - 1);
        std::size_t k = pick(rng);
        for (const auto& [sym, list] : index.tokens) {
            if (k < list.size()) {
                symbol = sym;
                occ = &list;
                break;
            }
            k -= list.size();
        }
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, index.tokens.size() - 1);
        auto it = std::next(index.tokens.begin(), static_cast<std::ptrdiff_t>(pick(rng)));
        symbol = it->first;
        occ = &it->second;
    }
    if (occ->size() < 2) throw Error(ErrorCode::TokenDegenerate, symbol + " has fewer than 2 occurrences");

    const std::size_t n = static_cast<std::size_t>(options.batch_size);
    std::vector<std::size_t> order(occ->size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::size_t> chosen;
    if (occ->size() >= n) {
        // Partial Fisher-Yates: first n entries are a uniform draw without replacement.
        for (std::size_t i = 0; i < n; ++i) {
            std::uniform_int_distribution<std::size_t> d(i, order.size() - 1);
            std::swap(order[i], order[d(rng)]);
        }
        chosen.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
    } else {
        // Every occurrence once, then top up with replacement.
        chosen = order;
        std::uniform_int_distribution<std::size_t> d(0, occ->size() - 1);
        while (chosen.size() < n) chosen.push_back(d(rng));
        for (std::size_t i = chosen.size() - 1; i > 0; --i) {
            std::uniform_int_distribution<std::size_t> s(0, i);
            std::swap(chosen[i], chosen[s(rng)]);
        }
    }

    ContrastiveBatch batch;
    batch.scale = index.scale;
    batch.token_symbol = symbol;
    batch.distinct_occurrences = static_cast<int>(std::set<std::size_t>(chosen.begin(), chosen.end()).size());
    batch.items.reserve(n);
    for (std::size_t k : chosen) {
        const Occurrence& o = (*occ)[k];
        const Utterance& u = corpus.utterances.at(o.utterance);
        if (!u.mel) throw Error(ErrorCode::Io, "mel not loaded for " + u.id);
        BatchItem item;
        item.text = u.text_item;
        item.token_position = o.position;
        item.utterance = o.utterance;
        item.speech = audio::clip_token_segment(*u.mel, u.boundaries(index.scale).at(static_cast<std::size_t>(o.position)),
                                                options.segment_length);
        batch.items.push_back(std::move(item));
    }
    return batch;
}

}  // namespace prosoclap::corpus
