#include "prosoclap/text_frontend.hpp"

#include "prosoclap/error.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace prosoclap::text {

Vocab::Vocab() {
    add("<pad>");
    add("<unk>");
}

Vocab::Vocab(std::span<const std::string> symbols) : Vocab() {
    for (const auto& s : symbols) add(s);
}

int Vocab::add(const std::string& symbol) {
    auto it = ids_.find(symbol);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(symbols_.size());
    symbols_.push_back(symbol);
    ids_.emplace(symbol, id);
    return id;
}

int Vocab::id(const std::string& symbol) const {
    auto it = ids_.find(symbol);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::symbol(int id) const {
    if (id < 0 || id >= size()) throw Error(ErrorCode::IndexOutOfRange, "vocab id " + std::to_string(id));
    return symbols_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocab::symbols() const { return {symbols_.begin() + 2, symbols_.end()}; }

namespace {

std::string lowercase(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool is_word_char(unsigned char c) { return std::isalnum(c) || c == '\'' || c >= 0x80; }

}  // namespace

Lexicon load_lexicon(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open lexicon " + path.string());
    Lexicon lex;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) continue;
        std::vector<std::string> phones;
        std::istringstream ps(line.substr(tab + 1));
        for (std::string p; ps >> p;) phones.push_back(p);
        if (!phones.empty()) lex[lowercase(line.substr(0, tab))] = std::move(phones);
    }
    return lex;
}

void save_lexicon(const Lexicon& lexicon, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot write lexicon " + path.string());
    for (const auto& [word, phones] : lexicon) {
        out << word << '\t';
        for (std::size_t i = 0; i < phones.size(); ++i) out << (i ? " " : "") << phones[i];
        out << '\n';
    }
}

std::vector<std::string> normalize_words(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            if (!current.empty()) words.push_back(std::move(current));
            current.clear();
        } else if (is_word_char(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
}

std::vector<std::string> letter_to_sound(std::string_view word) {
    static const char* const kTable[26] = {"AE", "B", "K", "D", "EH", "F", "G", "HH", "IH", "JH", "K", "L", "M",
                                           "N",  "AA", "P", "K", "R",  "S", "T", "AH", "V", "W", "K S", "Y", "Z"};
    std::vector<std::string> out;
    for (char ch : word) {
        if (ch == '\'') continue;
        if (ch < 'a' || ch > 'z') return {};
        std::istringstream ps(kTable[ch - 'a']);
        for (std::string p; ps >> p;) out.push_back(p);
    }
    return out;
}

Phonemized phonemize(std::string_view text, const Lexicon& lexicon, bool letter_fallback) {
    Phonemized out;
    out.words = normalize_words(text);
    if (out.words.empty()) throw Error(ErrorCode::EmptyText, "no words in text");
    for (std::size_t w = 0; w < out.words.size(); ++w) {
        const auto& word = out.words[w];
        std::vector<std::string> phones;
        if (auto it = lexicon.find(word); it != lexicon.end()) {
            phones = it->second;
        } else if (letter_fallback) {
            phones = letter_to_sound(word);
        }
        if (phones.empty()) throw Error(ErrorCode::UnpronounceableWord, word);
        for (auto& p : phones) {
            out.phonemes.push_back(std::move(p));
            out.ph2word.push_back(static_cast<int>(w));
        }
    }
    return out;
}

namespace {

using Symbols = std::vector<std::string>;
using Pair = std::pair<std::string, std::string>;

Symbols split_chars(std::string_view word) {
    Symbols s;
    s.reserve(word.size());
    for (char c : word) s.emplace_back(1, c);
    return s;
}

void apply_merge(Symbols& s, const Pair& pair) {
    Symbols out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size();) {
        if (i + 1 < s.size() && s[i] == pair.first && s[i + 1] == pair.second) {
            out.push_back(s[i] + s[i + 1]);
            i += 2;
        } else {
            out.push_back(s[i]);
            ++i;
        }
    }
    s = std::move(out);
}

}  // namespace

MergeTable train_bpe(std::span<const std::string> corpus_texts, int vocab_size) {
    std::map<std::string, long> word_counts;
    std::set<char> chars;
    for (const auto& text : corpus_texts) {
        for (auto& w : normalize_words(text)) {
            for (char c : w) chars.insert(c);
            ++word_counts[w];
        }
    }
    const int base = static_cast<int>(chars.size());
    if (vocab_size <= base)
        throw Error(ErrorCode::ConfigInvalid,
                    "vocab_size " + std::to_string(vocab_size) + " <= base characters " + std::to_string(base));

    std::vector<std::pair<Symbols, long>> words;
    words.reserve(word_counts.size());
    for (const auto& [w, n] : word_counts) words.emplace_back(split_chars(w), n);

    MergeTable table;
    const int wanted = vocab_size - base;
    while (static_cast<int>(table.merges.size()) < wanted) {
        std::map<Pair, long> pair_counts;
        for (const auto& [syms, n] : words)
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) pair_counts[{syms[i], syms[i + 1]}] += n;
        if (pair_counts.empty()) {
            table.too_small = true;
            break;
        }
        // std::map iterates pairs in lexicographic order, so the first maximum wins ties.
        auto best = pair_counts.begin();
        for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it)
            if (it->second > best->second) best = it;
        table.merges.push_back(best->first);
        for (auto& [syms, n] : words) apply_merge(syms, best->first);
    }
    return table;
}

MergeTable load_merges(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open merges " + path.string());
    MergeTable table;
    std::string line;
    while (std::getline(in, line)) {
        const auto sp = line.find(' ');
        if (line.empty() || sp == std::string::npos) continue;
        table.merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    return table;
}

void save_merges(const MergeTable& table, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot write merges " + path.string());
    for (const auto& [l, r] : table.merges) out << l << ' ' << r << '\n';
}

BpeModel::BpeModel(MergeTable table) : table_(std::move(table)) {
    for (char c = 'a'; c <= 'z'; ++c) vocab_.add(std::string(1, c));
    for (char c = '0'; c <= '9'; ++c) vocab_.add(std::string(1, c));
    vocab_.add("'");
    for (std::size_t i = 0; i < table_.merges.size(); ++i) {
        const auto& [l, r] = table_.merges[i];
        for (char c : l) vocab_.add(std::string(1, c));
        for (char c : r) vocab_.add(std::string(1, c));
        vocab_.add(l + r);
        ranks_.emplace(table_.merges[i], static_cast<int>(i));
    }
}

std::vector<std::string> BpeModel::segment_word(std::string_view word) const {
    Symbols syms = split_chars(word);
    while (syms.size() > 1) {
        int best_rank = -1;
        const Pair* best = nullptr;
        for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
            auto it = ranks_.find({syms[i], syms[i + 1]});
            if (it != ranks_.end() && (best_rank < 0 || it->second < best_rank)) {
                best_rank = it->second;
                best = &it->first;
            }
        }
        if (!best) break;
        apply_merge(syms, *best);
    }
    return syms;
}

std::pair<std::vector<int>, std::vector<int>> BpeModel::encode(std::string_view text) const {
    const auto words = normalize_words(text);
    return encode_words(words);
}

std::pair<std::vector<int>, std::vector<int>> BpeModel::encode_words(std::span<const std::string> words) const {
    std::vector<int> ids;
    std::vector<int> bpe2word;
    for (std::size_t w = 0; w < words.size(); ++w) {
        for (const auto& unit : segment_word(words[w])) {
            ids.push_back(vocab_.id(unit));
            bpe2word.push_back(static_cast<int>(w));
        }
    }
    return {std::move(ids), std::move(bpe2word)};
}

std::string BpeModel::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids)
        if (id != Vocab::kUnk && id != Vocab::kPad) out += vocab_.symbol(id);
    return out;
}

namespace {

std::string check_alignment(std::span<const int> unit2word, int words, const char* name) {
    if (unit2word.empty()) return std::string(name) + " is empty";
    int expected = 0;
    for (std::size_t i = 0; i < unit2word.size(); ++i) {
        const int w = unit2word[i];
        if (i == 0 && w != 0) return std::string(name) + " does not start at word 0";
        if (w != expected && w != expected + 1) return std::string(name) + " skips or decreases at " + std::to_string(i);
        expected = w;
    }
    if (expected != words - 1) return std::string(name) + " does not end at the last word";
    return {};
}

}  // namespace

std::string validate(const TextItem& item) {
    if (item.words.empty()) return "no words";
    if (item.phonemes.size() != item.ph2word.size()) return "ph2word length differs from phonemes";
    if (item.bpes.size() != item.bpe2word.size()) return "bpe2word length differs from bpes";
    if (auto e = check_alignment(item.ph2word, item.word_count(), "ph2word"); !e.empty()) return e;
    if (auto e = check_alignment(item.bpe2word, item.word_count(), "bpe2word"); !e.empty()) return e;
    return {};
}

TextFrontend::TextFrontend(Lexicon lexicon, Vocab phoneme_vocab, BpeModel bpe, bool letter_fallback)
    : lexicon_(std::move(lexicon)),
      phoneme_vocab_(std::move(phoneme_vocab)),
      bpe_(std::move(bpe)),
      letter_fallback_(letter_fallback) {}

TextItem TextFrontend::build(std::string_view text) const {
    auto ph = phonemize(text, lexicon_, letter_fallback_);
    return build_aligned(ph.words, ph.phonemes, ph.ph2word);
}

TextItem TextFrontend::build_aligned(std::span<const std::string> words, std::span<const std::string> phonemes,
                                     std::span<const int> ph2word) const {
    TextItem item;
    item.words.assign(words.begin(), words.end());
    for (const auto& p : phonemes) item.phonemes.push_back(phoneme_vocab_.id(p));
    item.ph2word.assign(ph2word.begin(), ph2word.end());
    std::tie(item.bpes, item.bpe2word) = bpe_.encode_words(words);
    return item;
}

TextItem build_text_item(std::string_view text, const Lexicon& lexicon, const BpeModel& bpe, Vocab& phoneme_vocab,
                         bool letter_fallback) {
    auto ph = phonemize(text, lexicon, letter_fallback);
    TextItem item;
    item.words = ph.words;
    for (const auto& p : ph.phonemes) item.phonemes.push_back(phoneme_vocab.add(p));
    item.ph2word = ph.ph2word;
    std::tie(item.bpes, item.bpe2word) = bpe.encode_words(item.words);
    return item;
}

}  // namespace prosoclap::text
