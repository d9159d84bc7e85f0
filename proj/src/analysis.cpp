#include "prosoclap/analysis.hpp"

#include "prosoclap/binary_io.hpp"
#include "prosoclap/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace prosoclap::analysis {

Matrix cosine_matrix(const Matrix& encodings) {
    Matrix unit = encodings;
    for (Eigen::Index i = 0; i < unit.rows(); ++i) {
        const double n = unit.row(i).norm();
        if (!(n > 0.0)) throw Error(ErrorCode::ZeroVector, "encoding " + std::to_string(i) + " is zero");
        unit.row(i) /= n;
    }
    return unit * unit.transpose();
}

double self_similarity(const Matrix& encodings) {
    const auto n = encodings.rows();
    if (n < 2) throw Error(ErrorCode::TooFewContexts, "need at least 2 contexts, got " + std::to_string(n));
    const Matrix m = cosine_matrix(encodings);
    return (m.sum() - m.trace()) / static_cast<double>(n * (n - 1));
}

SelfSimilarityReport self_similarity_report(const Matrix& encodings, const std::string& token_symbol,
                                            corpus::Scale scale) {
    SelfSimilarityReport r;
    r.token_symbol = token_symbol;
    r.scale = scale;
    r.contexts = static_cast<int>(encodings.rows());
    r.s = self_similarity(encodings);
    r.matrix = cosine_matrix(encodings);
    return r;
}

Matrix batch_encodings(const model::ClapModel& model, const corpus::ContrastiveBatch& batch,
                       Representation representation) {
    ag::NoGradGuard no_grad;
    return representation == Representation::TokenEncoding ? model.token_encodings(batch).value()
                                                           : model.text_embeddings(batch).value();
}

SweepResult self_similarity_sweep(const model::ClapModel& model, const corpus::Corpus& corpus,
                                  const corpus::TokenIndex& index, const SweepOptions& options) {
    if (index.tokens.empty()) throw Error(ErrorCode::NoEligibleTokens, "empty token index");
    if (options.batches < 1) throw Error(ErrorCode::ConfigInvalid, "sweep needs at least one batch");
    corpus::SamplerOptions so;
    so.batch_size = options.n;
    so.segment_length = model.config().prosody.segment_len;
    std::mt19937_64 rng(options.seed);
    SweepResult r;
    r.scale = index.scale;
    for (int b = 0; b < options.batches; ++b) {
        const auto batch = corpus::sample_contrastive_batch(index, corpus, so, rng, options.token);
        r.per_batch.push_back(self_similarity(batch_encodings(model, batch, options.representation)));
    }
    double total = 0.0;
    for (double s : r.per_batch) total += s;
    r.mean_s = total / static_cast<double>(r.per_batch.size());
    return r;
}

int find_token(const text::TextFrontend& frontend, const text::TextItem& item, const std::string& token_symbol,
               corpus::Scale scale) {
    if (scale == corpus::Scale::Word) {
        const auto it = std::find(item.words.begin(), item.words.end(), token_symbol);
        if (it == item.words.end()) throw Error(ErrorCode::TokenAbsent, "word '" + token_symbol + "'");
        return static_cast<int>(it - item.words.begin());
    }
    const int id = frontend.phoneme_vocab().id(token_symbol);
    const auto it = id == text::Vocab::kUnk ? item.phonemes.end()
                                            : std::find(item.phonemes.begin(), item.phonemes.end(), id);
    if (it == item.phonemes.end()) throw Error(ErrorCode::TokenAbsent, "phoneme '" + token_symbol + "'");
    return static_cast<int>(it - item.phonemes.begin());
}

Matrix export_similarity_matrix(const model::ClapModel& model, const std::vector<std::string>& sentences,
                                const std::string& token_symbol, const std::filesystem::path& out_csv, bool heatmap) {
    ag::NoGradGuard no_grad;
    const auto scale = model.config().scale;
    std::vector<Var> rows;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        const auto item = model.frontend().build(sentences[i]);
        int pos = 0;
        try {
            pos = find_token(model.frontend(), item, token_symbol, scale);
        } catch (const Error& e) {
            throw Error(ErrorCode::TokenAbsent, "sentence " + std::to_string(i + 1) + ": " + e.what());
        }
        rows.push_back(model.token_encoding(item, pos));
    }
    const Matrix m = cosine_matrix(ag::vcat(rows).value());
    if (out_csv.has_parent_path()) std::filesystem::create_directories(out_csv.parent_path());
    write_matrix_csv(m, out_csv);
    if (heatmap) write_heatmap_pgm(m, std::filesystem::path(out_csv).replace_extension(".pgm"));
    return m;
}

void write_matrix_csv(const Matrix& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out << std::setprecision(17);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
        out << '\n';
    }
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::vector<std::vector<double>> rows;
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) row.push_back(std::stod(cell));
        if (!rows.empty() && row.size() != rows.front().size())
            throw Error(ErrorCode::ShapeMismatch, path.string() + ": ragged CSV");
        rows.push_back(std::move(row));
    }
    Matrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return m;
}

void write_heatmap_pgm(const Matrix& m, const std::filesystem::path& path, int cell) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    const auto w = m.cols() * cell, h = m.rows() * cell;
    out << "P5\n" << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> line(static_cast<std::size_t>(w));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            // darker = more similar
            const double v = std::clamp((m(i, j) + 1.0) / 2.0, 0.0, 1.0);
            const auto grey = static_cast<unsigned char>(std::lround(255.0 * (1.0 - v)));
            std::fill_n(line.begin() + j * cell, cell, grey);
        }
        for (int r = 0; r < cell; ++r) out.write(reinterpret_cast<const char*>(line.data()), w);
    }
}

namespace {

std::pair<int, int> token_span(const text::TextItem& item, int position, corpus::Scale scale) {
    if (scale == corpus::Scale::Phoneme) return {position, position + 1};
    const auto first = std::find(item.ph2word.begin(), item.ph2word.end(), position);
    const auto last = std::find_if(first, item.ph2word.end(), [&](int w) { return w != position; });
    return {static_cast<int>(first - item.ph2word.begin()), static_cast<int>(last - item.ph2word.begin())};
}

}  // namespace

TransferResult prosody_transfer(const adapter::FrozenFeatureProvider& provider, const text::TextItem& source,
                                const text::TextItem& reference, const std::string& token_symbol,
                                corpus::Scale scale) {
    const auto& fe = provider.frontend();
    const auto [sb, se] = token_span(source, find_token(fe, source, token_symbol, scale), scale);
    const auto [rb, re] = token_span(reference, find_token(fe, reference, token_symbol, scale), scale);

    TransferResult r;
    r.source = provider.features(source);
    r.transferred = r.source;
    r.span_begin = sb;
    r.span_end = se;
    const Matrix ref = provider.features(reference);
    if (se - sb == re - rb) {
        r.transferred.middleRows(sb, se - sb) = ref.middleRows(rb, re - rb);
    } else {
        const Eigen::RowVectorXd pooled = ref.middleRows(rb, re - rb).colwise().mean();
        for (int i = sb; i < se; ++i) r.transferred.row(i) = pooled;
    }
    return r;
}

TransferResult prosody_transfer(const adapter::FrozenFeatureProvider& provider, std::string_view source_text,
                                std::string_view reference_text, const std::string& token_symbol,
                                corpus::Scale scale) {
    const auto& fe = provider.frontend();
    return prosody_transfer(provider, fe.build(source_text), fe.build(reference_text), token_symbol, scale);
}

void write_features(const Matrix& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    io::write_magic(out, "FEA1");
    io::write_u32(out, static_cast<std::uint32_t>(m.rows()));
    io::write_u32(out, static_cast<std::uint32_t>(m.cols()));
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f = m.cast<float>();
    io::write_f32_array(out, std::span<const float>(f.data(), static_cast<std::size_t>(f.size())));
}

Matrix read_features(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    io::expect_magic(in, "FEA1");
    const auto rows = io::read_u32(in), cols = io::read_u32(in);
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f(rows, cols);
    io::read_f32_array(in, std::span<float>(f.data(), static_cast<std::size_t>(f.size())));
    return f.cast<double>();
}

}  // namespace prosoclap::analysis
