#pragma once

// Representation analyses over a frozen model: self-similarity of a token's
// encodings across contexts, similarity-matrix export, token-level prosody transfer.

#include "prosoclap/corpus_index.hpp"
#include "prosoclap/model.hpp"
#include "prosoclap/tts_adapter.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace prosoclap::analysis {

using ag::Matrix;
using ag::Var;

// M(i,j) = cosine(row i, row j); throws ZeroVector on an all-zero row.
Matrix cosine_matrix(const Matrix& encodings);

// Mean cosine over ordered pairs i != j. Throws TooFewContexts for N < 2.
double self_similarity(const Matrix& encodings);

struct SelfSimilarityReport {
    std::string token_symbol;
    corpus::Scale scale = corpus::Scale::Phoneme;
    int contexts = 0;
    double s = 0.0;
    Matrix matrix;
};

SelfSimilarityReport self_similarity_report(const Matrix& encodings, const std::string& token_symbol,
                                            corpus::Scale scale);

enum class Representation { TokenEncoding, JointEmbedding };

// Rows are the batch's selected-token vectors (pre-projection encodings by default).
Matrix batch_encodings(const model::ClapModel& model, const corpus::ContrastiveBatch& batch,
                       Representation representation = Representation::TokenEncoding);

struct SweepOptions {
    int batches = 200;
    int n = 8;
    std::uint64_t seed = 0;
    Representation representation = Representation::TokenEncoding;
    std::optional<std::string> token;  // fixed token, otherwise the sampler's choice per batch
};

struct SweepResult {
    corpus::Scale scale = corpus::Scale::Phoneme;
    double mean_s = 0.0;
    std::vector<double> per_batch;
};

SweepResult self_similarity_sweep(const model::ClapModel& model, const corpus::Corpus& corpus,
                                  const corpus::TokenIndex& index, const SweepOptions& options);

// First position of `token_symbol` in `item` at `scale`; throws TokenAbsent.
int find_token(const text::TextFrontend& frontend, const text::TextItem& item, const std::string& token_symbol,
               corpus::Scale scale);

// Cosine matrix of the token's encodings across `sentences` (input order).
// Writes `out_csv` and, next to it, a greyscale PGM heatmap (same stem, .pgm).
Matrix export_similarity_matrix(const model::ClapModel& model, const std::vector<std::string>& sentences,
                                const std::string& token_symbol, const std::filesystem::path& out_csv,
                                bool heatmap = true);

void write_matrix_csv(const Matrix& m, const std::filesystem::path& path);
Matrix read_matrix_csv(const std::filesystem::path& path);
// Values in [-1, 1] mapped to grey levels; `cell` pixels per entry.
void write_heatmap_pgm(const Matrix& m, const std::filesystem::path& path, int cell = 16);

struct TransferResult {
    Matrix source;       // unmodified source features
    Matrix transferred;  // source with the token span overwritten
    int span_begin = 0;  // phoneme rows [span_begin, span_end)
    int span_end = 0;
};

// Overwrites the source's feature rows on the token's phoneme span with the reference token's rows.
// Equal-length spans are copied row by row; otherwise (word scale only) the reference
// span's mean row is written over every row of the source span.
TransferResult prosody_transfer(const adapter::FrozenFeatureProvider& provider, const text::TextItem& source,
                                const text::TextItem& reference, const std::string& token_symbol,
                                corpus::Scale scale);
TransferResult prosody_transfer(const adapter::FrozenFeatureProvider& provider, std::string_view source_text,
                                std::string_view reference_text, const std::string& token_symbol,
                                corpus::Scale scale);

// "FEA1", u32 rows, u32 cols, float32 row-major.
void write_features(const Matrix& m, const std::filesystem::path& path);
Matrix read_features(const std::filesystem::path& path);

}  // namespace prosoclap::analysis
