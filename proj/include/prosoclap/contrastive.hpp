#pragma once

// Similarity matrix and the symmetric (row + column) cross-entropy objective
// with a multiplicative logit temperature.

#include "prosoclap/autograd.hpp"

namespace prosoclap::contrastive {

using ag::Matrix;
using ag::Var;

// C[i][j] = <T_i, S_j>; both inputs N x C with unit-norm rows.
Matrix similarity_matrix(const Matrix& text, const Matrix& speech);

struct ClipLossGrad {
    double loss = 0.0;
    Matrix d_similarity;    // dL/dC
    double d_temperature = 0.0;  // dL/dtau
};

// 0.5 * (row CE + column CE) over tau * C with diagonal targets, batch-averaged.
double clip_loss(const Matrix& similarity, double temperature);
ClipLossGrad clip_loss_with_grad(const Matrix& similarity, double temperature);

// Autograd form; `temperature` is a 1x1 Var (typically exp(log_tau)).
Var clip_loss(const Var& similarity, const Var& temperature);

struct RetrievalHits {
    int text_to_speech = 0;  // rows whose argmax is the diagonal
    int speech_to_text = 0;  // columns whose argmax is the diagonal
    int total = 0;
};

// Ties count as misses unless the diagonal is the first maximum.
RetrievalHits retrieval_hits(const Matrix& similarity);

}  // namespace prosoclap::contrastive
