#include "prosoclap/contrastive.hpp"

#include "prosoclap/error.hpp"

#include <cmath>

namespace prosoclap::contrastive {

Matrix similarity_matrix(const Matrix& text, const Matrix& speech) {
    if (text.rows() != speech.rows())
        throw Error(ErrorCode::CountMismatch,
                    std::to_string(text.rows()) + " text vs " + std::to_string(speech.rows()) + " speech embeddings");
    if (text.cols() != speech.cols()) throw Error(ErrorCode::ShapeMismatch, "embedding widths differ");
    return text * speech.transpose();
}

namespace {

void check(const Matrix& c, double temperature) {
    if (c.rows() != c.cols()) throw Error(ErrorCode::NonSquare, std::to_string(c.rows()) + "x" + std::to_string(c.cols()));
    if (!(temperature > 0.0)) throw Error(ErrorCode::NonPositiveTemperature, std::to_string(temperature));
}

// Row-wise softmax of `logits` and the per-row log-probability of the diagonal.
Matrix row_softmax(const Matrix& logits, Eigen::VectorXd& log_diag) {
    const auto n = logits.rows();
    Matrix p(n, logits.cols());
    log_diag.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mx = logits.row(i).maxCoeff();
        const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp().matrix();
        const double z = e.sum();
        p.row(i) = e / z;
        log_diag(i) = logits(i, i) - mx - std::log(z);
    }
    return p;
}

}  // namespace

ClipLossGrad clip_loss_with_grad(const Matrix& similarity, double temperature) {
    check(similarity, temperature);
    const auto n = similarity.rows();
    const Matrix logits = temperature * similarity;
    Eigen::VectorXd log_rows, log_cols;
    const Matrix p_rows = row_softmax(logits, log_rows);
    const Matrix logits_t = logits.transpose();
    const Matrix p_cols = row_softmax(logits_t, log_cols).transpose();

    ClipLossGrad out;
    const double inv_n = 1.0 / static_cast<double>(n);
    out.loss = 0.5 * (-log_rows.sum() * inv_n - log_cols.sum() * inv_n);

    // dL/dlogits = 0.5/N * ((P_row - I) + (P_col - I))
    Matrix d_logits = 0.5 * inv_n * (p_rows + p_cols - 2.0 * Matrix::Identity(n, n));
    out.d_similarity = temperature * d_logits;
    out.d_temperature = d_logits.cwiseProduct(similarity).sum();
    return out;
}

double clip_loss(const Matrix& similarity, double temperature) {
    return clip_loss_with_grad(similarity, temperature).loss;
}

Var clip_loss(const Var& similarity, const Var& temperature) {
    if (temperature.rows() != 1 || temperature.cols() != 1)
        throw Error(ErrorCode::ShapeMismatch, "temperature must be a scalar");
    auto grad = clip_loss_with_grad(similarity.value(), temperature.item());
    Matrix value(1, 1);
    value(0, 0) = grad.loss;
    return ag::make_result(std::move(value), {similarity, temperature},
                           [d_c = std::move(grad.d_similarity), d_t = grad.d_temperature](ag::Node& n) {
                               const double g = n.grad(0, 0);
                               ag::Node& c = *n.inputs[0];
                               ag::Node& t = *n.inputs[1];
                               if (c.requires_grad) c.accumulate(g * d_c);
                               if (t.requires_grad) {
                                   Matrix gt(1, 1);
                                   gt(0, 0) = g * d_t;
                                   t.accumulate(gt);
                               }
                           });
}

RetrievalHits retrieval_hits(const Matrix& similarity) {
    RetrievalHits hits;
    const auto n = similarity.rows();
    hits.total = static_cast<int>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index row_arg = 0, col_arg = 0;
        similarity.row(i).maxCoeff(&row_arg);
        similarity.col(i).maxCoeff(&col_arg);
        hits.text_to_speech += row_arg == i;
        hits.speech_to_text += col_arg == i;
    }
    return hits;
}

}  // namespace prosoclap::contrastive
