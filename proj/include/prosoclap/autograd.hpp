#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value is a 2-D matrix; sequences are laid out as
// (time x channels). Scalars are 1x1.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

namespace prosoclap::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    void accumulate(const Matrix& g);
};

class Var {
public:
    Var() = default;
    explicit Var(Matrix value, bool requires_grad = false);

    static Var scalar(double v, bool requires_grad = false);

    const Matrix& value() const { return node_->value; }
    Matrix& mutable_value() { return node_->value; }
    const Matrix& grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad.size() != 0; }
    void zero_grad() { node_->grad.resize(0, 0); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    Index rows() const { return node_->value.rows(); }
    Index cols() const { return node_->value.cols(); }
    double item() const { return node_->value(0, 0); }
    bool defined() const { return static_cast<bool>(node_); }

    // Seeds d(this)/d(this) = 1; this must be 1x1.
    void backward() const;

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    friend Var make_result(Matrix, std::vector<Var>, std::function<void(Node&)>);
    std::shared_ptr<Node> node_;
};

// Whether new results record their backward closure (thread-local).
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward);

// --- linear algebra -------------------------------------------------------
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);  // broadcast 1xC over rows
Var scale(const Var& a, double s);
Var scale_by(const Var& a, const Var& s);  // s is 1x1
Var mul_rows(const Var& a, std::span<const double> row_weights);  // constant per-row weights

// --- pointwise ------------------------------------------------------------
Var exp(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);  // tanh approximation
Var dropout(const Var& a, double p, std::mt19937_64& rng);

// --- reductions -----------------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
Var mean_rows(const Var& a);  // 1xC column-wise mean

// --- normalization --------------------------------------------------------
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var l2_normalize_rows(const Var& x, double eps = 1e-12);
// Row softmax; keys with key_mask[j] == false receive exactly zero mass.
Var softmax_rows(const Var& x, std::span<const std::uint8_t> key_mask = {});

// --- indexing / reshaping -------------------------------------------------
Var gather_rows(const Var& x, std::span<const int> rows);
Var segment_mean(const Var& x, std::span<const int> segment_of_row, int segments);
Var col_slice(const Var& x, Index start, Index count);
Var hcat(std::span<const Var> parts);
Var vcat(std::span<const Var> parts);
// Unfolds (T x C) into (T_out x kernel*C) with zero padding `pad` on both sides.
Var im2col(const Var& x, int kernel, int stride, int pad);

}  // namespace prosoclap::ag
