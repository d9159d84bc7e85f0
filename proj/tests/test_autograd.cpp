#include "prosoclap/autograd.hpp"
#include "prosoclap/diagnostics.hpp"
#include "prosoclap/nn.hpp"
#include "prosoclap/text_encoder.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

using namespace prosoclap;
using ag::Matrix;
using ag::Var;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

// Checks d(sum(op(inputs) * weights))/d(input) for every input against central differences.
void check_op(std::vector<Matrix> inputs, const std::function<Var(std::vector<Var>&)>& op, double tol = 1e-6) {
    std::mt19937_64 rng(99);
    std::vector<Var> vars;
    for (auto& m : inputs) vars.emplace_back(m, true);
    Var out = op(vars);
    const Matrix weights = random_matrix(static_cast<int>(out.rows()), static_cast<int>(out.cols()), rng);
    ag::sum(ag::mul(out, Var(weights))).backward();
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto f = [&] {
            std::vector<Var> fresh;
            for (auto& m : inputs) fresh.emplace_back(m);
            return (op(fresh).value().cwiseProduct(weights)).sum();
        };
        const Matrix numeric = diagnostics::numeric_gradient(inputs[k], f, 1e-6);
        const Matrix analytic = vars[k].has_grad() ? vars[k].grad() : Matrix::Zero(numeric.rows(), numeric.cols());
        EXPECT_LT(diagnostics::relative_error(numeric, analytic), tol) << "input " << k;
    }
}

}  // namespace

TEST(Autograd, OpGradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(1);
    auto M = [&](int r, int c) { return random_matrix(r, c, rng); };
    check_op({M(3, 4), M(4, 5)}, [](auto& v) { return ag::matmul(v[0], v[1]); });
    check_op({M(3, 4), M(5, 4)}, [](auto& v) { return ag::matmul_nt(v[0], v[1]); });
    check_op({M(3, 4), M(3, 4)}, [](auto& v) { return ag::sub(ag::add(v[0], v[1]), ag::mul(v[0], v[1])); });
    check_op({M(3, 4), M(1, 4)}, [](auto& v) { return ag::add_row(v[0], v[1]); });
    check_op({M(3, 4), M(1, 1)}, [](auto& v) { return ag::scale_by(ag::scale(v[0], 0.7), v[1]); });
    check_op({M(3, 4)}, [](auto& v) { return ag::exp(v[0]); });
    check_op({M(3, 4)}, [](auto& v) { return ag::gelu(v[0]); });
    check_op({M(3, 4)}, [](auto& v) { return ag::mean_rows(v[0]); });
    check_op({M(3, 4)}, [](auto& v) { return ag::mean(v[0]); });
    check_op({M(4, 6), M(1, 6), M(1, 6)}, [](auto& v) { return ag::layer_norm(v[0], v[1], v[2]); });
    check_op({M(4, 6)}, [](auto& v) { return ag::l2_normalize_rows(v[0]); });
    check_op({M(3, 5)}, [](auto& v) {
        static const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0};
        return ag::softmax_rows(v[0], mask);
    });
    check_op({M(5, 3)}, [](auto& v) {
        static const std::vector<int> rows{4, 0, 0, 2};
        return ag::gather_rows(v[0], rows);
    });
    check_op({M(6, 3)}, [](auto& v) {
        static const std::vector<int> seg{0, 0, 1, 2, 2, 2};
        return ag::segment_mean(v[0], seg, 3);
    });
    check_op({M(3, 6)}, [](auto& v) { return ag::col_slice(v[0], 2, 3); });
    check_op({M(3, 2), M(3, 4)}, [](auto& v) {
        std::vector<Var> parts{v[0], v[1]};
        return ag::hcat(parts);
    });
    check_op({M(2, 3), M(4, 3)}, [](auto& v) {
        std::vector<Var> parts{v[0], v[1]};
        return ag::vcat(parts);
    });
    check_op({M(7, 3)}, [](auto& v) { return ag::im2col(v[0], 3, 2, 1); });
    check_op({M(3, 3)}, [](auto& v) {
        static const std::vector<double> w{1.0, 0.0, -2.0};
        return ag::mul_rows(v[0], w);
    });
}

TEST(Autograd, ReluAwayFromKink) {
    Matrix x(1, 4);
    x << -1.5, -0.3, 0.4, 2.0;
    check_op({x}, [](auto& v) { return ag::relu(v[0]); });
}

TEST(Autograd, NoGradGuardRecordsNothing) {
    Var a(Matrix::Ones(2, 2), true);
    {
        ag::NoGradGuard g;
        EXPECT_FALSE(ag::grad_enabled());
        Var b = ag::exp(a);
        EXPECT_FALSE(b.requires_grad());
    }
    EXPECT_TRUE(ag::grad_enabled());
}

TEST(Autograd, MaskedSoftmaxGivesZeroMass) {
    const std::vector<std::uint8_t> mask{1, 0, 1};
    Matrix x(2, 3);
    x << 1, 100, 2, -3, 5, 0;
    const Matrix p = ag::softmax_rows(Var(x), mask).value();
    EXPECT_EQ(p(0, 1), 0.0);
    EXPECT_EQ(p(1, 1), 0.0);
    EXPECT_NEAR(p.row(0).sum(), 1.0, 1e-12);
    EXPECT_NEAR(p(0, 2), std::exp(2.0) / (std::exp(1.0) + std::exp(2.0)), 1e-12);
}

TEST(Autograd, Im2colMatchesLoopConvolution) {
    std::mt19937_64 rng(4);
    const Matrix x = random_matrix(9, 2, rng);
    nn::ParamStore store;
    auto conv = nn::Conv1d::create(store, "c", 2, 3, 3, 2, rng);
    const Matrix y = conv(Var(x)).value();
    const Matrix& w = conv.weight.value();  // (k*in) x out, rows ordered (k, in)
    ASSERT_EQ(y.rows(), (9 + 2 - 3) / 2 + 1);
    for (int o = 0; o < y.rows(); ++o)
        for (int c = 0; c < 3; ++c) {
            double acc = conv.bias.value()(0, c);
            for (int k = 0; k < 3; ++k) {
                const int t = o * 2 + k - 1;
                if (t < 0 || t >= 9) continue;
                for (int i = 0; i < 2; ++i) acc += x(t, i) * w(k * 2 + i, c);
            }
            EXPECT_NEAR(y(o, c), acc, 1e-12);
        }
}

TEST(WordPool, MeanOfUnits) {
    Matrix h(2, 2);
    h << 1, 1, 3, 3;
    const std::vector<int> a{0, 0};
    const Matrix p = model::word_pool(Var(h), a).value();
    ASSERT_EQ(p.rows(), 1);
    EXPECT_EQ(p(0, 0), 2.0);
    EXPECT_EQ(p(0, 1), 2.0);
}

TEST(WordPool, OneUnitPerWordIsIdentity) {
    std::mt19937_64 rng(2);
    const Matrix h = random_matrix(5, 3, rng);
    const std::vector<int> a{0, 1, 2, 3, 4};
    EXPECT_EQ(model::word_pool(Var(h), a).value(), h);
    EXPECT_EQ(model::word2ph_expand(Var(h), a).value(), h);
}

TEST(WordPool, MatchesLoopMeans) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix h = random_matrix(20, 192, rng);
        std::vector<int> a{0};
        for (int i = 1; i < 20; ++i) a.push_back(a.back() + static_cast<int>(rng() % 2));
        const int words = a.back() + 1;
        const Matrix p = model::word_pool(Var(h), a).value();
        ASSERT_EQ(p.rows(), words);
        for (int w = 0; w < words; ++w) {
            // Same running-mean order as a per-word loop would use.
            Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(192);
            int n = 0;
            for (int i = 0; i < 20; ++i)
                if (a[i] == w) mean += (h.row(i) - mean) / ++n;
            for (int c = 0; c < 192; ++c) EXPECT_NEAR(p(w, c), mean(c), 1e-12);
        }
    }
}

TEST(WordPool, EmptyWordThrows) {
    const std::vector<int> a{0, 0, 2};
    EXPECT_ANY_THROW(model::word_pool(Var(Matrix::Ones(3, 2)), a, 3));
}

TEST(Word2Ph, RepeatsWordRows) {
    Matrix w(1, 1);
    w << 5;
    const std::vector<int> a{0, 0, 0};
    EXPECT_EQ(model::word2ph_expand(Var(w), a).value(), Matrix::Constant(3, 1, 5.0));
}

TEST(Word2Ph, RoundTripIsExact) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 300; ++trial) {
        const int words = 1 + static_cast<int>(rng() % 10);
        std::vector<int> ph2word;
        for (int w = 0; w < words; ++w)
            for (int k = 0, n = 1 + static_cast<int>(rng() % 6); k < n; ++k) ph2word.push_back(w);
        const Matrix x = random_matrix(words, 1 + static_cast<int>(rng() % 16), rng, 100.0);
        ASSERT_EQ(model::word_pool(model::word2ph_expand(Var(x), ph2word), ph2word).value(), x);
    }
}

TEST(LayerNorm, HandComputedRow) {
    Matrix x(1, 4);
    x << 1, 2, 3, 6;
    Matrix g(1, 4), b(1, 4);
    g << 1, 2, 0.5, 1;
    b << 0, 1, 0, -1;
    const double mu = 3.0, var = (4 + 1 + 0 + 9) / 4.0, s = std::sqrt(var + 1e-5);
    const Matrix y = ag::layer_norm(Var(x), Var(g), Var(b)).value();
    EXPECT_NEAR(y(0, 0), (1 - mu) / s, 1e-12);
    EXPECT_NEAR(y(0, 1), 2 * (2 - mu) / s + 1, 1e-12);
    EXPECT_NEAR(y(0, 2), 0.5 * (3 - mu) / s, 1e-12);
    EXPECT_NEAR(y(0, 3), (6 - mu) / s - 1, 1e-12);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    nn::ParamStore store;
    Var p = store.add("p", Matrix::Constant(1, 3, 1.0));
    ag::sum(ag::mul(p, Var(Matrix::Constant(1, 3, 2.0)))).backward();
    nn::Adam adam;
    adam.step(store, 0.01);
    // m/(1-b1) = g, v/(1-b2) = g^2, so the update is lr * g/(|g|+eps).
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(store.get("p").value()(0, i), 1.0 - 0.01 * 2.0 / (2.0 + 1e-8), 1e-12);
}

TEST(ParamStore, ChecksumTracksValues) {
    std::mt19937_64 rng(1);
    nn::ParamStore a;
    a.add("w", nn::xavier_uniform(3, 4, rng));
    const auto before = a.checksum();
    EXPECT_EQ(a.checksum(), before);
    a.get("w").mutable_value()(0, 0) += 1.0;
    EXPECT_NE(a.checksum(), before);
    a.round_to_float();
    const Matrix& v = a.get("w").value();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        EXPECT_EQ(v.data()[i], static_cast<double>(static_cast<float>(v.data()[i])));
}
