#include "prosoclap/diagnostics.hpp"
#include "prosoclap/prosody_encoder.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace prosoclap;
using namespace prosoclap::model;
using ag::Matrix;

namespace {

ProsodyEncoderConfig tiny() {
    ProsodyEncoderConfig c;
    c.residual_blocks = 2;
    c.convs_per_block = 2;
    c.hidden = 8;
    c.pool_hidden = 8;
    c.pool_heads = 2;
    c.segment_len = 16;
    c.mel_bins = 10;
    c.joint_dim = 4;
    return c;
}

audio::FeatureMatrix random_segment(const ProsodyEncoderConfig& c, std::mt19937_64& rng, int valid) {
    std::uniform_real_distribution<float> u(audio::kLogFloor, 4.0f);
    audio::FeatureMatrix s = audio::FeatureMatrix::Constant(c.mel_bins, c.segment_len, audio::kLogFloor);
    for (int f = 0; f < c.mel_bins; ++f)
        for (int t = 0; t < valid; ++t) s(f, t) = u(rng);
    return s;
}

}  // namespace

TEST(ProsodyEncoder, DefaultConfigShape) {
    ProsodyEncoderConfig c;  // 4 stages x 12 convs, hidden 192, pooling width 768
    nn::ParamStore store;
    std::mt19937_64 rng(1);
    ProsodyEncoder enc(c, store, rng);
    const Matrix y = enc.forward(random_segment(c, rng, 40)).value();
    EXPECT_EQ(y.rows(), 1);
    EXPECT_EQ(y.cols(), 768);
    EXPECT_TRUE(y.allFinite());
}

TEST(ProsodyEncoder, IdenticalSegmentsIdenticalOutputs) {
    nn::ParamStore store;
    std::mt19937_64 rng(2);
    ProsodyEncoder enc(tiny(), store, rng);
    const auto s = random_segment(tiny(), rng, 9);
    EXPECT_EQ(enc.forward(s).value(), enc.forward(audio::FeatureMatrix(s)).value());
}

TEST(ProsodyEncoder, SilenceIsFinite) {
    nn::ParamStore store;
    std::mt19937_64 rng(3);
    ProsodyEncoder enc(tiny(), store, rng);
    const audio::FeatureMatrix s = audio::FeatureMatrix::Constant(10, 16, audio::kLogFloor);
    EXPECT_TRUE(enc.forward(s).value().allFinite());
}

TEST(ProsodyEncoder, FramePermutationChangesOutput) {
    nn::ParamStore store;
    std::mt19937_64 rng(4);
    ProsodyEncoder enc(tiny(), store, rng);
    for (int trial = 0; trial < 20; ++trial) {
        const auto s = random_segment(tiny(), rng, 16);
        audio::FeatureMatrix p(s.rows(), s.cols());
        std::vector<int> order(16);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (int t = 0; t < 16; ++t) p.col(t) = s.col(order[t]);
        EXPECT_GT((enc.forward(s).value() - enc.forward(p).value()).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(ProsodyEncoder, ThousandRandomSegmentsStayFinite) {
    nn::ParamStore store;
    std::mt19937_64 rng(5);
    ProsodyEncoder enc(tiny(), store, rng);
    for (int i = 0; i < 1000; ++i)
        ASSERT_TRUE(enc.forward(random_segment(tiny(), rng, 1 + static_cast<int>(rng() % 16))).value().allFinite());
}

TEST(ProsodyEncoder, WrongShapeIsRejected) {
    nn::ParamStore store;
    std::mt19937_64 rng(6);
    ProsodyEncoder enc(tiny(), store, rng);
    EXPECT_ANY_THROW(enc.forward(audio::FeatureMatrix::Zero(10, 15)));
}

TEST(ProsodyEncoder, GradientMatchesFiniteDifferences) {
    nn::ParamStore store;
    std::mt19937_64 rng(7);
    ProsodyEncoder enc(tiny(), store, rng);
    std::normal_distribution<double> jitter(0.0, 0.1);
    for (auto& [name, p] : store.entries())
        p.mutable_value() = p.value().unaryExpr([&](double v) { return v + jitter(rng); });
    const auto seg = random_segment(tiny(), rng, 11);
    const Matrix w = Matrix::Random(1, 8);
    auto loss = [&] { return ag::sum(ag::mul(enc.forward(seg), ag::Var(w))); };
    store.zero_grad();
    loss().backward();
    double diff = 0, num = 0, an = 0;
    for (auto& [name, p] : store.entries()) {
        const Matrix analytic = p.has_grad() ? p.grad() : Matrix::Zero(p.rows(), p.cols());
        const Matrix numeric = diagnostics::numeric_gradient(p.mutable_value(), [&] {
            ag::NoGradGuard g;
            return loss().item();
        }, 1e-5);
        diff += (numeric - analytic).squaredNorm();
        num += numeric.squaredNorm();
        an += analytic.squaredNorm();
    }
    EXPECT_LT(std::sqrt(diff) / (std::sqrt(num) + std::sqrt(an)), 1e-3);
}

TEST(StandardizeFrames, ZeroMeanUnitVarianceAndZeroPad) {
    std::mt19937_64 rng(8);
    const auto s = random_segment(tiny(), rng, 6);
    const Matrix x = standardize_frames(s);
    ASSERT_EQ(x.rows(), 16);
    ASSERT_EQ(x.cols(), 10);
    for (int t = 0; t < 6; ++t) {
        EXPECT_NEAR(x.row(t).mean(), 0.0, 1e-12);
        EXPECT_NEAR(x.row(t).squaredNorm() / 10.0, 1.0, 1e-4);
    }
    EXPECT_TRUE((x.bottomRows(10).array() == 0.0).all());
}

TEST(ProjectSpeech, UnitNorm) {
    const auto data = testkit::tiny_data();
    const auto m = testkit::tiny_model(data.frontend);
    const auto idx = corpus::build_token_index(data.corpus, corpus::Scale::Phoneme, 2);
    std::mt19937_64 rng(9);
    corpus::SamplerOptions o;
    o.segment_length = m->config().prosody.segment_len;
    const auto b = corpus::sample_contrastive_batch(idx, data.corpus, o, rng);
    const Matrix e = m->speech_embeddings(b).value();
    for (int r = 0; r < e.rows(); ++r) EXPECT_NEAR(e.row(r).norm(), 1.0, 1e-5);
    EXPECT_EQ(e.cols(), m->config().prosody.joint_dim);
}
