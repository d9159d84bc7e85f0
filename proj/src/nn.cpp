#include "prosoclap/nn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace prosoclap::nn {

Var ParamStore::add(const std::string& name, Matrix init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    index_[name] = params_.size();
    params_.emplace_back(name, Var(std::move(init), true));
    return params_.back().second;
}

Var& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second].second;
}

const Var& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second].second;
}

void ParamStore::zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
}

void ParamStore::round_to_float() {
    for (auto& [name, p] : params_) {
        auto& v = p.mutable_value();
        for (ag::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<double>(static_cast<float>(v.data()[i]));
    }
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += static_cast<std::size_t>(p.value().size());
    return n;
}

std::uint64_t ParamStore::checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& [name, p] : params_) {
        const auto& v = p.value();
        for (ag::Index i = 0; i < v.size(); ++i) {
            const float f = static_cast<float>(v.data()[i]);
            unsigned char bytes[sizeof(float)];
            std::memcpy(bytes, &f, sizeof(float));
            for (unsigned char b : bytes) {
                h ^= b;
                h *= 1099511628211ULL;
            }
        }
    }
    return h;
}

Matrix xavier_uniform(int fan_in, int fan_out, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(fan_in, fan_out);
    for (ag::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

Matrix normal_init(int rows, int cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (ag::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

Linear Linear::create(ParamStore& store, const std::string& name, int in, int out, std::mt19937_64& rng) {
    Linear l;
    l.weight = store.add(name + ".weight", xavier_uniform(in, out, rng));
    l.bias = store.add(name + ".bias", Matrix::Zero(1, out));
    return l;
}

Var Linear::operator()(const Var& x) const { return ag::add_row(ag::matmul(x, weight), bias); }

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, int width) {
    LayerNorm ln;
    ln.gain = store.add(name + ".gain", Matrix::Ones(1, width));
    ln.bias = store.add(name + ".bias", Matrix::Zero(1, width));
    return ln;
}

Var LayerNorm::operator()(const Var& x) const { return ag::layer_norm(x, gain, bias); }

Conv1d Conv1d::create(ParamStore& store, const std::string& name, int in, int out, int kernel, int stride,
                      std::mt19937_64& rng) {
    Conv1d c;
    c.kernel = kernel;
    c.stride = stride;
    c.weight = store.add(name + ".weight", xavier_uniform(kernel * in, out, rng));
    c.bias = store.add(name + ".bias", Matrix::Zero(1, out));
    return c;
}

Var Conv1d::operator()(const Var& x) const {
    const int pad = (kernel - 1) / 2;
    Var cols = (kernel == 1 && stride == 1) ? x : ag::im2col(x, kernel, stride, pad);
    return ag::add_row(ag::matmul(cols, weight), bias);
}

MultiHeadAttention MultiHeadAttention::create(ParamStore& store, const std::string& name, int query_in, int kv_in,
                                              int width, int heads, std::mt19937_64& rng) {
    if (heads < 1 || width % heads != 0) throw std::invalid_argument("attention width must divide by heads");
    MultiHeadAttention a;
    a.heads = heads;
    a.query = Linear::create(store, name + ".q", query_in, width, rng);
    a.key = Linear::create(store, name + ".k", kv_in, width, rng);
    a.value = Linear::create(store, name + ".v", kv_in, width, rng);
    a.out = Linear::create(store, name + ".o", width, width, rng);
    return a;
}

Var MultiHeadAttention::operator()(const Var& queries, const Var& keys, std::span<const std::uint8_t> key_mask) const {
    Var q = query(queries);
    Var k = key(keys);
    Var v = value(keys);
    const ag::Index width = q.cols();
    const ag::Index head_dim = width / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<Var> contexts;
    contexts.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Var qh = ag::col_slice(q, h * head_dim, head_dim);
        Var kh = ag::col_slice(k, h * head_dim, head_dim);
        Var vh = ag::col_slice(v, h * head_dim, head_dim);
        Var weights = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), inv_sqrt), key_mask);
        contexts.push_back(ag::matmul(weights, vh));
    }
    Var merged = heads == 1 ? contexts.front() : ag::hcat(contexts);
    return out(merged);
}

FftBlock FftBlock::create(ParamStore& store, const std::string& name, int hidden, int ffn, int kernel, int heads,
                          std::mt19937_64& rng) {
    FftBlock b;
    b.attention = MultiHeadAttention::create(store, name + ".attn", hidden, hidden, hidden, heads, rng);
    b.attn_norm = LayerNorm::create(store, name + ".attn_norm", hidden);
    b.ffn_in = Conv1d::create(store, name + ".ffn_in", hidden, ffn, kernel, 1, rng);
    b.ffn_out = Conv1d::create(store, name + ".ffn_out", ffn, hidden, 1, 1, rng);
    b.ffn_norm = LayerNorm::create(store, name + ".ffn_norm", hidden);
    return b;
}

Var FftBlock::operator()(const Var& x, std::span<const std::uint8_t> pad_mask, double dropout,
                         std::mt19937_64* rng) const {
    auto drop = [&](const Var& v) { return (rng && dropout > 0.0) ? ag::dropout(v, dropout, *rng) : v; };
    Var h = attn_norm(ag::add(x, drop(attention(x, x, pad_mask))));
    h = mask_rows(h, pad_mask);
    Var f = ffn_out(ag::relu(ffn_in(h)));
    Var out = ffn_norm(ag::add(h, drop(f)));
    return mask_rows(out, pad_mask);
}

Matrix sinusoidal_positions(int length, int width) {
    Matrix pe(length, width);
    for (int t = 0; t < length; ++t) {
        for (int i = 0; i < width; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / width);
            pe(t, i) = (i % 2 == 0) ? std::sin(t * rate) : std::cos(t * rate);
        }
    }
    return pe;
}

Var mask_rows(const Var& x, std::span<const std::uint8_t> mask) {
    if (mask.empty()) return x;
    bool all = true;
    for (auto m : mask) all = all && m;
    if (all) return x;
    std::vector<double> w(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) w[i] = mask[i] ? 1.0 : 0.0;
    return ag::mul_rows(x, w);
}

void Adam::step(ParamStore& params, double lr) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    for (auto& [name, p] : params.entries()) {
        if (!p.has_grad()) continue;
        auto [it, inserted] = moments_.try_emplace(name);
        auto& [m, v] = it->second;
        if (inserted) {
            m = Matrix::Zero(p.rows(), p.cols());
            v = Matrix::Zero(p.rows(), p.cols());
        }
        const Matrix& g = p.grad();
        m = options_.beta1 * m + (1.0 - options_.beta1) * g;
        v = options_.beta2 * v + (1.0 - options_.beta2) * g.cwiseProduct(g);
        auto& value = p.mutable_value();
        value.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + options_.eps);
    }
}

}  // namespace prosoclap::nn
