#pragma once

// Parameter containers and the layers shared by the text and prosody encoders.

#include "prosoclap/autograd.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace prosoclap::nn {

using ag::Matrix;
using ag::Var;

// Named, insertion-ordered trainable tensors.
class ParamStore {
public:
    Var add(const std::string& name, Matrix init);
    Var& get(const std::string& name);
    const Var& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t size() const { return params_.size(); }
    const std::vector<std::pair<std::string, Var>>& entries() const { return params_; }
    std::vector<std::pair<std::string, Var>>& entries() { return params_; }

    void zero_grad();
    // Rounds every value to the nearest float32; the storage format is float32.
    void round_to_float();
    std::size_t parameter_count() const;
    // FNV-1a over the float32 images of all values, in insertion order.
    std::uint64_t checksum() const;

private:
    std::vector<std::pair<std::string, Var>> params_;
    std::map<std::string, std::size_t> index_;
};

Matrix xavier_uniform(int fan_in, int fan_out, std::mt19937_64& rng);
Matrix normal_init(int rows, int cols, double stddev, std::mt19937_64& rng);

struct Linear {
    Var weight;  // in x out
    Var bias;    // 1 x out

    static Linear create(ParamStore& store, const std::string& name, int in, int out, std::mt19937_64& rng);
    Var operator()(const Var& x) const;
};

struct LayerNorm {
    Var gain;
    Var bias;

    static LayerNorm create(ParamStore& store, const std::string& name, int width);
    Var operator()(const Var& x) const;
};

// 1-D convolution over (time x channels); weight is (kernel*in x out).
struct Conv1d {
    Var weight;
    Var bias;
    int kernel = 1;
    int stride = 1;

    static Conv1d create(ParamStore& store, const std::string& name, int in, int out, int kernel, int stride,
                         std::mt19937_64& rng);
    // "Same" zero padding of (kernel-1)/2 on both sides.
    Var operator()(const Var& x) const;
};

struct MultiHeadAttention {
    Linear query;
    Linear key;
    Linear value;
    Linear out;
    int heads = 1;

    static MultiHeadAttention create(ParamStore& store, const std::string& name, int query_in, int kv_in,
                                     int width, int heads, std::mt19937_64& rng);
    // key_mask[j] == 0 excludes key j; empty mask means all keys visible.
    Var operator()(const Var& queries, const Var& keys, std::span<const std::uint8_t> key_mask = {}) const;
};

// Feed-Forward Transformer block: self-attention + conv feed-forward,
// each followed by dropout, residual add and post layer norm.
struct FftBlock {
    MultiHeadAttention attention;
    LayerNorm attn_norm;
    Conv1d ffn_in;
    Conv1d ffn_out;
    LayerNorm ffn_norm;

    static FftBlock create(ParamStore& store, const std::string& name, int hidden, int ffn, int kernel, int heads,
                           std::mt19937_64& rng);
    Var operator()(const Var& x, std::span<const std::uint8_t> pad_mask, double dropout,
                   std::mt19937_64* rng) const;
};

Matrix sinusoidal_positions(int length, int width);

// Zeros rows whose mask entry is 0; identity when the mask is empty.
Var mask_rows(const Var& x, std::span<const std::uint8_t> mask);

class Adam {
public:
    struct Options {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    Adam() = default;
    explicit Adam(Options options) : options_(options) {}

    // One update with the given learning rate; params without a gradient are skipped.
    void step(ParamStore& params, double lr);

    std::int64_t steps() const { return steps_; }
    void set_steps(std::int64_t s) { steps_ = s; }
    std::map<std::string, std::pair<Matrix, Matrix>>& moments() { return moments_; }
    const std::map<std::string, std::pair<Matrix, Matrix>>& moments() const { return moments_; }

private:
    Options options_{};
    std::int64_t steps_ = 0;
    std::map<std::string, std::pair<Matrix, Matrix>> moments_;
};

}  // namespace prosoclap::nn
