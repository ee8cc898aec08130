#pragma once

#include <cstdint>
#include <vector>

#include "voltron/rng.hpp"
#include "voltron/tensor.hpp"

namespace voltron {

// Boolean attention pattern, rows = queries, cols = keys. true = may attend.
struct AttentionMask {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> allow;

    static AttentionMask all_visible(int rows, int cols);

    bool at(int r, int c) const { return allow[size_t(r) * cols + c] != 0; }
    void set(int r, int c, bool v) { allow[size_t(r) * cols + c] = v ? 1 : 0; }

    // Every query row must be allowed at least one key.
    void validate() const;

    // Additive pre-softmax bias: 0 where allowed, -1e30 where blocked.
    Tensor bias() const;
};

// Values drawn from N(0, sigma^2) truncated at +/-2 sigma.
Tensor trunc_normal(int rows, int cols, double sigma, Rng& rng);

struct Linear {
    Tensor weight;  // in x out
    Tensor bias;    // 1 x out; undefined when created without bias

    static Linear create(int in, int out, Rng& rng, bool with_bias = true,
                         double sigma = 0.02);
    Tensor forward(const Tensor& x) const;
    void collect(std::vector<Tensor>& out) const;
};

// x * scale / sqrt(mean(x^2) + 1e-6), per row. No mean subtraction, no bias.
Tensor rmsnorm(const Tensor& x, const Tensor& scale);

// Multiheaded scaled dot-product attention with separate query and key/value
// sequences (self-attention passes the same tensor twice). No projection
// biases. mask must be queries.rows x kv.rows.
Tensor cross_attention(const Tensor& queries, const Tensor& keys_values,
                       const AttentionMask& mask, const Tensor& wq,
                       const Tensor& wk, const Tensor& wv, const Tensor& wo,
                       int heads);

// Pre-norm residual block: RMSNorm -> attention -> LayerScale -> add, then
// RMSNorm -> SwishGLU MLP -> LayerScale -> add.
struct TransformerBlock {
    int dim = 0;
    int heads = 0;
    Tensor wq, wk, wv, wo;     // dim x dim, no biases
    Linear gate, up, down;     // SwishGLU MLP, hidden width 4*dim, with biases
    Tensor norm1, norm2;       // 1 x dim RMSNorm scales
    Tensor scale1, scale2;     // 1 x dim LayerScale diagonals, init 0.1

    static TransformerBlock create(int dim, int heads, Rng& rng);

    Tensor attention(const Tensor& x, const AttentionMask& mask) const;
    Tensor mlp(const Tensor& x) const;
    Tensor forward(const Tensor& x, const AttentionMask& mask) const;

    void collect(std::vector<Tensor>& out) const;
};

// Classic interleaved sin/cos encoding; position 0 is [0,1,0,1,...].
Tensor sinusoid_1d(int length, int dim);

// Concatenation of half-dim encodings of the row index and the column index,
// one row per grid cell in row-major order. dim must be divisible by 4.
Tensor sinusoid_2d(int grid_h, int grid_w, int dim);

}  // namespace voltron
