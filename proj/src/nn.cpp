#include "voltron/nn.hpp"

#include <cmath>

#include "voltron/error.hpp"

namespace voltron {

namespace {
constexpr double kMaskBias = -1e30;
constexpr double kNormEps = 1e-6;
}  // namespace

AttentionMask AttentionMask::all_visible(int rows, int cols) {
    AttentionMask m;
    m.rows = rows;
    m.cols = cols;
    m.allow.assign(size_t(rows) * cols, 1);
    return m;
}

void AttentionMask::validate() const {
    if (rows < 1 || cols < 1 || allow.size() != size_t(rows) * cols) {
        throw ContractError("attention mask shape is inconsistent");
    }
    for (int r = 0; r < rows; ++r) {
        bool any = false;
        for (int c = 0; c < cols && !any; ++c) any = at(r, c);
        if (!any) {
            throw ContractError("attention mask row " + std::to_string(r) +
                                " permits no positions");
        }
    }
}

Tensor AttentionMask::bias() const {
    std::vector<double> v(allow.size());
    for (size_t i = 0; i < allow.size(); ++i) v[i] = allow[i] ? 0.0 : kMaskBias;
    return Tensor::from_values(rows, cols, std::move(v));
}

Tensor trunc_normal(int rows, int cols, double sigma, Rng& rng) {
    std::vector<double> v(size_t(rows) * cols);
    for (auto& x : v) x = rng.truncated_normal(sigma, 2.0 * sigma);
    return Tensor::from_values(rows, cols, std::move(v), true);
}

Linear Linear::create(int in, int out, Rng& rng, bool with_bias, double sigma) {
    Linear l;
    l.weight = trunc_normal(in, out, sigma, rng);
    if (with_bias) l.bias = Tensor::zeros(1, out, true);
    return l;
}

Tensor Linear::forward(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return bias.defined() ? add_rowvec(y, bias) : y;
}

void Linear::collect(std::vector<Tensor>& out) const {
    out.push_back(weight);
    if (bias.defined()) out.push_back(bias);
}

Tensor rmsnorm(const Tensor& x, const Tensor& scale) {
    return mul_rowvec(rmsnorm_rows(x, kNormEps), scale);
}

Tensor cross_attention(const Tensor& queries, const Tensor& keys_values,
                       const AttentionMask& mask, const Tensor& wq,
                       const Tensor& wk, const Tensor& wv, const Tensor& wo,
                       int heads) {
    const int d = wq.rows();
    if (d % heads != 0) throw ConfigError("attention width not divisible by head count");
    if (mask.rows != queries.rows() || mask.cols != keys_values.rows()) {
        throw ContractError("attention mask does not match sequence lengths");
    }
    mask.validate();
    const int dh = d / heads;
    const double inv_scale = 1.0 / std::sqrt(double(dh));
    Tensor q = matmul(queries, wq);
    Tensor k = matmul(keys_values, wk);
    Tensor v = matmul(keys_values, wv);
    Tensor bias = mask.bias();
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor scores = add(scale(matmul(qh, transpose(kh)), inv_scale), bias);
        Tensor weights = softmax_rows(scores);
        head_outputs.push_back(matmul(weights, vh));
    }
    return matmul(concat_cols(head_outputs), wo);
}

TransformerBlock TransformerBlock::create(int dim, int heads, Rng& rng) {
    if (dim % heads != 0) throw ConfigError("block width not divisible by head count");
    TransformerBlock b;
    b.dim = dim;
    b.heads = heads;
    b.wq = trunc_normal(dim, dim, 0.02, rng);
    b.wk = trunc_normal(dim, dim, 0.02, rng);
    b.wv = trunc_normal(dim, dim, 0.02, rng);
    b.wo = trunc_normal(dim, dim, 0.02, rng);
    const int hidden = 4 * dim;
    b.gate = Linear::create(dim, hidden, rng);
    b.up = Linear::create(dim, hidden, rng);
    b.down = Linear::create(hidden, dim, rng);
    b.norm1 = Tensor::full(1, dim, 1.0).set_requires_grad(true);
    b.norm2 = Tensor::full(1, dim, 1.0).set_requires_grad(true);
    b.scale1 = Tensor::full(1, dim, 0.1).set_requires_grad(true);
    b.scale2 = Tensor::full(1, dim, 0.1).set_requires_grad(true);
    return b;
}

Tensor TransformerBlock::attention(const Tensor& x, const AttentionMask& mask) const {
    return cross_attention(x, x, mask, wq, wk, wv, wo, heads);
}

Tensor TransformerBlock::mlp(const Tensor& x) const {
    return down.forward(mul(swish(gate.forward(x)), up.forward(x)));
}

Tensor TransformerBlock::forward(const Tensor& x, const AttentionMask& mask) const {
    Tensor after_attn = add(x, mul_rowvec(attention(rmsnorm(x, norm1), mask), scale1));
    return add(after_attn, mul_rowvec(mlp(rmsnorm(after_attn, norm2)), scale2));
}

void TransformerBlock::collect(std::vector<Tensor>& out) const {
    out.push_back(wq);
    out.push_back(wk);
    out.push_back(wv);
    out.push_back(wo);
    gate.collect(out);
    up.collect(out);
    down.collect(out);
    out.push_back(norm1);
    out.push_back(norm2);
    out.push_back(scale1);
    out.push_back(scale2);
}

Tensor sinusoid_1d(int length, int dim) {
    if (length < 1 || dim < 2 || dim % 2 != 0) {
        throw ConfigError("1d sinusoid needs a positive length and even dim");
    }
    std::vector<double> v(size_t(length) * dim);
    for (int pos = 0; pos < length; ++pos) {
        for (int i = 0; i < dim / 2; ++i) {
            double freq = std::pow(10000.0, -2.0 * i / dim);
            v[size_t(pos) * dim + 2 * i] = std::sin(pos * freq);
            v[size_t(pos) * dim + 2 * i + 1] = std::cos(pos * freq);
        }
    }
    return Tensor::from_values(length, dim, std::move(v));
}

Tensor sinusoid_2d(int grid_h, int grid_w, int dim) {
    if (dim % 4 != 0) {
        throw ConfigError("2d sinusoid dim must be divisible by 4, got " +
                          std::to_string(dim));
    }
    Tensor rows = sinusoid_1d(grid_h, dim / 2);
    Tensor cols = sinusoid_1d(grid_w, dim / 2);
    std::vector<double> v(size_t(grid_h) * grid_w * dim);
    const auto& rv = rows.values();
    const auto& cv = cols.values();
    const int half = dim / 2;
    for (int r = 0; r < grid_h; ++r) {
        for (int c = 0; c < grid_w; ++c) {
            double* dst = &v[(size_t(r) * grid_w + c) * dim];
            std::copy(&rv[size_t(r) * half], &rv[size_t(r) * half] + half, dst);
            std::copy(&cv[size_t(c) * half], &cv[size_t(c) * half] + half, dst + half);
        }
    }
    return Tensor::from_values(grid_h * grid_w, dim, std::move(v));
}

}  // namespace voltron
