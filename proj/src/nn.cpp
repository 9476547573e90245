#include "cadenza/nn.hpp"

#include <cmath>

namespace cadenza::nn {

AttentionParams AttentionParams::init(int d, Pcg32& rng) {
    AttentionParams p;
    p.wq = Tensor::randn(d, d, 0.02, rng);
    p.wk = Tensor::randn(d, d, 0.02, rng);
    p.wv = Tensor::randn(d, d, 0.02, rng);
    p.wo = Tensor::randn(d, d, 0.02, rng);
    p.bq = Tensor::zeros(1, d, true);
    p.bk = Tensor::zeros(1, d, true);
    p.bv = Tensor::zeros(1, d, true);
    p.bo = Tensor::zeros(1, d, true);
    return p;
}

void AttentionParams::collect(std::vector<Tensor>& out) {
    for (auto* t : {&wq, &wk, &wv, &wo, &bq, &bk, &bv, &bo}) out.push_back(*t);
}

Tensor attention(const Tensor& x, const AttentionParams& p, int heads, AttnMask mask,
                 const RotaryTable* rotary) {
    int t = x.rows(), d = x.cols();
    if (d % heads != 0)
        throw std::invalid_argument("attention: hidden size not divisible by head count");
    int dh = d / heads;
    if (rotary && rotary->head_dim != dh)
        throw std::invalid_argument("attention: rotary table head_dim mismatch");

    Tensor q = add_rowvec(matmul(x, p.wq), p.bq);
    Tensor k = add_rowvec(matmul(x, p.wk), p.bk);
    Tensor v = add_rowvec(matmul(x, p.wv), p.bv);

    std::vector<Real> causal_mask;
    if (mask == AttnMask::Causal) {
        causal_mask.assign(static_cast<size_t>(t) * t, 0.0);
        for (int i = 0; i < t; ++i)
            for (int j = i + 1; j < t; ++j)
                causal_mask[static_cast<size_t>(i) * t + j] = -1e30;
    }

    Real inv_sqrt_dh = 1.0 / std::sqrt(static_cast<Real>(dh));
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, dh);
        Tensor kh = slice_cols(k, h * dh, dh);
        Tensor vh = slice_cols(v, h * dh, dh);
        if (rotary) {
            qh = rope(qh, *rotary);
            kh = rope(kh, *rotary);
        }
        Tensor scores = scale(matmul_transB(qh, kh), inv_sqrt_dh);
        Tensor weights = softmax_rows(scores, causal_mask);
        head_outputs.push_back(matmul(weights, vh));
    }
    Tensor merged = heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
    return add_rowvec(matmul(merged, p.wo), p.bo);
}

FeedForwardParams FeedForwardParams::init(int d, int hidden, Pcg32& rng) {
    FeedForwardParams p;
    p.w1 = Tensor::randn(d, hidden, 0.02, rng);
    p.b1 = Tensor::zeros(1, hidden, true);
    p.w2 = Tensor::randn(hidden, d, 0.02, rng);
    p.b2 = Tensor::zeros(1, d, true);
    return p;
}

void FeedForwardParams::collect(std::vector<Tensor>& out) {
    for (auto* t : {&w1, &b1, &w2, &b2}) out.push_back(*t);
}

Tensor feed_forward(const Tensor& x, const FeedForwardParams& p) {
    return add_rowvec(matmul(gelu(add_rowvec(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

LayerNormParams LayerNormParams::init(int d) {
    LayerNormParams p;
    p.gamma = Tensor::full(1, d, 1.0, true);
    p.beta = Tensor::zeros(1, d, true);
    return p;
}

void LayerNormParams::collect(std::vector<Tensor>& out) {
    out.push_back(gamma);
    out.push_back(beta);
}

TransformerLayer TransformerLayer::init(int d, Pcg32& rng) {
    TransformerLayer l;
    l.ln1 = LayerNormParams::init(d);
    l.ln2 = LayerNormParams::init(d);
    l.attn = AttentionParams::init(d, rng);
    l.ff = FeedForwardParams::init(d, 4 * d, rng);
    return l;
}

void TransformerLayer::collect(std::vector<Tensor>& out) {
    ln1.collect(out);
    ln2.collect(out);
    attn.collect(out);
    ff.collect(out);
}

Tensor TransformerLayer::forward(const Tensor& x, int heads, AttnMask mask,
                                 const RotaryTable* rotary, Real dropout_p,
                                 Pcg32* dropout_rng) const {
    Tensor a = attention(layer_norm(x, ln1.gamma, ln1.beta), attn, heads, mask, rotary);
    if (dropout_p > 0.0 && dropout_rng) a = dropout(a, dropout_p, *dropout_rng);
    Tensor h = add(x, a);
    Tensor f = feed_forward(layer_norm(h, ln2.gamma, ln2.beta), ff);
    if (dropout_p > 0.0 && dropout_rng) f = dropout(f, dropout_p, *dropout_rng);
    return add(h, f);
}

Tensor sinusoidal_positions(int max_pos, int d) {
    Tensor pe = Tensor::zeros(max_pos, d);
    for (int pos = 0; pos < max_pos; ++pos) {
        for (int i = 0; i < d; i += 2) {
            Real angle = pos / std::pow(10000.0, static_cast<Real>(i) / d);
            pe.at(pos, i) = std::sin(angle);
            if (i + 1 < d) pe.at(pos, i + 1) = std::cos(angle);
        }
    }
    return pe;
}

} // namespace cadenza::nn
