#pragma once

#include <string>
#include <vector>

#include "cadenza/tensor.hpp"

namespace cadenza::nn {

enum class AttnMask { Causal, Bidirectional };

struct AttentionParams {
    Tensor wq, wk, wv, wo;
    Tensor bq, bk, bv, bo;

    static AttentionParams init(int d, Pcg32& rng);
    void collect(std::vector<Tensor>& out);
};

// Scaled dot-product multi-head self-attention over a t×d sequence.
// Rotary positions are applied to q and k per head when a table is given.
Tensor attention(const Tensor& x, const AttentionParams& p, int heads, AttnMask mask,
                 const RotaryTable* rotary = nullptr);

struct FeedForwardParams {
    Tensor w1, b1, w2, b2;

    static FeedForwardParams init(int d, int hidden, Pcg32& rng);
    void collect(std::vector<Tensor>& out);
};

Tensor feed_forward(const Tensor& x, const FeedForwardParams& p);

struct LayerNormParams {
    Tensor gamma, beta;

    static LayerNormParams init(int d);
    void collect(std::vector<Tensor>& out);
};

// Pre-norm transformer block: x + Attn(LN(x)), then + FF(LN(.)).
struct TransformerLayer {
    LayerNormParams ln1, ln2;
    AttentionParams attn;
    FeedForwardParams ff;

    static TransformerLayer init(int d, Pcg32& rng);
    void collect(std::vector<Tensor>& out);

    Tensor forward(const Tensor& x, int heads, AttnMask mask, const RotaryTable* rotary,
                   Real dropout_p = 0.0, Pcg32* dropout_rng = nullptr) const;
};

// Standard sin/cos absolute position table, max_pos × d.
Tensor sinusoidal_positions(int max_pos, int d);

} // namespace cadenza::nn
