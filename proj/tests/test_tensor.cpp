#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include <cadenza/nn.hpp>
#include <cadenza/rng.hpp>
#include <cadenza/tensor.hpp>

using namespace cadenza;
using namespace cadenza::nn;

namespace {

// Central finite differences against the analytic gradient. `make_loss`
// must rebuild the graph from the parameter values on every call.
void check_gradients(std::vector<Tensor>& params, const std::function<Tensor()>& make_loss,
                     Real tol = 1e-6, Real h = 1e-5) {
    Tensor loss = make_loss();
    backward(loss);
    std::vector<std::vector<Real>> analytic;
    for (auto& p : params) analytic.push_back(p.grad());

    for (size_t pi = 0; pi < params.size(); ++pi) {
        for (size_t i = 0; i < params[pi].size(); ++i) {
            Real saved = params[pi].value()[i];
            params[pi].value()[i] = saved + h;
            Real up = make_loss().item();
            params[pi].value()[i] = saved - h;
            Real down = make_loss().item();
            params[pi].value()[i] = saved;
            Real numeric = (up - down) / (2 * h);
            Real denom = std::max<Real>(1.0, std::abs(numeric));
            CAPTURE(pi);
            CAPTURE(i);
            CHECK(std::abs(analytic[pi][i] - numeric) / denom < tol);
        }
    }
}

Tensor rand_param(int rows, int cols, Pcg32& rng) {
    return Tensor::randn(rows, cols, 0.5, rng, true);
}

} // namespace

TEST_CASE("elementwise and matmul forward values") {
    Tensor a = Tensor::from({1, 2, 3, 4}, 2, 2);
    Tensor b = Tensor::from({5, 6, 7, 8}, 2, 2);
    CHECK(add(a, b).value() == std::vector<Real>{6, 8, 10, 12});
    CHECK(sub(b, a).value() == std::vector<Real>{4, 4, 4, 4});
    CHECK(mul(a, b).value() == std::vector<Real>{5, 12, 21, 32});
    CHECK(scale(a, 2).value() == std::vector<Real>{2, 4, 6, 8});
    // [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
    CHECK(matmul(a, b).value() == std::vector<Real>{19, 22, 43, 50});
    // matmul_transB(a, b) == a x b^T = [[17,23],[39,53]]
    CHECK(matmul_transB(a, b).value() == std::vector<Real>{17, 23, 39, 53});
    CHECK(sum(a).item() == 10);
}

TEST_CASE("gradients: add/sub/mul/scale/sum") {
    Pcg32 rng(1);
    std::vector<Tensor> params = {rand_param(3, 4, rng), rand_param(3, 4, rng)};
    check_gradients(params, [&] {
        return sum(mul(add(params[0], params[1]), sub(scale(params[0], 1.5), params[1])));
    });
}

TEST_CASE("gradients: matmul and matmul_transB") {
    Pcg32 rng(2);
    std::vector<Tensor> params = {rand_param(3, 4, rng), rand_param(4, 2, rng),
                                  rand_param(5, 4, rng)};
    check_gradients(params, [&] {
        Tensor m = matmul(params[0], params[1]);           // 3x2
        Tensor t = matmul_transB(params[0], params[2]);    // 3x5
        return add(sum(mul(m, m)), sum(mul(t, t)));
    });
}

TEST_CASE("gradients: slicing and concatenation") {
    Pcg32 rng(3);
    std::vector<Tensor> params = {rand_param(4, 6, rng)};
    check_gradients(params, [&] {
        Tensor top = slice_rows(params[0], 0, 2);
        Tensor bottom = slice_rows(params[0], 2, 2);
        Tensor left = slice_cols(params[0], 0, 3);
        Tensor right = slice_cols(params[0], 3, 3);
        Tensor cat = concat_cols({left, right}); // reassembles params[0]
        return add(sum(mul(cat, cat)), add(sum(mul(top, top)), sum(exp_t(scale(bottom, 0.3)))));
    });
}

TEST_CASE("gradients: add_rowvec broadcast") {
    Pcg32 rng(4);
    std::vector<Tensor> params = {rand_param(5, 3, rng), rand_param(1, 3, rng)};
    check_gradients(params, [&] {
        Tensor y = add_rowvec(params[0], params[1]);
        return sum(mul(y, y));
    });
}

TEST_CASE("gelu matches the exact-erf definition and is differentiable") {
    Tensor x = Tensor::from({-2, -0.5, 0, 0.5, 2}, 1, 5);
    Tensor y = gelu(x);
    for (int j = 0; j < 5; ++j) {
        Real v = x.at(0, j);
        Real expect = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
        CHECK(y.at(0, j) == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK(gelu(Tensor::scalar(0)).item() == 0);

    Pcg32 rng(5);
    std::vector<Tensor> params = {rand_param(3, 3, rng)};
    check_gradients(params, [&] { return sum(mul(gelu(params[0]), gelu(params[0]))); });
}

TEST_CASE("softmax rows: normalization, shift invariance, gradient") {
    Tensor x = Tensor::from({1, 2, 3, -1, 0, 1}, 2, 3);
    Tensor p = softmax_rows(x);
    for (int i = 0; i < 2; ++i) {
        Real s = 0;
        for (int j = 0; j < 3; ++j) {
            CHECK(p.at(i, j) > 0);
            s += p.at(i, j);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    // shifting a row by a constant leaves the softmax unchanged
    Tensor shifted = softmax_rows(Tensor::from({101, 102, 103, -1, 0, 1}, 2, 3));
    for (int j = 0; j < 3; ++j)
        CHECK(p.at(0, j) == doctest::Approx(shifted.at(0, j)).epsilon(1e-12));
    // additive mask: -1e30 zeroes a slot
    Tensor masked = softmax_rows(x, {0, 0, -1e30, 0, 0, -1e30});
    CHECK(masked.at(0, 2) == 0);
    CHECK(masked.at(1, 2) == 0);
    CHECK(masked.at(0, 0) + masked.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));

    Pcg32 rng(6);
    std::vector<Tensor> params = {rand_param(3, 4, rng)};
    Tensor w = Tensor::from({0.3, -0.2, 0.5, 0.1}, 1, 4);
    check_gradients(params, [&] {
        Tensor probs = softmax_rows(params[0]);
        return sum(mul(probs, add_rowvec(Tensor::zeros(3, 4), w)));
    });
}

TEST_CASE("layer_norm: per-row mean 0 / var 1, gradient") {
    Pcg32 rng(7);
    Tensor x = rand_param(4, 6, rng);
    Tensor gamma = Tensor::full(1, 6, 1.0);
    Tensor beta = Tensor::zeros(1, 6);
    Tensor y = layer_norm(x, gamma, beta);
    for (int i = 0; i < 4; ++i) {
        Real mean = 0, var = 0;
        for (int j = 0; j < 6; ++j) mean += y.at(i, j);
        mean /= 6;
        for (int j = 0; j < 6; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
        var /= 6;
        CHECK(std::abs(mean) < 1e-10);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3)); // up to the eps regularizer
    }

    std::vector<Tensor> params = {rand_param(3, 5, rng), rand_param(1, 5, rng),
                                  rand_param(1, 5, rng)};
    check_gradients(params, [&] {
        Tensor out = layer_norm(params[0], params[1], params[2]);
        return sum(mul(out, out));
    });
}

TEST_CASE("embedding lookup and scatter-add gradient") {
    Pcg32 rng(8);
    std::vector<Tensor> params = {rand_param(7, 4, rng)};
    std::vector<int> ids = {3, 0, 3, 6}; // repeated id accumulates gradient
    Tensor e = embedding(params[0], ids);
    CHECK(e.rows() == 4);
    CHECK(e.cols() == 4);
    for (int j = 0; j < 4; ++j) {
        CHECK(e.at(0, j) == params[0].at(3, j));
        CHECK(e.at(2, j) == params[0].at(3, j));
    }
    check_gradients(params, [&] {
        Tensor emb = embedding(params[0], ids);
        return sum(mul(emb, emb));
    });
}

TEST_CASE("cross_entropy_mean: uniform logits give log(vocab), gradient, positions") {
    Tensor logits = Tensor::zeros(3, 5);
    Tensor loss = cross_entropy_mean(logits, {0, 2, 4});
    CHECK(loss.item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));

    Pcg32 rng(9);
    std::vector<Tensor> params = {rand_param(4, 6, rng)};
    std::vector<int> targets = {1, 5, 0, 3};
    check_gradients(params, [&] { return cross_entropy_mean(params[0], targets); });
    // restricted positions: only rows 1 and 3 contribute
    check_gradients(params,
                    [&] { return cross_entropy_mean(params[0], targets, {1, 3}); });
    Tensor restricted = cross_entropy_mean(params[0], targets, {1, 3});
    backward(restricted);
    for (int j = 0; j < 6; ++j) {
        CHECK(params[0].grad()[0 * 6 + j] == 0);
        CHECK(params[0].grad()[2 * 6 + j] == 0);
    }
}

TEST_CASE("kl_free_bits closed-form values") {
    // mu=0, logvar=0 -> each unit's KL is 0, clamped up to lambda
    Tensor mu = Tensor::zeros(1, 128);
    Tensor logvar = Tensor::zeros(1, 128);
    CHECK(kl_free_bits(mu, logvar, 0.15).item() == doctest::Approx(128 * 0.15).epsilon(1e-12));
    // mu=1, logvar=0 -> KL per unit = 0.5
    Tensor mu1 = Tensor::full(1, 4, 1.0);
    CHECK(kl_free_bits(mu1, Tensor::zeros(1, 4), 0.15).item() ==
          doctest::Approx(2.0).epsilon(1e-12));
    // independent oracle: -0.5*(1+lv-mu^2-e^lv) summed with the floor
    Tensor mu2 = Tensor::from({0.3, -1.2, 2.0}, 1, 3);
    Tensor lv2 = Tensor::from({0.5, -0.4, 0.1}, 1, 3);
    Real expect = 0;
    for (int j = 0; j < 3; ++j) {
        Real m = mu2.at(0, j), l = lv2.at(0, j);
        expect += std::max(0.15, -0.5 * (1 + l - m * m - std::exp(l)));
    }
    CHECK(kl_free_bits(mu2, lv2, 0.15).item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("kl_free_bits gradient (away from the clamp kink)") {
    Pcg32 rng(10);
    // keep every unit clearly on one side of the lambda threshold
    Tensor mu = Tensor::from({1.5, -2.0, 0.01, 1.2}, 1, 4);
    Tensor lv = Tensor::from({0.8, -0.9, 0.005, 0.4}, 1, 4);
    mu.node()->requires_grad = true;
    lv.node()->requires_grad = true;
    std::vector<Tensor> params = {mu, lv};
    check_gradients(params, [&] { return kl_free_bits(mu, lv, 0.15); });
}

TEST_CASE("dropout: p=0 identity, deterministic under a seed, inverted scaling") {
    Pcg32 rng(11);
    Tensor x = Tensor::full(10, 10, 1.0);
    Pcg32 d0(1, 2);
    CHECK(dropout(x, 0.0, d0).value() == x.value());
    Pcg32 d1(1, 2), d2(1, 2);
    Tensor a = dropout(x, 0.4, d1);
    Tensor b = dropout(x, 0.4, d2);
    CHECK(a.value() == b.value());
    int kept = 0;
    for (Real v : a.value()) {
        CHECK((v == 0 || v == doctest::Approx(1.0 / 0.6).epsilon(1e-12)));
        if (v != 0) ++kept;
    }
    CHECK(kept > 30);
    CHECK(kept < 90);
}

TEST_CASE("rope preserves norms and depends only on relative position") {
    RotaryTable table = RotaryTable::build(64, 8);
    Pcg32 rng(12);
    Tensor q = Tensor::randn(6, 8, 1.0, rng, false);
    Tensor qr = rope(q, table);
    for (int i = 0; i < 6; ++i) {
        Real n0 = 0, n1 = 0;
        for (int j = 0; j < 8; ++j) {
            n0 += q.at(i, j) * q.at(i, j);
            n1 += qr.at(i, j) * qr.at(i, j);
        }
        CHECK(n1 == doctest::Approx(n0).epsilon(1e-10));
    }
    // <rope(q,m), rope(k,n)> depends only on m-n: shift both by the offset
    Tensor k = Tensor::randn(6, 8, 1.0, rng, false);
    Tensor kr = rope(k, table);
    Tensor qs = rope(q, table, 7);
    Tensor ks = rope(k, table, 7);
    auto dot = [](const Tensor& a, int i, const Tensor& b, int j) {
        Real s = 0;
        for (int c = 0; c < a.cols(); ++c) s += a.at(i, c) * b.at(j, c);
        return s;
    };
    for (int m = 0; m < 6; ++m)
        for (int n = 0; n < 6; ++n)
            CHECK(dot(qr, m, kr, n) == doctest::Approx(dot(qs, m, ks, n)).epsilon(1e-9));
}

TEST_CASE("rope fixture: head_dim 2 rotates row m by m radians (base freq 1)") {
    RotaryTable table = RotaryTable::build(4, 2); // inv_freq[0] = base^0 = 1
    Tensor x = Tensor::from({1, 0, 1, 0}, 2, 2);
    Tensor y = rope(x, table);
    CHECK(y.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y.at(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(y.at(1, 0) == doctest::Approx(std::cos(1.0)).epsilon(1e-12));
    CHECK(y.at(1, 1) == doctest::Approx(std::sin(1.0)).epsilon(1e-12));
}

TEST_CASE("rope gradient") {
    RotaryTable table = RotaryTable::build(16, 4);
    Pcg32 rng(13);
    std::vector<Tensor> params = {rand_param(5, 4, rng)};
    check_gradients(params, [&] {
        Tensor y = rope(params[0], table, 3);
        return sum(mul(y, y));
    });
}

TEST_CASE("attention gradient, causal and bidirectional") {
    Pcg32 rng(14);
    int d = 8, t = 5;
    AttentionParams p = AttentionParams::init(d, rng);
    std::vector<Tensor> params = {rand_param(t, d, rng)};
    p.collect(params);
    RotaryTable table = RotaryTable::build(16, d / 2);
    for (AttnMask mask : {AttnMask::Causal, AttnMask::Bidirectional}) {
        check_gradients(
            params,
            [&] {
                Tensor y = attention(params[0], p, 2, mask, &table);
                return sum(mul(y, y));
            },
            1e-5);
    }
}

TEST_CASE("causal attention: output at position i ignores positions > i") {
    Pcg32 rng(15);
    int d = 8, t = 6;
    AttentionParams p = AttentionParams::init(d, rng);
    Tensor x = Tensor::randn(t, d, 1.0, rng, false);
    Tensor y1 = attention(x, p, 2, AttnMask::Causal);
    Tensor x2 = Tensor::from(x.value(), t, d);
    for (int j = 0; j < d; ++j) x2.at(t - 1, j) += 10.0; // perturb the future
    Tensor y2 = attention(x2, p, 2, AttnMask::Causal);
    for (int i = 0; i < t - 1; ++i)
        for (int j = 0; j < d; ++j)
            CHECK(y1.at(i, j) == doctest::Approx(y2.at(i, j)).epsilon(1e-12));
    // bidirectional attention does see it
    Tensor b1 = attention(x, p, 2, AttnMask::Bidirectional);
    Tensor b2 = attention(x2, p, 2, AttnMask::Bidirectional);
    Real diff = 0;
    for (int j = 0; j < d; ++j) diff += std::abs(b1.at(0, j) - b2.at(0, j));
    CHECK(diff > 1e-6);
}

TEST_CASE("transformer layer end-to-end gradient") {
    Pcg32 rng(16);
    int d = 8, t = 4;
    TransformerLayer layer = TransformerLayer::init(d, rng);
    std::vector<Tensor> params = {rand_param(t, d, rng)};
    layer.collect(params);
    RotaryTable table = RotaryTable::build(16, d / 2);
    check_gradients(
        params,
        [&] {
            Tensor y = layer.forward(params[0], 2, AttnMask::Causal, &table);
            return sum(mul(y, y));
        },
        1e-5);
}

TEST_CASE("sinusoidal position table matches the standard formula") {
    Tensor pos = sinusoidal_positions(8, 6);
    for (int p = 0; p < 8; ++p) {
        for (int i = 0; i < 3; ++i) {
            Real freq = std::pow(10000.0, -2.0 * i / 6.0);
            CHECK(pos.at(p, 2 * i) == doctest::Approx(std::sin(p * freq)).epsilon(1e-12));
            CHECK(pos.at(p, 2 * i + 1) == doctest::Approx(std::cos(p * freq)).epsilon(1e-12));
        }
    }
}

TEST_CASE("grad_norm and clipping") {
    Tensor a = Tensor::from({3, 0}, 1, 2, true);
    Tensor b = Tensor::from({0, 4}, 1, 2, true);
    a.grad() = {3, 0};
    b.grad() = {0, 4};
    std::vector<Tensor> params = {a, b};
    CHECK(grad_norm(params) == doctest::Approx(5.0).epsilon(1e-12));
    clip_grad_norm(params, 2.5); // scale by 0.5
    CHECK(a.grad()[0] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(b.grad()[1] == doctest::Approx(2.0).epsilon(1e-12));
    clip_grad_norm(params, 100.0); // under the cap: untouched
    CHECK(a.grad()[0] == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("adam first step moves each parameter by ~lr against the gradient sign") {
    Tensor p = Tensor::from({1.0, -2.0}, 1, 2, true);
    p.grad() = {0.3, -0.7};
    std::vector<Tensor> params = {p};
    AdamState state;
    adam_step(params, state, 0.01);
    // with bias correction the first update is lr * g/(|g|+eps') ~ lr * sign(g)
    CHECK(p.value()[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-3));
    CHECK(p.value()[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-3));
    CHECK(state.step == 1);
}

TEST_CASE("adam minimizes a quadratic") {
    Tensor p = Tensor::from({5.0, -3.0}, 1, 2, true);
    std::vector<Tensor> params = {p};
    AdamState state;
    for (int i = 0; i < 2000; ++i) {
        Tensor loss = sum(mul(p, p));
        backward(loss);
        adam_step(params, state, 0.05);
    }
    CHECK(std::abs(p.value()[0]) < 1e-3);
    CHECK(std::abs(p.value()[1]) < 1e-3);
}

TEST_CASE("backward overwrites stale gradients instead of accumulating") {
    Tensor p = Tensor::from({2.0}, 1, 1, true);
    Tensor loss = sum(mul(p, p));
    backward(loss);
    CHECK(p.grad()[0] == doctest::Approx(4.0));
    Tensor loss2 = sum(mul(p, p));
    backward(loss2);
    CHECK(p.grad()[0] == doctest::Approx(4.0)); // not 8
}

TEST_CASE("diamond-shaped graphs accumulate correctly within one backward") {
    Tensor p = Tensor::from({3.0}, 1, 1, true);
    Tensor y = add(mul(p, p), scale(p, 2.0)); // x^2 + 2x -> dy/dx = 2x + 2 = 8
    backward(sum(y));
    CHECK(p.grad()[0] == doctest::Approx(8.0));
}
