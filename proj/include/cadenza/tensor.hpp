#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "cadenza/rng.hpp"

namespace cadenza::nn {

// 64-bit values give finite-difference verification enough headroom;
// checkpoints store 32-bit floats (see checkpoint.hpp).
using Real = double;

struct Node {
    int rows = 0, cols = 0;
    std::vector<Real> value;
    std::vector<Real> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop; // adds into parents' grads

    size_t size() const { return value.size(); }
};

// Dense row-major 2D tensor participating in a reverse-mode graph.
// Copies share the underlying node (value semantics over a shared
// buffer, like the usual define-by-run tape designs).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    static Tensor zeros(int rows, int cols, bool requires_grad = false);
    static Tensor full(int rows, int cols, Real v, bool requires_grad = false);
    static Tensor from(std::vector<Real> data, int rows, int cols, bool requires_grad = false);
    static Tensor scalar(Real v);
    // normal(0, stddev) init
    static Tensor randn(int rows, int cols, Real stddev, Pcg32& rng, bool requires_grad = true);

    bool valid() const { return n_ != nullptr; }
    int rows() const { return n_->rows; }
    int cols() const { return n_->cols; }
    size_t size() const { return n_->size(); }
    bool is_scalar() const { return n_->rows == 1 && n_->cols == 1; }

    std::vector<Real>& value() { return n_->value; }
    const std::vector<Real>& value() const { return n_->value; }
    std::vector<Real>& grad() { return n_->grad; }
    const std::vector<Real>& grad() const { return n_->grad; }
    Real& at(int i, int j) { return n_->value[static_cast<size_t>(i) * n_->cols + j]; }
    Real at(int i, int j) const { return n_->value[static_cast<size_t>(i) * n_->cols + j]; }
    Real item() const { return n_->value.at(0); }

    std::shared_ptr<Node> node() const { return n_; }

private:
    std::shared_ptr<Node> n_;
};

// --- graph construction -------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);        // elementwise
Tensor scale(const Tensor& a, Real c);
Tensor add_rowvec(const Tensor& a, const Tensor& row); // row broadcast over rows of a
Tensor matmul(const Tensor& a, const Tensor& b);       // (m×k)(k×n)
Tensor matmul_transB(const Tensor& a, const Tensor& b); // (m×k)(n×k)^T -> m×n
Tensor slice_rows(const Tensor& a, int start, int len);
Tensor slice_cols(const Tensor& a, int start, int len);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor exp_t(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sum(const Tensor& a); // scalar
// softmax over each row of (a + additive_mask); mask may be empty
Tensor softmax_rows(const Tensor& a, const std::vector<Real>& additive_mask = {});
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = 1e-5);
Tensor embedding(const Tensor& table, const std::vector<int>& ids);
// inverted dropout; p == 0 is the identity
Tensor dropout(const Tensor& x, Real p, Pcg32& rng);

// mean cross-entropy of logits rows against integer targets, restricted
// to `positions` (all rows when empty)
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets,
                          const std::vector<size_t>& positions = {});

// sum_k max(lambda, -0.5 (1 + logvar_k - mu_k^2 - exp(logvar_k)))
Tensor kl_free_bits(const Tensor& mu, const Tensor& logvar, Real lambda);

// --- rotary positions ----------------------------------------------------

struct RotaryTable {
    int head_dim = 0;
    Real base = 10000.0;
    int max_pos = 0;
    std::vector<Real> cos_table, sin_table; // max_pos × head_dim/2

    static RotaryTable build(int max_pos, int head_dim, Real base = 10000.0);
};

// rotates each consecutive channel pair of row m by its position angle
Tensor rope(const Tensor& x, const RotaryTable& table, int position_offset = 0);

// --- backward + optimizer -------------------------------------------------

// Populates grads of every requires_grad node reachable from the scalar
// loss. Grads are overwritten, not accumulated across calls.
void backward(const Tensor& loss);

Real grad_norm(const std::vector<Tensor>& params);
void clip_grad_norm(std::vector<Tensor>& params, Real max_norm);

struct AdamState {
    std::vector<std::vector<Real>> m, v;
    long step = 0;
};

void adam_step(std::vector<Tensor>& params, AdamState& state, Real lr,
               Real beta1 = 0.9, Real beta2 = 0.999, Real eps = 1e-8);

} // namespace cadenza::nn
