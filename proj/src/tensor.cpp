#include "cadenza/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace cadenza::nn {

namespace {

std::shared_ptr<Node> make_node(int rows, int cols) {
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value.assign(static_cast<size_t>(rows) * cols, 0.0);
    return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()));
}

std::shared_ptr<Node> result_of(int rows, int cols, std::vector<std::shared_ptr<Node>> parents) {
    auto n = make_node(rows, cols);
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->parents = std::move(parents);
    return n;
}

} // namespace

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
    auto n = make_node(rows, cols);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::full(int rows, int cols, Real v, bool requires_grad) {
    auto t = zeros(rows, cols, requires_grad);
    std::fill(t.value().begin(), t.value().end(), v);
    return t;
}

Tensor Tensor::from(std::vector<Real> data, int rows, int cols, bool requires_grad) {
    if (data.size() != static_cast<size_t>(rows) * cols)
        throw std::invalid_argument("Tensor::from: data length does not match shape");
    auto n = make_node(rows, cols);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::scalar(Real v) { return from({v}, 1, 1); }

Tensor Tensor::randn(int rows, int cols, Real stddev, Pcg32& rng, bool requires_grad) {
    auto t = zeros(rows, cols, requires_grad);
    for (auto& v : t.value()) v = rng.normal(0.0, stddev);
    return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto n = result_of(a.rows(), a.cols(), {a.node(), b.node()});
    for (size_t i = 0; i < n->size(); ++i) n->value[i] = a.value()[i] + b.value()[i];
    auto pa = a.node(), pb = b.node();
    n->backprop = [pa, pb](Node& self) {
        if (pa->requires_grad)
            for (size_t i = 0; i < self.size(); ++i) pa->grad[i] += self.grad[i];
        if (pb->requires_grad)
            for (size_t i = 0; i < self.size(); ++i) pb->grad[i] += self.grad[i];
    };
    return Tensor(n);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto n = result_of(a.rows(), a.cols(), {a.node(), b.node()});
    for (size_t i = 0; i < n->size(); ++i) n->value[i] = a.value()[i] - b.value()[i];
    auto pa = a.node(), pb = b.node();
    n->backprop = [pa, pb](Node& self) {
        if (pa->requires_grad)
            for (size_t i = 0; i < self.size(); ++i) pa->grad[i] += self.grad[i];
        if (pb->requires_grad)
            for (size_t i = 0; i < self.size(); ++i) pb->grad[i] -= self.grad[i];
    };
    return Tensor(n);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto n = result_of(a.rows(), a.cols(), {a.node(), b.node()});
    for (size_t i = 0; i < n->size(); ++i) n->value[i] = a.value()[i] * b.value()[i];
    auto pa = a.node(), pb = b.node();
    n->backprop = [pa, pb](Node& self) {
        if (pa->requires_grad)
            for (size_t i = 0; i < self.size(); ++i) pa->grad[i] += self.grad[i] * pb->value[i];
        if (pb->requires_grad)
            for (size_t i = 0; i < self.size(); ++i) pb->grad[i] += self.grad[i] * pa->value[i];
    };
    return Tensor(n);
}

Tensor scale(const Tensor& a, Real c) {
    auto n = result_of(a.rows(), a.cols(), {a.node()});
    for (size_t i = 0; i < n->size(); ++i) n->value[i] = a.value()[i] * c;
    auto pa = a.node();
    n->backprop = [pa, c](Node& self) {
        for (size_t i = 0; i < self.size(); ++i) pa->grad[i] += self.grad[i] * c;
    };
    return Tensor(n);
}

Tensor add_rowvec(const Tensor& a, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols())
        throw std::invalid_argument("add_rowvec: row must be 1x" + std::to_string(a.cols()));
    auto n = result_of(a.rows(), a.cols(), {a.node(), row.node()});
    int c = a.cols();
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < c; ++j)
            n->value[static_cast<size_t>(i) * c + j] = a.at(i, j) + row.value()[j];
    auto pa = a.node(), pr = row.node();
    n->backprop = [pa, pr, c](Node& self) {
        if (pa->requires_grad)
            for (size_t i = 0; i < self.size(); ++i) pa->grad[i] += self.grad[i];
        if (pr->requires_grad)
            for (int i = 0; i < self.rows; ++i)
                for (int j = 0; j < c; ++j)
                    pr->grad[j] += self.grad[static_cast<size_t>(i) * c + j];
    };
    return Tensor(n);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
    int m = a.rows(), k = a.cols(), nn = b.cols();
    auto n = result_of(m, nn, {a.node(), b.node()});
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            Real av = a.at(i, p);
            if (av == 0.0) continue;
            const Real* brow = &b.value()[static_cast<size_t>(p) * nn];
            Real* crow = &n->value[static_cast<size_t>(i) * nn];
            for (int j = 0; j < nn; ++j) crow[j] += av * brow[j];
        }
    auto pa = a.node(), pb = b.node();
    n->backprop = [pa, pb, m, k, nn](Node& self) {
        if (pa->requires_grad) {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < nn; ++j) {
                    Real g = self.grad[static_cast<size_t>(i) * nn + j];
                    if (g == 0.0) continue;
                    for (int p = 0; p < k; ++p)
                        pa->grad[static_cast<size_t>(i) * k + p] +=
                            g * pb->value[static_cast<size_t>(p) * nn + j];
                }
        }
        if (pb->requires_grad) {
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    Real av = pa->value[static_cast<size_t>(i) * k + p];
                    if (av == 0.0) continue;
                    for (int j = 0; j < nn; ++j)
                        pb->grad[static_cast<size_t>(p) * nn + j] +=
                            av * self.grad[static_cast<size_t>(i) * nn + j];
                }
        }
    };
    return Tensor(n);
}

Tensor matmul_transB(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("matmul_transB: inner dimension mismatch");
    int m = a.rows(), k = a.cols(), nn = b.rows();
    auto n = result_of(m, nn, {a.node(), b.node()});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < nn; ++j) {
            Real s = 0;
            const Real* arow = &a.value()[static_cast<size_t>(i) * k];
            const Real* brow = &b.value()[static_cast<size_t>(j) * k];
            for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
            n->value[static_cast<size_t>(i) * nn + j] = s;
        }
    auto pa = a.node(), pb = b.node();
    n->backprop = [pa, pb, m, k, nn](Node& self) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < nn; ++j) {
                Real g = self.grad[static_cast<size_t>(i) * nn + j];
                if (g == 0.0) continue;
                if (pa->requires_grad)
                    for (int p = 0; p < k; ++p)
                        pa->grad[static_cast<size_t>(i) * k + p] +=
                            g * pb->value[static_cast<size_t>(j) * k + p];
                if (pb->requires_grad)
                    for (int p = 0; p < k; ++p)
                        pb->grad[static_cast<size_t>(j) * k + p] +=
                            g * pa->value[static_cast<size_t>(i) * k + p];
            }
    };
    return Tensor(n);
}

Tensor slice_rows(const Tensor& a, int start, int len) {
    if (start < 0 || len < 0 || start + len > a.rows())
        throw std::invalid_argument("slice_rows: range out of bounds");
    int c = a.cols();
    auto n = result_of(len, c, {a.node()});
    std::copy_n(a.value().begin() + static_cast<size_t>(start) * c,
                static_cast<size_t>(len) * c, n->value.begin());
    auto pa = a.node();
    n->backprop = [pa, start, c](Node& self) {
        for (size_t i = 0; i < self.size(); ++i)
            pa->grad[static_cast<size_t>(start) * c + i] += self.grad[i];
    };
    return Tensor(n);
}

Tensor slice_cols(const Tensor& a, int start, int len) {
    if (start < 0 || len < 0 || start + len > a.cols())
        throw std::invalid_argument("slice_cols: range out of bounds");
    int r = a.rows(), c = a.cols();
    auto n = result_of(r, len, {a.node()});
    for (int i = 0; i < r; ++i)
        std::copy_n(a.value().begin() + static_cast<size_t>(i) * c + start, len,
                    n->value.begin() + static_cast<size_t>(i) * len);
    auto pa = a.node();
    n->backprop = [pa, start, len, r, c](Node& self) {
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < len; ++j)
                pa->grad[static_cast<size_t>(i) * c + start + j] +=
                    self.grad[static_cast<size_t>(i) * len + j];
    };
    return Tensor(n);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    int r = parts[0].rows(), total = 0;
    std::vector<std::shared_ptr<Node>> parents;
    for (const auto& p : parts) {
        if (p.rows() != r) throw std::invalid_argument("concat_cols: row mismatch");
        total += p.cols();
        parents.push_back(p.node());
    }
    auto n = result_of(r, total, parents);
    int off = 0;
    for (const auto& p : parts) {
        int c = p.cols();
        for (int i = 0; i < r; ++i)
            std::copy_n(p.value().begin() + static_cast<size_t>(i) * c, c,
                        n->value.begin() + static_cast<size_t>(i) * total + off);
        off += c;
    }
    n->backprop = [parents, r, total](Node& self) {
        int off2 = 0;
        for (const auto& p : parents) {
            int c = p->cols;
            if (p->requires_grad)
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j)
                        p->grad[static_cast<size_t>(i) * c + j] +=
                            self.grad[static_cast<size_t>(i) * total + off2 + j];
            off2 += c;
        }
    };
    return Tensor(n);
}

Tensor exp_t(const Tensor& a) {
    auto n = result_of(a.rows(), a.cols(), {a.node()});
    for (size_t i = 0; i < n->size(); ++i) n->value[i] = std::exp(a.value()[i]);
    auto pa = a.node();
    auto vals = n->value;
    n->backprop = [pa, vals](Node& self) {
        for (size_t i = 0; i < self.size(); ++i) pa->grad[i] += self.grad[i] * vals[i];
    };
    return Tensor(n);
}

Tensor gelu(const Tensor& a) {
    static constexpr Real inv_sqrt2 = 0.7071067811865475244;
    static constexpr Real inv_sqrt2pi = 0.3989422804014326779;
    auto n = result_of(a.rows(), a.cols(), {a.node()});
    for (size_t i = 0; i < n->size(); ++i) {
        Real x = a.value()[i];
        n->value[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    auto pa = a.node();
    n->backprop = [pa](Node& self) {
        for (size_t i = 0; i < self.size(); ++i) {
            Real x = pa->value[i];
            Real cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            Real pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            pa->grad[i] += self.grad[i] * (cdf + x * pdf);
        }
    };
    return Tensor(n);
}

Tensor sum(const Tensor& a) {
    auto n = result_of(1, 1, {a.node()});
    Real s = 0;
    for (Real v : a.value()) s += v;
    n->value[0] = s;
    auto pa = a.node();
    n->backprop = [pa](Node& self) {
        for (auto& g : pa->grad) g += self.grad[0];
    };
    return Tensor(n);
}

Tensor softmax_rows(const Tensor& a, const std::vector<Real>& additive_mask) {
    if (!additive_mask.empty() && additive_mask.size() != a.size())
        throw std::invalid_argument("softmax_rows: mask size mismatch");
    int r = a.rows(), c = a.cols();
    auto n = result_of(r, c, {a.node()});
    for (int i = 0; i < r; ++i) {
        Real mx = -1e300;
        for (int j = 0; j < c; ++j) {
            Real v = a.at(i, j);
            if (!additive_mask.empty()) v += additive_mask[static_cast<size_t>(i) * c + j];
            if (v > mx) mx = v;
            n->value[static_cast<size_t>(i) * c + j] = v;
        }
        Real denom = 0;
        for (int j = 0; j < c; ++j) {
            Real& v = n->value[static_cast<size_t>(i) * c + j];
            v = std::exp(v - mx);
            denom += v;
        }
        for (int j = 0; j < c; ++j) n->value[static_cast<size_t>(i) * c + j] /= denom;
    }
    auto pa = a.node();
    auto y = n->value;
    n->backprop = [pa, y, r, c](Node& self) {
        for (int i = 0; i < r; ++i) {
            Real dot = 0;
            for (int j = 0; j < c; ++j) {
                size_t idx = static_cast<size_t>(i) * c + j;
                dot += self.grad[idx] * y[idx];
            }
            for (int j = 0; j < c; ++j) {
                size_t idx = static_cast<size_t>(i) * c + j;
                pa->grad[idx] += y[idx] * (self.grad[idx] - dot);
            }
        }
    };
    return Tensor(n);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
    if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 ||
        beta.cols() != x.cols())
        throw std::invalid_argument("layer_norm: affine parameters must be 1x" +
                                    std::to_string(x.cols()));
    int r = x.rows(), c = x.cols();
    auto n = result_of(r, c, {x.node(), gamma.node(), beta.node()});
    std::vector<Real> xhat(static_cast<size_t>(r) * c), inv_sigma(r);
    for (int i = 0; i < r; ++i) {
        Real mean = 0;
        for (int j = 0; j < c; ++j) mean += x.at(i, j);
        mean /= c;
        Real var = 0;
        for (int j = 0; j < c; ++j) {
            Real d = x.at(i, j) - mean;
            var += d * d;
        }
        var /= c;
        Real is = 1.0 / std::sqrt(var + eps);
        inv_sigma[i] = is;
        for (int j = 0; j < c; ++j) {
            size_t idx = static_cast<size_t>(i) * c + j;
            xhat[idx] = (x.at(i, j) - mean) * is;
            n->value[idx] = xhat[idx] * gamma.value()[j] + beta.value()[j];
        }
    }
    auto px = x.node(), pg = gamma.node(), pb = beta.node();
    n->backprop = [px, pg, pb, xhat, inv_sigma, r, c](Node& self) {
        for (int i = 0; i < r; ++i) {
            Real mean_dxhat = 0, mean_dxhat_xhat = 0;
            for (int j = 0; j < c; ++j) {
                size_t idx = static_cast<size_t>(i) * c + j;
                Real dxhat = self.grad[idx] * pg->value[j];
                mean_dxhat += dxhat;
                mean_dxhat_xhat += dxhat * xhat[idx];
            }
            mean_dxhat /= c;
            mean_dxhat_xhat /= c;
            for (int j = 0; j < c; ++j) {
                size_t idx = static_cast<size_t>(i) * c + j;
                if (px->requires_grad) {
                    Real dxhat = self.grad[idx] * pg->value[j];
                    px->grad[idx] +=
                        inv_sigma[i] * (dxhat - mean_dxhat - xhat[idx] * mean_dxhat_xhat);
                }
                if (pg->requires_grad) pg->grad[j] += self.grad[idx] * xhat[idx];
                if (pb->requires_grad) pb->grad[j] += self.grad[idx];
            }
        }
    };
    return Tensor(n);
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    int c = table.cols();
    auto n = result_of(static_cast<int>(ids.size()), c, {table.node()});
    for (size_t i = 0; i < ids.size(); ++i) {
        int id = ids[i];
        if (id < 0 || id >= table.rows())
            throw std::invalid_argument("embedding: id out of range: " + std::to_string(id));
        std::copy_n(table.value().begin() + static_cast<size_t>(id) * c, c,
                    n->value.begin() + i * c);
    }
    auto pt = table.node();
    n->backprop = [pt, ids, c](Node& self) {
        for (size_t i = 0; i < ids.size(); ++i)
            for (int j = 0; j < c; ++j)
                pt->grad[static_cast<size_t>(ids[i]) * c + j] += self.grad[i * c + j];
    };
    return Tensor(n);
}

Tensor dropout(const Tensor& x, Real p, Pcg32& rng) {
    if (p <= 0.0) return x;
    if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
    auto n = result_of(x.rows(), x.cols(), {x.node()});
    auto mask = std::make_shared<std::vector<Real>>(x.size());
    Real keep_scale = 1.0 / (1.0 - p);
    for (size_t i = 0; i < x.size(); ++i) {
        (*mask)[i] = (rng.uniform() >= p) ? keep_scale : 0.0;
        n->value[i] = x.value()[i] * (*mask)[i];
    }
    auto px = x.node();
    n->backprop = [px, mask](Node& self) {
        for (size_t i = 0; i < self.size(); ++i) px->grad[i] += self.grad[i] * (*mask)[i];
    };
    return Tensor(n);
}

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets,
                          const std::vector<size_t>& positions) {
    int r = logits.rows(), c = logits.cols();
    if (static_cast<int>(targets.size()) != r)
        throw std::invalid_argument("cross_entropy_mean: one target per row required");
    std::vector<size_t> pos = positions;
    if (pos.empty())
        for (int i = 0; i < r; ++i) pos.push_back(i);
    for (size_t p : pos)
        if (p >= static_cast<size_t>(r) || targets[p] < 0 || targets[p] >= c)
            throw std::invalid_argument("cross_entropy_mean: position or target out of range");

    auto n = result_of(1, 1, {logits.node()});
    Real total = 0;
    std::vector<Real> probs(pos.size() * c);
    for (size_t k = 0; k < pos.size(); ++k) {
        size_t i = pos[k];
        Real mx = -1e300;
        for (int j = 0; j < c; ++j) mx = std::max(mx, logits.at(static_cast<int>(i), j));
        Real denom = 0;
        for (int j = 0; j < c; ++j) {
            Real e = std::exp(logits.at(static_cast<int>(i), j) - mx);
            probs[k * c + j] = e;
            denom += e;
        }
        for (int j = 0; j < c; ++j) probs[k * c + j] /= denom;
        total += -std::log(std::max(probs[k * c + targets[i]], 1e-300));
    }
    n->value[0] = total / static_cast<Real>(pos.size());

    auto pl = logits.node();
    auto tg = targets;
    n->backprop = [pl, tg, pos, probs, c](Node& self) {
        Real g = self.grad[0] / static_cast<Real>(pos.size());
        for (size_t k = 0; k < pos.size(); ++k) {
            size_t i = pos[k];
            for (int j = 0; j < c; ++j) {
                Real p = probs[k * c + j];
                pl->grad[i * c + j] += g * (p - (j == tg[i] ? 1.0 : 0.0));
            }
        }
    };
    return Tensor(n);
}

Tensor kl_free_bits(const Tensor& mu, const Tensor& logvar, Real lambda) {
    check_same_shape(mu, logvar, "kl_free_bits");
    auto n = result_of(1, 1, {mu.node(), logvar.node()});
    size_t d = mu.size();
    std::vector<char> active(d);
    Real total = 0;
    for (size_t k = 0; k < d; ++k) {
        Real m = mu.value()[k], lv = logvar.value()[k];
        Real kl = -0.5 * (1.0 + lv - m * m - std::exp(lv));
        active[k] = kl > lambda;
        total += std::max(lambda, kl);
    }
    n->value[0] = total;
    auto pm = mu.node(), pl = logvar.node();
    n->backprop = [pm, pl, active, d](Node& self) {
        Real g = self.grad[0];
        for (size_t k = 0; k < d; ++k) {
            if (!active[k]) continue;
            if (pm->requires_grad) pm->grad[k] += g * pm->value[k];
            if (pl->requires_grad) pl->grad[k] += g * (-0.5) * (1.0 - std::exp(pl->value[k]));
        }
    };
    return Tensor(n);
}

RotaryTable RotaryTable::build(int max_pos, int head_dim, Real base) {
    if (head_dim % 2 != 0)
        throw std::invalid_argument("RotaryTable: head dimension must be even");
    RotaryTable t;
    t.head_dim = head_dim;
    t.base = base;
    t.max_pos = max_pos;
    int half = head_dim / 2;
    t.cos_table.resize(static_cast<size_t>(max_pos) * half);
    t.sin_table.resize(static_cast<size_t>(max_pos) * half);
    for (int m = 0; m < max_pos; ++m) {
        for (int i = 0; i < half; ++i) {
            Real theta = m * std::pow(base, -2.0 * i / head_dim);
            t.cos_table[static_cast<size_t>(m) * half + i] = std::cos(theta);
            t.sin_table[static_cast<size_t>(m) * half + i] = std::sin(theta);
        }
    }
    return t;
}

Tensor rope(const Tensor& x, const RotaryTable& table, int position_offset) {
    if (x.cols() != table.head_dim)
        throw std::invalid_argument("rope: tensor width does not match table head dimension");
    if (x.rows() + position_offset > table.max_pos)
        throw std::invalid_argument("rope: position exceeds table size");
    int r = x.rows(), half = table.head_dim / 2;
    auto n = result_of(r, x.cols(), {x.node()});
    for (int m = 0; m < r; ++m) {
        size_t trow = static_cast<size_t>(m + position_offset) * half;
        for (int i = 0; i < half; ++i) {
            Real c = table.cos_table[trow + i], s = table.sin_table[trow + i];
            Real x0 = x.at(m, 2 * i), x1 = x.at(m, 2 * i + 1);
            n->value[static_cast<size_t>(m) * x.cols() + 2 * i] = x0 * c - x1 * s;
            n->value[static_cast<size_t>(m) * x.cols() + 2 * i + 1] = x0 * s + x1 * c;
        }
    }
    auto px = x.node();
    const RotaryTable* tbl = &table;
    int cols = x.cols();
    n->backprop = [px, tbl, position_offset, r, half, cols](Node& self) {
        for (int m = 0; m < r; ++m) {
            size_t trow = static_cast<size_t>(m + position_offset) * half;
            for (int i = 0; i < half; ++i) {
                Real c = tbl->cos_table[trow + i], s = tbl->sin_table[trow + i];
                Real g0 = self.grad[static_cast<size_t>(m) * cols + 2 * i];
                Real g1 = self.grad[static_cast<size_t>(m) * cols + 2 * i + 1];
                px->grad[static_cast<size_t>(m) * cols + 2 * i] += g0 * c + g1 * s;
                px->grad[static_cast<size_t>(m) * cols + 2 * i + 1] += -g0 * s + g1 * c;
            }
        }
    };
    return Tensor(n);
}

void backward(const Tensor& loss) {
    if (!loss.is_scalar()) throw std::invalid_argument("backward: loss must be scalar");

    // topological order over the requires_grad subgraph
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({loss.node().get(), 0});
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* node : order) node->grad.assign(node->size(), 0.0);
    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

Real grad_norm(const std::vector<Tensor>& params) {
    Real sq = 0;
    for (const auto& p : params)
        for (Real g : p.grad()) sq += g * g;
    return std::sqrt(sq);
}

void clip_grad_norm(std::vector<Tensor>& params, Real max_norm) {
    Real norm = grad_norm(params);
    if (norm <= max_norm || norm == 0.0) return;
    Real s = max_norm / norm;
    for (auto& p : params)
        for (Real& g : p.grad()) g *= s;
}

void adam_step(std::vector<Tensor>& params, AdamState& state, Real lr, Real beta1, Real beta2,
               Real eps) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    if (state.m.size() != params.size())
        throw std::invalid_argument("adam_step: state does not match parameter list");
    ++state.step;
    Real bc1 = 1.0 - std::pow(beta1, static_cast<Real>(state.step));
    Real bc2 = 1.0 - std::pow(beta2, static_cast<Real>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& val = params[i].value();
        const auto& grad = params[i].grad();
        if (grad.size() != val.size()) continue; // no gradient this step
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (size_t j = 0; j < val.size(); ++j) {
            m[j] = beta1 * m[j] + (1.0 - beta1) * grad[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * grad[j] * grad[j];
            Real mhat = m[j] / bc1;
            Real vhat = v[j] / bc2;
            val[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

} // namespace cadenza::nn
