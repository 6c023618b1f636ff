#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <unordered_set>
#include <utility>

#include "flex/core.hpp"

namespace flex {

// ---------------------------------------------------------------------------
// Reverse-mode differentiable array. A Tensor is a cheap handle onto a graph
// node; ops record parents and a pull-style backward closure. backward() walks
// the tape in explicit topological order from a scalar loss.
// ---------------------------------------------------------------------------

class Tensor;

struct TensorNode {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;  // allocated on first use, same extent as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    int64_t size() const { return static_cast<int64_t>(value.size()); }

    float* grad_data() {
        if (grad.empty()) grad.assign(value.size(), 0.0f);
        return grad.data();
    }
};

// When grad mode is off (inference), ops skip tape construction entirely.
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    NoGradGuard() : prev_(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode>();
        n->value.assign(static_cast<size_t>(numel(shape)), 0.0f);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad && grad_mode_flag();
        return Tensor(std::move(n));
    }

    static Tensor full(Shape shape, float v, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.data().begin(), t.data().end(), v);
        return t;
    }

    static Tensor from(Shape shape, std::vector<float> data, bool requires_grad = false) {
        if (numel(shape) != static_cast<int64_t>(data.size()))
            fail_shape("tensor init: shape ", shape_str(shape), " does not match data length ",
                       data.size());
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad && grad_mode_flag();
        return Tensor(std::move(n));
    }

    static Tensor scalar(float v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t size() const { return node_->size(); }

    std::vector<float>& data() { return node_->value; }
    const std::vector<float>& data() const { return node_->value; }
    std::vector<float>& grad() {
        node_->grad_data();
        return node_->grad;
    }
    bool has_grad() const { return !node_->grad.empty(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }
    void zero_grad() { node_->grad.clear(); }

    float item() const {
        if (node_->size() != 1) fail_shape("item() on non-scalar tensor ", shape_str(shape()));
        return node_->value[0];
    }

    std::shared_ptr<TensorNode> node() const { return node_; }
    TensorNode* raw() const { return node_.get(); }

private:
    std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<Tensor> inputs,
                          std::function<void(TensorNode&)> backward) {
    auto n = std::make_shared<TensorNode>();
    n->value.assign(static_cast<size_t>(numel(shape)), 0.0f);
    n->shape = std::move(shape);
    if (grad_mode_flag()) {
        bool need = false;
        for (const auto& t : inputs) need = need || t.requires_grad();
        if (need) {
            n->requires_grad = true;
            n->parents.reserve(inputs.size());
            for (auto& t : inputs) n->parents.push_back(t.node());
            n->backward_fn = std::move(backward);
        }
    }
    return Tensor(std::move(n));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        fail_shape(op, ": shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
}

// Interpret a tensor as a [rows, cols] matrix over its last axis.
inline std::pair<int64_t, int64_t> as_matrix(const Tensor& t) {
    if (t.rank() == 0) fail_shape("expected non-empty shape");
    const int64_t cols = t.dim(t.rank() - 1);
    return {t.size() / cols, cols};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    Tensor out = detail::make_result(a.shape(), {a, b}, [](TensorNode& n) {
        for (int p = 0; p < 2; ++p) {
            auto& parent = *n.parents[p];
            if (!parent.requires_grad) continue;
            float* g = parent.grad_data();
            for (int64_t i = 0; i < n.size(); ++i) g[i] += n.grad[i];
        }
    });
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out.data().data();
    for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] + pb[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor out = detail::make_result(a.shape(), {a, b}, [](TensorNode& n) {
        if (n.parents[0]->requires_grad) {
            float* g = n.parents[0]->grad_data();
            for (int64_t i = 0; i < n.size(); ++i) g[i] += n.grad[i];
        }
        if (n.parents[1]->requires_grad) {
            float* g = n.parents[1]->grad_data();
            for (int64_t i = 0; i < n.size(); ++i) g[i] -= n.grad[i];
        }
    });
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor out = detail::make_result(a.shape(), {a, b}, [](TensorNode& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            float* g = n.parents[0]->grad_data();
            for (int64_t i = 0; i < n.size(); ++i) g[i] += n.grad[i] * bv[i];
        }
        if (n.parents[1]->requires_grad) {
            float* g = n.parents[1]->grad_data();
            for (int64_t i = 0; i < n.size(); ++i) g[i] += n.grad[i] * av[i];
        }
    });
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    return out;
}

inline Tensor scale(const Tensor& a, float s) {
    Tensor out = detail::make_result(a.shape(), {a}, [s](TensorNode& n) {
        if (!n.parents[0]->requires_grad) return;
        float* g = n.parents[0]->grad_data();
        for (int64_t i = 0; i < n.size(); ++i) g[i] += s * n.grad[i];
    });
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = s * a.data()[i];
    return out;
}

// Broadcast-add a [cols] vector over every row of a [.., cols] tensor.
inline Tensor add_row(const Tensor& a, const Tensor& v) {
    const auto [rows, cols] = detail::as_matrix(a);
    if (v.size() != cols)
        fail_shape("add_row: vector length ", v.size(), " != last extent ", cols);
    Tensor out = detail::make_result(a.shape(), {a, v}, [rows = rows, cols = cols](TensorNode& n) {
        if (n.parents[0]->requires_grad) {
            float* g = n.parents[0]->grad_data();
            for (int64_t i = 0; i < n.size(); ++i) g[i] += n.grad[i];
        }
        if (n.parents[1]->requires_grad) {
            float* g = n.parents[1]->grad_data();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < cols; ++c) g[c] += n.grad[r * cols + c];
        }
    });
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c)
            out.data()[r * cols + c] = a.data()[r * cols + c] + v.data()[c];
    return out;
}

inline Tensor gelu(const Tensor& a) {
    Tensor out = detail::make_result(a.shape(), {a}, [](TensorNode& n) {
        if (!n.parents[0]->requires_grad) return;
        const auto& x = n.parents[0]->value;
        float* g = n.parents[0]->grad_data();
        constexpr float inv_sqrt2 = 0.7071067811865476f;
        constexpr float inv_sqrt2pi = 0.3989422804014327f;
        for (int64_t i = 0; i < n.size(); ++i) {
            const float xi = x[i];
            const float cdf = 0.5f * (1.0f + std::erf(xi * inv_sqrt2));
            const float pdf = inv_sqrt2pi * std::exp(-0.5f * xi * xi);
            g[i] += n.grad[i] * (cdf + xi * pdf);
        }
    });
    constexpr float inv_sqrt2 = 0.7071067811865476f;
    for (int64_t i = 0; i < a.size(); ++i) {
        const float xi = a.data()[i];
        out.data()[i] = 0.5f * xi * (1.0f + std::erf(xi * inv_sqrt2));
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul: [m,k] x [k,n]; batched ranks broadcast as in the usual convention
// ([B,m,k] x [k,n], [B,m,k] x [B,k,n]).
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const int ra = a.rank(), rb = b.rank();
    if (ra < 2 || rb < 2 || ra > 3 || rb > 3)
        fail_shape("matmul: ranks ", ra, " and ", rb, " unsupported");
    const int m = a.dim(ra - 2), ka = a.dim(ra - 1);
    const int kb = b.dim(rb - 2), nn = b.dim(rb - 1);
    if (ka != kb)
        fail_shape("matmul: inner extents disagree: ", shape_str(a.shape()), " vs ",
                   shape_str(b.shape()));
    const int ba = (ra == 3) ? a.dim(0) : 1;
    const int bb = (rb == 3) ? b.dim(0) : 1;
    if (ba != bb && ba != 1 && bb != 1)
        fail_shape("matmul: batch extents not broadcastable: ", ba, " vs ", bb);
    const int batch = std::max(ba, bb);

    Shape out_shape;
    if (ra == 3 || rb == 3) out_shape = {batch, m, nn};
    else out_shape = {m, nn};

    Tensor out = detail::make_result(
        out_shape, {a, b}, [m, nn, k = ka, batch, ba, bb](TensorNode& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            for (int bi = 0; bi < batch; ++bi) {
                const float* av = pa.value.data() + (ba == 1 ? 0 : int64_t(bi) * m * k);
                const float* bv = pb.value.data() + (bb == 1 ? 0 : int64_t(bi) * k * nn);
                const float* gv = n.grad.data() + int64_t(bi) * m * nn;
                if (pa.requires_grad) {
                    float* ga = pa.grad_data() + (ba == 1 ? 0 : int64_t(bi) * m * k);
                    sgemm(false, true, m, k, nn, 1.0f, gv, nn, bv, nn, 1.0f, ga, k);
                }
                if (pb.requires_grad) {
                    float* gb = pb.grad_data() + (bb == 1 ? 0 : int64_t(bi) * k * nn);
                    sgemm(true, false, k, nn, m, 1.0f, av, k, gv, nn, 1.0f, gb, nn);
                }
            }
        });
    for (int bi = 0; bi < batch; ++bi) {
        const float* av = a.data().data() + (ba == 1 ? 0 : int64_t(bi) * m * ka);
        const float* bv = b.data().data() + (bb == 1 ? 0 : int64_t(bi) * ka * nn);
        float* ov = out.data().data() + int64_t(bi) * m * nn;
        sgemm(false, false, m, nn, ka, 1.0f, av, ka, bv, nn, 0.0f, ov, nn);
    }
    return out;
}

// ---------------------------------------------------------------------------
// masked_softmax over the last axis. Mask is either one row (broadcast) or one
// row per logit row. Disallowed positions are exactly zero in the output; a
// fully-masked row is a hard error, never a quiet NaN.
// ---------------------------------------------------------------------------

namespace detail {

// Core row kernel shared by masked_softmax and attention.
inline void masked_softmax_row(const float* logits, const uint8_t* mask, float* out, int64_t n,
                               const char* who) {
    float row_max = -std::numeric_limits<float>::infinity();
    for (int64_t i = 0; i < n; ++i)
        if (mask[i] && logits[i] > row_max) row_max = logits[i];
    if (row_max == -std::numeric_limits<float>::infinity())
        throw ShapeError(std::string(who) + ": fully masked row");
    double denom = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        if (mask[i]) {
            const float e = std::exp(logits[i] - row_max);
            out[i] = e;
            denom += e;
        } else {
            out[i] = 0.0f;
        }
    }
    const float inv = static_cast<float>(1.0 / denom);
    for (int64_t i = 0; i < n; ++i) out[i] *= inv;
}

// d logits = p * (g - sum(g * p)), restricted to allowed entries (p is 0 elsewhere).
inline void softmax_backward_row(const float* p, const float* g, float* out, int64_t n) {
    double dot = 0.0;
    for (int64_t i = 0; i < n; ++i) dot += double(g[i]) * double(p[i]);
    const float d = static_cast<float>(dot);
    for (int64_t i = 0; i < n; ++i) out[i] += p[i] * (g[i] - d);
}

}  // namespace detail

inline Tensor masked_softmax(const Tensor& logits, const std::vector<uint8_t>& mask) {
    const auto [rows, cols] = detail::as_matrix(logits);
    const bool broadcast = static_cast<int64_t>(mask.size()) == cols;
    if (!broadcast && static_cast<int64_t>(mask.size()) != rows * cols)
        fail_shape("masked_softmax: mask length ", mask.size(), " not broadcastable to ", rows,
                   "x", cols);
    Tensor out = detail::make_result(logits.shape(), {logits},
                                     [rows = rows, cols = cols](TensorNode& n) {
                                         if (!n.parents[0]->requires_grad) return;
                                         float* g = n.parents[0]->grad_data();
                                         for (int64_t r = 0; r < rows; ++r)
                                             detail::softmax_backward_row(
                                                 n.value.data() + r * cols,
                                                 n.grad.data() + r * cols, g + r * cols, cols);
                                     });
    for (int64_t r = 0; r < rows; ++r) {
        const uint8_t* mrow = broadcast ? mask.data() : mask.data() + r * cols;
        detail::masked_softmax_row(logits.data().data() + r * cols, mrow,
                                   out.data().data() + r * cols, cols, "masked_softmax");
    }
    return out;
}

// ---------------------------------------------------------------------------
// layer_norm over the last axis with affine gain/bias.
// ---------------------------------------------------------------------------

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    const auto [rows, cols] = detail::as_matrix(x);
    if (gain.size() != cols || bias.size() != cols)
        fail_shape("layer_norm: gain/bias length must equal last extent ", cols);

    // Saved per-row statistics for backward.
    auto stats = std::make_shared<std::vector<float>>(static_cast<size_t>(rows) * 2);
    auto xhat = std::make_shared<std::vector<float>>(static_cast<size_t>(rows * cols));

    Tensor out = detail::make_result(
        x.shape(), {x, gain, bias}, [rows = rows, cols = cols, stats, xhat](TensorNode& n) {
            auto& px = *n.parents[0];
            auto& pg = *n.parents[1];
            auto& pb = *n.parents[2];
            const float* gv = pg.value.data();
            for (int64_t r = 0; r < rows; ++r) {
                const float* go = n.grad.data() + r * cols;
                const float* xh = xhat->data() + r * cols;
                const float inv_std = (*stats)[r * 2 + 1];
                if (pg.requires_grad) {
                    float* gg = pg.grad_data();
                    for (int64_t c = 0; c < cols; ++c) gg[c] += go[c] * xh[c];
                }
                if (pb.requires_grad) {
                    float* gb = pb.grad_data();
                    for (int64_t c = 0; c < cols; ++c) gb[c] += go[c];
                }
                if (px.requires_grad) {
                    double sum_gy = 0.0, sum_gyx = 0.0;
                    for (int64_t c = 0; c < cols; ++c) {
                        const double gy = double(go[c]) * double(gv[c]);
                        sum_gy += gy;
                        sum_gyx += gy * double(xh[c]);
                    }
                    const float mg = static_cast<float>(sum_gy / double(cols));
                    const float mgx = static_cast<float>(sum_gyx / double(cols));
                    float* gx = px.grad_data() + r * cols;
                    for (int64_t c = 0; c < cols; ++c) {
                        const float gy = go[c] * gv[c];
                        gx[c] += inv_std * (gy - mg - xh[c] * mgx);
                    }
                }
            }
        });

    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = x.data().data() + r * cols;
        double mean = 0.0;
        for (int64_t c = 0; c < cols; ++c) mean += xr[c];
        mean /= double(cols);
        double var = 0.0;
        for (int64_t c = 0; c < cols; ++c) {
            const double d = xr[c] - mean;
            var += d * d;
        }
        var /= double(cols);
        const float inv_std = static_cast<float>(1.0 / std::sqrt(var + double(eps)));
        (*stats)[r * 2] = static_cast<float>(mean);
        (*stats)[r * 2 + 1] = inv_std;
        float* xh = xhat->data() + r * cols;
        float* o = out.data().data() + r * cols;
        for (int64_t c = 0; c < cols; ++c) {
            xh[c] = (xr[c] - static_cast<float>(mean)) * inv_std;
            o[c] = xh[c] * gain.data()[c] + bias.data()[c];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Multi-head scaled dot-product attention with a boolean [Lq, Lk] mask.
// Per-head masked softmax; scale 1/sqrt(head_dim). Optionally records the
// per-head attention probabilities (read-only copy, does not alter outputs).
// ---------------------------------------------------------------------------

struct AttnProbs {
    int heads = 0;
    int query_len = 0;
    int key_len = 0;
    std::vector<float> p;  // [heads][query_len][key_len]

    float at(int h, int q, int k) const {
        return p[(size_t(h) * query_len + q) * key_len + k];
    }
};

inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const BoolMatrix& mask, int heads, AttnProbs* record = nullptr) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        fail_shape("attention: expected rank-2 q/k/v");
    const int lq = q.dim(0), d = q.dim(1);
    const int lk = k.dim(0);
    if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != lk)
        fail_shape("attention: q/k/v widths disagree");
    if (heads <= 0 || d % heads != 0)
        fail_shape("attention: width ", d, " not divisible by heads ", heads);
    if (mask.rows != lq || mask.cols != lk)
        fail_shape("attention: mask is ", mask.rows, "x", mask.cols, ", expected ", lq, "x", lk);
    const int hd = d / heads;
    const float sc = 1.0f / std::sqrt(static_cast<float>(hd));

    auto probs = std::make_shared<std::vector<float>>(size_t(heads) * lq * lk);

    Tensor out = detail::make_result(
        q.shape(), {q, k, v}, [lq, lk, d, hd, heads, sc, probs](TensorNode& n) {
            auto& pq = *n.parents[0];
            auto& pk = *n.parents[1];
            auto& pv = *n.parents[2];
            std::vector<float> dp(size_t(lq) * lk);
            std::vector<float> ds(size_t(lq) * lk);
            for (int h = 0; h < heads; ++h) {
                const int off = h * hd;
                const float* ph = probs->data() + size_t(h) * lq * lk;
                const float* gout = n.grad.data() + off;
                // dV_h += P^T g_h
                if (pv.requires_grad) {
                    sgemm(true, false, lk, hd, lq, 1.0f, ph, lk, gout, d, 1.0f,
                          pv.grad_data() + off, d);
                }
                // dP = g_h V_h^T, then back through softmax and the scale.
                sgemm(false, true, lq, lk, hd, 1.0f, gout, d, pv.value.data() + off, d, 0.0f,
                      dp.data(), lk);
                std::fill(ds.begin(), ds.end(), 0.0f);
                for (int r = 0; r < lq; ++r)
                    detail::softmax_backward_row(ph + size_t(r) * lk, dp.data() + size_t(r) * lk,
                                                 ds.data() + size_t(r) * lk, lk);
                for (auto& x : ds) x *= sc;
                if (pq.requires_grad)
                    sgemm(false, false, lq, hd, lk, 1.0f, ds.data(), lk, pk.value.data() + off, d,
                          1.0f, pq.grad_data() + off, d);
                if (pk.requires_grad)
                    sgemm(true, false, lk, hd, lq, 1.0f, ds.data(), lk, pq.value.data() + off, d,
                          1.0f, pk.grad_data() + off, d);
            }
        });

    std::vector<float> logits(size_t(lq) * lk);
    const bool keep = grad_mode_flag() && out.requires_grad();
    for (int h = 0; h < heads; ++h) {
        const int off = h * hd;
        sgemm(false, true, lq, lk, hd, sc, q.data().data() + off, d, k.data().data() + off, d,
              0.0f, logits.data(), lk);
        float* ph = probs->data() + size_t(h) * lq * lk;
        for (int r = 0; r < lq; ++r)
            detail::masked_softmax_row(logits.data() + size_t(r) * lk, mask.row(r),
                                       ph + size_t(r) * lk, lk, "attention");
        sgemm(false, false, lq, hd, lk, 1.0f, ph, lk, v.data().data() + off, d, 0.0f,
              out.data().data() + off, d);
    }
    if (record) {
        record->heads = heads;
        record->query_len = lq;
        record->key_len = lk;
        record->p = *probs;
    }
    if (!keep) probs->clear();
    return out;
}

// ---------------------------------------------------------------------------
// Shape/selection ops
// ---------------------------------------------------------------------------

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) fail_shape("concat_rows: no inputs");
    const int64_t cols = detail::as_matrix(parts[0]).second;
    int64_t total = 0;
    for (const auto& p : parts) {
        const auto [r, c] = detail::as_matrix(p);
        if (c != cols) fail_shape("concat_rows: column mismatch ", c, " vs ", cols);
        total += r;
    }
    Tensor out = detail::make_result(
        {static_cast<int>(total), static_cast<int>(cols)}, parts, [cols](TensorNode& n) {
            int64_t row = 0;
            for (auto& pp : n.parents) {
                const int64_t r = pp->size() / cols;
                if (pp->requires_grad) {
                    float* g = pp->grad_data();
                    const float* src = n.grad.data() + row * cols;
                    for (int64_t i = 0; i < r * cols; ++i) g[i] += src[i];
                }
                row += r;
            }
        });
    int64_t row = 0;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + row * cols);
        row += detail::as_matrix(p).first;
    }
    return out;
}

inline Tensor slice_rows(const Tensor& x, int start, int len) {
    const auto [rows, cols] = detail::as_matrix(x);
    if (start < 0 || len < 0 || start + len > rows)
        fail_shape("slice_rows: [", start, ",", start + len, ") out of ", rows, " rows");
    Tensor out = detail::make_result({len, static_cast<int>(cols)}, {x},
                                     [start, len, cols = cols](TensorNode& n) {
                                         if (!n.parents[0]->requires_grad) return;
                                         float* g = n.parents[0]->grad_data() + int64_t(start) * cols;
                                         for (int64_t i = 0; i < int64_t(len) * cols; ++i)
                                             g[i] += n.grad[i];
                                     });
    std::copy(x.data().begin() + int64_t(start) * cols,
              x.data().begin() + int64_t(start + len) * cols, out.data().begin());
    return out;
}

// Row gather (embedding lookup); backward scatter-adds into the table.
inline Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
    const auto [rows, cols] = detail::as_matrix(table);
    for (int id : ids)
        if (id < 0 || id >= rows) fail_shape("gather_rows: id ", id, " out of ", rows, " rows");
    auto saved = std::make_shared<std::vector<int>>(ids);
    Tensor out = detail::make_result({static_cast<int>(ids.size()), static_cast<int>(cols)},
                                     {table}, [saved, cols = cols](TensorNode& n) {
                                         if (!n.parents[0]->requires_grad) return;
                                         float* g = n.parents[0]->grad_data();
                                         for (size_t r = 0; r < saved->size(); ++r) {
                                             const int64_t dst = int64_t((*saved)[r]) * cols;
                                             const float* src = n.grad.data() + int64_t(r) * cols;
                                             for (int64_t c = 0; c < cols; ++c) g[dst + c] += src[c];
                                         }
                                     });
    for (size_t r = 0; r < ids.size(); ++r)
        std::copy(table.data().begin() + int64_t(ids[r]) * cols,
                  table.data().begin() + int64_t(ids[r] + 1) * cols,
                  out.data().begin() + int64_t(r) * cols);
    return out;
}

inline Tensor mean_all(const Tensor& x) {
    const int64_t n = x.size();
    Tensor out = detail::make_result({1}, {x}, [n](TensorNode& node) {
        if (!node.parents[0]->requires_grad) return;
        float* g = node.parents[0]->grad_data();
        const float s = node.grad[0] / static_cast<float>(n);
        for (int64_t i = 0; i < n; ++i) g[i] += s;
    });
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    out.data()[0] = static_cast<float>(acc / double(n));
    return out;
}

// View the same values under a different shape (element count must match).
inline Tensor reshape(const Tensor& x, Shape shape) {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    if (n != x.size())
        fail_shape("reshape: cannot view ", x.size(), " elements as ", shape_str(shape));
    Tensor out = detail::make_result(shape, {x}, [](TensorNode& node) {
        if (!node.parents[0]->requires_grad) return;
        float* g = node.parents[0]->grad_data();
        for (int64_t i = 0; i < node.size(); ++i) g[i] += node.grad[i];
    });
    std::copy(x.data().begin(), x.data().end(), out.data().begin());
    return out;
}

inline Tensor sum_all(const Tensor& x) {
    const int64_t n = x.size();
    Tensor out = detail::make_result({1}, {x}, [n](TensorNode& node) {
        if (!node.parents[0]->requires_grad) return;
        float* g = node.parents[0]->grad_data();
        for (int64_t i = 0; i < n; ++i) g[i] += node.grad[0];
    });
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    out.data()[0] = static_cast<float>(acc);
    return out;
}

// Mean cross-entropy of row-wise logits against integer targets (fused
// log-softmax + NLL; numerically stabilized).
inline Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets) {
    const auto [rows, cols] = detail::as_matrix(logits);
    if (static_cast<int64_t>(targets.size()) != rows)
        fail_shape("cross_entropy_mean: ", targets.size(), " targets for ", rows, " rows");
    for (int t : targets)
        if (t < 0 || t >= cols) fail_shape("cross_entropy_mean: target ", t, " out of vocab ", cols);
    auto saved_probs = std::make_shared<std::vector<float>>(static_cast<size_t>(rows * cols));
    auto saved_t = std::make_shared<std::vector<int>>(targets);
    Tensor out = detail::make_result(
        {1}, {logits}, [rows = rows, cols = cols, saved_probs, saved_t](TensorNode& n) {
            if (!n.parents[0]->requires_grad) return;
            float* g = n.parents[0]->grad_data();
            const float s = n.grad[0] / static_cast<float>(rows);
            for (int64_t r = 0; r < rows; ++r) {
                const float* p = saved_probs->data() + r * cols;
                float* gr = g + r * cols;
                for (int64_t c = 0; c < cols; ++c) gr[c] += s * p[c];
                gr[(*saved_t)[r]] -= s;
            }
        });
    double total = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        const float* row = logits.data().data() + r * cols;
        float mx = row[0];
        for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        double denom = 0.0;
        for (int64_t c = 0; c < cols; ++c) denom += std::exp(double(row[c]) - mx);
        const double lse = std::log(denom) + mx;
        float* p = saved_probs->data() + r * cols;
        for (int64_t c = 0; c < cols; ++c)
            p[c] = static_cast<float>(std::exp(double(row[c]) - lse));
        total += lse - double(row[targets[static_cast<size_t>(r)]]);
    }
    out.data()[0] = static_cast<float>(total / double(rows));
    return out;
}

// Bilinear interpolation over a [rows*cols, d] token grid to a new grid size.
// Exact identity when the target equals the source; preserves constants.
inline Tensor bilinear_resize_grid(const Tensor& x, int rows, int cols, int new_rows,
                                   int new_cols) {
    const auto [n, d] = detail::as_matrix(x);
    if (n != int64_t(rows) * cols)
        fail_shape("bilinear_resize_grid: ", n, " rows != ", rows, "x", cols);
    if (new_rows < 1 || new_cols < 1) fail_shape("bilinear_resize_grid: target extents must be >= 1");

    struct Tap {
        int src;
        float w;
    };
    // Align-corners sampling: output corner tokens coincide with input corners,
    // which makes equal-size resizing an exact identity.
    // Half-pixel-centers sampling; equal-size resizing is an exact identity.
    auto taps_1d = [](int src_n, int dst_n, int i) {
        std::pair<Tap, Tap> t;
        float fpos = (static_cast<float>(i) + 0.5f) * static_cast<float>(src_n) /
                         static_cast<float>(dst_n) -
                     0.5f;
        fpos = std::min(std::max(fpos, 0.0f), static_cast<float>(src_n - 1));
        int lo = static_cast<int>(fpos);
        if (lo > src_n - 2) lo = std::max(0, src_n - 2);
        const float fr = fpos - static_cast<float>(lo);
        t.first = {lo, 1.0f - fr};
        t.second = {std::min(lo + 1, src_n - 1), fr};
        return t;
    };

    auto weights = std::make_shared<std::vector<std::pair<Tap, Tap>>>();
    auto col_weights = std::make_shared<std::vector<std::pair<Tap, Tap>>>();
    for (int r = 0; r < new_rows; ++r) weights->push_back(taps_1d(rows, new_rows, r));
    for (int c = 0; c < new_cols; ++c) col_weights->push_back(taps_1d(cols, new_cols, c));

    Tensor out = detail::make_result(
        {new_rows * new_cols, static_cast<int>(d)}, {x},
        [weights, col_weights, cols, new_rows, new_cols, d = d](TensorNode& n) {
            if (!n.parents[0]->requires_grad) return;
            float* g = n.parents[0]->grad_data();
            for (int r = 0; r < new_rows; ++r) {
                for (int c = 0; c < new_cols; ++c) {
                    const float* go = n.grad.data() + (int64_t(r) * new_cols + c) * d;
                    for (const Tap& tr : {(*weights)[r].first, (*weights)[r].second}) {
                        for (const Tap& tc : {(*col_weights)[c].first, (*col_weights)[c].second}) {
                            const float w = tr.w * tc.w;
                            if (w == 0.0f) continue;
                            float* gi = g + (int64_t(tr.src) * cols + tc.src) * d;
                            for (int64_t ch = 0; ch < d; ++ch) gi[ch] += w * go[ch];
                        }
                    }
                }
            }
        });
    for (int r = 0; r < new_rows; ++r) {
        for (int c = 0; c < new_cols; ++c) {
            float* o = out.data().data() + (int64_t(r) * new_cols + c) * d;
            std::fill(o, o + d, 0.0f);
            for (const Tap& tr : {(*weights)[r].first, (*weights)[r].second}) {
                for (const Tap& tc : {(*col_weights)[c].first, (*col_weights)[c].second}) {
                    const float w = tr.w * tc.w;
                    if (w == 0.0f) continue;
                    const float* xi = x.data().data() + (int64_t(tr.src) * cols + tc.src) * d;
                    for (int64_t ch = 0; ch < d; ++ch) o[ch] += w * xi[ch];
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// backward: explicit topological order from a scalar loss. `seed` is the
// gradient of the loss w.r.t. itself (1/B lets per-clip backward passes
// accumulate a batch-mean gradient).
// ---------------------------------------------------------------------------

inline void backward(const Tensor& loss, float seed = 1.0f) {
    if (loss.size() != 1) fail_shape("backward: loss must be scalar, got ", shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(loss.raw(), 0);
    visited.insert(loss.raw());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.raw()->grad_data()[0] += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

}  // namespace flex
