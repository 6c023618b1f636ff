#pragma once

#include <deque>
#include <string>
#include <vector>

#include "flex/tensor.hpp"

namespace flex {

// A named, trainable array. Frozen parameters keep their gradients but are
// never touched by the optimizer (stage-1 patchifier freezing).
struct Parameter {
    Tensor value;
    std::string name;
    bool frozen = false;

    int64_t size() const { return value.size(); }
};

// Registry of parameters, filled at module construction in a fixed order so
// checkpoints and optimizer state are position-stable. Deque keeps the raw
// Parameter pointers held by modules valid across growth.
class ParamSet {
public:
    Parameter* add(const std::string& name, Tensor value, bool frozen = false) {
        value.set_requires_grad(true);
        params_.push_back(Parameter{std::move(value), name, frozen});
        return &params_.back();
    }

    std::deque<Parameter>& all() { return params_; }
    const std::deque<Parameter>& all() const { return params_; }

    Parameter* find(const std::string& name) {
        for (auto& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }

    void zero_grad() {
        for (auto& p : params_) p.value.zero_grad();
    }

    void set_frozen_prefix(const std::string& prefix, bool frozen) {
        for (auto& p : params_)
            if (p.name.rfind(prefix, 0) == 0) p.frozen = frozen;
    }

    int64_t total_size() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p.size();
        return n;
    }

private:
    std::deque<Parameter> params_;
};

// Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init.
inline Tensor init_uniform(Shape shape, int fan_in, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    const float bound = 1.0f / std::sqrt(static_cast<float>(std::max(1, fan_in)));
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

// ---------------------------------------------------------------------------
// Small building blocks. Weights are stored [in, out] so forward needs no
// transpose: y = x W + b.
// ---------------------------------------------------------------------------

struct Linear {
    Parameter* w = nullptr;
    Parameter* b = nullptr;

    Linear() = default;
    Linear(ParamSet& ps, const std::string& name, int in, int out, Rng& rng) {
        w = ps.add(name + ".w", init_uniform({in, out}, in, rng));
        b = ps.add(name + ".b", init_uniform({out}, in, rng));
    }

    Tensor forward(const Tensor& x) const { return add_row(matmul(x, w->value), b->value); }
};

struct LayerNorm {
    Parameter* gain = nullptr;
    Parameter* bias = nullptr;
    float eps = 1e-5f;

    LayerNorm() = default;
    LayerNorm(ParamSet& ps, const std::string& name, int width) {
        gain = ps.add(name + ".gain", Tensor::full({width}, 1.0f));
        bias = ps.add(name + ".bias", Tensor::zeros({width}));
    }

    Tensor forward(const Tensor& x) const { return layer_norm(x, gain->value, bias->value, eps); }
};

// Linear -> GELU -> Linear.
struct Mlp {
    Linear fc1;
    Linear fc2;

    Mlp() = default;
    Mlp(ParamSet& ps, const std::string& name, int in, int hidden, int out, Rng& rng)
        : fc1(ps, name + ".fc1", in, hidden, rng), fc2(ps, name + ".fc2", hidden, out, rng) {}

    Tensor forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }
};

// Pre-norm transformer block: x += attn(LN(x)); x += MLP(LN(x)).
struct TransformerBlock {
    LayerNorm norm1;
    LayerNorm norm2;
    Linear wq, wk, wv, wo;
    Mlp mlp;
    int heads = 1;

    TransformerBlock() = default;
    TransformerBlock(ParamSet& ps, const std::string& name, int width, int n_heads, Rng& rng)
        : norm1(ps, name + ".norm1", width),
          norm2(ps, name + ".norm2", width),
          wq(ps, name + ".attn.wq", width, width, rng),
          wk(ps, name + ".attn.wk", width, width, rng),
          wv(ps, name + ".attn.wv", width, width, rng),
          wo(ps, name + ".attn.wo", width, width, rng),
          mlp(ps, name + ".mlp", width, 4 * width, width, rng),
          heads(n_heads) {}

    Tensor forward(const Tensor& x, const BoolMatrix& mask, AttnProbs* record = nullptr) const {
        Tensor h = norm1.forward(x);
        Tensor attn_out =
            attention(wq.forward(h), wk.forward(h), wv.forward(h), mask, heads, record);
        Tensor x1 = add(x, wo.forward(attn_out));
        Tensor x2 = add(x1, mlp.forward(norm2.forward(x1)));
        return x2;
    }

    // Cross-attention flavor: queries from x, keys/values from a fixed context.
    Tensor forward_cross(const Tensor& x, const Tensor& context, const BoolMatrix& mask,
                         AttnProbs* record = nullptr) const {
        Tensor h = norm1.forward(x);
        Tensor attn_out =
            attention(wq.forward(h), wk.forward(context), wv.forward(context), mask, heads, record);
        Tensor x1 = add(x, wo.forward(attn_out));
        Tensor x2 = add(x1, mlp.forward(norm2.forward(x1)));
        return x2;
    }
};

}  // namespace flex
