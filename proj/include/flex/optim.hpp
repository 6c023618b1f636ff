#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "flex/nn.hpp"

namespace flex {

// Linear warmup to `peak` over `warmup` steps, then cosine decay to zero at
// `total`. Evaluated at integer steps.
inline double lr_schedule(int64_t step, int64_t warmup, double peak, int64_t total) {
    if (warmup > total) fail_config("lr_schedule: warmup ", warmup, " exceeds total ", total);
    if (step < 0 || step > total) fail_config("lr_schedule: step ", step, " outside [0, ", total, "]");
    if (warmup > 0 && step < warmup)
        return peak * static_cast<double>(step) / static_cast<double>(warmup);
    if (total == warmup) return peak;
    const double t = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return peak * 0.5 * (1.0 + std::cos(t * M_PI));
}

// Decoupled-weight-decay Adam. Frozen parameters are skipped entirely; grads
// of every registered parameter are cleared after the step.
class AdamW {
public:
    struct Config {
        double lr = 4e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.01;
    };

    explicit AdamW(ParamSet& params) : params_(&params) {}
    AdamW(ParamSet& params, Config cfg) : params_(&params), cfg_(cfg) {}

    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }
    int64_t step_count() const { return step_; }

    void step() {
        ensure_state();
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        size_t idx = 0;
        for (auto& p : params_->all()) {
            auto& slot = state_[idx++];
            if (p.frozen) continue;
            if (!p.value.has_grad())
                throw std::runtime_error("AdamW: missing grad on unfrozen parameter '" + p.name +
                                         "'");
            auto& val = p.value.data();
            auto& g = p.value.grad();
            for (size_t i = 0; i < val.size(); ++i) {
                const double gi = g[i];
                slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * gi;
                slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * gi * gi;
                const double mhat = slot.m[i] / bc1;
                const double vhat = slot.v[i] / bc2;
                val[i] = static_cast<float>(
                    double(val[i]) - cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                                cfg_.weight_decay * double(val[i])));
            }
        }
        params_->zero_grad();
    }

    // Serialization hooks for bit-exact checkpoint resume.
    struct Slot {
        std::vector<double> m;
        std::vector<double> v;
    };
    std::vector<Slot>& state() {
        ensure_state();
        return state_;
    }
    void set_step_count(int64_t s) { step_ = s; }

private:
    void ensure_state() {
        if (state_.size() == params_->all().size()) return;
        state_.clear();
        for (const auto& p : params_->all()) {
            Slot s;
            s.m.assign(static_cast<size_t>(p.size()), 0.0);
            s.v.assign(static_cast<size_t>(p.size()), 0.0);
            state_.push_back(std::move(s));
        }
    }

    ParamSet* params_;
    Config cfg_;
    std::vector<Slot> state_;
    int64_t step_ = 0;
};

}  // namespace flex
