#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "aau/param.hpp"

namespace aau {

// AdamW with decoupled weight decay: decay scales the value directly and is
// never folded into the gradient; moments are bias-corrected.
class AdamW {
public:
    struct Options {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double weight_decay = 1e-4;
        double eps = 1e-8;
    };

    AdamW(std::vector<Parameter*> params, Options opt) : opt_(opt) {
        for (Parameter* p : params) {
            if (!p->trainable) continue;
            slots_.push_back(Slot{p, TensorF::zeros(p->value.shape), TensorF::zeros(p->value.shape), opt.lr});
        }
    }

    // Param-group style override: every parameter whose name starts with
    // prefix gets its own learning rate.
    void set_lr_for_prefix(const std::string& prefix, double lr) {
        for (auto& s : slots_)
            if (s.p->name.rfind(prefix, 0) == 0) s.lr = lr;
    }

    int step_count() const { return t_; }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, t_);
        const double bc2 = 1.0 - std::pow(opt_.beta2, t_);
        for (auto& s : slots_) {
            Parameter& p = *s.p;
            for (std::int64_t i = 0; i < p.grad.numel(); ++i)
                require(std::isfinite(p.grad[i]), "non-finite-grad", p.name);
            for (std::int64_t i = 0; i < p.value.numel(); ++i) {
                const double g = p.grad[i];
                s.m[i] = opt_.beta1 * s.m[i] + (1.0 - opt_.beta1) * g;
                s.v[i] = opt_.beta2 * s.v[i] + (1.0 - opt_.beta2) * g * g;
                const double mhat = s.m[i] / bc1;
                const double vhat = s.v[i] / bc2;
                p.value[i] -= s.lr * opt_.weight_decay * p.value[i];
                p.value[i] -= s.lr * mhat / (std::sqrt(vhat) + opt_.eps);
            }
        }
    }

    void zero_grad() {
        for (auto& s : slots_) s.p->reset_grad();
    }

private:
    struct Slot {
        Parameter* p;
        TensorF m, v;
        double lr;
    };

    Options opt_;
    std::vector<Slot> slots_;
    int t_ = 0;
};

} // namespace aau
