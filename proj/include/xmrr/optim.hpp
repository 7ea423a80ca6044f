#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "xmrr/tensor.hpp"

namespace xmrr {

// lr = base * decay^floor(epoch / every)
inline double lr_schedule(double base_lr, double decay, std::size_t decay_every, std::size_t epoch) {
    if (decay_every == 0) throw std::runtime_error("lr_schedule: decay_every must be >= 1");
    return base_lr * std::pow(decay, double(epoch / decay_every));
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam with per-parameter moments and step counts. Parameters
// that take no part in a batch (e.g. the image projector on text-only
// batches) are simply never stepped, so their moments stay untouched.
template <typename T>
struct AdamState {
    struct Slot {
        Tensor<T> m;
        Tensor<T> v;
        std::uint64_t step = 0;
    };

    AdamConfig cfg;
    std::map<std::string, Slot> slots; // ordered for deterministic serialization

    void step(const std::string& name, Tensor<T>& param, const Tensor<T>& grad, double lr) {
        if (!param.same_shape(grad))
            throw std::runtime_error("adam_step: shape mismatch for parameter \"" + name + "\"");
        for (std::size_t i = 0; i < grad.numel(); ++i)
            if (!std::isfinite(double(grad[i])))
                throw std::runtime_error("adam_step: non-finite gradient in parameter \"" + name + "\"");

        Slot& s = slots[name];
        if (s.m.data.empty()) {
            s.m = Tensor<T>(param.shape);
            s.v = Tensor<T>(param.shape);
        } else if (!s.m.same_shape(param)) {
            throw std::runtime_error("adam_step: stale moment shape for parameter \"" + name + "\"");
        }
        ++s.step;
        const double b1 = cfg.beta1, b2 = cfg.beta2;
        const double bc1 = 1.0 - std::pow(b1, double(s.step));
        const double bc2 = 1.0 - std::pow(b2, double(s.step));
        for (std::size_t i = 0; i < param.numel(); ++i) {
            const double g = double(grad[i]);
            const double m = b1 * double(s.m[i]) + (1.0 - b1) * g;
            const double v = b2 * double(s.v[i]) + (1.0 - b2) * g * g;
            s.m[i] = T(m);
            s.v[i] = T(v);
            param[i] = T(double(param[i]) - lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps));
        }
    }
};

} // namespace xmrr
