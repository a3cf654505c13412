#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ega/tensor.hpp"

namespace ega {

/// Plain SGD with a step-decay schedule: the rate is held at initial_lr until
/// decay_start_epoch, then multiplied by decay_factor at that epoch and again
/// every decay_every epochs after it.
struct SgdConfig {
    double initial_lr = 0.05;
    double decay_factor = 0.1;
    int decay_start_epoch = 150;
    int decay_every = 30;
    int total_epochs = 240;
};

inline void validate(const SgdConfig& cfg) {
    if (!(cfg.initial_lr > 0.0)) throw ValueError("sgd: initial_lr must be > 0");
    if (!(cfg.decay_factor > 0.0 && cfg.decay_factor < 1.0))
        throw ValueError("sgd: decay_factor must be in (0, 1)");
    if (cfg.decay_every < 1) throw ValueError("sgd: decay_every must be >= 1");
    if (cfg.total_epochs < 0) throw ValueError("sgd: total_epochs must be >= 0");
}

inline double lr_at_epoch(const SgdConfig& cfg, int epoch) {
    validate(cfg);
    if (epoch < 0 || epoch >= cfg.total_epochs)
        throw ValueError("lr_at_epoch: epoch " + std::to_string(epoch) + " outside [0, " +
                         std::to_string(cfg.total_epochs) + ")");
    int k = 0;
    if (epoch >= cfg.decay_start_epoch)
        k = (epoch - cfg.decay_start_epoch) / cfg.decay_every + 1;
    return cfg.initial_lr * std::pow(cfg.decay_factor, k);
}

/// param <- param - lr * grad for every param; gradient buffers are cleared
/// afterwards so a stale step without a fresh backward is an error.
inline void sgd_step(std::vector<Tensor>& params, double lr) {
    if (!(lr >= 0.0)) throw ValueError("sgd_step: negative learning rate");
    for (auto& p : params)
        if (!p.has_grad())
            throw ValueError("sgd_step: parameter has no populated gradient");
    for (auto& p : params) {
        auto& v = p.mutable_values();
        const auto& g = p.grad();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
        p.clear_grad();
    }
}

/// Allocates zeroed gradient buffers so that parameters untouched by a loss
/// still satisfy sgd_step's populated-gradient precondition.
inline void zero_grads(std::vector<Tensor>& params) {
    for (auto& p : params) p.zero_grad();
}

} // namespace ega
