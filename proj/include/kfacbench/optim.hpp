#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "kfacbench/common.hpp"
#include "kfacbench/fisher.hpp"
#include "kfacbench/matrix.hpp"
#include "kfacbench/network.hpp"

namespace kfacbench {

// ----------------------------------------------------------------------------
// Optimizer configurations
// ----------------------------------------------------------------------------

struct SgdConfig {
    double lr = 0.1;
    double momentum = 0.0;
    double weight_decay = 0.0;

    void validate() const {
        if (!(lr >= 0.0)) {
            throw ParameterError("SgdConfig: lr must be non-negative");
        }
        if (!(momentum >= 0.0 && momentum < 1.0)) {
            throw ParameterError("SgdConfig: momentum must lie in [0,1)");
        }
        if (!(weight_decay >= 0.0)) {
            throw ParameterError("SgdConfig: weight_decay must be non-negative");
        }
    }
};

struct KfacConfig {
    double lr = 0.1;
    double damping = 1e-3;       // lambda
    double decay = 0.9;          // statistics EMA decay
    double clip_kappa = 0.1;     // update-clipping constant
    DampingKind scheme = DampingKind::normal;
    FisherMode fisher_mode = FisherMode::sampled;
    std::size_t t_inv = 1;       // inversion period
    double weight_decay = 0.0;

    void validate() const {
        if (!(lr >= 0.0)) {
            throw ParameterError("KfacConfig: lr must be non-negative");
        }
        if (!(damping > 0.0)) {
            throw ParameterError("KfacConfig: damping must be positive");
        }
        if (!(decay > 0.0 && decay < 1.0)) {
            throw ParameterError("KfacConfig: decay must lie in (0,1)");
        }
        if (!(clip_kappa > 0.0)) {
            throw ParameterError("KfacConfig: clip_kappa must be positive");
        }
        if (t_inv < 1) {
            throw ParameterError("KfacConfig: t_inv must be >= 1");
        }
        if (!(weight_decay >= 0.0)) {
            throw ParameterError("KfacConfig: weight_decay must be non-negative");
        }
    }
};

struct OptState {
    std::vector<Matrix> velocity; // SGD momentum buffers, one per layer
    FisherState fisher;           // K-FAC state

    static OptState for_sgd(const Network& net) {
        OptState s;
        s.velocity.reserve(net.depth());
        for (const Layer& l : net.layers()) {
            s.velocity.emplace_back(l.w.rows(), l.w.cols());
        }
        return s;
    }

    static OptState for_kfac(const Network& net, std::size_t t_inv) {
        OptState s;
        s.fisher = FisherState(net, t_inv);
        return s;
    }
};

// ----------------------------------------------------------------------------
// SGD with classical heavy-ball momentum:
//   g~ <- grad + weight_decay * W;  v <- momentum * v + g~;  W <- W - lr * v
// ----------------------------------------------------------------------------

inline void sgd_step(Network& net, OptState& state, const Gradients& grads, const SgdConfig& cfg,
                     double lr_now) {
    if (grads.dw.size() != net.depth() || state.velocity.size() != net.depth()) {
        throw DimensionError("sgd_step: gradient/state shape mismatch");
    }
    for (std::size_t l = 0; l < net.depth(); ++l) {
        Matrix& w = net.layers()[l].w;
        Matrix& v = state.velocity[l];
        const Matrix& g = grads.dw[l];
        if (g.rows() != w.rows() || g.cols() != w.cols()) {
            throw DimensionError("sgd_step: gradient shape mismatch");
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            double gt = g.data()[i];
            if (cfg.weight_decay != 0.0) {
                gt += cfg.weight_decay * w.data()[i];
            }
            v.data()[i] = cfg.momentum * v.data()[i] + gt;
            w.data()[i] -= lr_now * v.data()[i];
        }
    }
}

// ----------------------------------------------------------------------------
// Damped K-FAC step. Updates the factor EMAs from the capture, preconditions
// the (weight-decayed) gradient under the configured damping scheme, applies
// the Fisher-norm trust-region clip
//   nu = min(1, sqrt(clip_kappa / (lr^2 * sum_l <V_l, F_hat_l V_l>)))
// and takes W <- W - lr * nu * V. Returns false when the update is
// non-finite, which marks the run diverged rather than crashing.
// ----------------------------------------------------------------------------

inline bool kfac_step(Network& net, OptState& state, const Gradients& grads,
                      const LayerCapture& capture, const KfacConfig& cfg, double lr_now) {
    if (grads.dw.size() != net.depth()) {
        throw DimensionError("kfac_step: gradient shape mismatch");
    }
    if (!capture.complete()) {
        throw DimensionError("kfac_step: capture is incomplete");
    }
    state.fisher.update_factors(capture, cfg.decay);

    std::vector<Matrix> updates;
    updates.reserve(net.depth());
    double quad = 0.0;
    for (std::size_t l = 0; l < net.depth(); ++l) {
        Matrix g = grads.dw[l];
        if (cfg.weight_decay != 0.0) {
            const Matrix& w = net.layers()[l].w;
            for (std::size_t i = 0; i < g.size(); ++i) {
                g.data()[i] += cfg.weight_decay * w.data()[i];
            }
        }
        Matrix v = state.fisher.precondition(cfg.scheme, l, g, cfg.damping);
        if (!v.all_finite()) {
            return false;
        }
        quad += state.fisher.quadratic_form(cfg.scheme, l, v, cfg.damping);
        updates.push_back(std::move(v));
    }

    double nu = 1.0;
    const double scaled = lr_now * lr_now * quad;
    if (scaled > cfg.clip_kappa) {
        nu = std::sqrt(cfg.clip_kappa / scaled);
    }
    if (!std::isfinite(nu)) {
        return false;
    }

    for (std::size_t l = 0; l < net.depth(); ++l) {
        Matrix& w = net.layers()[l].w;
        const Matrix& v = updates[l];
        for (std::size_t i = 0; i < w.size(); ++i) {
            w.data()[i] -= lr_now * nu * v.data()[i];
        }
    }
    return net.all_finite();
}

} // namespace kfacbench
