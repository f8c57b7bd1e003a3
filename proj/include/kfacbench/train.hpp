#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "kfacbench/dataset.hpp"
#include "kfacbench/network.hpp"
#include "kfacbench/optim.hpp"
#include "kfacbench/run_record.hpp"
#include "kfacbench/rng.hpp"

namespace kfacbench {

namespace detail {

inline std::uint64_t fisher_iteration_seed(std::uint64_t run_seed, std::size_t iteration) {
    return mix64((mix64(run_seed) ^ fnv1a64("fisher")) + mix64(iteration));
}

} // namespace detail

// Final state of a run, for checkpoint and diagnostic dumps.
struct TrainArtifacts {
    Network final_net;
    FisherState fisher; // empty for SGD runs
};

// ----------------------------------------------------------------------------
// One full training run: deterministic in all inputs, single-threaded and
// self-contained. Records the mini-batch train loss every `record_every`
// iterations and test metrics once per epoch. The first non-finite loss or
// update marks the run diverged and truncates the trace.
// ----------------------------------------------------------------------------

inline RunRecord train_run(const Network& net0, const Dataset& train, const Dataset& test,
                           const RunConfig& cfg, TrainArtifacts* artifacts = nullptr) {
    cfg.validate();
    if (train.n() < cfg.batch_size) {
        throw ParameterError("train_run: batch_size exceeds the training set");
    }

    RunRecord rec;
    rec.config = cfg;
    rec.total_epochs = total_epochs(cfg.budget, cfg.batch_size, train.n());

    Network net = net0;
    OptState state = cfg.is_sgd() ? OptState::for_sgd(net)
                                  : OptState::for_kfac(net, cfg.kfac().t_inv);

    BatchPlan plan{cfg.batch_size, cfg.seed, /*drop_last=*/false};
    rec.iterations_per_epoch = batches_per_epoch(train.n(), plan);

    const FisherMode mode = cfg.is_sgd() ? FisherMode::empirical : cfg.kfac().fisher_mode;
    const double base_lr = cfg.base_lr();

    std::size_t iteration = 0;
    bool diverged = false;
    for (std::size_t epoch = 0; epoch < rec.total_epochs && !diverged; ++epoch) {
        const double lr_now = base_lr * lr_multiplier(cfg.schedule, epoch, rec.total_epochs);
        for (const auto& batch_idx : batches(train, plan, epoch)) {
            const std::size_t m = batch_idx.size();
            Matrix xb(m, train.dim());
            std::vector<double> tb(m);
            for (std::size_t i = 0; i < m; ++i) {
                const std::size_t src = batch_idx[i];
                for (std::size_t j = 0; j < train.dim(); ++j) {
                    xb(i, j) = train.x(src, j);
                }
                tb[i] = train.y[src];
            }

            ForwardResult fwd = forward(net, xb);
            BackwardResult bwd =
                loss_and_backward(net, fwd.capture, fwd.outputs, tb, mode,
                                  detail::fisher_iteration_seed(cfg.seed, iteration));
            if (!std::isfinite(bwd.loss)) {
                rec.status = RunStatus::diverged;
                rec.diverged_at = iteration;
                diverged = true;
                break;
            }
            if (iteration % cfg.record_every == 0) {
                rec.train_loss.push_back(bwd.loss);
            }

            bool ok = true;
            if (cfg.is_sgd()) {
                sgd_step(net, state, bwd.grads, cfg.sgd(), lr_now);
                ok = net.all_finite();
            } else {
                ok = kfac_step(net, state, bwd.grads, fwd.capture, cfg.kfac(), lr_now);
            }
            if (!ok) {
                rec.status = RunStatus::diverged;
                rec.diverged_at = iteration;
                diverged = true;
                break;
            }
            ++iteration;
        }
        if (diverged) {
            break;
        }
        EvalResult ev = evaluate(net, test);
        if (!std::isfinite(ev.mean_loss)) {
            rec.status = RunStatus::diverged;
            rec.diverged_at = iteration;
            break;
        }
        rec.test_loss.push_back(ev.mean_loss);
        if (ev.accuracy) {
            rec.test_accuracy.push_back(*ev.accuracy);
        }
    }
    if (artifacts) {
        artifacts->final_net = std::move(net);
        artifacts->fisher = std::move(state.fisher);
    }
    return rec;
}

} // namespace kfacbench
