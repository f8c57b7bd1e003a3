#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "kfacbench/common.hpp"

namespace kfacbench {

// ----------------------------------------------------------------------------
// Training duration policy. The adjusted mode extends the epoch limit
// proportionally to the log2 of the batch-size ratio:
//   total = (log2(batch / ref_batch) + 1) * base_epochs.
// fixed_iterations converts an iteration budget to whole epochs.
// ----------------------------------------------------------------------------

enum class BudgetMode { adjusted, fixed_epochs, fixed_iterations };

struct Budget {
    std::size_t base_epochs = 1;
    std::size_t ref_batch = 128;
    BudgetMode mode = BudgetMode::adjusted;
    std::size_t fixed_value = 0; // epochs or iterations for the fixed modes

    void validate() const {
        if (base_epochs < 1) {
            throw ParameterError("Budget: base_epochs must be >= 1");
        }
        if (mode == BudgetMode::adjusted &&
            (ref_batch == 0 || !std::has_single_bit(static_cast<std::uint64_t>(ref_batch)))) {
            throw ParameterError("Budget: ref_batch must be a positive power of 2 in adjusted mode");
        }
        if (mode != BudgetMode::adjusted && fixed_value == 0) {
            throw ParameterError("Budget: fixed_value must be >= 1 for fixed modes");
        }
    }
};

inline std::size_t total_epochs(const Budget& b, std::size_t batch_size, std::size_t n_train = 0) {
    b.validate();
    switch (b.mode) {
    case BudgetMode::adjusted: {
        if (batch_size < b.ref_batch || batch_size % b.ref_batch != 0) {
            throw ParameterError("total_epochs: batch_size must be ref_batch times a power of 2");
        }
        const std::size_t ratio = batch_size / b.ref_batch;
        if (!std::has_single_bit(static_cast<std::uint64_t>(ratio))) {
            throw ParameterError("total_epochs: batch/ref ratio must be a power of 2");
        }
        const std::size_t log2_ratio =
            static_cast<std::size_t>(std::bit_width(static_cast<std::uint64_t>(ratio)) - 1);
        return (log2_ratio + 1) * b.base_epochs;
    }
    case BudgetMode::fixed_epochs:
        return b.fixed_value;
    case BudgetMode::fixed_iterations: {
        if (n_train == 0) {
            throw ParameterError("total_epochs: fixed_iterations mode needs the training-set size");
        }
        // ceil(iterations * batch / n)
        const std::size_t num = b.fixed_value * batch_size;
        return (num + n_train - 1) / n_train;
    }
    }
    throw ParameterError("total_epochs: unknown budget mode");
}

// ----------------------------------------------------------------------------
// Learning-rate decay schedule. Scaled schedules place decay points at fixed
// fractions of the total epochs (resolved via floor); fixed schedules use
// absolute epoch numbers. A decay applies from the start of its epoch.
// ----------------------------------------------------------------------------

enum class ScheduleKind { scaled, fixed };

struct LrSchedule {
    ScheduleKind kind = ScheduleKind::scaled;
    std::vector<double> decay_points; // fractions in (0,1) for scaled; absolute epochs for fixed
    double decay_factor = 10.0;

    void validate() const {
        if (decay_factor <= 1.0) {
            throw ParameterError("LrSchedule: decay_factor must be > 1");
        }
        for (std::size_t i = 0; i < decay_points.size(); ++i) {
            if (kind == ScheduleKind::scaled &&
                !(decay_points[i] > 0.0 && decay_points[i] < 1.0)) {
                throw ParameterError("LrSchedule: scaled decay points must lie in (0,1)");
            }
            if (i > 0 && decay_points[i] <= decay_points[i - 1]) {
                throw ParameterError("LrSchedule: decay points must be strictly increasing");
            }
        }
    }
};

// Epoch at which the i-th decay fires for a run of `total` epochs.
inline std::size_t decay_epoch(const LrSchedule& s, std::size_t i, std::size_t total) {
    if (s.kind == ScheduleKind::scaled) {
        return static_cast<std::size_t>(std::floor(s.decay_points[i] * static_cast<double>(total)));
    }
    return static_cast<std::size_t>(s.decay_points[i]);
}

inline double lr_multiplier(const LrSchedule& s, std::size_t epoch, std::size_t total) {
    s.validate();
    if (epoch >= total) {
        throw ParameterError("lr_multiplier: epoch out of range");
    }
    double m = 1.0;
    for (std::size_t i = 0; i < s.decay_points.size(); ++i) {
        if (epoch >= decay_epoch(s, i, total)) {
            m /= s.decay_factor;
        }
    }
    return m;
}

// Training stages: the decay points split [0, total) into decay_points+1
// intervals. Returns half-open [start, end) epoch ranges.
inline std::vector<std::pair<std::size_t, std::size_t>> stage_epochs(const LrSchedule& s,
                                                                     std::size_t total) {
    std::vector<std::pair<std::size_t, std::size_t>> stages;
    std::size_t start = 0;
    for (std::size_t i = 0; i < s.decay_points.size(); ++i) {
        std::size_t e = std::min(decay_epoch(s, i, total), total);
        stages.emplace_back(start, e);
        start = e;
    }
    stages.emplace_back(start, total);
    return stages;
}

} // namespace kfacbench
