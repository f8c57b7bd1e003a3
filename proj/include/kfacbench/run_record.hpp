#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "kfacbench/budget.hpp"
#include "kfacbench/common.hpp"
#include "kfacbench/optim.hpp"

namespace kfacbench {

// ----------------------------------------------------------------------------
// RunConfig: the full identity of one training run. The per-run seed is
// derived from the study base seed and the config hash, so adding configs to
// a study never perturbs existing runs.
// ----------------------------------------------------------------------------

struct RunConfig {
    std::variant<SgdConfig, KfacConfig> optimizer;
    std::size_t batch_size = 1;
    Budget budget;
    LrSchedule schedule;
    std::uint64_t seed = 0;
    std::size_t record_every = 1;
    std::size_t replica = 0;

    bool is_sgd() const { return std::holds_alternative<SgdConfig>(optimizer); }
    const SgdConfig& sgd() const { return std::get<SgdConfig>(optimizer); }
    const KfacConfig& kfac() const { return std::get<KfacConfig>(optimizer); }

    double base_lr() const { return is_sgd() ? sgd().lr : kfac().lr; }

    void validate() const {
        if (is_sgd()) {
            sgd().validate();
        } else {
            kfac().validate();
        }
        if (batch_size < 1) {
            throw ParameterError("RunConfig: batch_size must be >= 1");
        }
        if (record_every < 1) {
            throw ParameterError("RunConfig: record_every must be >= 1");
        }
        budget.validate();
        schedule.validate();
    }
};

enum class RunStatus { completed, diverged };

// Full per-iteration trace of one (optimizer, batch size, hyperparameters)
// training run. All recorded values are finite; divergence truncates the
// series and flags the record.
struct RunRecord {
    RunConfig config;
    std::vector<double> train_loss;    // per recorded iteration (record_every)
    std::vector<double> test_accuracy; // per epoch; empty for regression
    std::vector<double> test_loss;     // per epoch
    std::size_t iterations_per_epoch = 0;
    std::size_t total_epochs = 0;
    RunStatus status = RunStatus::completed;
    std::optional<std::size_t> diverged_at; // iteration index of the first non-finite value
};

// ----------------------------------------------------------------------------
// JSON serialization (schema 1)
// ----------------------------------------------------------------------------

inline std::string to_string(BudgetMode m) {
    switch (m) {
    case BudgetMode::adjusted: return "adjusted";
    case BudgetMode::fixed_epochs: return "fixed_epochs";
    case BudgetMode::fixed_iterations: return "fixed_iterations";
    }
    return "?";
}

inline BudgetMode budget_mode_from_string(const std::string& s) {
    if (s == "adjusted") return BudgetMode::adjusted;
    if (s == "fixed_epochs") return BudgetMode::fixed_epochs;
    if (s == "fixed_iterations") return BudgetMode::fixed_iterations;
    throw ParameterError("unknown budget mode: " + s);
}

inline std::string to_string(ScheduleKind k) {
    return k == ScheduleKind::scaled ? "scaled" : "fixed";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "scaled") return ScheduleKind::scaled;
    if (s == "fixed") return ScheduleKind::fixed;
    throw ParameterError("unknown schedule kind: " + s);
}

inline nlohmann::json budget_to_json(const Budget& b) {
    return {{"mode", to_string(b.mode)},
            {"base_epochs", b.base_epochs},
            {"ref_batch", b.ref_batch},
            {"fixed_value", b.fixed_value}};
}

inline Budget budget_from_json(const nlohmann::json& j) {
    Budget b;
    b.mode = budget_mode_from_string(j.at("mode").get<std::string>());
    b.base_epochs = j.at("base_epochs").get<std::size_t>();
    b.ref_batch = j.at("ref_batch").get<std::size_t>();
    b.fixed_value = j.at("fixed_value").get<std::size_t>();
    return b;
}

inline nlohmann::json schedule_to_json(const LrSchedule& s) {
    return {{"kind", to_string(s.kind)},
            {"decay_points", s.decay_points},
            {"decay_factor", s.decay_factor}};
}

inline LrSchedule schedule_from_json(const nlohmann::json& j) {
    LrSchedule s;
    s.kind = schedule_kind_from_string(j.at("kind").get<std::string>());
    s.decay_points = j.at("decay_points").get<std::vector<double>>();
    s.decay_factor = j.at("decay_factor").get<double>();
    return s;
}

// Identity part only: the seed is derived from this, so it is excluded.
inline nlohmann::json run_config_identity_json(const RunConfig& c) {
    nlohmann::json j;
    if (c.is_sgd()) {
        const SgdConfig& s = c.sgd();
        j["optimizer"] = "sgd";
        j["lr"] = s.lr;
        j["momentum"] = s.momentum;
        j["weight_decay"] = s.weight_decay;
    } else {
        const KfacConfig& k = c.kfac();
        j["optimizer"] = "kfac";
        j["lr"] = k.lr;
        j["damping"] = k.damping;
        j["decay"] = k.decay;
        j["clip_kappa"] = k.clip_kappa;
        j["scheme"] = to_string(k.scheme);
        j["fisher_mode"] = to_string(k.fisher_mode);
        j["t_inv"] = k.t_inv;
        j["weight_decay"] = k.weight_decay;
    }
    j["batch_size"] = c.batch_size;
    j["budget"] = budget_to_json(c.budget);
    j["schedule"] = schedule_to_json(c.schedule);
    j["record_every"] = c.record_every;
    j["replica"] = c.replica;
    return j;
}

// Stable hex hash of the canonical config identity.
inline std::string run_config_hash(const RunConfig& c) {
    return hash_hex(fnv1a64(run_config_identity_json(c).dump()));
}

inline std::uint64_t derive_run_seed(std::uint64_t base_seed, const std::string& config_hash) {
    return mix64(mix64(base_seed) ^ fnv1a64(config_hash));
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    nlohmann::json j = run_config_identity_json(c);
    j["seed"] = c.seed;
    return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    const std::string kind = j.at("optimizer").get<std::string>();
    if (kind == "sgd") {
        SgdConfig s;
        s.lr = j.at("lr").get<double>();
        s.momentum = j.at("momentum").get<double>();
        s.weight_decay = j.at("weight_decay").get<double>();
        c.optimizer = s;
    } else if (kind == "kfac") {
        KfacConfig k;
        k.lr = j.at("lr").get<double>();
        k.damping = j.at("damping").get<double>();
        k.decay = j.at("decay").get<double>();
        k.clip_kappa = j.at("clip_kappa").get<double>();
        k.scheme = damping_from_string(j.at("scheme").get<std::string>());
        k.fisher_mode = fisher_mode_from_string(j.at("fisher_mode").get<std::string>());
        k.t_inv = j.at("t_inv").get<std::size_t>();
        k.weight_decay = j.at("weight_decay").get<double>();
        c.optimizer = k;
    } else {
        throw ParameterError("unknown optimizer kind: " + kind);
    }
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.budget = budget_from_json(j.at("budget"));
    c.schedule = schedule_from_json(j.at("schedule"));
    c.record_every = j.at("record_every").get<std::size_t>();
    c.replica = j.at("replica").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

inline nlohmann::json run_record_to_json(const RunRecord& r) {
    nlohmann::json j;
    j["schema"] = 1;
    j["config"] = run_config_to_json(r.config);
    j["iterations_per_epoch"] = r.iterations_per_epoch;
    j["total_epochs"] = r.total_epochs;
    j["status"] = r.status == RunStatus::completed ? "completed" : "diverged";
    j["diverged_at"] = r.diverged_at ? nlohmann::json(*r.diverged_at) : nlohmann::json(nullptr);
    j["train_loss"] = r.train_loss;
    j["test_accuracy"] = r.test_accuracy;
    j["test_loss"] = r.test_loss;
    return j;
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
    if (j.at("schema").get<int>() != 1) {
        throw ConfigError("run record: unsupported schema version");
    }
    RunRecord r;
    r.config = run_config_from_json(j.at("config"));
    r.iterations_per_epoch = j.at("iterations_per_epoch").get<std::size_t>();
    r.total_epochs = j.at("total_epochs").get<std::size_t>();
    const std::string st = j.at("status").get<std::string>();
    if (st == "completed") {
        r.status = RunStatus::completed;
    } else if (st == "diverged") {
        r.status = RunStatus::diverged;
    } else {
        throw ConfigError("run record: unknown status " + st);
    }
    if (!j.at("diverged_at").is_null()) {
        r.diverged_at = j.at("diverged_at").get<std::size_t>();
    }
    r.train_loss = j.at("train_loss").get<std::vector<double>>();
    r.test_accuracy = j.at("test_accuracy").get<std::vector<double>>();
    r.test_loss = j.at("test_loss").get<std::vector<double>>();
    return r;
}

} // namespace kfacbench
