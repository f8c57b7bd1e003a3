#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "kfacbench/common.hpp"
#include "kfacbench/dataset.hpp"
#include "kfacbench/grid.hpp"
#include "kfacbench/network.hpp"
#include "kfacbench/run_record.hpp"
#include "kfacbench/train.hpp"

namespace kfacbench {

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& ctx) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed) {
            if (it.key() == k) {
                ok = true;
                break;
            }
        }
        if (!ok) {
            throw ConfigError(ctx + ": unknown field '" + it.key() + "'");
        }
    }
}

} // namespace detail

// ----------------------------------------------------------------------------
// Study specification: dataset, network template, optimizer base settings,
// hyperparameter grid, batch sizes, budget and schedule. Everything a study
// needs to be reproduced bit-for-bit from its manifest.
// ----------------------------------------------------------------------------

struct DatasetSpec {
    std::string kind; // "blobs" or "linreg"
    std::uint64_t seed = 0;
    std::size_t n = 0;
    std::size_t d = 0;
    std::size_t k = 0;      // blobs only
    double spread = 0.0;    // blobs only
    double noise_sd = 0.0;  // linreg only

    Dataset generate() const {
        if (kind == "blobs") {
            return gen_blobs(seed, n, d, k, spread);
        }
        if (kind == "linreg") {
            return gen_linreg(seed, n, d, noise_sd);
        }
        throw ConfigError("DatasetSpec: unknown kind '" + kind + "'");
    }

    Task task() const { return kind == "blobs" ? Task::classification : Task::regression; }
};

struct NetworkSpec {
    std::vector<std::size_t> hidden;
    Activation activation = Activation::relu;

    // Output width and loss follow the dataset task.
    Network instantiate(const Dataset& ds, std::uint64_t seed) const {
        const bool cls = ds.task == Task::classification;
        const std::size_t out = cls ? ds.n_classes : 1;
        const LossKind loss = cls ? LossKind::softmax_cross_entropy : LossKind::mse;
        return Network(ds.dim(), hidden, out, activation, loss, seed);
    }
};

// Non-grid optimizer settings; lr and the second hyperparameter come from
// the grid axes.
struct OptimizerBase {
    std::string kind; // "sgd" or "kfac"
    double weight_decay = 5e-4;
    // kfac only:
    double decay = 0.9;
    double clip_kappa = 0.1;
    DampingKind scheme = DampingKind::normal;
    FisherMode fisher_mode = FisherMode::sampled;
    std::size_t t_inv = 1;
};

struct StudySpec {
    DatasetSpec dataset;
    NetworkSpec network;
    OptimizerBase optimizer;
    GridSpec grid;
    std::vector<std::size_t> batch_sizes;
    Budget budget;
    LrSchedule schedule;
    std::uint64_t base_seed = 0;
    std::size_t record_every = 1;
    std::size_t replicas = 1;

    void validate() const {
        if (optimizer.kind != "sgd" && optimizer.kind != "kfac") {
            throw ConfigError("StudySpec: optimizer kind must be sgd or kfac");
        }
        if (grid.optimizer != optimizer.kind) {
            throw ConfigError("StudySpec: grid optimizer does not match optimizer kind");
        }
        grid.validate();
        budget.validate();
        schedule.validate();
        if (batch_sizes.empty()) {
            throw ConfigError("StudySpec: batch_sizes must be non-empty");
        }
        if (record_every < 1 || replicas < 1) {
            throw ConfigError("StudySpec: record_every and replicas must be >= 1");
        }
    }
};

// ----------------------------------------------------------------------------
// Spec <-> JSON (strict: unknown fields rejected)
// ----------------------------------------------------------------------------

inline nlohmann::json dataset_spec_to_json(const DatasetSpec& d) {
    nlohmann::json j;
    j["kind"] = d.kind;
    j["seed"] = d.seed;
    j["n"] = d.n;
    j["d"] = d.d;
    if (d.kind == "blobs") {
        j["k"] = d.k;
        j["spread"] = d.spread;
    } else {
        j["noise_sd"] = d.noise_sd;
    }
    return j;
}

inline DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
    detail::check_keys(j, {"kind", "seed", "n", "d", "k", "spread", "noise_sd"}, "dataset");
    DatasetSpec d;
    d.kind = j.at("kind").get<std::string>();
    d.seed = j.at("seed").get<std::uint64_t>();
    d.n = j.at("n").get<std::size_t>();
    d.d = j.at("d").get<std::size_t>();
    if (d.kind == "blobs") {
        d.k = j.at("k").get<std::size_t>();
        d.spread = j.at("spread").get<double>();
    } else if (d.kind == "linreg") {
        d.noise_sd = j.at("noise_sd").get<double>();
    } else {
        throw ConfigError("dataset: unknown kind '" + d.kind + "'");
    }
    return d;
}

inline nlohmann::json network_spec_to_json(const NetworkSpec& n) {
    return {{"hidden", n.hidden}, {"activation", to_string(n.activation)}};
}

inline NetworkSpec network_spec_from_json(const nlohmann::json& j) {
    detail::check_keys(j, {"hidden", "activation"}, "network");
    NetworkSpec n;
    n.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    n.activation = activation_from_string(j.at("activation").get<std::string>());
    return n;
}

inline nlohmann::json optimizer_base_to_json(const OptimizerBase& o) {
    nlohmann::json j;
    j["kind"] = o.kind;
    j["weight_decay"] = o.weight_decay;
    if (o.kind == "kfac") {
        j["decay"] = o.decay;
        j["clip_kappa"] = o.clip_kappa;
        j["scheme"] = to_string(o.scheme);
        j["fisher_mode"] = to_string(o.fisher_mode);
        j["t_inv"] = o.t_inv;
    }
    return j;
}

inline OptimizerBase optimizer_base_from_json(const nlohmann::json& j) {
    detail::check_keys(
        j, {"kind", "weight_decay", "decay", "clip_kappa", "scheme", "fisher_mode", "t_inv"},
        "optimizer");
    OptimizerBase o;
    o.kind = j.at("kind").get<std::string>();
    o.weight_decay = j.at("weight_decay").get<double>();
    if (o.kind == "kfac") {
        if (j.contains("decay")) o.decay = j.at("decay").get<double>();
        if (j.contains("clip_kappa")) o.clip_kappa = j.at("clip_kappa").get<double>();
        if (j.contains("scheme")) o.scheme = damping_from_string(j.at("scheme").get<std::string>());
        if (j.contains("fisher_mode")) {
            o.fisher_mode = fisher_mode_from_string(j.at("fisher_mode").get<std::string>());
        }
        if (j.contains("t_inv")) o.t_inv = j.at("t_inv").get<std::size_t>();
    }
    return o;
}

inline nlohmann::json grid_spec_to_json(const GridSpec& g) {
    auto axis = [](const GridAxis& a) {
        return nlohmann::json{
            {"name", a.name}, {"low", a.low}, {"high", a.high}, {"points", a.points}};
    };
    return {{"optimizer", g.optimizer}, {"axis1", axis(g.axis1)}, {"axis2", axis(g.axis2)}};
}

inline GridSpec grid_spec_from_json(const nlohmann::json& j) {
    detail::check_keys(j, {"optimizer", "axis1", "axis2"}, "grid");
    auto axis = [](const nlohmann::json& ja) {
        detail::check_keys(ja, {"name", "low", "high", "points"}, "grid axis");
        GridAxis a;
        a.name = ja.at("name").get<std::string>();
        a.low = ja.at("low").get<double>();
        a.high = ja.at("high").get<double>();
        a.points = ja.at("points").get<std::size_t>();
        return a;
    };
    GridSpec g;
    g.optimizer = j.at("optimizer").get<std::string>();
    g.axis1 = axis(j.at("axis1"));
    g.axis2 = axis(j.at("axis2"));
    return g;
}

inline nlohmann::json study_spec_to_json(const StudySpec& s) {
    nlohmann::json j;
    j["dataset"] = dataset_spec_to_json(s.dataset);
    j["network"] = network_spec_to_json(s.network);
    j["optimizer"] = optimizer_base_to_json(s.optimizer);
    j["grid"] = grid_spec_to_json(s.grid);
    j["batch_sizes"] = s.batch_sizes;
    j["budget"] = budget_to_json(s.budget);
    j["schedule"] = schedule_to_json(s.schedule);
    j["base_seed"] = s.base_seed;
    j["record_every"] = s.record_every;
    j["replicas"] = s.replicas;
    return j;
}

inline StudySpec study_spec_from_json(const nlohmann::json& j) {
    detail::check_keys(j,
                       {"dataset", "network", "optimizer", "grid", "batch_sizes", "budget",
                        "schedule", "base_seed", "record_every", "replicas"},
                       "study");
    StudySpec s;
    s.dataset = dataset_spec_from_json(j.at("dataset"));
    s.network = network_spec_from_json(j.at("network"));
    s.optimizer = optimizer_base_from_json(j.at("optimizer"));
    s.grid = grid_spec_from_json(j.at("grid"));
    s.batch_sizes = j.at("batch_sizes").get<std::vector<std::size_t>>();
    s.budget = budget_from_json(j.at("budget"));
    s.schedule = schedule_from_json(j.at("schedule"));
    s.base_seed = j.at("base_seed").get<std::uint64_t>();
    if (j.contains("record_every")) s.record_every = j.at("record_every").get<std::size_t>();
    if (j.contains("replicas")) s.replicas = j.at("replicas").get<std::size_t>();
    return s;
}

inline std::string study_id(const StudySpec& spec) {
    return hash_hex(fnv1a64(study_spec_to_json(spec).dump()));
}

inline nlohmann::json manifest_to_json(const StudySpec& spec) {
    nlohmann::json j;
    j["schema"] = 1;
    j["study_id"] = study_id(spec);
    j["spec"] = study_spec_to_json(spec);
    return j;
}

// ----------------------------------------------------------------------------
// RunSet: the records of one study in canonical order (batch-major, then
// grid order, then replica).
// ----------------------------------------------------------------------------

struct RunSet {
    StudySpec spec;
    std::vector<RunRecord> records;
};

// Enumerate the full run matrix in canonical order.
inline std::vector<RunConfig> enumerate_runs(const StudySpec& spec) {
    spec.validate();
    const auto grid = make_grid(spec.grid);
    std::vector<RunConfig> out;
    out.reserve(spec.batch_sizes.size() * grid.size() * spec.replicas);
    for (std::size_t batch : spec.batch_sizes) {
        for (const auto& [lr, hp2] : grid) {
            for (std::size_t rep = 0; rep < spec.replicas; ++rep) {
                RunConfig c;
                if (spec.optimizer.kind == "sgd") {
                    SgdConfig s;
                    s.lr = lr;
                    s.momentum = hp2;
                    s.weight_decay = spec.optimizer.weight_decay;
                    c.optimizer = s;
                } else {
                    KfacConfig k;
                    k.lr = lr;
                    k.damping = hp2;
                    k.decay = spec.optimizer.decay;
                    k.clip_kappa = spec.optimizer.clip_kappa;
                    k.scheme = spec.optimizer.scheme;
                    k.fisher_mode = spec.optimizer.fisher_mode;
                    k.t_inv = spec.optimizer.t_inv;
                    k.weight_decay = spec.optimizer.weight_decay;
                    c.optimizer = k;
                }
                c.batch_size = batch;
                c.budget = spec.budget;
                c.schedule = spec.schedule;
                c.record_every = spec.record_every;
                c.replica = rep;
                c.seed = derive_run_seed(spec.base_seed, run_config_hash(c));
                out.push_back(std::move(c));
            }
        }
    }
    return out;
}

// ----------------------------------------------------------------------------
// Orchestrator. Runs every (config x batch size) of the study, skipping runs
// whose record file already exists (resume semantics). Results are identical
// regardless of the parallelism degree: each run is self-contained and is
// written atomically to its own file; the manifest is written once.
// ----------------------------------------------------------------------------

inline RunSet run_grid(const StudySpec& spec, const std::filesystem::path& out_dir,
                       std::size_t parallelism = 1) {
    spec.validate();
    if (parallelism < 1) {
        throw ParameterError("run_grid: parallelism must be >= 1");
    }
    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "runs");

    const nlohmann::json manifest = manifest_to_json(spec);
    const fs::path manifest_path = out_dir / "manifest.json";
    if (fs::exists(manifest_path)) {
        const nlohmann::json existing = nlohmann::json::parse(read_file(manifest_path));
        if (existing != manifest) {
            throw ConfigError("run_grid: existing manifest does not match the study config");
        }
    } else {
        write_file_atomic(manifest_path, manifest.dump(2) + "\n");
    }

    const Dataset full = spec.dataset.generate();
    const auto [train, test] = train_test_split(full, spec.dataset.seed);

    const std::vector<RunConfig> configs = enumerate_runs(spec);
    std::vector<RunRecord> records(configs.size());

    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= configs.size() || failed.load()) {
                return;
            }
            try {
                const RunConfig& cfg = configs[i];
                const std::string hash = run_config_hash(cfg);
                const fs::path rec_path = out_dir / "runs" / (hash + ".json");
                bool loaded = false;
                if (fs::exists(rec_path)) {
                    try {
                        records[i] = run_record_from_json(nlohmann::json::parse(read_file(rec_path)));
                        loaded = true;
                    } catch (const std::exception&) {
                        loaded = false; // corrupt record: recompute
                    }
                }
                if (!loaded) {
                    const Network net0 = spec.network.instantiate(train, cfg.seed);
                    records[i] = train_run(net0, train, test, cfg);
                    write_file_atomic(rec_path, run_record_to_json(records[i]).dump(2) + "\n");
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) {
                    first_error = std::current_exception();
                }
                failed.store(true);
                return;
            }
        }
    };

    if (parallelism == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        const std::size_t n_threads = std::min(parallelism, configs.size());
        threads.reserve(n_threads);
        for (std::size_t t = 0; t < n_threads; ++t) {
            threads.emplace_back(worker);
        }
        for (auto& t : threads) {
            t.join();
        }
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
    return RunSet{spec, std::move(records)};
}

// Load a completed (or, with allow_partial, partially completed) study.
inline RunSet load_study(const std::filesystem::path& dir, bool allow_partial = false) {
    namespace fs = std::filesystem;
    const fs::path manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path)) {
        throw ConfigError("load_study: no manifest at " + manifest_path.string());
    }
    const nlohmann::json manifest = nlohmann::json::parse(read_file(manifest_path));
    if (manifest.at("schema").get<int>() != 1) {
        throw ConfigError("load_study: unsupported manifest schema");
    }
    RunSet rs;
    rs.spec = study_spec_from_json(manifest.at("spec"));
    for (const RunConfig& cfg : enumerate_runs(rs.spec)) {
        const fs::path rec_path = dir / "runs" / (run_config_hash(cfg) + ".json");
        if (!fs::exists(rec_path)) {
            if (allow_partial) {
                continue;
            }
            throw ConfigError("load_study: missing record " + rec_path.string() +
                              " (use allow_partial to skip)");
        }
        rs.records.push_back(run_record_from_json(nlohmann::json::parse(read_file(rec_path))));
    }
    return rs;
}

} // namespace kfacbench
