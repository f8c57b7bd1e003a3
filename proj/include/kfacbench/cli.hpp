#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "kfacbench/analysis.hpp"
#include "kfacbench/common.hpp"
#include "kfacbench/study.hpp"
#include "kfacbench/train.hpp"

namespace kfacbench {

// ----------------------------------------------------------------------------
// Study configuration file: the study spec plus orchestration settings.
// Unknown fields are rejected; command-line flags override file values.
// ----------------------------------------------------------------------------

struct StudyConfig {
    StudySpec spec;
    std::size_t parallelism = 1;
    std::string out_dir = "study";
};

inline StudyConfig study_config_from_json(const nlohmann::json& j) {
    detail::check_keys(j,
                       {"schema", "parallelism", "out_dir", "dataset", "network", "optimizer",
                        "grid", "batch_sizes", "budget", "schedule", "base_seed", "record_every",
                        "replicas"},
                       "study config");
    if (!j.contains("schema") || j.at("schema").get<int>() != 1) {
        throw ConfigError("study config: missing or unsupported schema version (expected 1)");
    }
    StudyConfig cfg;
    nlohmann::json spec = j;
    spec.erase("schema");
    if (spec.contains("parallelism")) {
        cfg.parallelism = spec.at("parallelism").get<std::size_t>();
        spec.erase("parallelism");
    }
    if (spec.contains("out_dir")) {
        cfg.out_dir = spec.at("out_dir").get<std::string>();
        spec.erase("out_dir");
    }
    cfg.spec = study_spec_from_json(spec);
    return cfg;
}

namespace cli_detail {

template <typename T>
std::vector<T> parse_list(const std::string& csv) {
    std::vector<T> out;
    std::size_t pos = 0;
    while (pos <= csv.size()) {
        std::size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) {
            comma = csv.size();
        }
        const std::string item = csv.substr(pos, comma - pos);
        if (!item.empty()) {
            if constexpr (std::is_same_v<T, double>) {
                out.push_back(std::stod(item));
            } else {
                out.push_back(static_cast<T>(std::stoull(item)));
            }
        }
        pos = comma + 1;
        if (comma == csv.size()) {
            break;
        }
    }
    return out;
}

inline std::size_t env_threads_fallback(std::size_t fallback) {
    if (const char* env = std::getenv("KFACBENCH_THREADS")) {
        try {
            const std::size_t n = static_cast<std::size_t>(std::stoull(env));
            if (n >= 1) {
                return n;
            }
        } catch (const std::exception&) {
            // ignore malformed values
        }
    }
    return fallback;
}

inline int exit_code_for(const RunSet& rs) {
    for (const RunRecord& r : rs.records) {
        if (r.status == RunStatus::diverged) {
            return 2;
        }
    }
    return 0;
}

} // namespace cli_detail

// ----------------------------------------------------------------------------
// CLI entry point. Subcommands: generate-data, run, grid,
// analyze {targets|speedup|heatmap|robustness}.
// Exit codes: 0 success, 1 usage/config error, 2 completed with diverged runs.
// ----------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"K-FAC / SGD large-batch training benchmark"};
    app.require_subcommand(1);

    // ---------------- generate-data ----------------
    auto* gen = app.add_subcommand("generate-data", "Generate a synthetic dataset as CSV");
    std::string gen_kind = "blobs";
    std::uint64_t gen_seed = 1;
    std::size_t gen_n = 256, gen_d = 2, gen_k = 2;
    double gen_spread = 0.5, gen_noise = 0.1;
    std::string gen_out;
    gen->add_option("--kind", gen_kind, "blobs or linreg")
        ->check(CLI::IsMember({"blobs", "linreg"}));
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--n", gen_n, "number of samples");
    gen->add_option("--d", gen_d, "feature dimension");
    gen->add_option("--k", gen_k, "number of classes (blobs)");
    gen->add_option("--spread", gen_spread, "cluster noise standard deviation (blobs)");
    gen->add_option("--noise-sd", gen_noise, "label noise standard deviation (linreg)");
    gen->add_option("--out", gen_out, "output CSV path")->required();

    // ---------------- run ----------------
    auto* run = app.add_subcommand("run", "Execute a single training run");
    std::string r_data_kind = "blobs";
    std::uint64_t r_data_seed = 1;
    std::size_t r_n = 256, r_d = 2, r_k = 2;
    double r_spread = 0.5, r_noise = 0.1;
    std::string r_hidden = "32,32";
    std::string r_activation = "relu";
    std::string r_optimizer;
    double r_lr = 0.0;
    double r_momentum = 0.0, r_damping = 1e-3, r_decay = 0.9, r_clip = 0.1, r_wd = 0.0;
    std::string r_scheme = "normal", r_fisher = "sampled";
    std::size_t r_tinv = 1;
    std::size_t r_batch = 0;
    std::uint64_t r_seed = 0;
    std::size_t r_record_every = 1;
    std::string r_budget_mode = "fixed_epochs";
    std::size_t r_base_epochs = 10, r_ref_batch = 128, r_fixed_value = 10;
    std::string r_schedule = "scaled", r_decay_points = "";
    double r_decay_factor = 10.0;
    std::string r_out = "run.json", r_save_net, r_dump_spectra;
    run->add_option("--data-kind", r_data_kind)->check(CLI::IsMember({"blobs", "linreg"}));
    run->add_option("--data-seed", r_data_seed);
    run->add_option("--n", r_n);
    run->add_option("--d", r_d);
    run->add_option("--k", r_k);
    run->add_option("--spread", r_spread);
    run->add_option("--noise-sd", r_noise);
    run->add_option("--hidden", r_hidden, "comma-separated hidden widths (may be empty)");
    run->add_option("--activation", r_activation)->check(CLI::IsMember({"relu", "tanh"}));
    run->add_option("--optimizer", r_optimizer, "sgd or kfac")
        ->required()
        ->check(CLI::IsMember({"sgd", "kfac"}));
    run->add_option("--lr", r_lr, "learning rate")->required();
    run->add_option("--momentum", r_momentum);
    run->add_option("--damping", r_damping);
    run->add_option("--decay", r_decay, "K-FAC statistics EMA decay");
    run->add_option("--clip-kappa", r_clip);
    run->add_option("--scheme", r_scheme)->check(CLI::IsMember({"normal", "approximated"}));
    run->add_option("--fisher-mode", r_fisher)->check(CLI::IsMember({"empirical", "sampled"}));
    run->add_option("--t-inv", r_tinv);
    run->add_option("--weight-decay", r_wd);
    run->add_option("--batch-size", r_batch)->required();
    run->add_option("--seed", r_seed);
    run->add_option("--record-every", r_record_every);
    run->add_option("--budget-mode", r_budget_mode)
        ->check(CLI::IsMember({"adjusted", "fixed_epochs", "fixed_iterations"}));
    run->add_option("--base-epochs", r_base_epochs);
    run->add_option("--ref-batch", r_ref_batch);
    run->add_option("--fixed-value", r_fixed_value);
    run->add_option("--schedule", r_schedule)->check(CLI::IsMember({"scaled", "fixed"}));
    run->add_option("--decay-points", r_decay_points, "comma-separated decay points");
    run->add_option("--decay-factor", r_decay_factor);
    run->add_option("--out", r_out, "output record path");
    run->add_option("--save-network", r_save_net, "write the trained network checkpoint");
    run->add_option("--dump-fisher-spectra", r_dump_spectra,
                    "write factor eigenvalue spectra (kfac only)");

    // ---------------- grid ----------------
    auto* grid = app.add_subcommand("grid", "Run a full hyperparameter grid study");
    std::string g_config;
    std::string g_out;
    std::size_t g_parallelism = 0;
    std::size_t g_replicas = 0;
    std::uint64_t g_base_seed = 0;
    bool g_base_seed_set = false;
    grid->add_option("--config", g_config, "study config JSON")->required();
    grid->add_option("--out", g_out, "output directory (overrides config)");
    grid->add_option("--parallelism", g_parallelism, "max concurrent runs (overrides config)");
    grid->add_option("--replicas", g_replicas, "seeds per config (overrides config)");
    grid->add_option("--base-seed", g_base_seed, "study base seed (overrides config)")
        ->each([&](const std::string&) { g_base_seed_set = true; });

    // ---------------- analyze ----------------
    auto* analyze = app.add_subcommand("analyze", "Derive reports from a completed study");
    analyze->require_subcommand(1);
    std::string a_study;
    std::string a_out;
    bool a_allow_partial = false;
    std::size_t a_ref_batch = 0;
    std::string a_targets_file;
    std::size_t a_batch = 0;
    std::string a_metric = "test_accuracy";
    std::string a_basis = "epochs";
    std::string a_checkpoints;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--study", a_study, "study directory")->required();
        sub->add_option("--out", a_out, "report output directory (default: study dir)");
        sub->add_flag("--allow-partial", a_allow_partial, "tolerate missing run records");
    };
    auto* an_targets = analyze->add_subcommand("targets", "Select per-stage targets");
    add_common(an_targets);
    auto* an_speedup = analyze->add_subcommand("speedup", "Iterations-to-target speedup ratios");
    add_common(an_speedup);
    an_speedup->add_option("--reference-batch", a_ref_batch,
                           "reference batch size m0 (default: smallest in study)");
    an_speedup->add_option("--targets", a_targets_file, "reuse targets from a JSON file");
    auto* an_heatmap = analyze->add_subcommand("heatmap", "Best-metric grid tables");
    add_common(an_heatmap);
    an_heatmap->add_option("--batch", a_batch, "batch size (default: all in study)");
    an_heatmap->add_option("--metric", a_metric)
        ->check(CLI::IsMember({"test_accuracy", "train_loss"}));
    auto* an_rob = analyze->add_subcommand("robustness", "Config-distribution robustness");
    add_common(an_rob);
    an_rob->add_option("--basis", a_basis)->check(CLI::IsMember({"epochs", "iterations"}));
    an_rob->add_option("--checkpoints", a_checkpoints, "comma-separated checkpoints")->required();
    an_rob->add_option("--metric", a_metric)
        ->check(CLI::IsMember({"test_accuracy", "train_loss"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        namespace fs = std::filesystem;
        if (*gen) {
            DatasetSpec spec;
            spec.kind = gen_kind;
            spec.seed = gen_seed;
            spec.n = gen_n;
            spec.d = gen_d;
            spec.k = gen_k;
            spec.spread = gen_spread;
            spec.noise_sd = gen_noise;
            export_csv(spec.generate(), gen_out);
            std::cout << "wrote " << gen_out << "\n";
            return 0;
        }

        if (*run) {
            DatasetSpec dspec;
            dspec.kind = r_data_kind;
            dspec.seed = r_data_seed;
            dspec.n = r_n;
            dspec.d = r_d;
            dspec.k = r_k;
            dspec.spread = r_spread;
            dspec.noise_sd = r_noise;
            const Dataset full = dspec.generate();
            const auto [train, test] = train_test_split(full, dspec.seed);

            RunConfig cfg;
            if (r_optimizer == "sgd") {
                SgdConfig s;
                s.lr = r_lr;
                s.momentum = r_momentum;
                s.weight_decay = r_wd;
                cfg.optimizer = s;
            } else {
                KfacConfig k;
                k.lr = r_lr;
                k.damping = r_damping;
                k.decay = r_decay;
                k.clip_kappa = r_clip;
                k.scheme = damping_from_string(r_scheme);
                k.fisher_mode = fisher_mode_from_string(r_fisher);
                k.t_inv = r_tinv;
                k.weight_decay = r_wd;
                cfg.optimizer = k;
            }
            cfg.batch_size = r_batch;
            cfg.budget.mode = budget_mode_from_string(r_budget_mode);
            cfg.budget.base_epochs = r_base_epochs;
            cfg.budget.ref_batch = r_ref_batch;
            cfg.budget.fixed_value = r_fixed_value;
            cfg.schedule.kind = schedule_kind_from_string(r_schedule);
            cfg.schedule.decay_points = cli_detail::parse_list<double>(r_decay_points);
            cfg.schedule.decay_factor = r_decay_factor;
            cfg.seed = r_seed;
            cfg.record_every = r_record_every;
            cfg.validate();

            NetworkSpec nspec;
            nspec.hidden = cli_detail::parse_list<std::size_t>(r_hidden);
            nspec.activation = activation_from_string(r_activation);
            const Network net0 = nspec.instantiate(train, cfg.seed);

            TrainArtifacts artifacts;
            const RunRecord rec = train_run(net0, train, test, cfg, &artifacts);
            write_file_atomic(r_out, run_record_to_json(rec).dump(2) + "\n");
            if (!r_save_net.empty()) {
                write_file_atomic(r_save_net, network_to_json(artifacts.final_net).dump(2) + "\n");
            }
            if (!r_dump_spectra.empty() && r_optimizer == "kfac") {
                write_file_atomic(r_dump_spectra, artifacts.fisher.spectra_json().dump(2) + "\n");
            }
            std::cout << (rec.status == RunStatus::completed ? "completed" : "diverged") << ": "
                      << r_out << "\n";
            return rec.status == RunStatus::completed ? 0 : 2;
        }

        if (*grid) {
            StudyConfig cfg =
                study_config_from_json(nlohmann::json::parse(read_file(g_config)));
            if (!g_out.empty()) {
                cfg.out_dir = g_out;
            }
            if (g_replicas >= 1 && grid->count("--replicas") > 0) {
                cfg.spec.replicas = g_replicas;
            }
            if (g_base_seed_set) {
                cfg.spec.base_seed = g_base_seed;
            }
            std::size_t parallelism = cfg.parallelism;
            if (grid->count("--parallelism") > 0) {
                parallelism = g_parallelism;
            } else {
                parallelism = cli_detail::env_threads_fallback(parallelism);
            }
            if (parallelism < 1) {
                throw ConfigError("grid: parallelism must be >= 1");
            }
            const RunSet rs = run_grid(cfg.spec, cfg.out_dir, parallelism);
            const int code = cli_detail::exit_code_for(rs);
            std::cout << "study " << study_id(cfg.spec) << ": " << rs.records.size()
                      << " runs in " << cfg.out_dir
                      << (code == 2 ? " (some runs diverged)" : "") << "\n";
            return code;
        }

        if (*analyze) {
            const RunSet rs = load_study(a_study, a_allow_partial);
            const fs::path out_dir = a_out.empty() ? fs::path(a_study) : fs::path(a_out);
            fs::create_directories(out_dir);

            if (*an_targets) {
                const std::vector<Target> targets = select_targets(rs);
                write_targets(out_dir, targets);
                for (const Target& t : targets) {
                    std::cout << "stage " << t.stage_index << " " << to_string(t.metric)
                              << " target = " << format_double(t.value) << "  [" << t.provenance
                              << "]\n";
                }
                return 0;
            }
            if (*an_speedup) {
                const std::vector<Target> targets = a_targets_file.empty()
                                                        ? select_targets(rs)
                                                        : read_targets(a_targets_file);
                const std::size_t m0 =
                    a_ref_batch != 0
                        ? a_ref_batch
                        : *std::min_element(rs.spec.batch_sizes.begin(), rs.spec.batch_sizes.end());
                write_speedup_reports(out_dir, speedup_report(rs, targets, m0));
                std::cout << "wrote speedup reports for " << targets.size() << " targets to "
                          << out_dir.string() << "\n";
                return 0;
            }
            if (*an_heatmap) {
                std::vector<std::size_t> batches_to_do;
                if (a_batch != 0) {
                    batches_to_do.push_back(a_batch);
                } else {
                    batches_to_do = rs.spec.batch_sizes;
                }
                for (std::size_t b : batches_to_do) {
                    write_heatmap(out_dir, heatmap(rs, b, target_metric_from_string(a_metric)));
                }
                std::cout << "wrote " << batches_to_do.size() << " heatmap(s) to "
                          << out_dir.string() << "\n";
                return 0;
            }
            if (*an_rob) {
                const std::vector<std::size_t> cps =
                    cli_detail::parse_list<std::size_t>(a_checkpoints);
                const RobustnessSummary rb =
                    robustness(rs, cps, robustness_basis_from_string(a_basis),
                               target_metric_from_string(a_metric));
                write_robustness(out_dir, rb);
                std::cout << "wrote robustness_" << a_basis << " reports to " << out_dir.string()
                          << "\n";
                return 0;
            }
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

} // namespace kfacbench
