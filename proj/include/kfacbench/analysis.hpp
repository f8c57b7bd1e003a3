#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "kfacbench/common.hpp"
#include "kfacbench/study.hpp"

namespace kfacbench {

// ----------------------------------------------------------------------------
// Targets: a loss or accuracy threshold anchored to a training stage of the
// selected (worst-performing) run.
// ----------------------------------------------------------------------------

enum class TargetMetric { train_loss, test_accuracy };

inline std::string to_string(TargetMetric m) {
    return m == TargetMetric::train_loss ? "train_loss" : "test_accuracy";
}

inline TargetMetric target_metric_from_string(const std::string& s) {
    if (s == "train_loss") return TargetMetric::train_loss;
    if (s == "test_accuracy") return TargetMetric::test_accuracy;
    throw ParameterError("unknown target metric: " + s);
}

struct Target {
    TargetMetric metric = TargetMetric::train_loss;
    double value = 0.0;
    std::size_t stage_index = 0;
    std::string provenance;

    void validate() const {
        if (metric == TargetMetric::train_loss && !(value > 0.0)) {
            throw ParameterError("Target: loss targets must be positive");
        }
        if (metric == TargetMetric::test_accuracy && !(value > 0.0 && value <= 1.0)) {
            throw ParameterError("Target: accuracy targets must lie in (0,1]");
        }
    }
};

// ----------------------------------------------------------------------------
// iterations_to_target: smallest iteration index at which the record first
// satisfies the target (loss <= value, accuracy >= value). Accuracy is
// recorded per epoch and converts to the iteration index ending that epoch.
// Crossings inside the recorded (finite) prefix count even if the run
// diverged later; a run that diverged before reaching is unreached.
// ----------------------------------------------------------------------------

inline std::optional<std::size_t> iterations_to_target(const RunRecord& rec, const Target& t) {
    if (t.metric == TargetMetric::train_loss) {
        for (std::size_t i = 0; i < rec.train_loss.size(); ++i) {
            if (rec.train_loss[i] <= t.value) {
                return i * rec.config.record_every;
            }
        }
    } else {
        for (std::size_t e = 0; e < rec.test_accuracy.size(); ++e) {
            if (rec.test_accuracy[e] >= t.value) {
                return (e + 1) * rec.iterations_per_epoch - 1;
            }
        }
    }
    return std::nullopt;
}

namespace detail {

inline const char* optimizer_name(const RunRecord& r) {
    return r.config.is_sgd() ? "sgd" : "kfac";
}

inline double second_hyper(const RunRecord& r) {
    return r.config.is_sgd() ? r.config.sgd().momentum : r.config.kfac().damping;
}

} // namespace detail

// ----------------------------------------------------------------------------
// Target selection. The selected run is the best (final-train-loss
// minimizing) config of the (batch size, method) group whose best final loss
// is worst across the given run sets. For each training stage of that run,
// the target value interpolates 80% of the way from the metric at the first
// recorded point of the stage to the metric at its last recorded point; one
// loss target and one accuracy target per stage.
// ----------------------------------------------------------------------------

inline std::vector<Target> select_targets(const std::vector<const RunSet*>& sets) {
    struct Group {
        double best_final = std::numeric_limits<double>::infinity();
        const RunRecord* best = nullptr;
    };
    std::map<std::pair<std::string, std::size_t>, Group> groups;
    for (const RunSet* rs : sets) {
        for (const RunRecord& r : rs->records) {
            if (r.status != RunStatus::completed || r.train_loss.empty()) {
                continue;
            }
            Group& g = groups[{detail::optimizer_name(r), r.config.batch_size}];
            const double final_loss = r.train_loss.back();
            if (final_loss < g.best_final) {
                g.best_final = final_loss;
                g.best = &r;
            }
        }
    }
    const RunRecord* selected = nullptr;
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& [key, g] : groups) {
        if (g.best && g.best_final > worst) {
            worst = g.best_final;
            selected = g.best;
        }
    }
    if (!selected) {
        throw ConfigError("select_targets: no completed runs");
    }

    const RunRecord& sel = *selected;
    std::string prov = std::string("selected run: optimizer=") + detail::optimizer_name(sel) +
                       " batch=" + std::to_string(sel.config.batch_size) +
                       " lr=" + format_double(sel.config.base_lr()) +
                       (sel.config.is_sgd() ? " momentum=" : " damping=") +
                       format_double(detail::second_hyper(sel)) +
                       " final_train_loss=" + format_double(sel.train_loss.back());

    std::vector<Target> targets;
    const auto stages = stage_epochs(sel.config.schedule, sel.total_epochs);
    const std::size_t ipe = sel.iterations_per_epoch;
    const std::size_t k = sel.config.record_every;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const auto [e_start, e_end] = stages[s];
        if (e_start >= e_end) {
            continue;
        }
        // Train loss: first/last recorded iteration inside the stage.
        {
            const std::size_t it_start = e_start * ipe;
            const std::size_t it_end = e_end * ipe; // exclusive
            const std::size_t i_first = (it_start + k - 1) / k;
            if (i_first * k < it_end && i_first < sel.train_loss.size()) {
                std::size_t i_last = std::min((it_end - 1) / k, sel.train_loss.size() - 1);
                const double v0 = sel.train_loss[i_first];
                const double v1 = sel.train_loss[i_last];
                Target t;
                t.metric = TargetMetric::train_loss;
                t.value = v0 + 0.8 * (v1 - v0);
                t.stage_index = s;
                t.provenance = prov;
                t.validate();
                targets.push_back(std::move(t));
            }
        }
        // Test accuracy: first/last epoch inside the stage.
        if (e_end <= sel.test_accuracy.size()) {
            const double v0 = sel.test_accuracy[e_start];
            const double v1 = sel.test_accuracy[e_end - 1];
            Target t;
            t.metric = TargetMetric::test_accuracy;
            t.value = v0 + 0.8 * (v1 - v0);
            t.stage_index = s;
            t.provenance = prov;
            t.validate();
            targets.push_back(std::move(t));
        }
    }
    return targets;
}

inline std::vector<Target> select_targets(const RunSet& rs) {
    return select_targets(std::vector<const RunSet*>{&rs});
}

// ----------------------------------------------------------------------------
// Speedup: k_c(m) (min over configs), s_c(m; m0) = k_c(m0)/k_c(m), and the
// ideal m/m0 reference.
// ----------------------------------------------------------------------------

struct SpeedupCell {
    std::size_t batch = 0;
    std::optional<std::size_t> k;  // unreached when absent
    std::optional<double> speedup; // absent when either k is unreached
    double ideal = 0.0;
};

struct SpeedupReport {
    Target target;
    std::size_t m0 = 0;
    std::vector<SpeedupCell> cells;
};

inline std::vector<SpeedupReport> speedup_report(const RunSet& rs,
                                                 const std::vector<Target>& targets,
                                                 std::size_t m0) {
    if (std::find(rs.spec.batch_sizes.begin(), rs.spec.batch_sizes.end(), m0) ==
        rs.spec.batch_sizes.end()) {
        throw ParameterError("speedup_report: reference batch not present in the study");
    }
    std::vector<SpeedupReport> out;
    for (const Target& t : targets) {
        SpeedupReport rep;
        rep.target = t;
        rep.m0 = m0;
        std::map<std::size_t, std::optional<std::size_t>> k_of;
        for (std::size_t m : rs.spec.batch_sizes) {
            k_of[m] = std::nullopt;
        }
        for (const RunRecord& r : rs.records) {
            const auto k = iterations_to_target(r, t);
            if (!k) {
                continue;
            }
            auto& slot = k_of[r.config.batch_size];
            if (!slot || *k < *slot) {
                slot = *k;
            }
        }
        const std::optional<std::size_t> k0 = k_of[m0];
        for (std::size_t m : rs.spec.batch_sizes) {
            SpeedupCell cell;
            cell.batch = m;
            cell.k = k_of[m];
            cell.ideal = static_cast<double>(m) / static_cast<double>(m0);
            if (k0 && cell.k) {
                cell.speedup = static_cast<double>(*k0) / static_cast<double>(*cell.k);
            }
            rep.cells.push_back(cell);
        }
        out.push_back(std::move(rep));
    }
    return out;
}

// ----------------------------------------------------------------------------
// Heatmap: best metric value attained by each grid config within its budget;
// diverged configs are marked instead of valued.
// ----------------------------------------------------------------------------

struct HeatmapCell {
    double axis1 = 0.0;
    double axis2 = 0.0;
    std::optional<double> value; // absent iff diverged
    bool diverged = false;
};

struct Heatmap {
    std::size_t batch = 0;
    TargetMetric metric = TargetMetric::test_accuracy;
    std::vector<double> axis1_values;
    std::vector<double> axis2_values;
    std::vector<HeatmapCell> cells; // axis1-major
};

inline std::optional<double> best_metric_of(const RunRecord& r, TargetMetric metric) {
    if (metric == TargetMetric::test_accuracy) {
        if (r.test_accuracy.empty()) {
            return std::nullopt;
        }
        return *std::max_element(r.test_accuracy.begin(), r.test_accuracy.end());
    }
    if (r.train_loss.empty()) {
        return std::nullopt;
    }
    return *std::min_element(r.train_loss.begin(), r.train_loss.end());
}

inline Heatmap heatmap(const RunSet& rs, std::size_t batch, TargetMetric metric) {
    if (std::find(rs.spec.batch_sizes.begin(), rs.spec.batch_sizes.end(), batch) ==
        rs.spec.batch_sizes.end()) {
        throw ParameterError("heatmap: batch size not present in the study");
    }
    Heatmap hm;
    hm.batch = batch;
    hm.metric = metric;
    hm.axis1_values = axis_values(rs.spec.grid.axis1);
    hm.axis2_values = axis_values(rs.spec.grid.axis2);

    for (double a1 : hm.axis1_values) {
        for (double a2 : hm.axis2_values) {
            HeatmapCell cell;
            cell.axis1 = a1;
            cell.axis2 = a2;
            bool any = false;
            bool all_diverged = true;
            std::optional<double> best;
            for (const RunRecord& r : rs.records) {
                if (r.config.batch_size != batch || r.config.base_lr() != a1 ||
                    detail::second_hyper(r) != a2) {
                    continue;
                }
                any = true;
                if (r.status == RunStatus::diverged) {
                    continue;
                }
                all_diverged = false;
                const auto v = best_metric_of(r, metric);
                if (!v) {
                    continue;
                }
                if (!best || (metric == TargetMetric::test_accuracy ? *v > *best : *v < *best)) {
                    best = *v;
                }
            }
            cell.diverged = any && all_diverged;
            if (!cell.diverged) {
                cell.value = best;
            }
            hm.cells.push_back(cell);
        }
    }
    return hm;
}

// ----------------------------------------------------------------------------
// Robustness: distribution over all grid configs of the best metric achieved
// up to a checkpoint (in epochs or iterations). Diverged runs contribute the
// worst possible metric (accuracy 0, loss +inf). Quantiles use the midpoint
// rule; +inf values serialize as nulls / empty CSV fields.
// ----------------------------------------------------------------------------

enum class RobustnessBasis { epochs, iterations };

inline std::string to_string(RobustnessBasis b) {
    return b == RobustnessBasis::epochs ? "epochs" : "iterations";
}

inline RobustnessBasis robustness_basis_from_string(const std::string& s) {
    if (s == "epochs") return RobustnessBasis::epochs;
    if (s == "iterations") return RobustnessBasis::iterations;
    throw ParameterError("unknown robustness basis: " + s);
}

struct RobustnessCell {
    std::size_t batch = 0;
    std::size_t checkpoint = 0;
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
    std::size_t count = 0;
};

struct RobustnessSummary {
    RobustnessBasis basis = RobustnessBasis::epochs;
    TargetMetric metric = TargetMetric::test_accuracy;
    std::vector<RobustnessCell> cells;
};

namespace detail {

// Midpoint quantile rule: median of each half, halves excluding the middle
// element when the count is odd; degenerate counts collapse to the median.
struct Quantiles {
    double min, q1, median, q3, max;
};

inline double median_of(std::span<const double> v) {
    const std::size_t n = v.size();
    return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline Quantiles quantiles_midpoint(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    Quantiles q{};
    q.min = v.front();
    q.max = v.back();
    q.median = median_of(v);
    if (n == 1) {
        q.q1 = q.q3 = q.median;
        return q;
    }
    const std::size_t half = n / 2;
    q.q1 = median_of(std::span<const double>(v.data(), half));
    q.q3 = median_of(std::span<const double>(v.data() + (n - half), half));
    return q;
}

// Best metric within the checkpoint cutoff for one record.
inline double best_up_to(const RunRecord& r, TargetMetric metric, RobustnessBasis basis,
                         std::size_t checkpoint) {
    const double worst = metric == TargetMetric::test_accuracy
                             ? 0.0
                             : std::numeric_limits<double>::infinity();
    if (r.status == RunStatus::diverged) {
        return worst;
    }
    double best = worst;
    bool seen = false;
    if (metric == TargetMetric::test_accuracy) {
        for (std::size_t e = 0; e < r.test_accuracy.size(); ++e) {
            const bool within = basis == RobustnessBasis::epochs
                                    ? (e < checkpoint)
                                    : ((e + 1) * r.iterations_per_epoch <= checkpoint);
            if (!within) {
                break;
            }
            best = seen ? std::max(best, r.test_accuracy[e]) : r.test_accuracy[e];
            seen = true;
        }
    } else {
        const std::size_t cutoff_iters = basis == RobustnessBasis::epochs
                                             ? checkpoint * r.iterations_per_epoch
                                             : checkpoint;
        for (std::size_t i = 0; i < r.train_loss.size(); ++i) {
            if (i * r.config.record_every >= cutoff_iters) {
                break;
            }
            best = seen ? std::min(best, r.train_loss[i]) : r.train_loss[i];
            seen = true;
        }
    }
    return seen ? best : worst;
}

} // namespace detail

inline RobustnessSummary robustness(const RunSet& rs, std::span<const std::size_t> checkpoints,
                                    RobustnessBasis basis,
                                    TargetMetric metric = TargetMetric::test_accuracy) {
    if (checkpoints.empty()) {
        throw ParameterError("robustness: needs at least one checkpoint");
    }
    RobustnessSummary out;
    out.basis = basis;
    out.metric = metric;
    for (std::size_t batch : rs.spec.batch_sizes) {
        for (std::size_t cp : checkpoints) {
            std::vector<double> values;
            for (const RunRecord& r : rs.records) {
                if (r.config.batch_size != batch) {
                    continue;
                }
                values.push_back(detail::best_up_to(r, metric, basis, cp));
            }
            if (values.empty()) {
                continue;
            }
            const auto q = detail::quantiles_midpoint(values);
            RobustnessCell cell;
            cell.batch = batch;
            cell.checkpoint = cp;
            cell.min = q.min;
            cell.q1 = q.q1;
            cell.median = q.median;
            cell.q3 = q.q3;
            cell.max = q.max;
            cell.count = values.size();
            out.cells.push_back(cell);
        }
    }
    return out;
}

// ----------------------------------------------------------------------------
// Report files: plot-ready CSVs with fixed headers plus JSON mirrors.
// ----------------------------------------------------------------------------

namespace detail {

inline std::string csv_num(double v) {
    return std::isfinite(v) ? format_double(v) : std::string();
}

inline nlohmann::json json_num(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

} // namespace detail

inline nlohmann::json target_to_json(const Target& t) {
    return {{"metric", to_string(t.metric)},
            {"value", t.value},
            {"stage", t.stage_index},
            {"provenance", t.provenance}};
}

inline Target target_from_json(const nlohmann::json& j) {
    Target t;
    t.metric = target_metric_from_string(j.at("metric").get<std::string>());
    t.value = j.at("value").get<double>();
    t.stage_index = j.at("stage").get<std::size_t>();
    t.provenance = j.value("provenance", std::string());
    return t;
}

inline void write_targets(const std::filesystem::path& dir, const std::vector<Target>& targets) {
    nlohmann::json j = nlohmann::json::array();
    for (const Target& t : targets) {
        j.push_back(target_to_json(t));
    }
    write_file_atomic(dir / "targets.json", j.dump(2) + "\n");
}

inline std::vector<Target> read_targets(const std::filesystem::path& file) {
    const nlohmann::json j = nlohmann::json::parse(read_file(file));
    std::vector<Target> out;
    for (const auto& jt : j) {
        out.push_back(target_from_json(jt));
    }
    return out;
}

inline void write_speedup_reports(const std::filesystem::path& dir,
                                  const std::vector<SpeedupReport>& reports) {
    nlohmann::json all = nlohmann::json::array();
    for (const SpeedupReport& rep : reports) {
        std::string csv = "metric,stage,target_value,batch,k_iterations,speedup,ideal\n";
        nlohmann::json jr;
        jr["target"] = target_to_json(rep.target);
        jr["reference_batch"] = rep.m0;
        jr["cells"] = nlohmann::json::array();
        for (const SpeedupCell& c : rep.cells) {
            csv += to_string(rep.target.metric) + "," + std::to_string(rep.target.stage_index) +
                   "," + format_double(rep.target.value) + "," + std::to_string(c.batch) + ",";
            csv += c.k ? std::to_string(*c.k) : std::string();
            csv += ",";
            csv += c.speedup ? format_double(*c.speedup) : std::string();
            csv += "," + format_double(c.ideal) + "\n";
            nlohmann::json jc;
            jc["batch"] = c.batch;
            jc["k_iterations"] = c.k ? nlohmann::json(*c.k) : nlohmann::json(nullptr);
            jc["speedup"] = c.speedup ? nlohmann::json(*c.speedup) : nlohmann::json(nullptr);
            jc["ideal"] = c.ideal;
            jr["cells"].push_back(std::move(jc));
        }
        const std::string name = "speedup_" + to_string(rep.target.metric) + "_" +
                                 std::to_string(rep.target.stage_index);
        write_file_atomic(dir / (name + ".csv"), csv);
        all.push_back(std::move(jr));
    }
    write_file_atomic(dir / "speedup.json", all.dump(2) + "\n");
}

inline void write_heatmap(const std::filesystem::path& dir, const Heatmap& hm) {
    std::string csv = "axis1,axis2,best_value,status\n";
    nlohmann::json j;
    j["batch"] = hm.batch;
    j["metric"] = to_string(hm.metric);
    j["axis1_values"] = hm.axis1_values;
    j["axis2_values"] = hm.axis2_values;
    j["cells"] = nlohmann::json::array();
    for (const HeatmapCell& c : hm.cells) {
        csv += format_double(c.axis1) + "," + format_double(c.axis2) + ",";
        csv += c.value ? format_double(*c.value) : std::string();
        csv += ",";
        csv += c.diverged ? "diverged" : "ok";
        csv += "\n";
        nlohmann::json jc;
        jc["axis1"] = c.axis1;
        jc["axis2"] = c.axis2;
        jc["value"] = c.value ? nlohmann::json(*c.value) : nlohmann::json(nullptr);
        jc["diverged"] = c.diverged;
        j["cells"].push_back(std::move(jc));
    }
    const std::string name = "heatmap_b" + std::to_string(hm.batch);
    write_file_atomic(dir / (name + ".csv"), csv);
    write_file_atomic(dir / (name + ".json"), j.dump(2) + "\n");
}

inline void write_robustness(const std::filesystem::path& dir, const RobustnessSummary& rb) {
    std::string csv = "batch,checkpoint,metric,min,q1,median,q3,max,count\n";
    nlohmann::json j;
    j["basis"] = to_string(rb.basis);
    j["metric"] = to_string(rb.metric);
    j["cells"] = nlohmann::json::array();
    for (const RobustnessCell& c : rb.cells) {
        csv += std::to_string(c.batch) + "," + std::to_string(c.checkpoint) + "," +
               to_string(rb.metric) + "," + detail::csv_num(c.min) + "," + detail::csv_num(c.q1) +
               "," + detail::csv_num(c.median) + "," + detail::csv_num(c.q3) + "," +
               detail::csv_num(c.max) + "," + std::to_string(c.count) + "\n";
        nlohmann::json jc;
        jc["batch"] = c.batch;
        jc["checkpoint"] = c.checkpoint;
        jc["min"] = detail::json_num(c.min);
        jc["q1"] = detail::json_num(c.q1);
        jc["median"] = detail::json_num(c.median);
        jc["q3"] = detail::json_num(c.q3);
        jc["max"] = detail::json_num(c.max);
        jc["count"] = c.count;
        j["cells"].push_back(std::move(jc));
    }
    const std::string name = "robustness_" + to_string(rb.basis);
    write_file_atomic(dir / (name + ".csv"), csv);
    write_file_atomic(dir / (name + ".json"), j.dump(2) + "\n");
}

} // namespace kfacbench
