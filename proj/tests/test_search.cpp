#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <map>

#include "kfacbench/study.hpp"
#include "test_util.hpp"

using namespace kfacbench;
namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            out[fs::relative(entry.path(), dir).string()] = read_file(entry.path());
        }
    }
    return out;
}

StudySpec tiny_study() {
    StudySpec s;
    s.dataset.kind = "blobs";
    s.dataset.seed = 11;
    s.dataset.n = 64;
    s.dataset.d = 2;
    s.dataset.k = 2;
    s.dataset.spread = 0.3;
    s.network.hidden = {4};
    s.network.activation = Activation::relu;
    s.optimizer.kind = "sgd";
    s.optimizer.weight_decay = 0.0;
    s.grid.optimizer = "sgd";
    s.grid.axis1 = {"lr", 0.05, 0.5, 2};
    s.grid.axis2 = {"momentum", 0.5, 0.9, 2};
    s.batch_sizes = {8, 16};
    s.budget.mode = BudgetMode::fixed_epochs;
    s.budget.fixed_value = 2;
    s.schedule.kind = ScheduleKind::scaled;
    s.schedule.decay_points = {0.5};
    s.schedule.decay_factor = 10.0;
    s.base_seed = 77;
    return s;
}

} // namespace

// ----------------------------------------------------------------------------
// make_grid
// ----------------------------------------------------------------------------

TEST_CASE("lr axis reproduces the 1e-3..2.187 grid with per-step ratio 3") {
    GridAxis axis{"lr", 1e-3, 2.187, 8};
    const auto vals = axis_values(axis);
    REQUIRE(vals.size() == 8);
    CHECK(vals.front() == 1e-3);
    CHECK(vals.back() == 2.187);
    for (std::size_t j = 1; j < 8; ++j) {
        CHECK(testutil::rel_err(vals[j] / vals[j - 1], 3.0) < 1e-12);
    }
}

TEST_CASE("an 8x8 grid has 64 configurations") {
    GridSpec spec;
    spec.optimizer = "kfac";
    spec.axis1 = {"lr", 1e-3, 2.187, 8};
    spec.axis2 = {"damping", 1e-4, 0.2187, 8};
    CHECK(make_grid(spec).size() == 64);
}

TEST_CASE("momentum axis is geometric in (1 - momentum) with exact endpoints") {
    GridAxis axis{"momentum", 0.9, 0.999, 8};
    const auto vals = axis_values(axis);
    REQUIRE(vals.size() == 8);
    CHECK(vals.front() == 0.9);
    CHECK(vals.back() == 0.999);
    // (1 - m) forms a geometric sequence from 0.1 down to 0.001.
    for (std::size_t j = 1; j < 8; ++j) {
        const double ratio = (1.0 - vals[j]) / (1.0 - vals[j - 1]);
        CHECK(testutil::rel_err(ratio, std::pow(0.01, 1.0 / 7.0)) < 1e-12);
    }
    for (std::size_t j = 1; j < 8; ++j) {
        CHECK(vals[j] > vals[j - 1]);
    }
}

TEST_CASE("sgd lr endpoints use the exact endpoint-interpolated formula") {
    GridAxis axis{"lr", 0.05, 9.62, 8};
    const auto vals = axis_values(axis);
    CHECK(vals.front() == 0.05);
    CHECK(vals.back() == 9.62);
    for (std::size_t j = 1; j + 1 < 8; ++j) {
        const double expect = 0.05 * std::pow(9.62 / 0.05, static_cast<double>(j) / 7.0);
        CHECK(testutil::rel_err(vals[j], expect) < 1e-12);
    }
}

TEST_CASE("grid axes validate their endpoints") {
    CHECK_THROWS_AS(axis_values(GridAxis{"lr", 0.5, 0.1, 4}), ParameterError);  // low >= high
    CHECK_THROWS_AS(axis_values(GridAxis{"lr", 0.0, 1.0, 4}), ParameterError);  // low = 0
    CHECK_THROWS_AS(axis_values(GridAxis{"lr", 0.1, 1.0, 1}), ParameterError);  // 1 point
    CHECK_THROWS_AS(axis_values(GridAxis{"momentum", 0.9, 1.0, 4}), ParameterError);
    GridSpec bad;
    bad.optimizer = "sgd";
    bad.axis1 = {"lr", 0.1, 1.0, 2};
    bad.axis2 = {"damping", 0.1, 1.0, 2}; // sgd takes momentum
    CHECK_THROWS_AS(make_grid(bad), ParameterError);
}

// ----------------------------------------------------------------------------
// run_grid
// ----------------------------------------------------------------------------

TEST_CASE("run_grid produces one unique record per config x batch") {
    const fs::path dir = fs::temp_directory_path() / "kfb_study_counts";
    fs::remove_all(dir);
    const RunSet rs = run_grid(tiny_study(), dir, 1);
    CHECK(rs.records.size() == 8); // 2x2 grid x 2 batches
    std::set<std::string> hashes;
    for (const RunRecord& r : rs.records) {
        hashes.insert(run_config_hash(r.config));
    }
    CHECK(hashes.size() == 8);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir / "runs")) {
        (void)e;
        ++files;
    }
    CHECK(files == 8);
    fs::remove_all(dir);
}

TEST_CASE("run_grid results are identical for parallelism 1 and 4") {
    const fs::path d1 = fs::temp_directory_path() / "kfb_study_p1";
    const fs::path d4 = fs::temp_directory_path() / "kfb_study_p4";
    fs::remove_all(d1);
    fs::remove_all(d4);
    run_grid(tiny_study(), d1, 1);
    run_grid(tiny_study(), d4, 4);
    CHECK(dir_contents(d1) == dir_contents(d4));
    fs::remove_all(d1);
    fs::remove_all(d4);
}

TEST_CASE("run_grid resumes by skipping finished runs") {
    const fs::path dir = fs::temp_directory_path() / "kfb_study_resume";
    fs::remove_all(dir);
    run_grid(tiny_study(), dir, 1);
    const auto pristine = dir_contents(dir);

    // Drop three records; the rerun recomputes exactly those.
    std::size_t dropped = 0;
    for (const auto& e : fs::directory_iterator(dir / "runs")) {
        if (dropped == 3) {
            break;
        }
        fs::remove(e.path());
        ++dropped;
    }
    REQUIRE(dropped == 3);
    run_grid(tiny_study(), dir, 1);
    CHECK(dir_contents(dir) == pristine);
    fs::remove_all(dir);
}

TEST_CASE("run_grid refuses a manifest mismatch") {
    const fs::path dir = fs::temp_directory_path() / "kfb_study_mismatch";
    fs::remove_all(dir);
    run_grid(tiny_study(), dir, 1);
    StudySpec other = tiny_study();
    other.base_seed += 1;
    CHECK_THROWS_AS(run_grid(other, dir, 1), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("load_study restores the canonical record order") {
    const fs::path dir = fs::temp_directory_path() / "kfb_study_load";
    fs::remove_all(dir);
    const RunSet rs = run_grid(tiny_study(), dir, 1);
    const RunSet loaded = load_study(dir);
    REQUIRE(loaded.records.size() == rs.records.size());
    for (std::size_t i = 0; i < rs.records.size(); ++i) {
        CHECK(run_record_to_json(loaded.records[i]).dump() ==
              run_record_to_json(rs.records[i]).dump());
    }
    CHECK_THROWS_AS(load_study(fs::temp_directory_path() / "kfb_no_such_study"), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("study manifest round trips losslessly") {
    const StudySpec spec = tiny_study();
    const nlohmann::json j = study_spec_to_json(spec);
    const StudySpec back = study_spec_from_json(j);
    CHECK(study_spec_to_json(back).dump() == j.dump());
    CHECK(study_id(back) == study_id(spec));
}

TEST_CASE("per-run seeds derive from the config hash") {
    const StudySpec spec = tiny_study();
    const auto runs = enumerate_runs(spec);
    // Adding batch sizes must not perturb existing runs' seeds.
    StudySpec larger = spec;
    larger.batch_sizes.push_back(32);
    const auto runs2 = enumerate_runs(larger);
    std::map<std::string, std::uint64_t> seed_of;
    for (const RunConfig& c : runs2) {
        seed_of[run_config_hash(c)] = c.seed;
    }
    for (const RunConfig& c : runs) {
        REQUIRE(seed_of.count(run_config_hash(c)) == 1);
        CHECK(seed_of[run_config_hash(c)] == c.seed);
    }
}

TEST_CASE("replicas produce distinct configs and seeds") {
    StudySpec spec = tiny_study();
    spec.replicas = 2;
    const auto runs = enumerate_runs(spec);
    CHECK(runs.size() == 16);
    std::set<std::uint64_t> seeds;
    for (const RunConfig& c : runs) {
        seeds.insert(c.seed);
    }
    CHECK(seeds.size() == 16);
}
