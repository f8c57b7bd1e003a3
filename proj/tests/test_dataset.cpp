#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "kfacbench/dataset.hpp"
#include "test_util.hpp"

using namespace kfacbench;

TEST_CASE("gen_blobs is deterministic") {
    const Dataset a = gen_blobs(7, 100, 2, 2, 0.5);
    const Dataset b = gen_blobs(7, 100, 2, 2, 0.5);
    CHECK(a.x == b.x);
    CHECK(a.y == b.y);
    const Dataset c = gen_blobs(8, 100, 2, 2, 0.5);
    CHECK_FALSE(a.x == c.x);
}

TEST_CASE("gen_blobs balances class counts") {
    const Dataset a = gen_blobs(7, 100, 2, 2, 0.5);
    std::vector<std::size_t> counts(2, 0);
    for (std::size_t i = 0; i < a.n(); ++i) {
        ++counts[static_cast<std::size_t>(a.label(i))];
    }
    CHECK(counts[0] == 50);
    CHECK(counts[1] == 50);

    const Dataset b = gen_blobs(3, 403, 5, 4, 0.3);
    std::vector<std::size_t> c4(4, 0);
    for (std::size_t i = 0; i < b.n(); ++i) {
        ++c4[static_cast<std::size_t>(b.label(i))];
    }
    std::size_t mn = c4[0], mx = c4[0];
    for (std::size_t c : c4) {
        mn = std::min(mn, c);
        mx = std::max(mx, c);
    }
    CHECK(mx - mn <= 1);
}

TEST_CASE("gen_blobs clusters are separable at small spread") {
    // Nearest-centroid oracle on the generated data.
    const Dataset ds = gen_blobs(7, 400, 2, 4, 0.1);
    CHECK(testutil::nearest_centroid_accuracy(ds) >= 0.99);
}

TEST_CASE("gen_blobs features are standardized") {
    const Dataset ds = gen_blobs(5, 500, 3, 4, 0.2);
    for (std::size_t j = 0; j < ds.dim(); ++j) {
        double mean = 0.0, var = 0.0;
        for (std::size_t i = 0; i < ds.n(); ++i) {
            mean += ds.x(i, j);
        }
        mean /= static_cast<double>(ds.n());
        for (std::size_t i = 0; i < ds.n(); ++i) {
            var += (ds.x(i, j) - mean) * (ds.x(i, j) - mean);
        }
        var /= static_cast<double>(ds.n());
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(var - 1.0) < 1e-9);
    }
}

TEST_CASE("gen_blobs rejects invalid parameters") {
    CHECK_THROWS_AS(gen_blobs(1, 1, 2, 2, 0.5), ParameterError);  // n < k
    CHECK_THROWS_AS(gen_blobs(1, 10, 0, 2, 0.5), ParameterError); // d = 0
    CHECK_THROWS_AS(gen_blobs(1, 10, 2, 1, 0.5), ParameterError); // k < 2
    CHECK_THROWS_AS(gen_blobs(1, 10, 2, 2, 0.0), ParameterError); // spread = 0
}

TEST_CASE("gen_linreg noiseless data is fit exactly by least squares") {
    const Dataset ds = gen_linreg(11, 50, 4, 0.0);
    const Matrix w = testutil::least_squares_homogeneous(ds);
    for (std::size_t i = 0; i < ds.n(); ++i) {
        double pred = w(0, ds.dim());
        for (std::size_t j = 0; j < ds.dim(); ++j) {
            pred += w(0, j) * ds.x(i, j);
        }
        CHECK(std::abs(pred - ds.y[i]) < 1e-10);
    }
}

TEST_CASE("gen_linreg is deterministic") {
    const Dataset a = gen_linreg(3, 60, 5, 0.1);
    const Dataset b = gen_linreg(3, 60, 5, 0.1);
    CHECK(a.x == b.x);
    CHECK(a.y == b.y);
}

TEST_CASE("gen_linreg residual variance tracks the noise level") {
    const Dataset ds = gen_linreg(3, 200, 5, 0.1);
    const Matrix w = testutil::least_squares_homogeneous(ds);
    double ss = 0.0;
    for (std::size_t i = 0; i < ds.n(); ++i) {
        double pred = w(0, ds.dim());
        for (std::size_t j = 0; j < ds.dim(); ++j) {
            pred += w(0, j) * ds.x(i, j);
        }
        ss += (pred - ds.y[i]) * (pred - ds.y[i]);
    }
    const double resid_var = ss / static_cast<double>(ds.n());
    CHECK(resid_var >= 0.005);
    CHECK(resid_var <= 0.02);
}

TEST_CASE("gen_linreg rejects invalid parameters") {
    CHECK_THROWS_AS(gen_linreg(1, 5, 5, 0.1), ParameterError);   // n <= d
    CHECK_THROWS_AS(gen_linreg(1, 50, 0, 0.1), ParameterError);  // d = 0
    CHECK_THROWS_AS(gen_linreg(1, 50, 5, -0.1), ParameterError); // negative noise
}

// ----------------------------------------------------------------------------
// batches
// ----------------------------------------------------------------------------

TEST_CASE("batches: single full batch is a permutation") {
    const Dataset ds = gen_blobs(1, 4, 2, 2, 0.5);
    const auto bs = batches(ds, BatchPlan{4, 9, false}, 0);
    REQUIRE(bs.size() == 1);
    std::set<std::size_t> seen(bs[0].begin(), bs[0].end());
    CHECK(seen == std::set<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("batches: drop_last floors the batch count") {
    const Dataset ds = gen_blobs(1, 10, 2, 2, 0.5);
    const auto dropped = batches(ds, BatchPlan{4, 9, true}, 0);
    REQUIRE(dropped.size() == 2);
    CHECK(dropped[0].size() == 4);
    CHECK(dropped[1].size() == 4);
    const auto kept = batches(ds, BatchPlan{4, 9, false}, 0);
    REQUIRE(kept.size() == 3);
    CHECK(kept[2].size() == 2);
}

TEST_CASE("batches: deterministic replay per (seed, epoch)") {
    const Dataset ds = gen_blobs(1, 32, 2, 2, 0.5);
    const BatchPlan plan{8, 77, false};
    CHECK(batches(ds, plan, 3) == batches(ds, plan, 3));
    CHECK_FALSE(batches(ds, plan, 3) == batches(ds, plan, 4));
}

TEST_CASE("batches: one epoch covers every index exactly once") {
    const Dataset ds = gen_blobs(2, 53, 2, 2, 0.5);
    const auto bs = batches(ds, BatchPlan{8, 5, false}, 1);
    std::vector<std::size_t> all;
    for (const auto& b : bs) {
        all.insert(all.end(), b.begin(), b.end());
    }
    std::sort(all.begin(), all.end());
    REQUIRE(all.size() == 53);
    for (std::size_t i = 0; i < all.size(); ++i) {
        CHECK(all[i] == i);
    }
}

TEST_CASE("batches rejects invalid plans") {
    const Dataset ds = gen_blobs(1, 10, 2, 2, 0.5);
    CHECK_THROWS_AS(batches(ds, BatchPlan{0, 1, false}, 0), ParameterError);
    CHECK_THROWS_AS(batches(ds, BatchPlan{11, 1, false}, 0), ParameterError);
}

// ----------------------------------------------------------------------------
// split and CSV
// ----------------------------------------------------------------------------

TEST_CASE("train_test_split is a deterministic 80/20 partition") {
    const Dataset ds = gen_blobs(4, 100, 3, 2, 0.4);
    const auto [train, test] = train_test_split(ds, 21);
    CHECK(train.n() == 80);
    CHECK(test.n() == 20);
    const auto [train2, test2] = train_test_split(ds, 21);
    CHECK(train.x == train2.x);
    CHECK(test.y == test2.y);
}

TEST_CASE("CSV round trip is lossless") {
    const Dataset ds = gen_blobs(9, 40, 3, 3, 0.3);
    const std::string csv = dataset_to_csv(ds);
    CHECK(csv.rfind("f0,f1,f2,label\n", 0) == 0);
    const Dataset back = dataset_from_csv(csv, Task::classification);
    CHECK(back.x == ds.x);
    CHECK(back.y == ds.y);
    CHECK(back.n_classes == 3);

    const Dataset reg = gen_linreg(9, 30, 2, 0.2);
    const Dataset reg_back = dataset_from_csv(dataset_to_csv(reg), Task::regression);
    CHECK(reg_back.x == reg.x);
    CHECK(reg_back.y == reg.y);
}

TEST_CASE("CSV export writes a parseable file") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "kfb_csv_test";
    fs::create_directories(dir);
    const Dataset ds = gen_blobs(2, 20, 2, 2, 0.5);
    export_csv(ds, dir / "blobs.csv");
    const Dataset back = import_csv(dir / "blobs.csv", Task::classification);
    CHECK(back.x == ds.x);
    fs::remove_all(dir);
}
