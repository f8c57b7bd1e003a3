#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "kfacbench/common.hpp"
#include "kfacbench/matrix.hpp"
#include "kfacbench/rng.hpp"

namespace kfacbench {

enum class Task { classification, regression };

// Immutable after generation; safe to share across concurrent runs.
struct Dataset {
    Matrix x;              // n_samples x n_features
    std::vector<double> y; // class index (classification) or real target (regression)
    Task task = Task::classification;
    std::size_t n_classes = 0;

    std::size_t n() const { return x.rows(); }
    std::size_t dim() const { return x.cols(); }

    int label(std::size_t i) const { return static_cast<int>(y[i]); }

    void validate() const {
        if (x.rows() != y.size()) {
            throw DimensionError("Dataset: x.rows() != y.size()");
        }
        if (task == Task::classification) {
            for (double v : y) {
                const int c = static_cast<int>(v);
                if (static_cast<double>(c) != v || c < 0 ||
                    static_cast<std::size_t>(c) >= n_classes) {
                    throw ParameterError("Dataset: classification label out of range");
                }
            }
        }
    }
};

struct BatchPlan {
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;
    bool drop_last = false;
};

namespace detail {

// Standardize columns to zero mean, unit variance (population). Keeps the
// learning-rate grids comparable across generated datasets.
inline void standardize_columns(Matrix& x) {
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    if (n == 0) {
        return;
    }
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mean += x(i, j);
        }
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double c = x(i, j) - mean;
            var += c * c;
        }
        var /= static_cast<double>(n);
        const double sd = std::sqrt(var);
        if (sd < 1e-12) {
            continue;
        }
        for (std::size_t i = 0; i < n; ++i) {
            x(i, j) = (x(i, j) - mean) / sd;
        }
    }
}

// Smallest s with s^d >= k.
inline std::size_t lattice_side(std::size_t k, std::size_t d) {
    std::size_t side = 1;
    for (;;) {
        std::size_t cap = 1;
        bool enough = false;
        for (std::size_t j = 0; j < d; ++j) {
            cap *= side;
            if (cap >= k) {
                enough = true;
                break;
            }
        }
        if (enough) {
            return side;
        }
        ++side;
    }
}

} // namespace detail

// ----------------------------------------------------------------------------
// gen_blobs: k Gaussian clusters, means at distinct integer lattice points
// scaled by 4, per-coordinate noise with standard deviation `spread`.
// Small spread gives well-separated (nearest-centroid learnable) classes.
// Per-class counts differ by at most 1; features standardized afterwards.
// ----------------------------------------------------------------------------

inline Dataset gen_blobs(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t k,
                         double spread) {
    if (k < 2 || n < k || d < 1) {
        throw ParameterError("gen_blobs: require n >= k >= 2 and d >= 1");
    }
    if (!(spread > 0.0)) {
        throw ParameterError("gen_blobs: spread must be positive");
    }
    constexpr double kLatticeScale = 4.0;
    const std::size_t side = detail::lattice_side(k, d);

    // Cluster c's mean: base-`side` digits of c, scaled.
    std::vector<std::vector<double>> means(k, std::vector<double>(d, 0.0));
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t rem = c;
        for (std::size_t j = 0; j < d && rem > 0; ++j) {
            means[c][j] = kLatticeScale * static_cast<double>(rem % side);
            rem /= side;
        }
    }

    Dataset ds;
    ds.task = Task::classification;
    ds.n_classes = k;
    ds.x = Matrix(n, d);
    ds.y.resize(n);

    SplitMix64 g = stream(seed, "blobs");
    std::size_t i = 0;
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t count = n / k + (c < n % k ? 1 : 0);
        for (std::size_t s = 0; s < count; ++s, ++i) {
            ds.y[i] = static_cast<double>(c);
            for (std::size_t j = 0; j < d; ++j) {
                ds.x(i, j) = means[c][j] + spread * g.next_gaussian();
            }
        }
    }
    detail::standardize_columns(ds.x);
    return ds;
}

// ----------------------------------------------------------------------------
// gen_linreg: y = x * w_true + noise, with standardized full-column-rank x.
// Rank deficiency triggers regeneration with an incremented sub-seed
// (at most 3 retries).
// ----------------------------------------------------------------------------

inline Dataset gen_linreg(std::uint64_t seed, std::size_t n, std::size_t d, double noise_sd) {
    if (d < 1 || n <= d) {
        throw ParameterError("gen_linreg: require n > d >= 1");
    }
    if (noise_sd < 0.0) {
        throw ParameterError("gen_linreg: noise_sd must be non-negative");
    }
    for (std::uint64_t attempt = 0; attempt < 4; ++attempt) {
        SplitMix64 g = stream(seed, "linreg", attempt);
        Matrix x(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                x(i, j) = g.next_gaussian();
            }
        }
        detail::standardize_columns(x);

        // Full-column-rank check on the Gram matrix (pivot-ratio condition
        // estimate inside dense_inverse).
        try {
            (void)dense_inverse(crossprod_scaled(x, 1.0 / static_cast<double>(n)));
        } catch (const NumericalError&) {
            continue;
        }

        SplitMix64 gw = stream(seed, "linreg_w", attempt);
        std::vector<double> w(d);
        for (std::size_t j = 0; j < d; ++j) {
            w[j] = gw.next_gaussian();
        }

        Dataset ds;
        ds.task = Task::regression;
        ds.x = std::move(x);
        ds.y.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            double v = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                v += ds.x(i, j) * w[j];
            }
            ds.y[i] = v + noise_sd * g.next_gaussian();
        }
        return ds;
    }
    throw ParameterError("gen_linreg: rank-deficient design matrix after 3 retries");
}

// ----------------------------------------------------------------------------
// Mini-batch index plan: a deterministic permutation derived from
// (seed, epoch), chunked into batches. The last partial chunk is dropped
// iff drop_last.
// ----------------------------------------------------------------------------

inline std::vector<std::vector<std::size_t>> batches(const Dataset& ds, const BatchPlan& plan,
                                                     std::size_t epoch) {
    const std::size_t n = ds.n();
    if (plan.batch_size < 1 || plan.batch_size > n) {
        throw ParameterError("batches: batch_size must be in [1, n]");
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    SplitMix64 g = stream(plan.seed, "batches", epoch);
    g.shuffle(idx);

    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += plan.batch_size) {
        const std::size_t end = std::min(start + plan.batch_size, n);
        if (end - start < plan.batch_size && plan.drop_last) {
            break;
        }
        out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start),
                         idx.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

inline std::size_t batches_per_epoch(std::size_t n, const BatchPlan& plan) {
    return plan.drop_last ? n / plan.batch_size
                          : (n + plan.batch_size - 1) / plan.batch_size;
}

// Deterministic 80/20 split: first 80% of a seeded permutation is the train
// part; indices sorted within each part.
inline std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, std::uint64_t seed) {
    const std::size_t n = ds.n();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    SplitMix64 g = stream(seed, "split");
    g.shuffle(idx);

    const std::size_t n_train = (n * 8) / 10;
    std::vector<std::size_t> train_idx(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> test_idx(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());

    auto take = [&](const std::vector<std::size_t>& which) {
        Dataset part;
        part.task = ds.task;
        part.n_classes = ds.n_classes;
        part.x = Matrix(which.size(), ds.dim());
        part.y.resize(which.size());
        for (std::size_t i = 0; i < which.size(); ++i) {
            for (std::size_t j = 0; j < ds.dim(); ++j) {
                part.x(i, j) = ds.x(which[i], j);
            }
            part.y[i] = ds.y[which[i]];
        }
        return part;
    };
    return {take(train_idx), take(test_idx)};
}

// ----------------------------------------------------------------------------
// CSV export/import. Header row `f0,...,f{d-1},label`; labels written as
// integers for classification and as decimals for regression.
// ----------------------------------------------------------------------------

inline std::string dataset_to_csv(const Dataset& ds) {
    std::string out;
    for (std::size_t j = 0; j < ds.dim(); ++j) {
        out += "f" + std::to_string(j) + ",";
    }
    out += "label\n";
    for (std::size_t i = 0; i < ds.n(); ++i) {
        for (std::size_t j = 0; j < ds.dim(); ++j) {
            out += format_double(ds.x(i, j));
            out += ',';
        }
        if (ds.task == Task::classification) {
            out += std::to_string(ds.label(i));
        } else {
            out += format_double(ds.y[i]);
        }
        out += '\n';
    }
    return out;
}

inline void export_csv(const Dataset& ds, const std::filesystem::path& path) {
    write_file_atomic(path, dataset_to_csv(ds));
}

inline Dataset dataset_from_csv(const std::string& text, Task task, std::size_t n_classes = 0) {
    std::vector<std::vector<double>> rows;
    std::size_t pos = 0;
    bool header = true;
    std::size_t d = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) {
            eol = text.size();
        }
        std::string_view line(text.data() + pos, eol - pos);
        pos = eol + 1;
        if (line.empty()) {
            continue;
        }
        if (header) {
            header = false;
            d = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
            continue;
        }
        std::vector<double> vals;
        vals.reserve(d + 1);
        std::size_t p = 0;
        while (p <= line.size()) {
            std::size_t comma = line.find(',', p);
            if (comma == std::string_view::npos) {
                comma = line.size();
            }
            double v = 0.0;
            auto res = std::from_chars(line.data() + p, line.data() + comma, v);
            if (res.ec != std::errc{}) {
                throw IoError("dataset_from_csv: unparseable number");
            }
            vals.push_back(v);
            p = comma + 1;
            if (comma == line.size()) {
                break;
            }
        }
        if (vals.size() != d + 1) {
            throw IoError("dataset_from_csv: wrong column count");
        }
        rows.push_back(std::move(vals));
    }
    Dataset ds;
    ds.task = task;
    ds.x = Matrix(rows.size(), d);
    ds.y.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            ds.x(i, j) = rows[i][j];
        }
        ds.y[i] = rows[i][d];
    }
    if (task == Task::classification) {
        if (n_classes == 0) {
            double mx = 0.0;
            for (double v : ds.y) {
                mx = std::max(mx, v);
            }
            n_classes = static_cast<std::size_t>(mx) + 1;
        }
        ds.n_classes = n_classes;
    }
    ds.validate();
    return ds;
}

inline Dataset import_csv(const std::filesystem::path& path, Task task, std::size_t n_classes = 0) {
    return dataset_from_csv(read_file(path), task, n_classes);
}

} // namespace kfacbench
