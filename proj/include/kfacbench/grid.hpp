#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "kfacbench/common.hpp"

namespace kfacbench {

// ----------------------------------------------------------------------------
// Log-space hyperparameter grids. Axis values follow the endpoint-interpolated
// geometric formula value_j = low * (high/low)^(j/(points-1)), with both
// endpoints assigned literally so they are reproduced exactly. A momentum
// axis is gridded geometrically in (1 - momentum) between (1-high) and
// (1-low), ordered so momentum increases along the axis.
// ----------------------------------------------------------------------------

struct GridAxis {
    std::string name; // "lr", "damping" or "momentum"
    double low = 0.0;
    double high = 0.0;
    std::size_t points = 0;
};

struct GridSpec {
    std::string optimizer; // "sgd" or "kfac"
    GridAxis axis1;        // lr for both optimizers
    GridAxis axis2;        // damping (kfac) or momentum (sgd)

    void validate() const {
        if (optimizer != "sgd" && optimizer != "kfac") {
            throw ParameterError("GridSpec: optimizer must be sgd or kfac");
        }
        if (axis1.name != "lr") {
            throw ParameterError("GridSpec: axis1 must be lr");
        }
        const std::string want2 = optimizer == "sgd" ? "momentum" : "damping";
        if (axis2.name != want2) {
            throw ParameterError("GridSpec: axis2 must be " + want2 + " for " + optimizer);
        }
    }
};

inline std::vector<double> axis_values(const GridAxis& axis) {
    if (axis.points < 2) {
        throw ParameterError("GridAxis: points must be >= 2");
    }
    if (!(axis.low < axis.high)) {
        throw ParameterError("GridAxis: low must be less than high");
    }
    std::vector<double> vals(axis.points);
    if (axis.name == "momentum") {
        if (!(axis.low >= 0.0 && axis.high < 1.0)) {
            throw ParameterError("GridAxis: momentum endpoints must lie in [0,1)");
        }
        const double u_lo = 1.0 - axis.low;  // largest (1-m)
        const double u_hi = 1.0 - axis.high; // smallest (1-m)
        if (!(u_hi > 0.0)) {
            throw ParameterError("GridAxis: momentum axis needs high < 1");
        }
        for (std::size_t j = 0; j < axis.points; ++j) {
            if (j == 0) {
                vals[j] = axis.low;
            } else if (j + 1 == axis.points) {
                vals[j] = axis.high;
            } else {
                const double e = static_cast<double>(j) / static_cast<double>(axis.points - 1);
                vals[j] = 1.0 - u_lo * std::pow(u_hi / u_lo, e);
            }
        }
    } else {
        if (!(axis.low > 0.0)) {
            throw ParameterError("GridAxis: geometric axis needs low > 0");
        }
        for (std::size_t j = 0; j < axis.points; ++j) {
            if (j == 0) {
                vals[j] = axis.low;
            } else if (j + 1 == axis.points) {
                vals[j] = axis.high;
            } else {
                const double e = static_cast<double>(j) / static_cast<double>(axis.points - 1);
                vals[j] = axis.low * std::pow(axis.high / axis.low, e);
            }
        }
    }
    for (std::size_t j = 1; j < vals.size(); ++j) {
        if (!(vals[j] > vals[j - 1])) {
            throw NumericalError("axis_values: grid values not strictly increasing");
        }
    }
    return vals;
}

// Full Cartesian product, axis1-major.
inline std::vector<std::pair<double, double>> make_grid(const GridSpec& spec) {
    spec.validate();
    const std::vector<double> v1 = axis_values(spec.axis1);
    const std::vector<double> v2 = axis_values(spec.axis2);
    std::vector<std::pair<double, double>> out;
    out.reserve(v1.size() * v2.size());
    for (double a : v1) {
        for (double b : v2) {
            out.emplace_back(a, b);
        }
    }
    return out;
}

} // namespace kfacbench
