#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "kfacbench/common.hpp"
#include "kfacbench/matrix.hpp"
#include "kfacbench/network.hpp"

namespace kfacbench {

enum class DampingKind { normal, approximated };

inline std::string to_string(DampingKind k) {
    return k == DampingKind::normal ? "normal" : "approximated";
}

inline DampingKind damping_from_string(const std::string& s) {
    if (s == "normal") return DampingKind::normal;
    if (s == "approximated") return DampingKind::approximated;
    throw ParameterError("unknown damping scheme: " + s);
}

struct DampingScheme {
    DampingKind kind = DampingKind::normal;
    double lambda = 1e-3;

    void validate() const {
        if (!(lambda > 0.0)) {
            throw ParameterError("DampingScheme: lambda must be positive");
        }
    }
};

// ----------------------------------------------------------------------------
// FisherState: per-layer running averages of the Kronecker factors
//   a_factor ~= E[a a^T]   ((in+1) x (in+1), from homogeneous layer inputs)
//   g_factor ~= E[g g^T]   (out x out, from per-sample pre-activation grads)
// with cached eigendecompositions recomputed every t_inv factor updates.
// One state per training run; mutated only by that run's loop.
// ----------------------------------------------------------------------------

struct LayerFisher {
    Matrix a_factor;
    Matrix g_factor;
    std::optional<SymEig> eig_a;
    std::optional<SymEig> eig_g;
    std::size_t steps_since_inversion = 0;
};

class FisherState {
public:
    FisherState() = default;

    explicit FisherState(const Network& net, std::size_t t_inv = 1) : t_inv_(t_inv) {
        if (t_inv_ < 1) {
            throw ParameterError("FisherState: t_inv must be >= 1");
        }
        layers_.resize(net.depth());
        for (std::size_t l = 0; l < net.depth(); ++l) {
            const std::size_t ain = net.layers()[l].in() + 1;
            const std::size_t out = net.layers()[l].out();
            layers_[l].a_factor = Matrix(ain, ain);
            layers_[l].g_factor = Matrix(out, out);
        }
    }

    bool initialized() const { return initialized_; }
    std::size_t t_inv() const { return t_inv_; }
    std::size_t depth() const { return layers_.size(); }
    const LayerFisher& layer(std::size_t l) const { return layers_[l]; }
    LayerFisher& layer(std::size_t l) { return layers_[l]; }

    // EMA update: factors <- decay*factors + (1-decay)*batch_estimate, with
    // the first call setting the factors to the batch estimate directly.
    void update_factors(const LayerCapture& capture, double decay) {
        if (!(decay > 0.0 && decay < 1.0)) {
            throw ParameterError("update_factors: decay must lie in (0,1)");
        }
        if (!capture.complete() || capture.a_in.size() != layers_.size()) {
            throw DimensionError("update_factors: capture does not match state");
        }
        const double inv_batch = 1.0 / static_cast<double>(capture.batch_size());
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            if (capture.a_in[l].cols() != layers_[l].a_factor.rows() ||
                capture.g_out[l].cols() != layers_[l].g_factor.rows()) {
                throw DimensionError("update_factors: capture shape mismatch");
            }
            Matrix a_hat = crossprod_scaled(capture.a_in[l], inv_batch);
            Matrix g_hat = crossprod_scaled(capture.g_out[l], inv_batch);
            if (!initialized_) {
                layers_[l].a_factor = std::move(a_hat);
                layers_[l].g_factor = std::move(g_hat);
            } else {
                ema(layers_[l].a_factor, a_hat, decay);
                ema(layers_[l].g_factor, g_hat, decay);
            }
            layers_[l].steps_since_inversion += 1;
        }
        initialized_ = true;
    }

    // Normal damping: V solves (a_factor (x) g_factor + lambda I) vec(V) = vec(grad),
    // computed in the factor eigenbases without materializing the Kronecker
    // product:  V = Q_G [ (Q_G^T grad Q_A) ./ (d_G d_A^T + lambda) ] Q_A^T.
    Matrix precondition_normal(std::size_t l, const Matrix& grad, double lambda) {
        if (lambda < 0.0) {
            throw ParameterError("precondition_normal: lambda must be non-negative");
        }
        LayerFisher& lf = ensure_eigs(l);
        const SymEig& ea = *lf.eig_a;
        const SymEig& eg = *lf.eig_g;
        check_grad_shape(lf, grad, "precondition_normal");

        Matrix t = matmul(matmul_tn(eg.q, grad), ea.q); // out x (in+1)
        for (std::size_t i = 0; i < t.rows(); ++i) {
            for (std::size_t j = 0; j < t.cols(); ++j) {
                const double div = eg.d[i] * ea.d[j] + lambda;
                if (div <= 0.0) {
                    throw NumericalError("precondition_normal: singular damped factor at lambda=0");
                }
                t(i, j) /= div;
            }
        }
        return matmul_nt(matmul(eg.q, t), ea.q);
    }

    // Approximated damping: V = (g_factor + sqrt(lambda) I)^-1 grad
    //                           (a_factor + sqrt(lambda) I)^-1.
    Matrix precondition_approx(std::size_t l, const Matrix& grad, double lambda) {
        if (lambda < 0.0) {
            throw ParameterError("precondition_approx: lambda must be non-negative");
        }
        LayerFisher& lf = ensure_eigs(l);
        check_grad_shape(lf, grad, "precondition_approx");
        const double shift = std::sqrt(lambda);
        Matrix inv_g = shifted_inverse(*lf.eig_g, shift);
        Matrix inv_a = shifted_inverse(*lf.eig_a, shift);
        return matmul(matmul(inv_g, grad), inv_a);
    }

    Matrix precondition(DampingKind kind, std::size_t l, const Matrix& grad, double lambda) {
        return kind == DampingKind::normal ? precondition_normal(l, grad, lambda)
                                           : precondition_approx(l, grad, lambda);
    }

    // <V, F_hat V> with F_hat the damped approximation in use:
    //   normal:       F_hat V = g_factor V a_factor + lambda V
    //   approximated: F_hat V = (g_factor + sqrt(lambda) I) V (a_factor + sqrt(lambda) I)
    double quadratic_form(DampingKind kind, std::size_t l, const Matrix& v, double lambda) const {
        const LayerFisher& lf = layers_[l];
        if (kind == DampingKind::normal) {
            Matrix fv = matmul(matmul(lf.g_factor, v), lf.a_factor);
            return frobenius_inner(v, fv) + lambda * frobenius_inner(v, v);
        }
        const double shift = std::sqrt(lambda);
        Matrix gv = matmul(lf.g_factor, v);
        Matrix fv = matmul(gv, lf.a_factor);
        // (G + sI) V (A + sI) = GVA + s GV + s VA + s^2 V
        Matrix va = matmul(v, lf.a_factor);
        for (std::size_t i = 0; i < fv.size(); ++i) {
            fv.data()[i] += shift * (gv.data()[i] + va.data()[i]) + shift * shift * v.data()[i];
        }
        return frobenius_inner(v, fv);
    }

    // Factor eigenvalue spectra for condition-number diagnostics.
    nlohmann::json spectra_json() const {
        nlohmann::json j = nlohmann::json::array();
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            nlohmann::json jl;
            jl["layer"] = l;
            jl["a_eigenvalues"] = sym_eig(layers_[l].a_factor).d;
            jl["g_eigenvalues"] = sym_eig(layers_[l].g_factor).d;
            j.push_back(std::move(jl));
        }
        return j;
    }

private:
    static void ema(Matrix& factor, const Matrix& estimate, double decay) {
        for (std::size_t i = 0; i < factor.size(); ++i) {
            factor.data()[i] = decay * factor.data()[i] + (1.0 - decay) * estimate.data()[i];
        }
    }

    static void check_grad_shape(const LayerFisher& lf, const Matrix& grad, const char* op) {
        if (grad.rows() != lf.g_factor.rows() || grad.cols() != lf.a_factor.rows()) {
            throw DimensionError(std::string(op) + ": gradient shape mismatch");
        }
    }

    // PSD factors can dip slightly negative numerically; clamp before use so
    // the entrywise divisor stays bounded below by lambda.
    static void clamp_eigenvalues(SymEig& e) {
        for (double& d : e.d) {
            if (d < 0.0) {
                d = 0.0;
            }
        }
    }

    static Matrix shifted_inverse(const SymEig& e, double shift) {
        const std::size_t n = e.q.rows();
        Matrix inv(n, n);
        std::vector<double> recip(n);
        for (std::size_t r = 0; r < n; ++r) {
            const double d = e.d[r] + shift;
            if (d <= 0.0) {
                throw NumericalError("precondition_approx: singular shifted factor at lambda=0");
            }
            recip[r] = 1.0 / d;
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i; j < n; ++j) {
                double v = 0.0;
                for (std::size_t r = 0; r < n; ++r) {
                    v += e.q(i, r) * e.q(j, r) * recip[r];
                }
                inv(i, j) = v;
                inv(j, i) = v;
            }
        }
        return inv;
    }

    LayerFisher& ensure_eigs(std::size_t l) {
        if (l >= layers_.size()) {
            throw DimensionError("FisherState: layer index out of range");
        }
        LayerFisher& lf = layers_[l];
        if (!lf.eig_a || lf.steps_since_inversion >= t_inv_) {
            lf.eig_a = sym_eig(lf.a_factor);
            lf.eig_g = sym_eig(lf.g_factor);
            clamp_eigenvalues(*lf.eig_a);
            clamp_eigenvalues(*lf.eig_g);
            lf.steps_since_inversion = 0;
        }
        return lf;
    }

    std::vector<LayerFisher> layers_;
    bool initialized_ = false;
    std::size_t t_inv_ = 1;
};

} // namespace kfacbench
