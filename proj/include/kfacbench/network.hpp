#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "kfacbench/common.hpp"
#include "kfacbench/dataset.hpp"
#include "kfacbench/matrix.hpp"
#include "kfacbench/rng.hpp"

namespace kfacbench {

enum class Activation { relu, tanh, identity };
enum class LossKind { softmax_cross_entropy, mse };
enum class FisherMode { empirical, sampled };

inline std::string to_string(Activation a) {
    switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
    }
    return "?";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "identity") return Activation::identity;
    throw ParameterError("unknown activation: " + s);
}

inline std::string to_string(LossKind l) {
    return l == LossKind::softmax_cross_entropy ? "softmax_cross_entropy" : "mse";
}

inline LossKind loss_from_string(const std::string& s) {
    if (s == "softmax_cross_entropy") return LossKind::softmax_cross_entropy;
    if (s == "mse") return LossKind::mse;
    throw ParameterError("unknown loss: " + s);
}

inline std::string to_string(FisherMode m) {
    return m == FisherMode::empirical ? "empirical" : "sampled";
}

inline FisherMode fisher_mode_from_string(const std::string& s) {
    if (s == "empirical") return FisherMode::empirical;
    if (s == "sampled") return FisherMode::sampled;
    throw ParameterError("unknown fisher mode: " + s);
}

// ----------------------------------------------------------------------------
// Dense layer with the bias folded into the weight matrix via a homogeneous
// coordinate: w is out x (in+1), and inputs get a constant 1 appended. This
// makes each layer's Fisher block exactly one Kronecker product.
// ----------------------------------------------------------------------------

struct Layer {
    Matrix w; // out x (in+1)
    Activation act = Activation::identity;

    std::size_t in() const { return w.cols() - 1; }
    std::size_t out() const { return w.rows(); }
};

class Network {
public:
    Network() = default;

    Network(std::vector<Layer> layers, LossKind loss)
        : layers_(std::move(layers)), loss_(loss) {
        validate();
    }

    // Seeded construction: hidden layers use `hidden_act`, the final layer is
    // identity (the loss consumes raw outputs). Weights uniform in
    // +-sqrt(6/(fan_in+fan_out)), bias column zero.
    Network(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t output_dim,
            Activation hidden_act, LossKind loss, std::uint64_t seed)
        : loss_(loss) {
        std::vector<std::size_t> dims;
        dims.push_back(input_dim);
        dims.insert(dims.end(), hidden.begin(), hidden.end());
        dims.push_back(output_dim);
        SplitMix64 g = stream(seed, "init");
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            const std::size_t in = dims[l];
            const std::size_t out = dims[l + 1];
            if (in == 0 || out == 0) {
                throw ParameterError("Network: zero layer width");
            }
            Layer layer;
            layer.act = (l + 2 == dims.size()) ? Activation::identity : hidden_act;
            layer.w = Matrix(out, in + 1);
            const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
            for (std::size_t i = 0; i < out; ++i) {
                for (std::size_t j = 0; j < in; ++j) {
                    layer.w(i, j) = bound * (2.0 * g.next_double() - 1.0);
                }
                layer.w(i, in) = 0.0;
            }
            layers_.push_back(std::move(layer));
        }
        validate();
    }

    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }
    LossKind loss_kind() const { return loss_; }
    std::size_t depth() const { return layers_.size(); }
    std::size_t input_dim() const { return layers_.front().in(); }
    std::size_t output_dim() const { return layers_.back().out(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const Layer& l : layers_) {
            n += l.w.size();
        }
        return n;
    }

    bool all_finite() const {
        for (const Layer& l : layers_) {
            if (!l.w.all_finite()) {
                return false;
            }
        }
        return true;
    }

private:
    void validate() const {
        if (layers_.empty()) {
            throw ParameterError("Network: needs at least one layer");
        }
        for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
            if (layers_[l].out() != layers_[l + 1].in()) {
                throw DimensionError("Network: consecutive layer dimensions not conformable");
            }
        }
        if (layers_.back().act != Activation::identity) {
            throw ParameterError("Network: final layer activation must be identity");
        }
    }

    std::vector<Layer> layers_;
    LossKind loss_ = LossKind::mse;
};

// Per-layer recordings of the quantities the Kronecker factorization needs:
// homogeneous layer inputs a_in (batch x (in+1), last column all ones) and
// per-sample pre-activation output gradients g_out (batch x out, no 1/|B|).
struct LayerCapture {
    std::vector<Matrix> a_in;
    std::vector<Matrix> g_out;

    bool complete() const { return !g_out.empty() && g_out.size() == a_in.size(); }
    std::size_t batch_size() const { return a_in.empty() ? 0 : a_in.front().rows(); }
};

struct Gradients {
    std::vector<Matrix> dw; // same shapes as the layer weights
};

struct ForwardResult {
    Matrix outputs; // batch x output_dim (raw, pre-loss)
    LayerCapture capture;
};

// ----------------------------------------------------------------------------
// Forward pass. Records every layer's homogeneous input.
// ----------------------------------------------------------------------------

inline ForwardResult forward(const Network& net, const Matrix& x_batch) {
    if (x_batch.cols() != net.input_dim()) {
        throw DimensionError("forward: input width does not match the first layer");
    }
    const std::size_t batch = x_batch.rows();
    ForwardResult res;
    res.capture.a_in.reserve(net.depth());

    Matrix h = x_batch;
    for (const Layer& layer : net.layers()) {
        Matrix a(batch, layer.in() + 1);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* src = h.row(b);
            double* dst = a.row(b);
            for (std::size_t j = 0; j < layer.in(); ++j) {
                dst[j] = src[j];
            }
            dst[layer.in()] = 1.0;
        }
        Matrix z = matmul_nt(a, layer.w); // batch x out
        switch (layer.act) {
        case Activation::relu:
            for (std::size_t i = 0; i < z.size(); ++i) {
                if (z.data()[i] < 0.0) {
                    z.data()[i] = 0.0;
                }
            }
            break;
        case Activation::tanh:
            for (std::size_t i = 0; i < z.size(); ++i) {
                z.data()[i] = std::tanh(z.data()[i]);
            }
            break;
        case Activation::identity:
            break;
        }
        res.capture.a_in.push_back(std::move(a));
        h = std::move(z);
    }
    res.outputs = std::move(h);
    return res;
}

namespace detail {

// Per-sample loss and output-layer gradient rows for the true targets.
// Classification targets: one class id per sample. MSE targets: batch x out,
// row-major.
inline double output_loss_and_grad(LossKind loss, const Matrix& outputs,
                                   std::span<const double> targets, Matrix& gz) {
    const std::size_t batch = outputs.rows();
    const std::size_t out = outputs.cols();
    gz = Matrix(batch, out);
    double total = 0.0;
    if (loss == LossKind::mse) {
        if (targets.size() != batch * out) {
            throw DimensionError("loss_and_backward: mse targets size mismatch");
        }
        for (std::size_t b = 0; b < batch; ++b) {
            const double* ob = outputs.row(b);
            const double* tb = targets.data() + b * out;
            double* gb = gz.row(b);
            double l = 0.0;
            for (std::size_t j = 0; j < out; ++j) {
                const double r = ob[j] - tb[j];
                gb[j] = r;
                l += 0.5 * r * r;
            }
            total += l;
        }
    } else {
        if (targets.size() != batch) {
            throw DimensionError("loss_and_backward: label count mismatch");
        }
        for (std::size_t b = 0; b < batch; ++b) {
            const int label = static_cast<int>(targets[b]);
            if (static_cast<double>(label) != targets[b] || label < 0 ||
                static_cast<std::size_t>(label) >= out) {
                throw ParameterError("loss_and_backward: label out of range");
            }
            const double* ob = outputs.row(b);
            double mx = ob[0];
            for (std::size_t j = 1; j < out; ++j) {
                mx = std::max(mx, ob[j]);
            }
            double sum = 0.0;
            for (std::size_t j = 0; j < out; ++j) {
                sum += std::exp(ob[j] - mx);
            }
            const double log_sum = std::log(sum) + mx;
            total += log_sum - ob[static_cast<std::size_t>(label)];
            double* gb = gz.row(b);
            for (std::size_t j = 0; j < out; ++j) {
                gb[j] = std::exp(ob[j] - mx) / sum;
            }
            gb[static_cast<std::size_t>(label)] -= 1.0;
        }
    }
    return total / static_cast<double>(batch);
}

// dh = gz * W (bias column stripped): batch x in.
inline Matrix backprop_through_weights(const Matrix& gz, const Matrix& w) {
    const std::size_t batch = gz.rows();
    const std::size_t out = w.rows();
    const std::size_t in = w.cols() - 1;
    Matrix dh(batch, in);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* gb = gz.row(b);
        double* db = dh.row(b);
        for (std::size_t o = 0; o < out; ++o) {
            const double g = gb[o];
            if (g == 0.0) {
                continue;
            }
            const double* wo = w.row(o);
            for (std::size_t j = 0; j < in; ++j) {
                db[j] += g * wo[j];
            }
        }
    }
    return dh;
}

// Full backward pass from output-layer gradient rows; returns per-sample
// pre-activation gradients for every layer. The activation derivative is
// recovered from the next layer's captured input (relu: h > 0; tanh: 1 - h^2).
inline std::vector<Matrix> backprop(const Network& net, const LayerCapture& capture, Matrix gz_out) {
    const std::size_t depth = net.depth();
    std::vector<Matrix> gz(depth);
    gz[depth - 1] = std::move(gz_out);
    for (std::size_t l = depth - 1; l > 0; --l) {
        const Layer& layer = net.layers()[l];
        Matrix dh = backprop_through_weights(gz[l], layer.w);
        const Layer& prev = net.layers()[l - 1];
        const Matrix& a_next = capture.a_in[l]; // [act(z_{l-1}), 1]
        switch (prev.act) {
        case Activation::relu:
            for (std::size_t b = 0; b < dh.rows(); ++b) {
                double* db = dh.row(b);
                const double* hb = a_next.row(b);
                for (std::size_t j = 0; j < dh.cols(); ++j) {
                    if (hb[j] <= 0.0) {
                        db[j] = 0.0;
                    }
                }
            }
            break;
        case Activation::tanh:
            for (std::size_t b = 0; b < dh.rows(); ++b) {
                double* db = dh.row(b);
                const double* hb = a_next.row(b);
                for (std::size_t j = 0; j < dh.cols(); ++j) {
                    db[j] *= 1.0 - hb[j] * hb[j];
                }
            }
            break;
        case Activation::identity:
            break;
        }
        gz[l - 1] = std::move(dh);
    }
    return gz;
}

// Targets drawn from the model's own predictive distribution (one draw per
// sample). For the Gaussian/mse head the noise is batch-moment-matched so the
// output-layer second moment equals its analytic expectation (identity)
// exactly; this keeps first-batch statistics exact on linear-Gaussian models.
inline Matrix sampled_output_grad(LossKind loss, const Matrix& outputs, SplitMix64& g) {
    const std::size_t batch = outputs.rows();
    const std::size_t out = outputs.cols();
    Matrix gz(batch, out);
    if (loss == LossKind::mse) {
        Matrix eps(batch, out);
        for (std::size_t i = 0; i < eps.size(); ++i) {
            eps.data()[i] = g.next_gaussian();
        }
        if (batch >= out) {
            Matrix second = crossprod_scaled(eps, 1.0 / static_cast<double>(batch));
            SymEig eig = sym_eig(second);
            bool invertible = true;
            for (double d : eig.d) {
                if (d < 1e-12) {
                    invertible = false;
                    break;
                }
            }
            if (invertible) {
                // eps <- eps * second^{-1/2}
                Matrix root_inv(out, out);
                for (std::size_t i = 0; i < out; ++i) {
                    for (std::size_t j = 0; j < out; ++j) {
                        double v = 0.0;
                        for (std::size_t r = 0; r < out; ++r) {
                            v += eig.q(i, r) * eig.q(j, r) / std::sqrt(eig.d[r]);
                        }
                        root_inv(i, j) = v;
                    }
                }
                eps = matmul(eps, root_inv);
            }
        }
        // y_sampled = out + eps, so d(loss)/d(out) = out - y_sampled = -eps.
        for (std::size_t i = 0; i < gz.size(); ++i) {
            gz.data()[i] = -eps.data()[i];
        }
    } else {
        for (std::size_t b = 0; b < batch; ++b) {
            const double* ob = outputs.row(b);
            double mx = ob[0];
            for (std::size_t j = 1; j < out; ++j) {
                mx = std::max(mx, ob[j]);
            }
            double sum = 0.0;
            for (std::size_t j = 0; j < out; ++j) {
                sum += std::exp(ob[j] - mx);
            }
            double* gb = gz.row(b);
            for (std::size_t j = 0; j < out; ++j) {
                gb[j] = std::exp(ob[j] - mx) / sum;
            }
            // Draw a label from the categorical defined by the row.
            const double u = g.next_double();
            double acc = 0.0;
            std::size_t pick = out - 1;
            for (std::size_t j = 0; j < out; ++j) {
                acc += gb[j];
                if (u < acc) {
                    pick = j;
                    break;
                }
            }
            gb[pick] -= 1.0;
        }
    }
    return gz;
}

} // namespace detail

struct BackwardResult {
    double loss = 0.0;
    Gradients grads;
};

// ----------------------------------------------------------------------------
// Loss, gradients and capture completion. The loss and the gradients always
// use the true targets; the recorded g_out uses targets chosen per
// fisher_mode (empirical: the true targets, same computation path as the
// gradients; sampled: targets drawn from the model's predictive distribution,
// seeded per call).
// ----------------------------------------------------------------------------

inline BackwardResult loss_and_backward(const Network& net, LayerCapture& capture,
                                        const Matrix& outputs, std::span<const double> targets,
                                        FisherMode fisher_mode, std::uint64_t seed) {
    if (capture.a_in.size() != net.depth()) {
        throw DimensionError("loss_and_backward: capture does not match the network");
    }
    const std::size_t batch = outputs.rows();
    if (capture.batch_size() != batch) {
        throw DimensionError("loss_and_backward: capture batch size mismatch");
    }

    Matrix gz_true;
    BackwardResult res;
    res.loss = detail::output_loss_and_grad(net.loss_kind(), outputs, targets, gz_true);
    std::vector<Matrix> gz = detail::backprop(net, capture, std::move(gz_true));

    const double inv_batch = 1.0 / static_cast<double>(batch);
    res.grads.dw.reserve(net.depth());
    for (std::size_t l = 0; l < net.depth(); ++l) {
        Matrix dw = matmul_tn(gz[l], capture.a_in[l]); // out x (in+1)
        for (std::size_t i = 0; i < dw.size(); ++i) {
            dw.data()[i] *= inv_batch;
        }
        res.grads.dw.push_back(std::move(dw));
    }

    if (fisher_mode == FisherMode::empirical) {
        capture.g_out = std::move(gz);
    } else {
        SplitMix64 g = stream(seed, "fisher_targets");
        Matrix gz_sampled = detail::sampled_output_grad(net.loss_kind(), outputs, g);
        capture.g_out = detail::backprop(net, capture, std::move(gz_sampled));
    }
    return res;
}

// ----------------------------------------------------------------------------
// Full-dataset evaluation. Classification reports argmax accuracy with ties
// broken toward the lowest class index; regression reports loss only.
// ----------------------------------------------------------------------------

struct EvalResult {
    double mean_loss = 0.0;
    std::optional<double> accuracy;
};

inline EvalResult evaluate(const Network& net, const Dataset& ds) {
    const std::size_t n = ds.n();
    const std::size_t out = net.output_dim();
    if (ds.task == Task::classification && ds.n_classes != out) {
        throw DimensionError("evaluate: dataset classes do not match network outputs");
    }
    constexpr std::size_t kChunk = 512;
    double loss_sum = 0.0;
    std::size_t correct = 0;

    for (std::size_t start = 0; start < n; start += kChunk) {
        const std::size_t end = std::min(start + kChunk, n);
        const std::size_t m = end - start;
        Matrix xb(m, ds.dim());
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < ds.dim(); ++j) {
                xb(i, j) = ds.x(start + i, j);
            }
        }
        ForwardResult f = forward(net, xb);
        for (std::size_t i = 0; i < m; ++i) {
            const double* ob = f.outputs.row(i);
            if (ds.task == Task::classification) {
                const int label = ds.label(start + i);
                double mx = ob[0];
                std::size_t argmax = 0;
                for (std::size_t j = 1; j < out; ++j) {
                    if (ob[j] > mx) {
                        mx = ob[j];
                        argmax = j;
                    }
                }
                double sum = 0.0;
                for (std::size_t j = 0; j < out; ++j) {
                    sum += std::exp(ob[j] - mx);
                }
                loss_sum += std::log(sum) + mx - ob[static_cast<std::size_t>(label)];
                if (argmax == static_cast<std::size_t>(label)) {
                    ++correct;
                }
            } else {
                const double r = ob[0] - ds.y[start + i];
                loss_sum += 0.5 * r * r;
            }
        }
    }
    EvalResult res;
    res.mean_loss = loss_sum / static_cast<double>(n);
    if (ds.task == Task::classification) {
        res.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    }
    return res;
}

// ----------------------------------------------------------------------------
// Checkpoint: layer dims, activation names, row-major weights, loss kind.
// ----------------------------------------------------------------------------

inline nlohmann::json network_to_json(const Network& net) {
    nlohmann::json j;
    j["schema"] = 1;
    j["loss"] = to_string(net.loss_kind());
    j["layers"] = nlohmann::json::array();
    for (const Layer& l : net.layers()) {
        nlohmann::json jl;
        jl["in"] = l.in();
        jl["out"] = l.out();
        jl["activation"] = to_string(l.act);
        jl["w"] = l.w.entries();
        j["layers"].push_back(std::move(jl));
    }
    return j;
}

inline Network network_from_json(const nlohmann::json& j) {
    std::vector<Layer> layers;
    for (const auto& jl : j.at("layers")) {
        Layer l;
        const std::size_t in = jl.at("in").get<std::size_t>();
        const std::size_t out = jl.at("out").get<std::size_t>();
        l.act = activation_from_string(jl.at("activation").get<std::string>());
        l.w = Matrix(out, in + 1, jl.at("w").get<std::vector<double>>());
        layers.push_back(std::move(l));
    }
    return Network(std::move(layers), loss_from_string(j.at("loss").get<std::string>()));
}

} // namespace kfacbench
