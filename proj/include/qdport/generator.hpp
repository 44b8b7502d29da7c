#pragma once

// Generative model: Gaussian noise -> 1-D conv -> tanh -> stateful LSTM cell -> dense
// decoder -> softmax (training) or sparsemax (evaluation), one sub-portfolio per noise row.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "diffcore.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace qdport {

struct GeneratorConfig {
    std::size_t noise_dim = 16;
    std::size_t conv_channels = 8;
    std::size_t conv_kernel = 3;
    std::size_t lstm_hidden = 64;
    std::size_t n_assets = 2;
    std::size_t population = 64;
    std::uint64_t seed = 0;

    std::size_t conv_length() const { return noise_dim - conv_kernel + 1; }
    std::size_t feature_dim() const { return conv_channels * conv_length(); }

    void validate() const {
        if (conv_kernel < 1 || noise_dim < conv_kernel) throw ConfigError("generator: need noise_dim >= conv_kernel >= 1");
        if (conv_channels < 1 || lstm_hidden < 1 || population < 1)
            throw ConfigError("generator: conv_channels, lstm_hidden and population must be >= 1");
        if (n_assets < 2) throw ConfigError("generator: need at least 2 assets");
    }

    friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

struct GeneratorParams {
    Tensor conv_w;  ///< C×1×k
    Tensor conv_b;  ///< C
    Tensor lstm_wx; ///< 4H×F, gate blocks i, f, g, o
    Tensor lstm_wh; ///< 4H×H
    Tensor lstm_b;  ///< 4H
    Tensor dense_w; ///< N×H
    Tensor dense_b; ///< N

    static constexpr std::array<const char*, 7> kNames = {"conv_w",  "conv_b",  "lstm_wx", "lstm_wh",
                                                          "lstm_b",  "dense_w", "dense_b"};

    std::array<Tensor*, 7> tensors() { return {&conv_w, &conv_b, &lstm_wx, &lstm_wh, &lstm_b, &dense_w, &dense_b}; }
    std::array<const Tensor*, 7> tensors() const {
        return {&conv_w, &conv_b, &lstm_wx, &lstm_wh, &lstm_b, &dense_w, &dense_b};
    }

    std::size_t count() const {
        std::size_t n = 0;
        for (const Tensor* t : tensors()) n += t->size();
        return n;
    }

    std::vector<double> flatten() const {
        std::vector<double> flat;
        flat.reserve(count());
        for (const Tensor* t : tensors()) flat.insert(flat.end(), t->data.begin(), t->data.end());
        return flat;
    }

    void unflatten(std::span<const double> flat) {
        if (flat.size() != count()) throw DataError("generator params: flat vector has wrong length");
        std::size_t off = 0;
        for (Tensor* t : tensors()) {
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t->size(), t->data.begin());
            off += t->size();
        }
    }

    friend bool operator==(const GeneratorParams&, const GeneratorParams&) = default;
};

inline std::size_t expected_param_count(const GeneratorConfig& c) {
    const std::size_t f = c.feature_dim(), h = c.lstm_hidden;
    return c.conv_channels * c.conv_kernel + c.conv_channels + 4 * h * f + 4 * h * h + 4 * h + c.n_assets * h +
           c.n_assets;
}

struct GeneratorState {
    Tensor h; ///< B×H
    Tensor c; ///< B×H
    std::uint64_t iteration = 0;

    static GeneratorState zeros(const GeneratorConfig& cfg) {
        return {Tensor::matrix(cfg.population, cfg.lstm_hidden), Tensor::matrix(cfg.population, cfg.lstm_hidden), 0};
    }

    friend bool operator==(const GeneratorState&, const GeneratorState&) = default;
};

enum class Mode { train, eval };

struct Population {
    Tensor logits;  ///< B×N
    Tensor weights; ///< B×N, rows on the simplex
    Mode mode = Mode::train;

    std::size_t size() const { return weights.rows(); }
};

/// Glorot-uniform weights, zero biases except the LSTM forget-gate block (1.0).
inline GeneratorParams init_params(const GeneratorConfig& cfg) {
    cfg.validate();
    Rng rng(stream_seed(cfg.seed, "generator.init"));
    const std::size_t c = cfg.conv_channels, k = cfg.conv_kernel, h = cfg.lstm_hidden, f = cfg.feature_dim(),
                      n = cfg.n_assets;
    auto glorot = [&rng](Tensor t, std::size_t fan_in, std::size_t fan_out) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& v : t.data) v = (2.0 * rng.uniform() - 1.0) * limit;
        return t;
    };
    GeneratorParams p;
    p.conv_w = glorot(Tensor(Shape{c, 1, k}), k, c * k);
    p.conv_b = Tensor(Shape{c});
    p.lstm_wx = glorot(Tensor::matrix(4 * h, f), f, 4 * h);
    p.lstm_wh = glorot(Tensor::matrix(4 * h, h), h, 4 * h);
    p.lstm_b = Tensor(Shape{4 * h});
    for (std::size_t i = h; i < 2 * h; ++i) p.lstm_b[i] = 1.0;
    p.dense_w = glorot(Tensor::matrix(n, h), h, n);
    p.dense_b = Tensor(Shape{n});
    return p;
}

/// B×d standard normal draws.
inline Tensor sample_noise(const GeneratorConfig& cfg, Rng& rng) {
    Tensor z = Tensor::matrix(cfg.population, cfg.noise_dim);
    for (double& v : z.data) v = rng.normal();
    return z;
}

/// Euclidean projection of z onto the probability simplex.
inline std::vector<double> sparsemax(std::span<const double> z) {
    if (z.empty()) throw DataError("sparsemax: empty input");
    for (double v : z)
        if (!std::isfinite(v)) throw NumericalError("sparsemax: non-finite input");
    // Work relative to the maximum: exact shifts of z then give bit-identical output.
    const double top = *std::max_element(z.begin(), z.end());
    std::vector<double> sorted(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) sorted[i] = z[i] - top;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double cumulative = 0.0, support_sum = sorted[0];
    std::size_t support = 1;
    for (std::size_t k = 1; k <= sorted.size(); ++k) {
        cumulative += sorted[k - 1];
        if (1.0 + static_cast<double>(k) * sorted[k - 1] > cumulative) {
            support = k;
            support_sum = cumulative;
        }
    }
    const double tau = (support_sum - 1.0) / static_cast<double>(support);
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = std::max((z[i] - top) - tau, 0.0);
    return out;
}

/// Row-wise sparsemax of a matrix.
inline Tensor sparsemax_rows(const Tensor& logits) {
    Tensor out(logits.shape);
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto row = sparsemax(logits.row(r));
        std::copy(row.begin(), row.end(), out.row(r).begin());
    }
    return out;
}

struct GeneratorVars {
    Var conv_w, conv_b, lstm_wx, lstm_wh, lstm_b, dense_w, dense_b;

    std::array<Var, 7> all() const { return {conv_w, conv_b, lstm_wx, lstm_wh, lstm_b, dense_w, dense_b}; }
};

/// Places parameters on a tape, as differentiable variables or as constants.
inline GeneratorVars bind(Tape& tape, const GeneratorParams& p, bool trainable = true) {
    auto put = [&](const Tensor& t) { return trainable ? tape.variable(t) : tape.constant(t); };
    return {put(p.conv_w), put(p.conv_b), put(p.lstm_wx), put(p.lstm_wh), put(p.lstm_b), put(p.dense_w), put(p.dense_b)};
}

/// Gradients of the bound parameters in GeneratorParams::flatten() order.
inline std::vector<double> flat_grad(const Tape& tape, const GeneratorVars& vars) {
    std::vector<double> g;
    for (const Var& v : vars.all()) {
        const Tensor t = tape.grad(v);
        g.insert(g.end(), t.data.begin(), t.data.end());
    }
    return g;
}

struct GeneratorGraph {
    Var logits;
    Var weights; ///< softmax rows; differentiable
    GeneratorState next_state;
};

/// Train-mode forward on a tape. The incoming LSTM state enters as a constant.
inline GeneratorGraph forward_graph(Tape& tape, const GeneratorVars& vars, const GeneratorState& state,
                                    const Tensor& noise) {
    const Tensor& kernel = tape.value(vars.conv_w);
    const std::size_t hidden = tape.value(vars.lstm_wh).cols();
    if (noise.rank() != 2) throw DataError("generator forward: noise must be B x d");
    if (state.h.rows() != noise.rows() || state.c.rows() != noise.rows() || state.h.cols() != hidden)
        throw DataError("generator forward: state " + shape_str(state.h.shape) + " does not match noise " +
                        shape_str(noise.shape));
    if (kernel.shape.back() > noise.cols()) throw DataError("generator forward: noise shorter than conv kernel");

    Var z = tape.constant(noise);
    Var features = ad::tanh(ad::conv1d_valid(z, vars.conv_w, vars.conv_b));
    if (tape.value(features).cols() != tape.value(vars.lstm_wx).cols())
        throw DataError("generator forward: conv features do not match LSTM input width");
    Var h0 = tape.constant(state.h);
    Var c0 = tape.constant(state.c);
    auto [h1, c1] = ad::lstm_cell(features, h0, c0, vars.lstm_wx, vars.lstm_wh, vars.lstm_b);
    Var logits = ad::add_bias(ad::matmul(h1, vars.dense_w, true), vars.dense_b);
    Var weights = ad::softmax(logits);
    return {logits, weights, GeneratorState{tape.value(h1), tape.value(c1), state.iteration + 1}};
}

/// Value-only forward. Eval mode replaces softmax by per-row sparsemax.
inline std::pair<Population, GeneratorState> forward(const GeneratorParams& params, const GeneratorState& state,
                                                     const Tensor& noise, Mode mode) {
    Tape tape;
    const GeneratorVars vars = bind(tape, params, false);
    GeneratorGraph g = forward_graph(tape, vars, state, noise);
    Population pop;
    pop.mode = mode;
    pop.logits = tape.value(g.logits);
    pop.weights = mode == Mode::train ? tape.value(g.weights) : sparsemax_rows(pop.logits);
    return {std::move(pop), std::move(g.next_state)};
}

} // namespace qdport
