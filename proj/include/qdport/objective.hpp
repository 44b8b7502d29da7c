#pragma once

// Quality-diversity loss: mean squared tracking error of every sub-portfolio plus lambda times
// the largest pairwise correlation between sub-portfolio return series, evaluated after random
// corruption of the candidate weights.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "diffcore.hpp"
#include "errors.hpp"
#include "generator.hpp"
#include "marketdata.hpp"
#include "rng.hpp"

namespace qdport {

struct LossConfig {
    double lambda = 0.01;
    double p_zero = 0.1;
    double noise_sigma = 0.01;
    bool corruption_enabled = true;

    void validate() const {
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("loss: lambda must be >= 0");
        if (!(p_zero >= 0.0 && p_zero <= 1.0)) throw ConfigError("loss: p_zero must lie in [0, 1]");
        if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("loss: noise_sigma must be >= 0");
    }

    friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

struct LossReport {
    double tracking_mse = 0.0;
    double max_corr = 0.0;
    double total = 0.0;
    std::size_t window_start = 0;

    friend bool operator==(const LossReport&, const LossReport&) = default;
};

/// B×W matrix of daily portfolio returns: weights (B×N) times the window's returns transposed.
inline Var portfolio_returns(Var weights, const WindowSample& window) {
    Tape& t = *weights.tape;
    if (window.length < 2) throw DataError("portfolio_returns: window needs at least 2 rows");
    if (t.value(weights).cols() != window.returns.cols())
        throw DataError("portfolio_returns: weights have " + std::to_string(t.value(weights).cols()) +
                        " columns, window has " + std::to_string(window.returns.cols()) + " assets");
    return ad::matmul(weights, t.constant(window.returns), true);
}

/// Mean over rows and days of (series − index)².
inline Var tracking_loss(Var series, std::span<const double> index) {
    Tape& t = *series.tape;
    const Tensor& s = t.value(series);
    if (s.rank() != 2 || s.cols() != index.size())
        throw DataError("tracking_loss: series " + shape_str(s.shape) + " vs index length " +
                        std::to_string(index.size()));
    Tensor target = Tensor::matrix(s.rows(), s.cols());
    for (std::size_t r = 0; r < s.rows(); ++r) std::copy(index.begin(), index.end(), target.row(r).begin());
    return ad::mean(ad::square(ad::sub(series, t.constant(std::move(target)))));
}

/// Largest Pearson correlation over row pairs i < j; 0 for a single row. Gradient flows only
/// through the maximizing pair.
inline Var max_offdiag_corr(Var series) {
    Tape& t = *series.tape;
    const Tensor& s = t.value(series);
    if (s.rank() != 2 || s.cols() < 2) throw DataError("max_offdiag_corr: need a B x W matrix with W >= 2");
    const std::size_t b = s.rows();
    if (b == 1) return t.constant(Tensor::scalar(0.0));
    std::vector<Var> rows;
    rows.reserve(b);
    for (std::size_t i = 0; i < b; ++i) rows.push_back(ad::slice(series, 0, i, 1));
    std::vector<Var> corrs;
    corrs.reserve(b * (b - 1) / 2);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = i + 1; j < b; ++j) corrs.push_back(ad::pearson(rows[i], rows[j]));
    return ad::max(ad::concat(corrs));
}

/// Randomly zeroes entries (probability p_zero), adds Gaussian noise to survivors, clamps at
/// zero and renormalizes each row. Rows left all-zero keep their original weights, as do rows
/// the draw left untouched. The random masks are constants of the graph.
inline Var corrupt(Var weights, const LossConfig& cfg, Rng& rng) {
    Tape& t = *weights.tape;
    const Tensor& w = t.value(weights);
    if (w.rank() != 2) throw DataError("corrupt: weights must be B x N");
    const std::size_t b = w.rows(), n = w.cols();
    Tensor mask = Tensor::matrix(b, n, 1.0);
    Tensor shift = Tensor::matrix(b, n, 0.0);
    Tensor corrupted_rows(Shape{b}, 0.0); // 1 where the row is renormalized, 0 where it passes through
    for (std::size_t r = 0; r < b; ++r) {
        bool changed = false, any_left = false;
        for (std::size_t c = 0; c < n; ++c) {
            if (rng.bernoulli(cfg.p_zero)) {
                mask(r, c) = 0.0;
                changed = true;
                continue;
            }
            if (cfg.noise_sigma > 0.0) {
                shift(r, c) = cfg.noise_sigma * rng.normal();
                changed = changed || shift(r, c) != 0.0;
            }
            if (w(r, c) + shift(r, c) <= 0.0) {
                mask(r, c) = 0.0;
                changed = true;
            } else {
                any_left = true;
            }
        }
        if (!changed || !any_left) {
            for (std::size_t c = 0; c < n; ++c) {
                mask(r, c) = 1.0;
                shift(r, c) = 0.0;
            }
        } else {
            corrupted_rows[r] = 1.0;
        }
    }
    Tensor passthrough(Shape{b});
    for (std::size_t r = 0; r < b; ++r) passthrough[r] = 1.0 - corrupted_rows[r];
    Var kept = ad::mul(ad::add(weights, t.constant(std::move(shift))), t.constant(std::move(mask)));
    Var divisor = ad::add(ad::mul(ad::sum_rows(kept), t.constant(std::move(corrupted_rows))),
                          t.constant(std::move(passthrough)));
    return ad::div_rows(kept, divisor);
}

/// Value-only corruption for callers outside a graph.
inline Tensor corrupt(const Tensor& weights, const LossConfig& cfg, Rng& rng) {
    Tape t;
    return t.value(corrupt(t.constant(weights), cfg, rng));
}

struct TotalLoss {
    Var loss;
    LossReport report;
    GeneratorState next_state;
};

/// forward (train mode) -> corrupt -> portfolio returns -> tracking MSE + lambda * max correlation.
inline TotalLoss total_loss(Tape& tape, const GeneratorVars& vars, const GeneratorState& state, const Tensor& noise,
                            const WindowSample& window, const LossConfig& cfg, Rng& corruption_rng) {
    cfg.validate();
    GeneratorGraph g = forward_graph(tape, vars, state, noise);
    Var weights = cfg.corruption_enabled ? corrupt(g.weights, cfg, corruption_rng) : g.weights;
    Var series = portfolio_returns(weights, window);
    Var tracking = tracking_loss(series, window.index_returns);
    Var diversity = max_offdiag_corr(series);
    const double mse = tape.value(tracking)[0];
    const double corr = tape.value(diversity)[0];
    Var loss = cfg.lambda == 0.0 ? tracking : ad::add(tracking, ad::mul_scalar(diversity, cfg.lambda));
    LossReport report{mse, corr, tape.value(loss)[0], window.start};
    return {loss, report, std::move(g.next_state)};
}

} // namespace qdport
