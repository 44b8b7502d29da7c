#pragma once

// Bagged ensemble of a generated population and out-of-sample tracking evaluation.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <span>
#include <string>
#include <vector>

#include "diffcore.hpp"
#include "errors.hpp"
#include "generator.hpp"
#include "marketdata.hpp"

namespace qdport {

/// How eval-mode rows are combined.
enum class EnsembleMode {
    average_rows,      ///< mean of per-row sparsemax weights
    sparsemax_of_mean, ///< sparsemax of the mean logit row
};

struct EnsemblePortfolio {
    std::vector<double> weights;
    std::string source; ///< provenance tag, e.g. "iteration 37"
    std::size_t support = 0;
};

inline std::size_t support_size(std::span<const double> w) {
    return static_cast<std::size_t>(std::count_if(w.begin(), w.end(), [](double v) { return v != 0.0; }));
}

inline EnsemblePortfolio bag(const Population& pop, EnsembleMode mode = EnsembleMode::average_rows,
                             std::string source = {}) {
    if (pop.weights.size() == 0 || pop.weights.rows() == 0) throw DataError("bag: empty population");
    const std::size_t b = pop.weights.rows(), n = pop.weights.cols();
    EnsemblePortfolio e;
    e.source = std::move(source);
    if (mode == EnsembleMode::average_rows) {
        e.weights.assign(n, 0.0);
        for (std::size_t r = 0; r < b; ++r)
            for (std::size_t c = 0; c < n; ++c) e.weights[c] += pop.weights(r, c);
        for (double& v : e.weights) v /= static_cast<double>(b);
    } else {
        if (pop.logits.shape != pop.weights.shape) throw DataError("bag: population carries no logits");
        std::vector<double> mean(n, 0.0);
        for (std::size_t r = 0; r < b; ++r)
            for (std::size_t c = 0; c < n; ++c) mean[c] += pop.logits(r, c);
        for (double& v : mean) v /= static_cast<double>(b);
        e.weights = sparsemax(mean);
    }
    e.support = support_size(e.weights);
    return e;
}

struct TrackingResult {
    double mse = 0.0;
    double l2 = 0.0; ///< sqrt of the summed squared deviations
    std::vector<double> series;
};

inline TrackingResult evaluate(std::span<const double> weights, const ReturnPanel& panel) {
    if (weights.size() != panel.assets())
        throw DataError("evaluate: " + std::to_string(weights.size()) + " weights for " +
                        std::to_string(panel.assets()) + " assets");
    if (panel.rows() == 0) throw DataError("evaluate: empty panel");
    TrackingResult res;
    res.series.resize(panel.rows());
    double ss = 0.0;
    for (std::size_t t = 0; t < panel.rows(); ++t) {
        double r = 0.0;
        for (std::size_t a = 0; a < panel.assets(); ++a) r += panel.returns(t, a) * weights[a];
        res.series[t] = r;
        const double d = r - panel.index_returns[t];
        ss += d * d;
    }
    res.mse = ss / static_cast<double>(panel.rows());
    res.l2 = std::sqrt(ss);
    return res;
}

/// Pearson correlation with the same constant-series convention as the autodiff primitive.
inline double correlation(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (n != y.size() || n < 2) throw DataError("correlation: need equal lengths >= 2");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    const double nn = static_cast<double>(n);
    if (sxx / nn < ad::kCorrelationVarianceFloor || syy / nn < ad::kCorrelationVarianceFloor) return 0.0;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct EvalReport {
    double ensemble_mse = 0.0;
    double ensemble_l2 = 0.0;
    std::vector<double> sub_mse;
    double mean_sub_mse = 0.0;
    double max_corr = 0.0;
    std::size_t support = 0;
    std::vector<double> ensemble_weights;
    std::vector<double> ensemble_series;
    std::vector<double> index_series;
    Tensor sub_series; ///< B×T
};

inline EvalReport evaluate_population(const Population& pop, const ReturnPanel& panel,
                                      EnsembleMode mode = EnsembleMode::average_rows) {
    const std::size_t b = pop.weights.rows();
    if (b == 0) throw DataError("evaluate_population: empty population");
    EvalReport rep;
    rep.sub_series = Tensor::matrix(b, panel.rows());
    for (std::size_t r = 0; r < b; ++r) {
        TrackingResult tr = evaluate(pop.weights.row(r), panel);
        rep.sub_mse.push_back(tr.mse);
        std::copy(tr.series.begin(), tr.series.end(), rep.sub_series.row(r).begin());
    }
    double total = 0.0;
    for (double m : rep.sub_mse) total += m;
    rep.mean_sub_mse = total / static_cast<double>(b);

    EnsemblePortfolio e = bag(pop, mode);
    TrackingResult et = evaluate(e.weights, panel);
    rep.ensemble_mse = et.mse;
    rep.ensemble_l2 = et.l2;
    rep.ensemble_series = std::move(et.series);
    rep.ensemble_weights = std::move(e.weights);
    rep.support = e.support;
    rep.index_series = panel.index_returns;

    if (b > 1 && panel.rows() >= 2) {
        rep.max_corr = -1.0;
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = i + 1; j < b; ++j)
                rep.max_corr = std::max(rep.max_corr, correlation(rep.sub_series.row(i), rep.sub_series.row(j)));
    }
    return rep;
}

/// `ticker,weight` lines; weights below 1e-12 are omitted.
inline void write_weights(const std::string& path, const std::vector<std::string>& tickers,
                          std::span<const double> weights) {
    if (tickers.size() != weights.size()) throw DataError("write_weights: ticker count mismatch");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "ticker,weight\n" << std::setprecision(17);
    for (std::size_t i = 0; i < weights.size(); ++i)
        if (weights[i] >= 1e-12) out << tickers[i] << ',' << weights[i] << '\n';
}

inline void write_eval_summary(const std::string& path, const EvalReport& rep) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << std::setprecision(17);
    out << "ensemble_mse=" << rep.ensemble_mse << '\n'
        << "ensemble_l2=" << rep.ensemble_l2 << '\n'
        << "mean_sub_mse=" << rep.mean_sub_mse << '\n'
        << "max_corr=" << rep.max_corr << '\n'
        << "support=" << rep.support << '\n'
        << "population=" << rep.sub_mse.size() << '\n';
}

/// Daily log-return series for plotting: `date,index,ensemble,sub_0,...`.
inline void write_series(const std::string& path, const std::vector<std::string>& dates, const EvalReport& rep) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    const std::size_t b = rep.sub_series.rows();
    out << "date,index,ensemble";
    for (std::size_t i = 0; i < b; ++i) out << ",sub_" << i;
    out << '\n' << std::setprecision(17);
    for (std::size_t t = 0; t < rep.index_series.size(); ++t) {
        out << (t < dates.size() ? dates[t] : std::to_string(t)) << ',' << rep.index_series[t] << ','
            << rep.ensemble_series[t];
        for (std::size_t i = 0; i < b; ++i) out << ',' << rep.sub_series(i, t);
        out << '\n';
    }
}

} // namespace qdport
