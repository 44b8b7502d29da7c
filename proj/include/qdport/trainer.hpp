#pragma once

// Training runs: the generative meta-learning loop, direct-optimization baselines on a single
// logit vector, and the side-by-side comparison harness.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "checkpoint.hpp"
#include "diffcore.hpp"
#include "ensemble.hpp"
#include "errors.hpp"
#include "generator.hpp"
#include "marketdata.hpp"
#include "objective.hpp"
#include "optim.hpp"
#include "rng.hpp"

namespace qdport {

/// Unit in which baseline budgets are matched to the generator.
enum class BudgetMode {
    evaluations, ///< gradient baselines take population × iterations single-portfolio steps
    iterations,  ///< every method takes the same number of update iterations
};

inline Hyper generator_hyper() {
    Hyper h;
    h.lr = 0.01;
    h.weight_decay = 0.01;
    return h;
}

struct TrainConfig {
    std::size_t iterations = 50;
    GeneratorConfig generator;
    LossConfig loss;
    OptimizerKind optimizer = OptimizerKind::adamw;
    Hyper hyper = generator_hyper();
    double baseline_lr = 0.1;
    std::size_t window = 252;
    std::uint64_t seed = 0;
    std::uint64_t eval_seed = 0;
    std::size_t eval_every = 1;
    double train_fraction = 0.8;
    EnsembleMode ensemble_mode = EnsembleMode::average_rows;
    BudgetMode budget = BudgetMode::evaluations;

    void validate() const {
        if (iterations < 1) throw ConfigError("train: iterations must be >= 1");
        if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
        if (window < 2) throw ConfigError("train: window must be >= 2");
        if (!(baseline_lr > 0.0)) throw ConfigError("train: baseline_lr must be > 0");
        loss.validate();
        hyper.validate();
    }
};

struct RunArtifacts {
    std::string label;
    std::uint64_t seed = 0;
    std::vector<LossReport> loss_curve;
    std::vector<EvalRecord> evals;
    std::size_t best_iteration = 0;
    double best_validation_mse = std::numeric_limits<double>::infinity();
    std::vector<double> best_weights; ///< eval-mode portfolio at the best iteration
    std::optional<Checkpoint> final_checkpoint;
    std::optional<Checkpoint> best_checkpoint;
    std::vector<double> wall_seconds;
    std::size_t evaluations_used = 0;
};

/// Eval-mode population from the fixed evaluation noise.
inline Population eval_population(const GeneratorParams& params, const GeneratorState& state,
                                  const GeneratorConfig& gcfg, std::uint64_t eval_seed) {
    Rng rng(stream_seed(eval_seed, "eval.noise"));
    const Tensor noise = sample_noise(gcfg, rng);
    return forward(params, state, noise, Mode::eval).first;
}

/// Generator configuration as used for a dataset: asset count from the data, init seed from
/// the master seed.
inline GeneratorConfig resolved_generator(const TrainConfig& cfg, std::size_t n_assets) {
    GeneratorConfig g = cfg.generator;
    g.n_assets = n_assets;
    g.seed = stream_seed(cfg.seed, "generator.init");
    return g;
}

/// Proposed method. With `resume`, continues from a checkpoint of the same configuration and
/// reproduces the uninterrupted run exactly.
inline RunArtifacts train_generator(const TrainConfig& cfg, const SplitPanels& data, const Checkpoint* resume = nullptr,
                                    const std::function<void(const LossReport&, std::size_t)>& progress = {}) {
    cfg.validate();
    if (data.train.rows() < cfg.window)
        throw DataError("train: training panel has " + std::to_string(data.train.rows()) + " rows, window needs " +
                        std::to_string(cfg.window));
    if (data.validation.rows() == 0) throw DataError("train: empty validation panel");
    if (cfg.optimizer == OptimizerKind::cmaes) throw ConfigError("train: generator needs a gradient optimizer");

    const GeneratorConfig gcfg = resolved_generator(cfg, data.train.assets());
    gcfg.validate();

    Checkpoint ck;
    Rng noise_rng(stream_seed(cfg.seed, "noise"));
    Rng window_rng(stream_seed(cfg.seed, "window"));
    Rng corruption_rng(stream_seed(cfg.seed, "corruption"));
    if (resume) {
        ck = *resume;
        if (!(ck.generator == gcfg)) throw ConfigError("resume: checkpoint generator configuration differs");
        if (ck.optimizer != cfg.optimizer) throw ConfigError("resume: checkpoint optimizer differs");
        noise_rng.deserialize(ck.noise_rng);
        window_rng.deserialize(ck.window_rng);
        corruption_rng.deserialize(ck.corruption_rng);
    } else {
        ck.generator = gcfg;
        ck.params = init_params(gcfg);
        ck.state = GeneratorState::zeros(gcfg);
        ck.optimizer = cfg.optimizer;
    }

    RunArtifacts art;
    art.label = "proposed";
    art.seed = cfg.seed;
    auto snapshot = [&] {
        ck.noise_rng = noise_rng.serialize();
        ck.window_rng = window_rng.serialize();
        ck.corruption_rng = corruption_rng.serialize();
        return ck;
    };
    for (std::size_t it = ck.iteration; it < cfg.iterations; ++it) try {
        const auto t0 = std::chrono::steady_clock::now();
        const WindowSample window = sample_window(data.train, cfg.window, window_rng);
        const Tensor noise = sample_noise(gcfg, noise_rng);
        Tape tape;
        const GeneratorVars vars = bind(tape, ck.params);
        TotalLoss tl = total_loss(tape, vars, ck.state, noise, window, cfg.loss, corruption_rng);
        tape.backward(tl.loss);
        std::vector<double> flat = ck.params.flatten();
        step(cfg.optimizer, flat, flat_grad(tape, vars), ck.optimizer_state, cfg.hyper);
        ck.params.unflatten(flat);
        ck.state = std::move(tl.next_state);
        ck.iteration = it + 1;
        ck.loss_history.push_back(tl.report);
        if (progress) progress(tl.report, it + 1);

        if ((it + 1) % cfg.eval_every == 0 || it + 1 == cfg.iterations) {
            const Population pop = eval_population(ck.params, ck.state, gcfg, cfg.eval_seed);
            const EvalReport rep = evaluate_population(pop, data.validation, cfg.ensemble_mode);
            ck.eval_history.push_back({it + 1, rep.ensemble_mse, rep.mean_sub_mse, rep.max_corr});
            if (rep.ensemble_mse < ck.best_validation_mse) {
                ck.best_validation_mse = rep.ensemble_mse;
                ck.best_iteration = it + 1;
                ck.best_snapshot.clear();
                ck.best_snapshot.push_back(snapshot());
            }
        }
        art.wall_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    } catch (const NumericalError& e) {
        throw NumericalError("iteration " + std::to_string(it + 1) + ": " + e.what());
    }

    art.final_checkpoint = snapshot();
    if (!ck.best_snapshot.empty()) art.best_checkpoint = ck.best_snapshot.front();
    art.loss_curve = ck.loss_history;
    art.evals = ck.eval_history;
    art.best_iteration = ck.best_iteration;
    art.best_validation_mse = ck.best_validation_mse;
    art.evaluations_used = ck.iteration * gcfg.population;
    if (art.best_checkpoint) {
        const auto& b = *art.best_checkpoint;
        art.best_weights = bag(eval_population(b.params, b.state, b.generator, cfg.eval_seed), cfg.ensemble_mode).weights;
    }
    return art;
}

namespace detail {

inline std::vector<double> softmax_values(std::span<const double> v) {
    const double m = *std::max_element(v.begin(), v.end());
    std::vector<double> w(v.size());
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += (w[i] = std::exp(v[i] - m));
    for (double& x : w) x /= s;
    return w;
}

} // namespace detail

/// Direct optimization of one logit vector: softmax weights in training, sparsemax at
/// validation, plain tracking MSE on the full training panel.
inline RunArtifacts train_baseline(OptimizerKind kind, const TrainConfig& cfg, const SplitPanels& data) {
    cfg.validate();
    const std::size_t n = data.train.assets();
    if (n < 2) throw DataError("baseline: need at least 2 assets");
    if (data.train.rows() < 2 || data.validation.rows() == 0) throw DataError("baseline: panels too short");
    const std::size_t population = cfg.generator.population;

    RunArtifacts art;
    art.label = std::string(to_string(kind));
    art.seed = cfg.seed;
    std::vector<double> logits(n, 0.0);

    auto validate_point = [&](std::span<const double> v, std::size_t iteration) {
        const std::vector<double> w = sparsemax(v);
        const double mse = evaluate(w, data.validation).mse;
        art.evals.push_back({iteration, mse, mse, 0.0});
        if (mse < art.best_validation_mse) {
            art.best_validation_mse = mse;
            art.best_iteration = iteration;
            art.best_weights = w;
        }
    };

    if (kind == OptimizerKind::cmaes) {
        const std::size_t popsize = cfg.hyper.cmaes_popsize ? cfg.hyper.cmaes_popsize : std::max<std::size_t>(population, 4);
        auto objective = [&](std::span<const double> v) { return evaluate(detail::softmax_values(v), data.train).mse; };
        auto t0 = std::chrono::steady_clock::now();
        CmaesResult res = cmaes_run(
            objective, logits, popsize, cfg.iterations, stream_seed(cfg.seed, "cmaes"), cfg.hyper.cmaes_sigma0,
            [&](const CmaEs& es, std::size_t g) {
                const auto mean = es.mean();
                art.loss_curve.push_back({objective(mean), 0.0, objective(mean), 0});
                validate_point(mean, g + 1);
                const auto now = std::chrono::steady_clock::now();
                art.wall_seconds.push_back(std::chrono::duration<double>(now - t0).count());
                t0 = now;
            });
        art.evaluations_used = res.evaluations;
        return art;
    }

    Hyper hp = cfg.hyper;
    hp.lr = cfg.baseline_lr;
    OptimizerState st;
    const std::size_t steps = cfg.budget == BudgetMode::evaluations ? cfg.iterations * population : cfg.iterations;
    const WindowSample full = full_window(data.train);
    for (std::size_t s = 0; s < steps; ++s) {
        const auto t0 = std::chrono::steady_clock::now();
        Tape tape;
        Var v = tape.variable(Tensor(Shape{1, n}, logits));
        Var loss = tracking_loss(portfolio_returns(ad::softmax(v), full), full.index_returns);
        const double mse = tape.value(loss)[0];
        tape.backward(loss);
        const Tensor g = tape.grad(v);
        try {
            step(kind, logits, g.data, st, hp);
        } catch (const NumericalError& e) {
            throw NumericalError("step " + std::to_string(s + 1) + ": " + e.what());
        }
        art.loss_curve.push_back({mse, 0.0, mse, 0});
        validate_point(logits, s + 1);
        art.wall_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    art.evaluations_used = steps;
    return art;
}

struct ComparisonRow {
    std::string optimizer;
    double best_validation_mse = std::numeric_limits<double>::infinity();
    std::size_t evaluations_used = 0;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;

    const ComparisonRow* find(std::string_view name) const {
        for (const auto& r : rows)
            if (r.optimizer == name) return &r;
        return nullptr;
    }
};

/// Runs every requested baseline plus the proposed method on the same data and seed.
/// Rows are sorted by best validation MSE; failed runs are kept and sorted last.
inline ComparisonTable compare_optimizers(const TrainConfig& cfg, const SplitPanels& data,
                                          const std::vector<OptimizerKind>& kinds, std::size_t threads = 1) {
    if (kinds.empty()) throw ConfigError("compare: need at least one optimizer kind");
    cfg.validate();
    const std::size_t jobs = kinds.size() + 1;
    std::vector<ComparisonRow> rows(jobs);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t j = next++; j < jobs; j = next++) {
            ComparisonRow& row = rows[j];
            row.seed = cfg.seed;
            row.optimizer = j == kinds.size() ? "proposed" : std::string(to_string(kinds[j]));
            try {
                const RunArtifacts a = j == kinds.size() ? train_generator(cfg, data) : train_baseline(kinds[j], cfg, data);
                row.best_validation_mse = a.best_validation_mse;
                row.evaluations_used = a.evaluations_used;
            } catch (const std::exception& e) {
                row.failed = true;
                row.error = e.what();
            }
        }
    };
    threads = std::clamp<std::size_t>(threads, 1, jobs);
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    std::stable_sort(rows.begin(), rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
        if (a.failed != b.failed) return !a.failed;
        return a.best_validation_mse < b.best_validation_mse;
    });
    return {std::move(rows)};
}

/// `optimizer,best_validation_mse,evaluations_used,seed`; failed runs carry `failed`.
inline void write_table(const std::string& path, const ComparisonTable& table) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "optimizer,best_validation_mse,evaluations_used,seed\n" << std::setprecision(17);
    for (const auto& r : table.rows) {
        out << r.optimizer << ',';
        if (r.failed)
            out << "failed";
        else
            out << r.best_validation_mse;
        out << ',' << r.evaluations_used << ',' << r.seed << '\n';
    }
}

/// loss.csv, eval.csv and the checkpoints present in `art`.
inline void write_run_artifacts(const std::filesystem::path& dir, const RunArtifacts& art) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "loss.csv");
        out << "iteration,tracking_mse,max_corr,total\n" << std::setprecision(17);
        for (std::size_t i = 0; i < art.loss_curve.size(); ++i) {
            const auto& l = art.loss_curve[i];
            out << i + 1 << ',' << l.tracking_mse << ',' << l.max_corr << ',' << l.total << '\n';
        }
    }
    {
        std::ofstream out(dir / "eval.csv");
        out << "iteration,ensemble_mse,mean_sub_mse,max_corr\n" << std::setprecision(17);
        for (const auto& e : art.evals)
            out << e.iteration << ',' << e.ensemble_mse << ',' << e.mean_sub_mse << ',' << e.max_corr << '\n';
    }
    if (art.best_checkpoint) save_checkpoint((dir / "checkpoint.best").string(), *art.best_checkpoint);
    if (art.final_checkpoint) save_checkpoint((dir / "checkpoint.final").string(), *art.final_checkpoint);
}

} // namespace qdport
