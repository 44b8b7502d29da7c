#pragma once

// Versioned JSON checkpoint of a generator training run. Doubles are written with
// shortest round-trip formatting, so load(save(x)) == x bit for bit.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "generator.hpp"
#include "objective.hpp"
#include "optim.hpp"

namespace qdport {

inline constexpr int kCheckpointFormatVersion = 1;

struct EvalRecord {
    std::size_t iteration = 0; ///< 1-based count of completed updates
    double ensemble_mse = 0.0;
    double mean_sub_mse = 0.0;
    double max_corr = 0.0;

    friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

struct Checkpoint {
    int format_version = kCheckpointFormatVersion;
    GeneratorConfig generator;
    GeneratorParams params;
    GeneratorState state;
    std::size_t iteration = 0; ///< completed iterations
    OptimizerKind optimizer = OptimizerKind::adamw;
    OptimizerState optimizer_state;
    std::string noise_rng;
    std::string window_rng;
    std::string corruption_rng;
    std::vector<LossReport> loss_history;
    std::vector<EvalRecord> eval_history;
    std::size_t best_iteration = 0;
    double best_validation_mse = std::numeric_limits<double>::infinity();
    std::vector<Checkpoint> best_snapshot; ///< state at best_iteration, at most one entry and never nested further

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

inline nlohmann::json tensor_json(const Tensor& t) { return {{"shape", t.shape}, {"data", t.data}}; }

inline Tensor tensor_from(const nlohmann::json& j) {
    return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

// JSON has no infinity; an unset best is stored as null.
inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

} // namespace detail

inline nlohmann::json to_json(const Checkpoint& c) {
    using nlohmann::json;
    json params = json::object();
    const auto tensors = c.params.tensors();
    for (std::size_t i = 0; i < tensors.size(); ++i) params[GeneratorParams::kNames[i]] = detail::tensor_json(*tensors[i]);
    json losses = json::array();
    for (const auto& l : c.loss_history) losses.push_back({l.tracking_mse, l.max_corr, l.total, l.window_start});
    json evals = json::array();
    for (const auto& e : c.eval_history) evals.push_back({e.iteration, e.ensemble_mse, e.mean_sub_mse, e.max_corr});
    return {
        {"format_version", c.format_version},
        {"generator_config",
         {{"noise_dim", c.generator.noise_dim},
          {"conv_channels", c.generator.conv_channels},
          {"conv_kernel", c.generator.conv_kernel},
          {"lstm_hidden", c.generator.lstm_hidden},
          {"n_assets", c.generator.n_assets},
          {"population", c.generator.population},
          {"seed", c.generator.seed}}},
        {"params", params},
        {"state", {{"h", detail::tensor_json(c.state.h)}, {"c", detail::tensor_json(c.state.c)}, {"iteration", c.state.iteration}}},
        {"iteration", c.iteration},
        {"optimizer",
         {{"kind", std::string(to_string(c.optimizer))},
          {"step", c.optimizer_state.step},
          {"first", c.optimizer_state.first},
          {"second", c.optimizer_state.second},
          {"third", c.optimizer_state.third},
          {"fourth", c.optimizer_state.fourth},
          {"mu_product", c.optimizer_state.mu_product}}},
        {"rng", {{"noise", c.noise_rng}, {"window", c.window_rng}, {"corruption", c.corruption_rng}}},
        {"loss_history", losses},
        {"eval_history", evals},
        {"best_iteration", c.best_iteration},
        {"best_validation_mse", detail::finite_or_null(c.best_validation_mse)},
        {"best_snapshot", c.best_snapshot.empty() ? json() : to_json(c.best_snapshot.front())},
    };
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        Checkpoint c;
        c.format_version = j.at("format_version").get<int>();
        if (c.format_version != kCheckpointFormatVersion)
            throw DataError("checkpoint: unsupported format_version " + std::to_string(c.format_version));
        const auto& g = j.at("generator_config");
        c.generator.noise_dim = g.at("noise_dim");
        c.generator.conv_channels = g.at("conv_channels");
        c.generator.conv_kernel = g.at("conv_kernel");
        c.generator.lstm_hidden = g.at("lstm_hidden");
        c.generator.n_assets = g.at("n_assets");
        c.generator.population = g.at("population");
        c.generator.seed = g.at("seed");
        auto tensors = c.params.tensors();
        for (std::size_t i = 0; i < tensors.size(); ++i)
            *tensors[i] = detail::tensor_from(j.at("params").at(GeneratorParams::kNames[i]));
        if (c.params.count() != expected_param_count(c.generator))
            throw DataError("checkpoint: parameter arrays do not match generator_config");
        c.state.h = detail::tensor_from(j.at("state").at("h"));
        c.state.c = detail::tensor_from(j.at("state").at("c"));
        c.state.iteration = j.at("state").at("iteration");
        c.iteration = j.at("iteration");
        const auto& o = j.at("optimizer");
        c.optimizer = parse_optimizer(o.at("kind").get<std::string>());
        c.optimizer_state.step = o.at("step");
        c.optimizer_state.first = o.at("first").get<std::vector<double>>();
        c.optimizer_state.second = o.at("second").get<std::vector<double>>();
        c.optimizer_state.third = o.at("third").get<std::vector<double>>();
        c.optimizer_state.fourth = o.at("fourth").get<std::vector<double>>();
        c.optimizer_state.mu_product = o.at("mu_product");
        c.noise_rng = j.at("rng").at("noise");
        c.window_rng = j.at("rng").at("window");
        c.corruption_rng = j.at("rng").at("corruption");
        for (const auto& l : j.at("loss_history"))
            c.loss_history.push_back({l.at(0).get<double>(), l.at(1).get<double>(), l.at(2).get<double>(),
                                      l.at(3).get<std::size_t>()});
        for (const auto& e : j.at("eval_history"))
            c.eval_history.push_back(
                {e.at(0).get<std::size_t>(), e.at(1).get<double>(), e.at(2).get<double>(), e.at(3).get<double>()});
        c.best_iteration = j.at("best_iteration");
        const auto& best = j.at("best_validation_mse");
        c.best_validation_mse = best.is_null() ? std::numeric_limits<double>::infinity() : best.get<double>();
        if (const auto& snap = j.at("best_snapshot"); !snap.is_null()) {
            if (!snap.at("best_snapshot").is_null()) throw DataError("checkpoint: nested best_snapshot");
            c.best_snapshot.push_back(checkpoint_from_json(snap));
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: ") + e.what());
    }
}

inline std::string serialize(const Checkpoint& c) { return to_json(c).dump(1); }

inline Checkpoint parse_checkpoint(const std::string& text) {
    try {
        return checkpoint_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint " + path);
    out << serialize(c) << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str());
}

} // namespace qdport
