#pragma once

// Flat key=value run configuration. Layering is defaults, then a file, then explicit
// overrides; the resolved result is dumped verbatim to run.config.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "marketdata.hpp"
#include "trainer.hpp"

namespace qdport {

struct RunConfig {
    TrainConfig train;
    std::string data;
    std::string index_column = "INDEX";
    std::string out = ".";
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const char* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError("config: bad value '" + v + "' for " + key);
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("config: bad boolean '" + v + "' for " + key);
}

// Shortest text that parses back to the same double.
inline std::string fmt(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

struct Field {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class T, class Member>
Field number(Member m) {
    return {[m](RunConfig& c, const std::string& v) { m(c) = parse_number<T>("", v); },
            [m](const RunConfig& c) {
                if constexpr (std::is_floating_point_v<T>)
                    return fmt(m(const_cast<RunConfig&>(c)));
                else
                    return std::to_string(m(const_cast<RunConfig&>(c)));
            }};
}

inline const std::map<std::string, Field>& fields() {
    using C = RunConfig;
    static const std::map<std::string, Field> f = [] {
        std::map<std::string, Field> m;
        m["data"] = {[](C& c, const std::string& v) { c.data = v; }, [](const C& c) { return c.data; }};
        m["index_column"] = {[](C& c, const std::string& v) { c.index_column = v; },
                             [](const C& c) { return c.index_column; }};
        m["out"] = {[](C& c, const std::string& v) { c.out = v; }, [](const C& c) { return c.out; }};
        m["optimizer"] = {[](C& c, const std::string& v) { c.train.optimizer = parse_optimizer(v); },
                          [](const C& c) { return std::string(to_string(c.train.optimizer)); }};
        m["ensemble_mode"] = {[](C& c, const std::string& v) {
                                  if (v == "average_rows")
                                      c.train.ensemble_mode = EnsembleMode::average_rows;
                                  else if (v == "sparsemax_of_mean")
                                      c.train.ensemble_mode = EnsembleMode::sparsemax_of_mean;
                                  else
                                      throw ConfigError("config: unknown ensemble_mode '" + v + "'");
                              },
                              [](const C& c) {
                                  return std::string(c.train.ensemble_mode == EnsembleMode::average_rows
                                                         ? "average_rows"
                                                         : "sparsemax_of_mean");
                              }};
        m["budget"] = {[](C& c, const std::string& v) {
                           if (v == "evaluations")
                               c.train.budget = BudgetMode::evaluations;
                           else if (v == "iterations")
                               c.train.budget = BudgetMode::iterations;
                           else
                               throw ConfigError("config: unknown budget '" + v + "'");
                       },
                       [](const C& c) {
                           return std::string(c.train.budget == BudgetMode::evaluations ? "evaluations" : "iterations");
                       }};
        m["corruption"] = {[](C& c, const std::string& v) { c.train.loss.corruption_enabled = parse_bool("corruption", v); },
                           [](const C& c) { return std::string(c.train.loss.corruption_enabled ? "true" : "false"); }};
#define QD_NUM(key, T, expr) m[key] = number<T>([](C & c) -> T& { return expr; })
        QD_NUM("iterations", std::size_t, c.train.iterations);
        QD_NUM("population", std::size_t, c.train.generator.population);
        QD_NUM("noise_dim", std::size_t, c.train.generator.noise_dim);
        QD_NUM("conv_channels", std::size_t, c.train.generator.conv_channels);
        QD_NUM("conv_kernel", std::size_t, c.train.generator.conv_kernel);
        QD_NUM("lstm_hidden", std::size_t, c.train.generator.lstm_hidden);
        QD_NUM("window", std::size_t, c.train.window);
        QD_NUM("eval_every", std::size_t, c.train.eval_every);
        QD_NUM("seed", std::uint64_t, c.train.seed);
        QD_NUM("eval_seed", std::uint64_t, c.train.eval_seed);
        QD_NUM("train_fraction", double, c.train.train_fraction);
        QD_NUM("lambda", double, c.train.loss.lambda);
        QD_NUM("p_zero", double, c.train.loss.p_zero);
        QD_NUM("noise_sigma", double, c.train.loss.noise_sigma);
        QD_NUM("lr", double, c.train.hyper.lr);
        QD_NUM("beta1", double, c.train.hyper.beta1);
        QD_NUM("beta2", double, c.train.hyper.beta2);
        QD_NUM("eps", double, c.train.hyper.eps);
        QD_NUM("weight_decay", double, c.train.hyper.weight_decay);
        QD_NUM("baseline_lr", double, c.train.baseline_lr);
        QD_NUM("cmaes_sigma0", double, c.train.hyper.cmaes_sigma0);
#undef QD_NUM
        return m;
    }();
    return f;
}

} // namespace detail

/// Applies one key=value pair; unknown keys and unparsable values are ConfigErrors.
inline void set_option(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto& f = detail::fields();
    auto it = f.find(key);
    if (it == f.end()) throw ConfigError("config: unknown key '" + key + "'");
    try {
        it->second.set(cfg, value);
    } catch (const ConfigError&) {
        throw ConfigError("config: bad value '" + value + "' for " + key);
    }
}

inline void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config") {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = std::string(detail::trim(line));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + " line " + std::to_string(lineno) + ": expected key=value");
        set_option(cfg, std::string(detail::trim(std::string_view(line).substr(0, eq))),
                   std::string(detail::trim(std::string_view(line).substr(eq + 1))));
    }
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(cfg, ss.str(), path);
}

/// Sorted key=value lines; parsing this text back yields the same configuration.
inline std::string dump_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& [key, field] : detail::fields()) out += key + "=" + field.get(cfg) + "\n";
    return out;
}

inline void write_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << dump_config(cfg);
}

} // namespace qdport
