// qdport command-line driver: ingest, synth, train, eval, compare, plot.
//
// Exit codes: 0 success, 1 usage, 2 data, 3 numerical failure. Failures print one line
// `qdport: error=<kind> reason=<text>` on stderr.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <thread>

#include <qdport/config.hpp>
#include <qdport/ensemble.hpp>
#include <qdport/svg.hpp>
#include <qdport/trainer.hpp>

namespace fs = std::filesystem;
using namespace qdport;

namespace {

// Flags mapped onto configuration keys; only flags given on the command line override.
const std::map<std::string, std::string> kFlagKeys = {
    {"--data", "data"},         {"--index-column", "index_column"}, {"--out", "out"},
    {"--seed", "seed"},         {"--iterations", "iterations"},     {"--population", "population"},
    {"--lambda", "lambda"},     {"--window", "window"},             {"--optimizer", "optimizer"},
    {"--train-fraction", "train_fraction"}, {"--eval-seed", "eval_seed"},
};

struct Invocation {
    std::string config_path;
    std::map<std::string, std::string> flags;
    std::vector<std::string> sets; // --set key=value
};

void add_common(CLI::App* cmd, Invocation& inv) {
    cmd->add_option("--config", inv.config_path, "flat key=value configuration file");
    for (const auto& [flag, key] : kFlagKeys)
        cmd->add_option(flag, inv.flags[key], "overrides " + key)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    cmd->add_option("--set", inv.sets, "extra key=value override (repeatable)");
}

RunConfig resolve(CLI::App* cmd, const Invocation& inv) {
    RunConfig cfg;
    if (!inv.config_path.empty()) apply_config_file(cfg, inv.config_path);
    for (const auto& s : inv.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        set_option(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [flag, key] : kFlagKeys)
        if (cmd->count(flag) > 0) set_option(cfg, key, inv.flags.at(key));
    cfg.train.validate();
    return cfg;
}

fs::path prepare_out(const RunConfig& cfg) {
    fs::path out(cfg.out);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw DataError("cannot create output directory " + out.string());
    write_config((out / "run.config").string(), cfg);
    return out;
}

SplitPanels load_split(const RunConfig& cfg) {
    if (cfg.data.empty()) throw ConfigError("missing --data");
    const ReturnPanel panel = compute_log_returns(load_prices(cfg.data, cfg.index_column));
    return time_split(panel, cfg.train.train_fraction);
}

std::size_t comparison_threads() {
    if (const char* env = std::getenv("QD_PORTFOLIO_THREADS")) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (end == env || *end != '\0' || v == 0) throw ConfigError("QD_PORTFOLIO_THREADS must be a positive integer");
        return v;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void write_eval_outputs(const fs::path& out, const Population& pop, const ReturnPanel& panel, EnsembleMode mode) {
    const EvalReport rep = evaluate_population(pop, panel, mode);
    write_eval_summary((out / "eval.summary").string(), rep);
    write_weights((out / "weights.csv").string(), panel.tickers, rep.ensemble_weights);
    write_series((out / "series.csv").string(), panel.dates, rep);
}

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

int fail(const char* kind, const std::string& reason, int code) {
    std::cerr << "qdport: error=" << kind << " reason=" << one_line(reason) << '\n';
    return code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quality-diversity sparse index tracking"};
    app.require_subcommand(1, 1);

    Invocation inv;
    auto* ingest = app.add_subcommand("ingest", "validate and normalize a price file into <out>/prices.csv");
    auto* synth = app.add_subcommand("synth", "write a synthetic sparse-tracking dataset");
    auto* train = app.add_subcommand("train", "train the generator and write run artifacts");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the validation panel");
    auto* compare = app.add_subcommand("compare", "run the baseline optimizers against the generator");
    auto* plot = app.add_subcommand("plot", "render cumulative-return curves from a series file");
    for (auto* c : {ingest, synth, train, eval, compare, plot}) add_common(c, inv);

    std::size_t synth_assets = 100, synth_days = 500, synth_k = 5;
    double synth_noise = 0.0;
    std::string synth_scheme = "equal";
    synth->add_option("--assets", synth_assets, "number of assets");
    synth->add_option("--days", synth_days, "number of return rows");
    synth->add_option("--sparsity", synth_k, "support size of the hidden portfolio");
    synth->add_option("--noise", synth_noise, "index observation noise scale");
    synth->add_option("--weights", synth_scheme, "hidden weight scheme")->check(CLI::IsMember({"equal", "random"}));

    std::string resume_path, checkpoint_path, series_path, kinds_arg;
    train->add_option("--resume", resume_path, "continue from a checkpoint");
    eval->add_option("--checkpoint", checkpoint_path, "checkpoint to evaluate")->required();
    compare->add_option("--kinds", kinds_arg, "comma-separated optimizer list (default: all)");
    plot->add_option("--series", series_path, "series file written by eval/train")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 1);
    }
    CLI::App* cmd = app.get_subcommands().front();

    try {
        const RunConfig cfg = resolve(cmd, inv);
        const fs::path out = prepare_out(cfg);

        if (cmd == ingest) {
            if (cfg.data.empty()) throw ConfigError("missing --data");
            const PriceTable table = load_prices(cfg.data, cfg.index_column);
            compute_log_returns(table);
            write_prices((out / "prices.csv").string(), table);
            std::cout << "rows=" << table.days() << " assets=" << table.assets() << '\n';
        } else if (cmd == synth) {
            const SyntheticData data = synth_dataset(synth_assets, synth_days, synth_k, synth_noise, cfg.train.seed,
                                                     synth_scheme == "equal" ? WeightScheme::equal : WeightScheme::random);
            const std::string& index = cfg.index_column;
            write_prices((out / "prices.csv").string(), synth_price_table(data, index));
            write_weights((out / "true_weights.csv").string(), data.panel.tickers, data.true_weights);
        } else if (cmd == train) {
            const SplitPanels data = load_split(cfg);
            std::optional<Checkpoint> resume;
            if (!resume_path.empty()) resume = load_checkpoint(resume_path);
            const RunArtifacts art = train_generator(cfg.train, data, resume ? &*resume : nullptr);
            write_run_artifacts(out, art);
            if (art.best_checkpoint) {
                const auto& b = *art.best_checkpoint;
                write_eval_outputs(out, eval_population(b.params, b.state, b.generator, cfg.train.eval_seed),
                                   data.validation, cfg.train.ensemble_mode);
            }
            std::cout << "best_iteration=" << art.best_iteration << " best_validation_mse=" << art.best_validation_mse
                      << '\n';
        } else if (cmd == eval) {
            const SplitPanels data = load_split(cfg);
            const Checkpoint ck = load_checkpoint(checkpoint_path);
            if (ck.generator.n_assets != data.validation.assets())
                throw DataError("checkpoint has " + std::to_string(ck.generator.n_assets) + " assets, data has " +
                                std::to_string(data.validation.assets()));
            write_eval_outputs(out, eval_population(ck.params, ck.state, ck.generator, cfg.train.eval_seed),
                               data.validation, cfg.train.ensemble_mode);
        } else if (cmd == compare) {
            const SplitPanels data = load_split(cfg);
            std::vector<OptimizerKind> kinds;
            if (kinds_arg.empty()) {
                kinds.assign(kAllOptimizers.begin(), kAllOptimizers.end());
            } else {
                std::string_view rest = kinds_arg;
                while (!rest.empty()) {
                    const auto comma = rest.find(',');
                    kinds.push_back(parse_optimizer(detail::trim(rest.substr(0, comma))));
                    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
                }
            }
            const ComparisonTable table = compare_optimizers(cfg.train, data, kinds, comparison_threads());
            write_table((out / "table.csv").string(), table);
            for (const auto& r : table.rows)
                if (r.failed) std::cerr << "qdport: run=" << r.optimizer << " failed reason=" << one_line(r.error) << '\n';
        } else if (cmd == plot) {
            write_svg((out / "plot.svg").string(), render_svg(read_series(series_path)));
        }
    } catch (const ConfigError& e) {
        return fail("usage", e.what(), 1);
    } catch (const NumericalError& e) {
        return fail("numerical", e.what(), 3);
    } catch (const DataError& e) {
        return fail("data", e.what(), 2);
    } catch (const std::exception& e) {
        return fail("data", e.what(), 2);
    }
    return 0;
}
