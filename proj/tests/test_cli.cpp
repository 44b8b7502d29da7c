#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path& root() {
    static const fs::path r = [] {
        const fs::path p = fs::temp_directory_path() / "qdport_cli";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return r;
}

struct Result {
    int code;
    std::string err;
};

Result run(const std::string& args, const std::string& env = "") {
    const fs::path err = root() / "stderr.txt";
    const std::string cmd = env + " \"" QDPORT_CLI_PATH "\" " + args + " > /dev/null 2> \"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    std::ifstream in(err);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count(const std::string& text, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = text.find(needle); p != std::string::npos; p = text.find(needle, p + 1)) ++n;
    return n;
}

// Small network so the whole suite stays fast.
const std::string kSmall =
    " --set noise_dim=8 --set conv_channels=2 --set lstm_hidden=4 --population 6 --window 40 --iterations 4";

const fs::path& dataset() {
    static const fs::path d = [] {
        const fs::path dir = root() / "synth";
        const Result r = run("synth --assets 12 --days 260 --sparsity 3 --noise 0.001 --seed 5 --out " + dir.string());
        EXPECT_EQ(r.code, 0) << r.err;
        return dir / "prices.csv";
    }();
    return d;
}

} // namespace

TEST(Cli, SynthWritesPricesAndTruth) {
    ASSERT_TRUE(fs::exists(dataset()));
    const std::string truth = slurp(dataset().parent_path() / "true_weights.csv");
    EXPECT_EQ(truth.rfind("ticker,weight\n", 0), 0u);
    EXPECT_EQ(count(truth, "\n"), 4u);
    EXPECT_NE(slurp(dataset()).find("INDEX"), std::string::npos);
}

TEST(Cli, TrainWritesArtifactsAndResolvedConfig) {
    const fs::path out = root() / "train";
    const Result r = run("train --data " + dataset().string() + kSmall + " --lambda 0 --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string cfg = slurp(out / "run.config");
    EXPECT_NE(cfg.find("\nlambda=0\n"), std::string::npos) << cfg;
    EXPECT_NE(cfg.find("\niterations=4\n"), std::string::npos);
    for (const char* f : {"loss.csv", "eval.csv", "checkpoint.best", "checkpoint.final", "eval.summary", "weights.csv",
                          "series.csv"})
        EXPECT_TRUE(fs::exists(out / f)) << f;
    EXPECT_EQ(count(slurp(out / "loss.csv"), "\n"), 5u);

    const fs::path ev = root() / "eval";
    const Result e = run("eval --data " + dataset().string() + " --checkpoint " + (out / "checkpoint.final").string() +
                         " --out " + ev.string());
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_TRUE(fs::exists(ev / "weights.csv"));

    const fs::path pl = root() / "plot";
    const Result p = run("plot --series " + (ev / "series.csv").string() + " --out " + pl.string());
    ASSERT_EQ(p.code, 0) << p.err;
    EXPECT_EQ(count(slurp(pl / "plot.svg"), "<polyline"), 8u); // 6 subs, ensemble, index
}

TEST(Cli, ResumeContinuesToTheRequestedIteration) {
    const fs::path a = root() / "resume_a", b = root() / "resume_b", c = root() / "resume_c";
    const std::string base = "train --data " + dataset().string() + kSmall;
    ASSERT_EQ(run(base + " --out " + a.string()).code, 0);
    ASSERT_EQ(run(base + " --iterations 2 --out " + b.string()).code, 0);
    ASSERT_EQ(run(base + " --resume " + (b / "checkpoint.final").string() + " --out " + c.string()).code, 0);
    EXPECT_EQ(slurp(a / "checkpoint.final"), slurp(c / "checkpoint.final"));
    EXPECT_EQ(slurp(a / "loss.csv"), slurp(c / "loss.csv"));
}

TEST(Cli, LayerPrecedence) {
    const fs::path cfg = root() / "layers.cfg";
    {
        std::ofstream out(cfg);
        out << "lambda=0.5\nseed=9\n";
    }
    const fs::path o1 = root() / "prec1", o2 = root() / "prec2";
    ASSERT_EQ(run("synth --config " + cfg.string() + " --set lambda=0.3 --assets 3 --days 5 --sparsity 1 --out " +
                  o1.string())
                  .code,
              0);
    const std::string c1 = slurp(o1 / "run.config");
    EXPECT_NE(c1.find("\nlambda=0.3\n"), std::string::npos);
    EXPECT_NE(c1.find("\nseed=9\n"), std::string::npos);
    ASSERT_EQ(run("synth --config " + cfg.string() + " --set lambda=0.3 --lambda 0.2 --assets 3 --days 5 --sparsity 1 --out " +
                  o2.string())
                  .code,
              0);
    EXPECT_NE(slurp(o2 / "run.config").find("\nlambda=0.2\n"), std::string::npos);
}

TEST(Cli, CompareAllKindsWritesElevenRows) {
    const fs::path out = root() / "compare";
    const Result r = run("compare --data " + dataset().string() + kSmall + " --iterations 2 --out " + out.string(),
                         "QD_PORTFOLIO_THREADS=1");
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string table = slurp(out / "table.csv");
    EXPECT_EQ(table.rfind("optimizer,best_validation_mse,evaluations_used,seed\n", 0), 0u);
    EXPECT_EQ(count(table, "\n"), 12u);
    for (const char* k : {"sgd,", "adam,", "adamw,", "adamax,", "nadam,", "radam,", "rmsprop,", "adagrad,", "rprop,",
                          "cmaes,", "proposed,"})
        EXPECT_NE(table.find(std::string("\n") + k), std::string::npos) << k;

    const fs::path again = root() / "compare_again";
    ASSERT_EQ(run("compare --data " + dataset().string() + kSmall + " --iterations 2 --out " + again.string(),
                  "QD_PORTFOLIO_THREADS=3")
                  .code,
              0);
    EXPECT_EQ(slurp(again / "table.csv"), table);
}

TEST(Cli, ExitCodes) {
    Result r = run("train --data " + dataset().string() + " --set lamda=0.1 --out " + (root() / "x").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.err.rfind("qdport: error=usage reason=", 0), 0u) << r.err;
    EXPECT_EQ(count(r.err, "\n"), 1u);

    EXPECT_EQ(run("frobnicate").code, 1);
    EXPECT_EQ(run("eval --data " + dataset().string()).code, 1); // --checkpoint is required
    EXPECT_EQ(run("train --iterations 0 --data " + dataset().string() + " --out " + (root() / "x").string()).code, 1);

    r = run("train --data " + (root() / "missing.csv").string() + " --out " + (root() / "x").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(r.err.rfind("qdport: error=data reason=", 0), 0u) << r.err;

    r = run("train --data " + dataset().string() + kSmall + " --set lr=1e300 --out " + (root() / "x").string());
    EXPECT_EQ(r.code, 3);
    EXPECT_EQ(r.err.rfind("qdport: error=numerical reason=iteration ", 0), 0u) << r.err;

    r = run("compare --kinds sgd --data " + dataset().string() + kSmall + " --out " + (root() / "x").string(),
            "QD_PORTFOLIO_THREADS=zero");
    EXPECT_EQ(r.code, 1);
}

TEST(Cli, RunConfigWrittenEvenWhenTheRunFails) {
    const fs::path out = root() / "failing";
    EXPECT_EQ(run("train --data " + (root() / "missing.csv").string() + " --out " + out.string()).code, 2);
    EXPECT_TRUE(fs::exists(out / "run.config"));
}
