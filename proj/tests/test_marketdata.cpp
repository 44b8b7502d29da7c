#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <qdport/ensemble.hpp>
#include <qdport/marketdata.hpp>

using namespace qdport;
namespace fs = std::filesystem;

namespace {

fs::path write_file(const std::string& name, const std::string& text) {
    const fs::path dir = fs::temp_directory_path() / "qdport_marketdata";
    fs::create_directories(dir);
    const fs::path p = dir / name;
    std::ofstream(p) << text;
    return p;
}

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const DataError& e) {
        return e.what();
    }
    return "";
}

ReturnPanel ramp_panel(std::size_t rows, std::size_t n = 2) {
    ReturnPanel p;
    p.returns = Tensor::matrix(rows, n);
    for (std::size_t t = 0; t < rows; ++t) {
        p.dates.push_back("d" + std::to_string(t));
        for (std::size_t a = 0; a < n; ++a) p.returns(t, a) = 0.001 * static_cast<double>(t * n + a);
        p.index_returns.push_back(-0.001 * static_cast<double>(t));
    }
    for (std::size_t a = 0; a < n; ++a) p.tickers.push_back("T" + std::to_string(a));
    return p;
}

} // namespace

TEST(LoadPrices, ThreeRowExample) {
    const auto p = write_file("ok.csv", "date,IDX,A,B\n2020-01-01,100,10,20\n2020-01-02,110,11,19\n2020-01-03,121,12.1,19.5\n");
    const PriceTable t = load_prices(p.string(), "IDX");
    EXPECT_EQ(t.assets(), 2u);
    EXPECT_EQ(t.days(), 3u);
    EXPECT_EQ(t.index_prices, (std::vector<double>{100, 110, 121}));
    EXPECT_EQ(t.tickers, (std::vector<std::string>{"A", "B"}));
    EXPECT_EQ(t.prices(2, 0), 12.1);
    EXPECT_EQ(t.prices(1, 1), 19.0);
}

TEST(LoadPrices, UnknownIndexColumn) {
    const auto p = write_file("ok2.csv", "date,IDX,A\n2020-01-01,100,10\n");
    EXPECT_NE(error_of([&] { load_prices(p.string(), "ZZZ"); }).find("unknown index column"), std::string::npos);
}

TEST(LoadPrices, ZeroPriceNamesRow) {
    const auto p = write_file("zero.csv", "date,IDX,A\n2020-01-01,100,10\n2020-01-02,100,0\n");
    const std::string msg = error_of([&] { load_prices(p.string(), "IDX"); });
    EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'A'"), std::string::npos) << msg;
}

TEST(LoadPrices, OtherErrors) {
    EXPECT_NE(error_of([] { load_prices("/nonexistent/prices.csv", "IDX"); }).find("cannot open"), std::string::npos);
    const auto nn = write_file("nn.csv", "date,IDX,A\n2020-01-01,100,abc\n");
    EXPECT_NE(error_of([&] { load_prices(nn.string(), "IDX"); }).find("non-numeric"), std::string::npos);
    const auto dup = write_file("dup.csv", "date,IDX,A\n2020-01-01,100,1\n2020-01-01,101,2\n");
    EXPECT_NE(error_of([&] { load_prices(dup.string(), "IDX"); }).find("duplicate date"), std::string::npos);
    const auto bad = write_file("bad.csv", "date,IDX,A\n2020-01-01,100\n");
    EXPECT_NE(error_of([&] { load_prices(bad.string(), "IDX"); }).find("row 1"), std::string::npos);
    const auto date = write_file("date.csv", "date,IDX,A\n2020-13-01,100,1\n");
    EXPECT_NE(error_of([&] { load_prices(date.string(), "IDX"); }).find("date"), std::string::npos);
}

TEST(LoadPrices, SortsRowsByDate) {
    const auto p = write_file("unsorted.csv", "date,IDX,A\n2020-01-03,3,30\n2020-01-01,1,10\n2020-01-02,2,20\n");
    const PriceTable t = load_prices(p.string(), "IDX");
    EXPECT_EQ(t.dates, (std::vector<std::string>{"2020-01-01", "2020-01-02", "2020-01-03"}));
    EXPECT_EQ(t.index_prices, (std::vector<double>{1, 2, 3}));
}

TEST(LogReturns, Examples) {
    PriceTable t;
    t.dates = {"2020-01-01", "2020-01-02", "2020-01-03"};
    t.tickers = {"A", "B"};
    t.prices = Tensor(Shape{3, 2}, {100, 50, 110, 50, 121, 50});
    t.index_prices = {100, 110, 121};
    const ReturnPanel p = compute_log_returns(t);
    ASSERT_EQ(p.rows(), 2u);
    EXPECT_NEAR(p.returns(0, 0), 0.0953102, 1e-7);
    EXPECT_NEAR(p.returns(0, 0), p.returns(1, 0), 1e-15);
    EXPECT_EQ(p.returns(0, 1), 0.0);
    EXPECT_EQ(p.returns(1, 1), 0.0);
    EXPECT_EQ(p.dates, (std::vector<std::string>{"2020-01-02", "2020-01-03"}));
    t.dates.resize(1);
    t.index_prices.resize(1);
    t.prices = Tensor(Shape{1, 2}, {1, 1});
    EXPECT_THROW(compute_log_returns(t), DataError);
}

TEST(LogReturns, RoundTripThroughCumulativeExponentiation) {
    const SyntheticData syn = synth_dataset(6, 40, 2, 0.001, 3);
    const PriceTable prices = synth_price_table(syn);
    const ReturnPanel back = compute_log_returns(prices);
    const PriceTable again = prices_from_returns(back, prices.dates.front(), std::vector<double>(6, 100.0), 100.0, "INDEX");
    for (std::size_t i = 0; i < prices.prices.size(); ++i)
        EXPECT_NEAR(again.prices[i] / prices.prices[i], 1.0, 1e-12);
    for (std::size_t i = 0; i < prices.index_prices.size(); ++i)
        EXPECT_NEAR(again.index_prices[i] / prices.index_prices[i], 1.0, 1e-12);
}

TEST(LogReturns, WriteThenLoadRoundTrip) {
    const SyntheticData syn = synth_dataset(4, 10, 2, 0.0, 5);
    const PriceTable prices = synth_price_table(syn, "IDX");
    const fs::path p = fs::temp_directory_path() / "qdport_marketdata" / "written.csv";
    fs::create_directories(p.parent_path());
    write_prices(p.string(), prices);
    const PriceTable loaded = load_prices(p.string(), "IDX");
    EXPECT_EQ(loaded.dates, prices.dates);
    EXPECT_EQ(loaded.tickers, prices.tickers);
    EXPECT_EQ(loaded.prices, prices.prices);
    EXPECT_EQ(loaded.index_prices, prices.index_prices);
}

TEST(TimeSplit, Examples) {
    const SplitPanels s = time_split(ramp_panel(10), 0.8);
    EXPECT_EQ(s.train.rows(), 8u);
    EXPECT_EQ(s.validation.rows(), 2u);
    EXPECT_EQ(s.split_index, 8u);
    EXPECT_EQ(s.validation.dates.front(), "d8");
    const SplitPanels two = time_split(ramp_panel(2), 0.5);
    EXPECT_EQ(two.train.rows(), 1u);
    EXPECT_EQ(two.validation.rows(), 1u);
    EXPECT_THROW(time_split(ramp_panel(5), 0.05), DataError);
    EXPECT_THROW(time_split(ramp_panel(5), 1.0), ConfigError);
    EXPECT_THROW(time_split(ramp_panel(5), 0.0), ConfigError);
}

TEST(TimeSplit, ConcatenationReproducesPanel) {
    const ReturnPanel p = ramp_panel(37, 3);
    for (double f : {0.1, 0.25, 0.5, 0.8, 0.95}) {
        const SplitPanels s = time_split(p, f);
        EXPECT_EQ(s.train.rows(), static_cast<std::size_t>(std::floor(37 * f)));
        std::vector<double> idx = s.train.index_returns;
        idx.insert(idx.end(), s.validation.index_returns.begin(), s.validation.index_returns.end());
        EXPECT_EQ(idx, p.index_returns);
        std::vector<double> ret = s.train.returns.data;
        ret.insert(ret.end(), s.validation.returns.data.begin(), s.validation.returns.data.end());
        EXPECT_EQ(ret, p.returns.data);
        EXPECT_LT(s.train.dates.back(), s.validation.dates.front());
    }
}

TEST(SampleWindow, ForcedStartAndBounds) {
    const ReturnPanel p = ramp_panel(100);
    Rng r(1);
    EXPECT_EQ(sample_window(p, 100, r).start, 0u);
    EXPECT_THROW(sample_window(p, 1, r), ConfigError);
    EXPECT_THROW(sample_window(p, 101, r), ConfigError);
}

TEST(SampleWindow, GoldenStart) {
    // Independent oracle: the standard engine plus rejection sampling on [0, 40].
    std::mt19937_64 eng(12345);
    const std::uint64_t n = 41, limit = ~0ULL - (~0ULL % n);
    std::uint64_t v;
    do v = eng();
    while (v >= limit);
    const std::size_t oracle = v % n;

    Rng r(12345);
    const WindowSample w = sample_window(ramp_panel(100), 60, r);
    EXPECT_EQ(w.start, oracle);
    EXPECT_EQ(w.start, 7u); // frozen
}

TEST(SampleWindow, EqualsLiteralSlice) {
    const ReturnPanel p = ramp_panel(50, 3);
    Rng r(4);
    for (int i = 0; i < 20; ++i) {
        const WindowSample w = sample_window(p, 12, r);
        ASSERT_LE(w.start + 12, 50u);
        EXPECT_EQ(w.length, 12u);
        for (std::size_t t = 0; t < 12; ++t) {
            EXPECT_EQ(w.index_returns[t], p.index_returns[w.start + t]);
            for (std::size_t a = 0; a < 3; ++a) EXPECT_EQ(w.returns(t, a), p.returns(w.start + t, a));
        }
    }
}

TEST(Synth, NoiselessIndexIsExactPortfolio) {
    const SyntheticData s = synth_dataset(100, 500, 5, 0.0, 7);
    std::size_t support = 0;
    double total = 0.0;
    for (double w : s.true_weights) {
        support += w != 0.0;
        total += w;
    }
    EXPECT_EQ(support, 5u);
    EXPECT_NEAR(total, 1.0, 1e-15);
    for (std::size_t t = 0; t < s.panel.rows(); ++t) {
        double y = 0.0;
        for (std::size_t a = 0; a < 100; ++a) y += s.panel.returns(t, a) * s.true_weights[a];
        EXPECT_EQ(y, s.panel.index_returns[t]);
    }
    EXPECT_LE(evaluate(s.true_weights, s.panel).mse, 1e-12);
}

TEST(Synth, DenseWhenKEqualsN) {
    const SyntheticData s = synth_dataset(8, 20, 8, 0.0, 1, WeightScheme::random);
    for (double w : s.true_weights) EXPECT_GT(w, 0.0);
}

TEST(Synth, StatisticsAndDeterminism) {
    const SyntheticData a = synth_dataset(20, 2000, 3, 0.002, 11);
    const SyntheticData b = synth_dataset(20, 2000, 3, 0.002, 11);
    EXPECT_EQ(a.panel.returns, b.panel.returns);
    EXPECT_EQ(a.panel.index_returns, b.panel.index_returns);
    double ss = 0.0;
    for (double r : a.panel.returns.data) ss += r * r;
    EXPECT_NEAR(std::sqrt(ss / static_cast<double>(a.panel.returns.size())), kSyntheticAssetVol, 5e-4);
    // Residual of the index against the true portfolio has the requested scale.
    const double resid = evaluate(a.true_weights, a.panel).mse;
    EXPECT_NEAR(std::sqrt(resid), 0.002, 2e-4);
}

TEST(Synth, ParameterBounds) {
    EXPECT_THROW(synth_dataset(5, 10, 0, 0.0, 1), ConfigError);
    EXPECT_THROW(synth_dataset(5, 10, 6, 0.0, 1), ConfigError);
    EXPECT_THROW(synth_dataset(5, 10, 2, -1.0, 1), ConfigError);
}
