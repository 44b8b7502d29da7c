#pragma once

// Price ingestion, log-return panels, chronological splits, Monte-Carlo window sampling and
// synthetic index-tracking datasets with known ground truth.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace qdport {

struct PriceTable {
    std::vector<std::string> dates;   ///< ISO-8601, strictly increasing
    std::vector<std::string> tickers; ///< N asset identifiers (index column excluded)
    Tensor prices;                    ///< T×N, strictly positive
    std::string index_ticker;
    std::vector<double> index_prices; ///< length T

    std::size_t days() const { return dates.size(); }
    std::size_t assets() const { return tickers.size(); }
};

/// Daily log returns; row t is dated by the later of the two prices it spans.
struct ReturnPanel {
    std::vector<std::string> dates;
    std::vector<std::string> tickers;
    Tensor returns; ///< rows×N
    std::vector<double> index_returns;

    std::size_t rows() const { return index_returns.size(); }
    std::size_t assets() const { return returns.cols(); }

    /// Rows [begin, begin+count) as a new panel.
    ReturnPanel slice_rows(std::size_t begin, std::size_t count) const {
        if (begin + count > rows()) throw DataError("panel slice out of range");
        ReturnPanel out;
        out.tickers = tickers;
        if (!dates.empty()) out.dates.assign(dates.begin() + begin, dates.begin() + begin + count);
        out.returns = Tensor::matrix(count, assets());
        std::copy_n(returns.data.begin() + begin * assets(), count * assets(), out.returns.data.begin());
        out.index_returns.assign(index_returns.begin() + begin, index_returns.begin() + begin + count);
        return out;
    }
};

struct SplitPanels {
    ReturnPanel train;
    ReturnPanel validation;
    std::size_t split_index = 0;
};

struct WindowSample {
    std::size_t start = 0;
    std::size_t length = 0;
    Tensor returns; ///< W×N
    std::vector<double> index_returns;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        const auto comma = line.find(',', pos);
        out.push_back(trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

inline bool valid_iso_date(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
    int y = 0;
    unsigned m = 0, d = 0;
    auto num = [](std::string_view part, auto& out) {
        for (char ch : part)
            if (ch < '0' || ch > '9') return false;
        return std::from_chars(part.data(), part.data() + part.size(), out).ec == std::errc{};
    };
    if (!num(s.substr(0, 4), y) || !num(s.substr(5, 2), m) || !num(s.substr(8, 2), d)) return false;
    return std::chrono::year_month_day{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}}.ok();
}

inline bool parse_double(std::string_view s, double& out) {
    if (s.empty()) return false;
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

inline std::string iso(std::chrono::sys_days day) {
    const std::chrono::year_month_day ymd{day};
    std::ostringstream os;
    os << std::setfill('0') << std::setw(4) << static_cast<int>(ymd.year()) << '-' << std::setw(2)
       << static_cast<unsigned>(ymd.month()) << '-' << std::setw(2) << static_cast<unsigned>(ymd.day());
    return os.str();
}

} // namespace detail

/// Reads a wide price CSV (`date,<ticker>,...`) and splits off `index_column`.
inline PriceTable load_prices(const std::string& path, const std::string& index_column) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open price file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty file");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3); // UTF-8 BOM
    const auto header = detail::split_csv(line);
    if (header.size() < 2 || header[0] != "date") throw DataError(path + ": header must start with 'date'");

    std::size_t index_col = 0;
    std::vector<std::string> tickers;
    for (std::size_t c = 1; c < header.size(); ++c) {
        if (header[c].empty()) throw DataError(path + ": empty ticker name in column " + std::to_string(c + 1));
        if (header[c] == index_column)
            index_col = c;
        else
            tickers.emplace_back(header[c]);
    }
    if (index_col == 0) throw DataError("unknown index column '" + index_column + "'");
    {
        auto sorted = tickers;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw DataError(path + ": duplicate ticker column");
    }

    struct Row {
        std::string date;
        std::vector<double> assets;
        double index;
    };
    std::vector<Row> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const std::size_t row_no = rows.size() + 1;
        const std::string where = "row " + std::to_string(row_no) + " (line " + std::to_string(line_no) + ")";
        const auto cells = detail::split_csv(line);
        if (cells.size() != header.size())
            throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(cells.size()));
        if (!detail::valid_iso_date(cells[0]))
            throw DataError(where + ", column 'date': invalid ISO date '" + std::string(cells[0]) + "'");
        Row r{std::string(cells[0]), {}, 0.0};
        r.assets.reserve(tickers.size());
        for (std::size_t c = 1; c < cells.size(); ++c) {
            double v = 0.0;
            if (!detail::parse_double(cells[c], v) || !std::isfinite(v))
                throw DataError(where + ", column '" + std::string(header[c]) + "': non-numeric price '" +
                                std::string(cells[c]) + "'");
            if (v <= 0.0)
                throw DataError(where + ", column '" + std::string(header[c]) + "': non-positive price");
            if (c == index_col)
                r.index = v;
            else
                r.assets.push_back(v);
        }
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw DataError(path + ": no data rows");
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.date < b.date; });
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].date == rows[i - 1].date) throw DataError("duplicate date " + rows[i].date);

    PriceTable table;
    table.tickers = std::move(tickers);
    table.index_ticker = index_column;
    table.prices = Tensor::matrix(rows.size(), table.tickers.size());
    for (std::size_t t = 0; t < rows.size(); ++t) {
        table.dates.push_back(rows[t].date);
        table.index_prices.push_back(rows[t].index);
        std::copy(rows[t].assets.begin(), rows[t].assets.end(), table.prices.row(t).begin());
    }
    return table;
}

/// Writes the wide CSV format with the index as the first price column.
inline void write_prices(const std::string& path, const PriceTable& table) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write price file: " + path);
    out << "date," << table.index_ticker;
    for (const auto& t : table.tickers) out << ',' << t;
    out << '\n' << std::setprecision(17);
    for (std::size_t t = 0; t < table.days(); ++t) {
        out << table.dates[t] << ',' << table.index_prices[t];
        for (double p : table.prices.row(t)) out << ',' << p;
        out << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

inline ReturnPanel compute_log_returns(const PriceTable& table) {
    const std::size_t days = table.days();
    if (days < 2) throw DataError("compute_log_returns: need at least 2 price rows");
    const std::size_t n = table.assets();
    ReturnPanel panel;
    panel.tickers = table.tickers;
    panel.dates.assign(table.dates.begin() + 1, table.dates.end());
    panel.returns = Tensor::matrix(days - 1, n);
    for (std::size_t t = 0; t + 1 < days; ++t) {
        for (std::size_t a = 0; a < n; ++a)
            panel.returns(t, a) = std::log(table.prices(t + 1, a) / table.prices(t, a));
        panel.index_returns.push_back(std::log(table.index_prices[t + 1] / table.index_prices[t]));
    }
    if (!panel.returns.all_finite()) throw DataError("compute_log_returns: non-finite return");
    return panel;
}

/// Rebuilds prices from returns by cumulative exponentiation from the given first row.
inline PriceTable prices_from_returns(const ReturnPanel& panel, const std::string& first_date,
                                      std::vector<double> first_prices, double first_index_price,
                                      const std::string& index_ticker = "INDEX") {
    const std::size_t n = panel.assets();
    if (first_prices.size() != n) throw DataError("prices_from_returns: starting prices size mismatch");
    PriceTable table;
    table.tickers = panel.tickers;
    table.index_ticker = index_ticker;
    table.dates.push_back(first_date);
    table.dates.insert(table.dates.end(), panel.dates.begin(), panel.dates.end());
    table.prices = Tensor::matrix(panel.rows() + 1, n);
    std::copy(first_prices.begin(), first_prices.end(), table.prices.row(0).begin());
    table.index_prices.push_back(first_index_price);
    for (std::size_t t = 0; t < panel.rows(); ++t) {
        for (std::size_t a = 0; a < n; ++a) table.prices(t + 1, a) = table.prices(t, a) * std::exp(panel.returns(t, a));
        table.index_prices.push_back(table.index_prices.back() * std::exp(panel.index_returns[t]));
    }
    return table;
}

/// First floor(rows·train_fraction) rows train, the rest validate. No shuffling.
inline SplitPanels time_split(const ReturnPanel& panel, double train_fraction) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("time_split: train fraction must lie in (0, 1)");
    const std::size_t rows = panel.rows();
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(rows) * train_fraction));
    if (n_train < 1) throw DataError("time_split: empty training set");
    if (n_train >= rows) throw DataError("time_split: empty validation set");
    return SplitPanels{panel.slice_rows(0, n_train), panel.slice_rows(n_train, rows - n_train), n_train};
}

/// Uniformly placed contiguous window of `length` training rows.
inline WindowSample sample_window(const ReturnPanel& train, std::size_t length, Rng& rng) {
    if (length < 2) throw ConfigError("sample_window: window length must be at least 2");
    if (length > train.rows())
        throw ConfigError("sample_window: window length " + std::to_string(length) + " exceeds " +
                          std::to_string(train.rows()) + " training rows");
    WindowSample w;
    w.start = static_cast<std::size_t>(rng.uniform_int(0, train.rows() - length));
    w.length = length;
    w.returns = Tensor::matrix(length, train.assets());
    std::copy_n(train.returns.data.begin() + w.start * train.assets(), length * train.assets(), w.returns.data.begin());
    w.index_returns.assign(train.index_returns.begin() + w.start, train.index_returns.begin() + w.start + length);
    return w;
}

/// The whole panel as a window (used by direct baselines).
inline WindowSample full_window(const ReturnPanel& panel) {
    return WindowSample{0, panel.rows(), panel.returns, panel.index_returns};
}

enum class WeightScheme { equal, random };

struct SyntheticData {
    ReturnPanel panel;
    std::vector<double> true_weights;
};

/// Daily asset volatility of synthetic returns.
inline constexpr double kSyntheticAssetVol = 0.01;

/// Gaussian asset returns and an index equal to a k-sparse simplex portfolio of them plus
/// Gaussian observation noise of scale `noise_scale`.
inline SyntheticData synth_dataset(std::size_t n_assets, std::size_t n_days, std::size_t k_sparse, double noise_scale,
                                   std::uint64_t seed, WeightScheme scheme = WeightScheme::equal) {
    if (n_assets < 1 || n_days < 1) throw ConfigError("synth: need at least one asset and one day");
    if (k_sparse < 1 || k_sparse > n_assets) throw ConfigError("synth: k_sparse must lie in [1, n_assets]");
    if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) throw ConfigError("synth: noise scale must be >= 0");

    Rng weight_rng(stream_seed(seed, "synth.weights"));
    Rng return_rng(stream_seed(seed, "synth.returns"));
    Rng noise_rng(stream_seed(seed, "synth.noise"));

    // Partial Fisher-Yates for the support.
    std::vector<std::size_t> idx(n_assets);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k_sparse; ++i) std::swap(idx[i], idx[weight_rng.uniform_int(i, n_assets - 1)]);
    SyntheticData out;
    out.true_weights.assign(n_assets, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < k_sparse; ++i) {
        const double w = scheme == WeightScheme::equal ? 1.0 : 0.5 + weight_rng.uniform();
        out.true_weights[idx[i]] = w;
        total += w;
    }
    for (double& w : out.true_weights) w /= total;

    auto& p = out.panel;
    for (std::size_t a = 0; a < n_assets; ++a) {
        std::ostringstream os;
        os << 'A' << std::setfill('0') << std::setw(4) << a;
        p.tickers.push_back(os.str());
    }
    using namespace std::chrono;
    sys_days day = sys_days{year{2009} / January / 2};
    for (std::size_t t = 0; t < n_days; ++t) {
        do {
            day += days{1};
        } while (weekday{day} == Saturday || weekday{day} == Sunday);
        p.dates.push_back(detail::iso(day));
    }
    p.returns = Tensor::matrix(n_days, n_assets);
    for (double& r : p.returns.data) r = kSyntheticAssetVol * return_rng.normal();
    for (std::size_t t = 0; t < n_days; ++t) {
        double y = 0.0;
        for (std::size_t a = 0; a < n_assets; ++a) y += p.returns(t, a) * out.true_weights[a];
        p.index_returns.push_back(y + noise_scale * noise_rng.normal());
    }
    return out;
}

/// Synthetic dataset as a price table starting at 100 on the business day before the first return.
inline PriceTable synth_price_table(const SyntheticData& data, const std::string& index_ticker = "INDEX") {
    using namespace std::chrono;
    sys_days first = sys_days{year{2009} / January / 2};
    return prices_from_returns(data.panel, detail::iso(first), std::vector<double>(data.panel.assets(), 100.0), 100.0,
                               index_ticker);
}

} // namespace qdport
