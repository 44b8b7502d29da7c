#pragma once

// Standalone SVG line chart of cumulative log returns: sub-portfolios in thin gray, the
// ensemble in blue and the index in red.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "marketdata.hpp"

namespace qdport {

struct SeriesTable {
    std::vector<std::string> dates;
    std::vector<double> index;
    std::vector<double> ensemble;
    std::vector<std::vector<double>> subs;
};

/// Reads the `date,index,ensemble,sub_0,...` file written by write_series.
inline SeriesTable read_series(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open series file " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty series file");
    const auto header = detail::split_csv(line);
    if (header.size() < 3 || detail::trim(header[1]) != "index" || detail::trim(header[2]) != "ensemble")
        throw DataError(path + ": header must start with date,index,ensemble");
    SeriesTable t;
    t.subs.resize(header.size() - 3);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv(line);
        if (cells.size() != header.size())
            throw DataError(path + " line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                            " fields");
        std::vector<double> v(cells.size() - 1);
        for (std::size_t i = 1; i < cells.size(); ++i)
            if (!detail::parse_double(detail::trim(cells[i]), v[i - 1]) || !std::isfinite(v[i - 1]))
                throw DataError(path + " line " + std::to_string(lineno) + ": non-numeric value");
        t.dates.emplace_back(detail::trim(cells[0]));
        t.index.push_back(v[0]);
        t.ensemble.push_back(v[1]);
        for (std::size_t s = 0; s < t.subs.size(); ++s) t.subs[s].push_back(v[2 + s]);
    }
    if (t.index.empty()) throw DataError(path + ": no data rows");
    return t;
}

inline std::vector<double> cumulative(const std::vector<double>& r) {
    std::vector<double> c(r.size() + 1, 0.0);
    for (std::size_t i = 0; i < r.size(); ++i) c[i + 1] = c[i] + r[i];
    return c;
}

inline std::string render_svg(const SeriesTable& t, const std::string& title = "Cumulative log return") {
    constexpr double width = 800, height = 450, margin = 50;
    if (t.index.empty()) throw DataError("plot: series has no rows");
    std::vector<std::vector<double>> curves;
    for (const auto& s : t.subs) curves.push_back(cumulative(s));
    curves.push_back(cumulative(t.ensemble));
    curves.push_back(cumulative(t.index));

    double lo = 0, hi = 0;
    for (const auto& c : curves)
        for (double v : c) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    const std::size_t points = curves.front().size();
    auto x = [&](std::size_t i) { return margin + (width - 2 * margin) * static_cast<double>(i) / static_cast<double>(points - 1); };
    auto y = [&](double v) { return height - margin - (height - 2 * margin) * (v - lo) / (hi - lo); };

    std::ostringstream o;
    o << std::fixed << std::setprecision(2);
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n"
      << "<text x=\"" << width / 2 << "\" y=\"25\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
      << title << "</text>\n"
      << "<line x1=\"" << margin << "\" y1=\"" << y(0) << "\" x2=\"" << width - margin << "\" y2=\"" << y(0)
      << "\" stroke=\"#cccccc\" stroke-dasharray=\"4 4\"/>\n"
      << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << width - 2 * margin << "\" height=\""
      << height - 2 * margin << "\" fill=\"none\" stroke=\"black\"/>\n";
    o << "<text x=\"" << margin - 5 << "\" y=\"" << y(hi) + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
      << std::setprecision(4) << hi << "</text>\n"
      << "<text x=\"" << margin - 5 << "\" y=\"" << y(lo) + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
      << lo << "</text>\n" << std::setprecision(2);
    if (!t.dates.empty())
        o << "<text x=\"" << margin << "\" y=\"" << height - margin + 15 << "\" font-family=\"sans-serif\" font-size=\"10\">"
          << t.dates.front() << "</text>\n"
          << "<text x=\"" << width - margin << "\" y=\"" << height - margin + 15
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << t.dates.back() << "</text>\n";

    for (std::size_t k = 0; k < curves.size(); ++k) {
        const bool is_index = k + 1 == curves.size(), is_ensemble = k + 2 == curves.size();
        const char* stroke = is_index ? "red" : is_ensemble ? "blue" : "#999999";
        const char* w = is_index || is_ensemble ? "2" : "0.5";
        const char* cls = is_index ? "index" : is_ensemble ? "ensemble" : "sub";
        o << "<polyline class=\"" << cls << "\" fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << w
          << "\" points=\"";
        for (std::size_t i = 0; i < points; ++i) o << (i ? " " : "") << x(i) << ',' << y(curves[k][i]);
        o << "\"/>\n";
    }
    o << "<text x=\"" << width - margin - 5 << "\" y=\"" << margin + 15
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\"red\">index</text>\n"
      << "<text x=\"" << width - margin - 5 << "\" y=\"" << margin + 30
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\"blue\">ensemble</text>\n"
      << "</svg>\n";
    return o.str();
}

inline void write_svg(const std::string& path, const std::string& svg) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << svg;
}

} // namespace qdport
