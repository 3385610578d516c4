#pragma once

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "subspace_probe/analysis.hpp"
#include "subspace_probe/version.hpp"

namespace subspace_probe {

inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// First line of every CSV: toolkit version plus the run config as compact JSON.
inline std::string csv_preamble(const nlohmann::json& config) {
    return std::string("# subspace-probe ") + kVersion + " config=" + config.dump() + "\n";
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
    out << text;
    if (!out) fail(ErrorKind::IoError, "write to " + path.string() + " failed");
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string distance_grid_csv(const DistanceMatrix& dm, const nlohmann::json& config) {
    std::string out = csv_preamble(config);
    out += dm.signless ? "separator_ic" : "separator_atom";
    for (auto j : dm.col_labels) out += ",A" + std::to_string(j);
    out += "\n";
    for (std::size_t i = 0; i < dm.values.rows(); ++i) {
        out += "S" + std::to_string(dm.row_labels[i]);
        for (std::size_t j = 0; j < dm.values.cols(); ++j) out += "," + format_number(dm.values(i, j));
        out += "\n";
    }
    return out;
}

inline std::string minima_csv(const Vector& minima, const nlohmann::json& config) {
    std::string out = csv_preamble(config) + "component,d_min\n";
    for (std::size_t j = 0; j < minima.size(); ++j) out += "A" + std::to_string(j) + "," + format_number(minima[j]) + "\n";
    return out;
}

inline std::string trace_csv(const AlignmentTrace& tr, const nlohmann::json& config) {
    std::string out = csv_preamble(config) + "layer";
    for (std::size_t j = 0; j < tr.k; ++j) out += ",A" + std::to_string(j);
    out += "\n";
    for (std::size_t l = 0; l < tr.layers; ++l) {
        out += "L" + std::to_string(l);
        for (std::size_t j = 0; j < tr.k; ++j) out += "," + format_number(tr.coefficients(l, j));
        out += "\n";
    }
    return out;
}

inline std::string trace_per_prompt_csv(const AlignmentTrace& tr, const std::vector<std::string>& prompt_ids,
                                        const nlohmann::json& config) {
    std::string out = csv_preamble(config) + "prompt_id,layer,component,coefficient\n";
    for (std::size_t p = 0; p < tr.per_prompt.size(); ++p)
        for (std::size_t l = 0; l < tr.layers; ++l)
            for (std::size_t j = 0; j < tr.k; ++j)
                out += prompt_ids[p] + "," + std::to_string(l) + "," + std::to_string(j) + "," +
                       format_number(tr.per_prompt[p](l, j)) + "\n";
    return out;
}

inline std::string pairs_csv(const DistanceScoreReport& rep, const nlohmann::json& config) {
    std::string out = csv_preamble(config);
    out += "# rank_correlation=" + (rep.rank_correlation ? format_number(*rep.rank_correlation) : "none") + "\n";
    out += "component,d_min,coefficient\n";
    for (const auto& p : rep.pairs)
        out += "A" + std::to_string(p.component) + "," + format_number(p.d_min) + "," + format_number(p.coefficient) + "\n";
    return out;
}

inline std::string ratio_csv(const DiagnosisResult& r, const nlohmann::json& config) {
    std::string out = csv_preamble(config) + "prompt_id,R,correct\n";
    for (const auto& p : r.per_prompt)
        out += p.prompt_id + "," + format_number(p.R) + "," + (p.correct ? "true" : "false") + "\n";
    return out;
}

/// Labeled numeric grid, the shape shared by distance grids and traces.
struct Heatmap {
    std::string corner;
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    std::vector<std::vector<double>> values;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

/// Parses a grid CSV as written above; '#' lines are skipped.
inline Heatmap parse_grid_csv(const std::string& text) {
    Heatmap h;
    std::istringstream in(text);
    std::string line;
    bool header = true;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto cells = split_csv_line(line);
        if (cells.size() < 2) fail(ErrorKind::ParseError, "line " + std::to_string(lineno) + ": need at least 2 columns");
        if (header) {
            h.corner = cells[0];
            h.col_labels.assign(cells.begin() + 1, cells.end());
            header = false;
            continue;
        }
        if (cells.size() != h.col_labels.size() + 1)
            fail(ErrorKind::ParseError, "line " + std::to_string(lineno) + ": expected " +
                                            std::to_string(h.col_labels.size() + 1) + " cells");
        h.row_labels.push_back(cells[0]);
        std::vector<double> row;
        for (std::size_t c = 1; c < cells.size(); ++c) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cells[c], &used));
                if (used != cells[c].size()) throw std::invalid_argument(cells[c]);
            } catch (const std::exception&) {
                fail(ErrorKind::ParseError, "line " + std::to_string(lineno) + ": bad number '" + cells[c] + "'");
            }
        }
        h.values.push_back(std::move(row));
    }
    if (h.values.empty()) fail(ErrorKind::EmptyMatrix, "grid has no data rows");
    return h;
}

/// Eight-stop approximation of viridis, t in [0, 1].
inline std::array<int, 3> viridis(double t) {
    static constexpr int stops[8][3] = {{68, 1, 84},    {70, 50, 127},  {54, 92, 141},   {39, 127, 142},
                                        {31, 161, 135}, {74, 194, 109}, {159, 218, 58}, {253, 231, 37}};
    if (!(t >= 0.0)) t = 0.0;
    t = std::min(t, 1.0) * 7.0;
    const int i = std::min(static_cast<int>(t), 6);
    const double f = t - i;
    std::array<int, 3> c{};
    for (int k = 0; k < 3; ++k)
        c[k] = static_cast<int>(std::lround(stops[i][k] + f * (stops[i + 1][k] - stops[i][k])));
    return c;
}

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

/// Static heatmap, one rect per cell in row-major order, with a color bar.
inline std::string render_svg(const Heatmap& h, const std::string& title, const std::string& x_label,
                              const std::string& y_label, const nlohmann::json& config = nullptr) {
    constexpr int cell = 18, left = 70, top = 40, bar_w = 14;
    const int nr = static_cast<int>(h.row_labels.size()), nc = static_cast<int>(h.col_labels.size());
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& r : h.values)
        for (double v : r)
            if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
    if (!(lo <= hi)) lo = hi = 0.0;
    const double span = hi - lo;
    const int grid_w = nc * cell, grid_h = nr * cell;
    const int width = left + grid_w + 30 + bar_w + 80, height = top + grid_h + 70;
    char buf[256];
    std::string s;
    std::snprintf(buf, sizeof buf,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" font-family=\"sans-serif\" "
                  "font-size=\"10\">\n",
                  width, height);
    s += buf;
    s += "<!-- subspace-probe " + std::string(kVersion);
    if (!config.is_null()) s += " config=" + xml_escape(config.dump());
    s += " -->\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%d\" y=\"20\" font-size=\"13\">", left);
    s += buf + xml_escape(title) + "</text>\n";
    for (int i = 0; i < nr; ++i)
        for (int j = 0; j < nc; ++j) {
            const double v = h.values[i][j];
            const auto c = viridis(span > 0 ? (v - lo) / span : 0.5);
            std::snprintf(buf, sizeof buf,
                          "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"rgb(%d,%d,%d)\"><title>",
                          left + j * cell, top + i * cell, cell, cell, c[0], c[1], c[2]);
            s += buf + xml_escape(h.row_labels[i] + ", " + h.col_labels[j] + ": " + format_number(v)) +
                 "</title></rect>\n";
        }
    for (int i = 0; i < nr; ++i) {
        std::snprintf(buf, sizeof buf, "<text x=\"%d\" y=\"%d\" text-anchor=\"end\">", left - 4,
                      top + i * cell + cell / 2 + 3);
        s += buf + xml_escape(h.row_labels[i]) + "</text>\n";
    }
    for (int j = 0; j < nc; ++j) {
        const int x = left + j * cell + cell / 2 + 3, y = top + grid_h + 6;
        std::snprintf(buf, sizeof buf, "<text x=\"%d\" y=\"%d\" transform=\"rotate(90 %d %d)\">", x, y, x, y);
        s += buf + xml_escape(h.col_labels[j]) + "</text>\n";
    }
    std::snprintf(buf, sizeof buf, "<text x=\"%d\" y=\"%d\" text-anchor=\"middle\">", left + grid_w / 2,
                  top + grid_h + 60);
    s += buf + xml_escape(x_label) + "</text>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"14\" y=\"%d\" transform=\"rotate(-90 14 %d)\" text-anchor=\"middle\">",
                  top + grid_h / 2, top + grid_h / 2);
    s += buf + xml_escape(y_label) + "</text>\n";
    const int bx = left + grid_w + 30, steps = 32;
    for (int k = 0; k < steps; ++k) {
        const auto c = viridis(1.0 - static_cast<double>(k) / (steps - 1));
        const double y0 = top + static_cast<double>(grid_h) * k / steps;
        std::snprintf(buf, sizeof buf,
                      "<rect x=\"%d\" y=\"%.2f\" width=\"%d\" height=\"%.2f\" fill=\"rgb(%d,%d,%d)\"/>\n", bx, y0,
                      bar_w, static_cast<double>(grid_h) / steps + 0.5, c[0], c[1], c[2]);
        s += buf;
    }
    std::snprintf(buf, sizeof buf, "<text x=\"%d\" y=\"%d\">%.4g</text>\n<text x=\"%d\" y=\"%d\">%.4g</text>\n",
                  bx + bar_w + 4, top + 8, hi, bx + bar_w + 4, top + grid_h, lo);
    s += buf;
    s += "</svg>\n";
    return s;
}

}  // namespace subspace_probe
