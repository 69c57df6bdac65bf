// SPDX-License-Identifier: Apache-2.0
#include "crossmatch/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "crossmatch/common.hpp"

namespace crossmatch::plot {
namespace fs = std::filesystem;

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string px(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

struct Range {
    double lo = 0.0, hi = 1.0;
};

Range finite_range(const std::vector<double>& vs) {
    Range r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (double v : vs)
        if (std::isfinite(v)) {
            r.lo = std::min(r.lo, v);
            r.hi = std::max(r.hi, v);
        }
    if (!(r.lo <= r.hi)) return {0.0, 1.0};
    if (r.lo == r.hi) {  // widen a flat series so the line sits mid-plot
        const double pad = r.lo == 0.0 ? 0.5 : std::abs(r.lo) * 0.1;
        return {r.lo - pad, r.hi + pad};
    }
    return r;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

std::string render_line_chart_svg(const Series& s, int width, int height) {
    check_config(width >= 120 && height >= 80, "chart size too small");
    check_config(s.x.size() == s.y.size(), "series x/y length mismatch");
    const double L = 62, R = 14, T = 30, B = 38;
    const double pw = width - L - R, ph = height - T - B;
    const Range rx = finite_range(s.x), ry = finite_range(s.y);
    const auto X = [&](double v) { return L + (v - rx.lo) / (rx.hi - rx.lo) * pw; };
    const auto Y = [&](double v) { return T + ph - (v - ry.lo) / (ry.hi - ry.lo) * ph; };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
        << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"#ffffff\"/>\n"
        << "<text x=\"" << px(L) << "\" y=\"20\" font-family=\"monospace\" font-size=\"13\">"
        << s.name << "</text>\n";

    for (int i = 0; i <= 4; ++i) {  // grid and tick labels, 5 divisions each way
        const double fx = rx.lo + (rx.hi - rx.lo) * i / 4.0;
        const double fy = ry.lo + (ry.hi - ry.lo) * i / 4.0;
        out << "<line x1=\"" << px(X(fx)) << "\" y1=\"" << px(T) << "\" x2=\"" << px(X(fx))
            << "\" y2=\"" << px(T + ph) << "\" stroke=\"#dddddd\"/>\n"
            << "<line x1=\"" << px(L) << "\" y1=\"" << px(Y(fy)) << "\" x2=\"" << px(L + pw)
            << "\" y2=\"" << px(Y(fy)) << "\" stroke=\"#dddddd\"/>\n"
            << "<text x=\"" << px(X(fx)) << "\" y=\"" << px(T + ph + 16)
            << "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">" << num(fx)
            << "</text>\n"
            << "<text x=\"" << px(L - 6) << "\" y=\"" << px(Y(fy) + 4)
            << "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">" << num(fy)
            << "</text>\n";
    }
    out << "<rect x=\"" << px(L) << "\" y=\"" << px(T) << "\" width=\"" << px(pw)
        << "\" height=\"" << px(ph) << "\" fill=\"none\" stroke=\"#444444\"/>\n";

    std::vector<std::pair<double, double>> seg;
    const auto flush = [&]() {
        if (seg.size() >= 2) {
            out << "<polyline fill=\"none\" stroke=\"#3366cc\" stroke-width=\"1.5\" points=\"";
            for (size_t i = 0; i < seg.size(); ++i)
                out << (i ? " " : "") << px(seg[i].first) << "," << px(seg[i].second);
            out << "\"/>\n";
        } else if (seg.size() == 1) {
            out << "<circle cx=\"" << px(seg[0].first) << "\" cy=\"" << px(seg[0].second)
                << "\" r=\"2\" fill=\"#3366cc\"/>\n";
        }
        seg.clear();
    };
    for (size_t i = 0; i < s.x.size(); ++i) {
        if (std::isfinite(s.x[i]) && std::isfinite(s.y[i]))
            seg.emplace_back(X(s.x[i]), Y(s.y[i]));
        else
            flush();
    }
    flush();
    out << "</svg>\n";
    return out.str();
}

std::vector<Series> load_run_series(const std::string& run_dir) {
    std::vector<Series> all;

    std::ifstream csv(fs::path(run_dir) / "losses.csv");
    if (csv.good()) {
        std::string line;
        if (std::getline(csv, line)) {
            const auto header = split_csv(line);
            long step_col = -1;
            std::vector<std::pair<size_t, size_t>> cols;  // (csv column, series index)
            for (size_t c = 0; c < header.size(); ++c) {
                if (header[c] == "step") {
                    step_col = static_cast<long>(c);
                } else if (header[c] != "rng") {
                    cols.emplace_back(c, all.size());
                    all.push_back({header[c], {}, {}});
                }
            }
            check_data(step_col >= 0, "losses.csv in " + run_dir + " has no step column");
            while (std::getline(csv, line)) {
                if (line.empty()) continue;
                const auto cells = split_csv(line);
                check_data(cells.size() == header.size(), "ragged row in losses.csv");
                const double step = std::strtod(cells[static_cast<size_t>(step_col)].c_str(), nullptr);
                for (const auto& [c, si] : cols) {
                    if (cells[c].empty()) continue;  // e.g. coverage on supervised rows
                    all[si].x.push_back(step);
                    all[si].y.push_back(std::strtod(cells[c].c_str(), nullptr));
                }
            }
        }
    }

    std::ifstream jl(fs::path(run_dir) / "metrics.jsonl");
    if (jl.good()) {
        const std::vector<std::pair<std::string, std::string>> fields = {
            {"mean_dice_pct", "val_dice"},
            {"mean_jaccard_pct", "val_jaccard"},
            {"mean_hd95", "val_hd95"},
            {"mean_asd", "val_asd"},
        };
        std::vector<long> idx(fields.size(), -1);
        std::string line;
        while (std::getline(jl, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            if (!j.contains("step")) continue;
            for (size_t f = 0; f < fields.size(); ++f) {
                if (!j.contains(fields[f].first) || j[fields[f].first].is_null()) continue;
                if (idx[f] < 0) {
                    idx[f] = static_cast<long>(all.size());
                    all.push_back({fields[f].second, {}, {}});
                }
                auto& s = all[static_cast<size_t>(idx[f])];
                s.x.push_back(j["step"].get<double>());
                s.y.push_back(j[fields[f].first].get<double>());
            }
        }
    }

    std::erase_if(all, [](const Series& s) { return s.x.empty(); });
    return all;
}

long write_run_plots(const std::string& run_dir, const std::string& out_dir) {
    const auto series = load_run_series(run_dir);
    if (series.empty()) return 0;
    fs::create_directories(out_dir);
    for (const auto& s : series) {
        std::ofstream f(fs::path(out_dir) / (s.name + ".svg"), std::ios::binary);
        check_data(f.good(), "cannot write plot for series " + s.name);
        f << render_line_chart_svg(s);
    }
    return static_cast<long>(series.size());
}

}  // namespace crossmatch::plot
