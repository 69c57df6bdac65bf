// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace crossmatch::plot {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;  // NaN = gap (breaks the polyline)
};

// Fixed-layout line chart. Output bytes depend only on the series contents:
// no timestamps, locale-independent %.6g/%.2f formatting throughout.
std::string render_line_chart_svg(const Series& s, int width = 640, int height = 400);

// Reads losses.csv (one series per numeric column) and metrics.jsonl (one
// series per summary field) from a run directory. Missing files are skipped.
std::vector<Series> load_run_series(const std::string& run_dir);

// Writes <out_dir>/<series name>.svg per loadable series; returns the count.
long write_run_plots(const std::string& run_dir, const std::string& out_dir);

}  // namespace crossmatch::plot
