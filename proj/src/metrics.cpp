// SPDX-License-Identifier: Apache-2.0
#include "crossmatch/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "crossmatch/common.hpp"

namespace crossmatch::metrics {

namespace {

constexpr double kFar = 1e20;

// 1D squared-distance lower envelope (Felzenszwalb & Huttenlocher). All
// winning arithmetic is small-integer-valued, so results are exact; kFar
// stands in for infinity to keep parabola intersections finite.
void dt1d(const std::vector<double>& f, int n, std::vector<double>& d, std::vector<int>& v,
          std::vector<double>& z) {
    auto cross = [&](int q, int p) {
        return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
    };
    int k = 0;
    v[0] = 0;
    z[0] = -kFar;
    z[1] = kFar;
    for (int q = 1; q < n; ++q) {
        double s = cross(q, v[k]);
        while (s <= z[k]) {
            --k;
            s = cross(q, v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kFar;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        d[q] = (double(q) - v[k]) * (double(q) - v[k]) + f[v[k]];
    }
}

bool any_set(const std::vector<uint8_t>& b) {
    return std::any_of(b.begin(), b.end(), [](uint8_t x) { return x != 0; });
}

bool has_foreground(const Mask& m) {
    return std::any_of(m.v.begin(), m.v.end(), [](int32_t c) { return c > 0; });
}

nlohmann::json opt_num(double v) {
    return std::isnan(v) ? nlohmann::json() : nlohmann::json(v);
}

void fmt_cell(std::string& out, double v) {
    char buf[32];
    if (std::isnan(v))
        std::snprintf(buf, sizeof(buf), "%9s", "n/a");
    else
        std::snprintf(buf, sizeof(buf), "%9.2f", v);
    out += buf;
}

}  // namespace

std::pair<double, double> dice_jaccard(const Mask& pred, const Mask& gt, int num_classes) {
    check_internal(pred.h == gt.h && pred.w == gt.w, "dice_jaccard: mask shapes differ");
    check_internal(num_classes >= 2, "dice_jaccard: need a foreground class");
    long inter = 0, pred_mass = 0, gt_mass = 0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const int32_t p = pred.v[i], g = gt.v[i];
        if (p > 0 && p < num_classes) ++pred_mass;
        if (g > 0 && g < num_classes) ++gt_mass;
        if (p > 0 && p == g && p < num_classes) ++inter;
    }
    if (pred_mass + gt_mass == 0) return {100.0, 100.0};
    const double dice = 200.0 * double(inter) / double(pred_mass + gt_mass);
    const double uni = double(pred_mass + gt_mass - inter);
    const double jac = 100.0 * double(inter) / uni;
    return {dice, jac};
}

std::vector<uint8_t> boundary(const Mask& m) {
    std::vector<uint8_t> b(m.size(), 0);
    auto fg = [&](int y, int x) {
        return y >= 0 && y < m.h && x >= 0 && x < m.w && m.at(y, x) > 0;
    };
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x)
            if (m.at(y, x) > 0 &&
                (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1)))
                b[static_cast<size_t>(y) * m.w + x] = 1;
    return b;
}

std::vector<double> edt_squared(const std::vector<uint8_t>& set_cells, int h, int w) {
    check_internal(set_cells.size() == static_cast<size_t>(h) * w && h > 0 && w > 0,
                   "edt_squared: bad grid");
    std::vector<double> g(set_cells.size());
    for (size_t i = 0; i < g.size(); ++i) g[i] = set_cells[i] ? 0.0 : kFar;

    const int n = std::max(h, w);
    std::vector<double> f(n), d(n), z(n + 1);
    std::vector<int> v(n);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) f[x] = g[static_cast<size_t>(y) * w + x];
        dt1d(f, w, d, v, z);
        for (int x = 0; x < w; ++x) g[static_cast<size_t>(y) * w + x] = d[x];
    }
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) f[y] = g[static_cast<size_t>(y) * w + x];
        dt1d(f, h, d, v, z);
        for (int y = 0; y < h; ++y) g[static_cast<size_t>(y) * w + x] = d[y];
    }
    return g;
}

SurfaceDistances surface_distances(const Mask& pred, const Mask& gt) {
    check_internal(pred.h == gt.h && pred.w == gt.w, "surface_distances: mask shapes differ");
    SurfaceDistances out;
    const std::vector<uint8_t> bp = boundary(pred);
    const std::vector<uint8_t> bg = boundary(gt);
    if (!any_set(bp) || !any_set(bg)) return out;
    out.defined = true;
    const std::vector<double> to_gt = edt_squared(bg, pred.h, pred.w);
    const std::vector<double> to_pred = edt_squared(bp, pred.h, pred.w);
    for (size_t i = 0; i < bp.size(); ++i)
        if (bp[i]) out.d.push_back(std::sqrt(to_gt[i]));
    for (size_t i = 0; i < bg.size(); ++i)
        if (bg[i]) out.d.push_back(std::sqrt(to_pred[i]));
    std::sort(out.d.begin(), out.d.end());
    return out;
}

double percentile(const std::vector<double>& sorted_values, double pct) {
    check_internal(!sorted_values.empty(), "percentile of empty multiset");
    const size_t n = sorted_values.size();
    const double rank = pct / 100.0 * double(n - 1);
    const size_t lo = static_cast<size_t>(std::floor(rank));
    if (lo + 1 >= n) return sorted_values.back();
    const double frac = rank - double(lo);
    return sorted_values[lo] + frac * (sorted_values[lo + 1] - sorted_values[lo]);
}

double hd95(const std::vector<double>& sorted_distances) { return percentile(sorted_distances, 95.0); }

double asd(const std::vector<double>& distances) {
    check_internal(!distances.empty(), "asd of empty multiset");
    double s = 0.0;
    for (double x : distances) s += x;
    return s / double(distances.size());
}

MetricsReport evaluate_masks(const std::vector<Mask>& preds, const std::vector<Mask>& gts,
                             const std::vector<std::string>& ids, int num_classes) {
    check_internal(preds.size() == gts.size() && preds.size() == ids.size(),
                   "evaluate_masks: length mismatch");
    MetricsReport r;
    double dice_sum = 0.0, jac_sum = 0.0, hd_sum = 0.0, asd_sum = 0.0;
    long defined = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        SampleMetrics s;
        s.id = ids[i];
        std::tie(s.dice_pct, s.jaccard_pct) = dice_jaccard(preds[i], gts[i], num_classes);
        s.pred_empty = !has_foreground(preds[i]);
        s.target_empty = !has_foreground(gts[i]);
        const SurfaceDistances sd = surface_distances(preds[i], gts[i]);
        s.surface_defined = sd.defined;
        if (sd.defined) {
            s.hd95 = hd95(sd.d);
            s.asd = asd(sd.d);
            hd_sum += s.hd95;
            asd_sum += s.asd;
            ++defined;
        } else {
            ++r.surface_undefined;
        }
        if (s.pred_empty) ++r.empty_pred;
        if (s.target_empty) ++r.empty_target;
        dice_sum += s.dice_pct;
        jac_sum += s.jaccard_pct;
        r.samples.push_back(std::move(s));
    }
    if (!r.samples.empty()) {
        r.mean_dice_pct = dice_sum / double(r.samples.size());
        r.mean_jaccard_pct = jac_sum / double(r.samples.size());
    }
    if (defined > 0) {
        r.mean_hd95 = hd_sum / double(defined);
        r.mean_asd = asd_sum / double(defined);
    }
    return r;
}

Mask logits_to_mask(const ad::Tensor& logits, long b) {
    const auto& sh = logits.node()->shape;
    check_internal(sh.size() == 4 && b >= 0 && b < sh[0], "logits_to_mask: bad input");
    const long C = sh[1], H = sh[2], W = sh[3];
    const auto& v = logits.values();
    Mask m(static_cast<int>(H), static_cast<int>(W));
    const size_t plane = static_cast<size_t>(H) * W;
    for (size_t px = 0; px < plane; ++px) {
        long best = 0;
        double best_v = v[(static_cast<size_t>(b) * C) * plane + px];
        for (long c = 1; c < C; ++c) {
            const double x = v[(static_cast<size_t>(b) * C + c) * plane + px];
            if (x > best_v) {
                best_v = x;
                best = c;
            }
        }
        m.v[px] = static_cast<int32_t>(best);
    }
    return m;
}

MetricsReport evaluate_model(const UNet& net, const std::vector<SampleRecord>& data) {
    std::vector<Mask> preds, gts;
    std::vector<std::string> ids;
    preds.reserve(data.size());
    gts.reserve(data.size());
    ids.reserve(data.size());
    for (const SampleRecord& rec : data) {
        const ad::Tensor logits = net.forward_supervised(images_to_tensor({&rec.image}));
        preds.push_back(logits_to_mask(logits, 0));
        gts.push_back(rec.eval_only_mask());
        ids.push_back(rec.id);
    }
    return evaluate_masks(preds, gts, ids, net.config().num_classes);
}

std::string format_table(const MetricsReport& r) {
    std::string out = "id                        Dice(%)  Jaccard(%)     95HD      ASD\n";
    auto row = [&](const std::string& id, double d, double j, double h, double a) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%-24s", id.c_str());
        out += buf;
        fmt_cell(out, d);
        out += "  ";
        fmt_cell(out, j);
        fmt_cell(out, h);
        fmt_cell(out, a);
        out += "\n";
    };
    for (const SampleMetrics& s : r.samples) row(s.id, s.dice_pct, s.jaccard_pct, s.hd95, s.asd);
    row("mean", r.mean_dice_pct, r.mean_jaccard_pct, r.mean_hd95, r.mean_asd);
    return out;
}

void write_jsonl(const MetricsReport& r, const std::string& path) {
    std::ofstream out(path);
    check_data(out.good(), "cannot open " + path + " for writing");
    for (const SampleMetrics& s : r.samples) {
        const nlohmann::json j = {
            {"kind", "sample"},   {"id", s.id},
            {"dice_pct", s.dice_pct}, {"jaccard_pct", s.jaccard_pct},
            {"hd95", opt_num(s.hd95)}, {"asd", opt_num(s.asd)},
            {"surface_defined", s.surface_defined},
            {"pred_empty", s.pred_empty}, {"target_empty", s.target_empty},
        };
        out << j.dump() << "\n";
    }
    const nlohmann::json j = {
        {"kind", "summary"},
        {"count", r.samples.size()},
        {"mean_dice_pct", r.mean_dice_pct},
        {"mean_jaccard_pct", r.mean_jaccard_pct},
        {"mean_hd95", opt_num(r.mean_hd95)},
        {"mean_asd", opt_num(r.mean_asd)},
        {"empty_pred", r.empty_pred},
        {"empty_target", r.empty_target},
        {"surface_undefined", r.surface_undefined},
    };
    out << j.dump() << "\n";
    check_data(out.good(), "failed writing " + path);
}

}  // namespace crossmatch::metrics
