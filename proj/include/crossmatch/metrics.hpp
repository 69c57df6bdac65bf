// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "crossmatch/array.hpp"
#include "crossmatch/datasets.hpp"
#include "crossmatch/model.hpp"

namespace crossmatch::metrics {

// Overlap percentages pooled over foreground classes (intersections and
// cardinalities summed before the ratio) so dice = 2j/(1+j) holds exactly per
// sample. Both-empty pairs score 100/100 by convention.
std::pair<double, double> dice_jaccard(const Mask& pred, const Mask& gt, int num_classes);

// Foreground pixels (class > 0, any class) with a 4-neighbour outside the
// foreground; the image border counts as background.
std::vector<uint8_t> boundary(const Mask& m);

// Exact squared Euclidean distance transform to the nearest set cell, unit
// spacing. Cells unreachable from any set cell come back >= 1e18.
std::vector<double> edt_squared(const std::vector<uint8_t>& set_cells, int h, int w);

// Bidirectional boundary-to-boundary distances. Undefined (and empty) when
// either mask has no foreground; such samples are excluded from distance
// means and counted separately.
struct SurfaceDistances {
    bool defined = false;
    std::vector<double> d;  // both directions combined, sorted ascending
};
SurfaceDistances surface_distances(const Mask& pred, const Mask& gt);

// Linear interpolation between order statistics: rank = pct/100 * (n-1).
double percentile(const std::vector<double>& sorted_values, double pct);
double hd95(const std::vector<double>& sorted_distances);
double asd(const std::vector<double>& distances);

struct SampleMetrics {
    std::string id;
    double dice_pct = 0.0;
    double jaccard_pct = 0.0;
    double hd95 = std::numeric_limits<double>::quiet_NaN();
    double asd = std::numeric_limits<double>::quiet_NaN();
    bool surface_defined = false;
    bool pred_empty = false;
    bool target_empty = false;
};

struct MetricsReport {
    std::vector<SampleMetrics> samples;
    double mean_dice_pct = 0.0;
    double mean_jaccard_pct = 0.0;
    // Means over surface-defined samples only; NaN when none are defined.
    double mean_hd95 = std::numeric_limits<double>::quiet_NaN();
    double mean_asd = std::numeric_limits<double>::quiet_NaN();
    long empty_pred = 0;
    long empty_target = 0;
    long surface_undefined = 0;
};

MetricsReport evaluate_masks(const std::vector<Mask>& preds, const std::vector<Mask>& gts,
                             const std::vector<std::string>& ids, int num_classes);

// Argmax prediction of the plain unperturbed forward pass, one image at a
// time, scored against the ground truth (quarantined masks included).
MetricsReport evaluate_model(const UNet& net, const std::vector<SampleRecord>& data);

// Per-pixel argmax over channels of sample b; ties resolve to the lower class.
Mask logits_to_mask(const ad::Tensor& logits, long b);

// Fixed-width table in the reporting column order Dice, Jaccard, 95HD, ASD.
std::string format_table(const MetricsReport& r);

// One JSON object per sample plus a trailing summary object. Undefined
// distances serialize as null.
void write_jsonl(const MetricsReport& r, const std::string& path);

}  // namespace crossmatch::metrics
