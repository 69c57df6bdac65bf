// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <fstream>

#include "crossmatch/datasets.hpp"
#include "crossmatch/metrics.hpp"
#include "crossmatch/rng.hpp"

using namespace crossmatch;
namespace mx = crossmatch::metrics;

namespace {

Mask mask_from(const std::vector<std::string>& rows) {
    Mask m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) m.at(y, x) = rows[y][x] - '0';
    return m;
}

Mask random_mask(Rng& rng, int h, int w, int num_classes, double density) {
    Mask m(h, w);
    for (auto& v : m.v)
        if (rng.bernoulli(density)) v = static_cast<int32_t>(rng.randint(1, num_classes - 1));
    return m;
}

// quadratic-time reference: per cell, min squared distance to any set cell
std::vector<double> brute_edt_sq(const std::vector<uint8_t>& s, int h, int w) {
    std::vector<double> out(s.size(), 1e20);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            long best = -1;
            for (int sy = 0; sy < h; ++sy)
                for (int sx = 0; sx < w; ++sx)
                    if (s[static_cast<size_t>(sy) * w + sx]) {
                        const long d = static_cast<long>(y - sy) * (y - sy) +
                                       static_cast<long>(x - sx) * (x - sx);
                        if (best < 0 || d < best) best = d;
                    }
            if (best >= 0) out[static_cast<size_t>(y) * w + x] = double(best);
        }
    return out;
}

std::vector<double> brute_surface(const Mask& a, const Mask& b) {
    const auto ba = mx::boundary(a);
    const auto bb = mx::boundary(b);
    std::vector<std::pair<int, int>> pa, pb;
    for (int y = 0; y < a.h; ++y)
        for (int x = 0; x < a.w; ++x) {
            if (ba[static_cast<size_t>(y) * a.w + x]) pa.emplace_back(y, x);
            if (bb[static_cast<size_t>(y) * a.w + x]) pb.emplace_back(y, x);
        }
    std::vector<double> d;
    auto side = [&](const auto& from, const auto& to) {
        for (auto [y, x] : from) {
            long best = -1;
            for (auto [ty, tx] : to) {
                const long q = static_cast<long>(y - ty) * (y - ty) +
                               static_cast<long>(x - tx) * (x - tx);
                if (best < 0 || q < best) best = q;
            }
            d.push_back(std::sqrt(double(best)));
        }
    };
    side(pa, pb);
    side(pb, pa);
    std::sort(d.begin(), d.end());
    return d;
}

}  // namespace

TEST_CASE("dice and jaccard hand values") {
    const Mask a = mask_from({"110", "000"});
    CHECK(mx::dice_jaccard(a, a, 2) == std::pair{100.0, 100.0});

    const Mask b = mask_from({"011", "000"});
    auto [d, j] = mx::dice_jaccard(a, b, 2);  // share one of two pixels each
    CHECK(d == doctest::Approx(50.0).epsilon(1e-12));
    CHECK(j == doctest::Approx(100.0 / 3.0).epsilon(1e-12));

    const Mask c = mask_from({"000", "011"});
    CHECK(mx::dice_jaccard(a, c, 2) == std::pair{0.0, 0.0});

    const Mask empty = mask_from({"000", "000"});
    CHECK(mx::dice_jaccard(empty, empty, 2) == std::pair{100.0, 100.0});
    CHECK(mx::dice_jaccard(empty, a, 2) == std::pair{0.0, 0.0});
    CHECK(mx::dice_jaccard(a, empty, 2) == std::pair{0.0, 0.0});
}

TEST_CASE("class identity matters for overlap") {
    // same foreground shape, different class labels -> zero overlap
    const Mask p = mask_from({"10", "00"});
    const Mask g = mask_from({"20", "00"});
    CHECK(mx::dice_jaccard(p, g, 3) == std::pair{0.0, 0.0});
    const Mask two = mask_from({"12", "00"});
    CHECK(mx::dice_jaccard(two, two, 3) == std::pair{100.0, 100.0});
}

TEST_CASE("dice equals 2j over 1 plus j on every random sample") {
    Rng rng(101);
    for (int it = 0; it < 200; ++it) {
        const int h = static_cast<int>(rng.randint(1, 12));
        const int w = static_cast<int>(rng.randint(1, 12));
        const Mask p = random_mask(rng, h, w, 4, rng.uniform(0.0, 0.8));
        const Mask g = random_mask(rng, h, w, 4, rng.uniform(0.0, 0.8));
        auto [d, j] = mx::dice_jaccard(p, g, 4);
        CHECK(d >= 0.0);
        CHECK(d <= 100.0);
        CHECK(j <= d + 1e-12);
        CHECK(d == doctest::Approx(200.0 * j / (100.0 + j)).epsilon(1e-10));
    }
}

TEST_CASE("boundary extraction") {
    Mask block(5, 5);
    for (int y = 1; y <= 3; ++y)
        for (int x = 1; x <= 3; ++x) block.at(y, x) = 1;
    const auto b = mx::boundary(block);
    int count = 0;
    for (uint8_t v : b) count += v;
    CHECK(count == 8);                                 // ring; interior pixel excluded
    CHECK(b[2 * 5 + 2] == 0);                          // center
    CHECK(b[1 * 5 + 1] == 1);                          // corner of the block

    Mask full(4, 6, 1);  // image border counts as background
    const auto bf = mx::boundary(full);
    int cf = 0;
    for (uint8_t v : bf) cf += v;
    CHECK(cf == 4 * 6 - 2 * 4);

    Mask single(3, 3);
    single.at(1, 1) = 2;
    const auto bs = mx::boundary(single);
    CHECK(bs[1 * 3 + 1] == 1);
    int cs = 0;
    for (uint8_t v : bs) cs += v;
    CHECK(cs == 1);

    const auto be = mx::boundary(Mask(3, 3));
    for (uint8_t v : be) CHECK(v == 0);
}

TEST_CASE("distance transform equals brute force exactly") {
    Rng rng(102);
    for (int it = 0; it < 400; ++it) {
        const int h = static_cast<int>(rng.randint(1, 16));
        const int w = static_cast<int>(rng.randint(1, 16));
        std::vector<uint8_t> s(static_cast<size_t>(h) * w, 0);
        const double density = rng.uniform(0.0, 0.6);
        for (auto& v : s) v = rng.bernoulli(density) ? 1 : 0;
        const auto fast = mx::edt_squared(s, h, w);
        bool any = false;
        for (uint8_t v : s) any = any || v;
        if (!any) {
            for (double v : fast) CHECK(v >= 1e18);
            continue;
        }
        const auto slow = brute_edt_sq(s, h, w);
        for (size_t i = 0; i < fast.size(); ++i) CHECK(fast[i] == slow[i]);
    }

    // structured cases: lone corner seed and saturated grid
    std::vector<uint8_t> corner(12 * 7, 0);
    corner[0] = 1;
    const auto dc = mx::edt_squared(corner, 12, 7);
    for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 7; ++x) CHECK(dc[y * 7 + x] == double(y * y + x * x));
    const auto df = mx::edt_squared(std::vector<uint8_t>(6 * 6, 1), 6, 6);
    for (double v : df) CHECK(v == 0.0);
}

TEST_CASE("surface distances: hand cases, symmetry, brute force") {
    const Mask a = mask_from({"1000", "0000"});
    const Mask b = mask_from({"0001", "0000"});
    const auto sd = mx::surface_distances(a, b);
    REQUIRE(sd.defined);
    CHECK(sd.d == std::vector<double>{3.0, 3.0});

    const auto same = mx::surface_distances(a, a);
    REQUIRE(same.defined);
    for (double v : same.d) CHECK(v == 0.0);
    CHECK(same.d.size() == 2);  // one boundary pixel, both directions

    CHECK_FALSE(mx::surface_distances(Mask(2, 4), b).defined);
    CHECK_FALSE(mx::surface_distances(a, Mask(2, 4)).defined);
    CHECK_FALSE(mx::surface_distances(Mask(2, 4), Mask(2, 4)).defined);

    Rng rng(103);
    for (int it = 0; it < 200; ++it) {
        const int h = static_cast<int>(rng.randint(1, 16));
        const int w = static_cast<int>(rng.randint(1, 16));
        const Mask p = random_mask(rng, h, w, 3, rng.uniform(0.05, 0.7));
        const Mask g = random_mask(rng, h, w, 3, rng.uniform(0.05, 0.7));
        const auto fwd = mx::surface_distances(p, g);
        const auto rev = mx::surface_distances(g, p);
        CHECK(fwd.defined == rev.defined);
        if (!fwd.defined) continue;
        CHECK(fwd.d == rev.d);  // symmetric multiset
        CHECK(fwd.d == brute_surface(p, g));
    }
}

TEST_CASE("percentile, hd95, asd") {
    std::vector<double> seq(20);
    for (int i = 0; i < 20; ++i) seq[i] = double(i);
    CHECK(mx::hd95(seq) == doctest::Approx(18.05).epsilon(1e-12));
    CHECK(mx::percentile(seq, 0.0) == 0.0);
    CHECK(mx::percentile(seq, 100.0) == 19.0);
    CHECK(mx::percentile({4.25}, 95.0) == 4.25);
    CHECK(mx::percentile({1.0, 2.0, 3.0, 4.0}, 50.0) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(mx::asd({3.0, 3.0}) == 3.0);
    const std::vector<double> zeros(7, 0.0);
    CHECK(mx::hd95(zeros) == 0.0);
    CHECK(mx::asd(zeros) == 0.0);
}

TEST_CASE("evaluate_masks aggregates correctly") {
    const Mask gt = mask_from({"110", "000"});
    const Mask partial = mask_from({"011", "000"});
    std::vector<Mask> preds = {gt, Mask(2, 3), partial};
    std::vector<Mask> gts = {gt, gt, gt};
    const auto r = mx::evaluate_masks(preds, gts, {"exact", "blank", "shift"}, 2);
    REQUIRE(r.samples.size() == 3);
    CHECK(r.samples[0].dice_pct == 100.0);
    CHECK(r.samples[0].hd95 == 0.0);
    CHECK(r.samples[0].asd == 0.0);
    CHECK(r.samples[1].dice_pct == 0.0);
    CHECK_FALSE(r.samples[1].surface_defined);
    CHECK(std::isnan(r.samples[1].hd95));
    CHECK(r.empty_pred == 1);
    CHECK(r.empty_target == 0);
    CHECK(r.surface_undefined == 1);

    double dsum = 0.0, hsum = 0.0;
    long defined = 0;
    for (const auto& s : r.samples) {
        dsum += s.dice_pct;
        if (s.surface_defined) {
            hsum += s.hd95;
            ++defined;
        }
    }
    CHECK(r.mean_dice_pct == dsum / 3.0);
    CHECK(defined == 2);
    CHECK(r.mean_hd95 == hsum / 2.0);
}

TEST_CASE("logits argmax breaks ties toward the lower class") {
    const ad::Tensor logits =
        ad::Tensor::from_data({1, 3, 1, 2}, {0.5, 1.0, 0.5, 2.0, 0.2, 2.0}, false);
    // pixel 0: channels {0.5, 0.5, 0.2} -> class 0; pixel 1: {1.0, 2.0, 2.0} -> class 1
    const Mask m = mx::logits_to_mask(logits, 0);
    CHECK(m.v == std::vector<int32_t>{0, 1});
}

TEST_CASE("model evaluation matches the manual per-sample loop") {
    SynthSpec spec;
    spec.count = 4;
    spec.height = 24;
    spec.width = 24;
    spec.seed = 7;
    const auto data = synth_generate(spec);
    NetConfig nc;
    nc.base_width = 8;
    nc.depth = 2;
    const UNet net(nc, 11);

    const auto report = mx::evaluate_model(net, data);
    REQUIRE(report.samples.size() == 4);

    std::vector<Mask> preds, gts;
    std::vector<std::string> ids;
    for (const auto& rec : data) {
        preds.push_back(mx::logits_to_mask(net.forward_supervised(images_to_tensor({&rec.image})), 0));
        gts.push_back(rec.eval_only_mask());
        ids.push_back(rec.id);
    }
    const auto manual = mx::evaluate_masks(preds, gts, ids, nc.num_classes);
    CHECK(report.mean_dice_pct == manual.mean_dice_pct);
    CHECK(report.mean_jaccard_pct == manual.mean_jaccard_pct);
    for (size_t i = 0; i < 4; ++i) {
        CHECK(report.samples[i].id == data[i].id);
        CHECK(report.samples[i].dice_pct == manual.samples[i].dice_pct);
        CHECK(report.samples[i].jaccard_pct >= 0.0);
        CHECK(report.samples[i].jaccard_pct <= report.samples[i].dice_pct + 1e-12);
    }

    // oracle predictions score a perfect 100 with zero distances
    std::vector<Mask> oracle;
    for (const auto& rec : data) oracle.push_back(rec.eval_only_mask());
    const auto perfect = mx::evaluate_masks(oracle, gts, ids, nc.num_classes);
    CHECK(perfect.mean_dice_pct == 100.0);
    CHECK(perfect.mean_jaccard_pct == 100.0);
    CHECK(perfect.mean_hd95 == 0.0);
    CHECK(perfect.mean_asd == 0.0);
}

TEST_CASE("table and jsonl serialization") {
    const Mask gt = mask_from({"110", "000"});
    const auto r = mx::evaluate_masks({gt, Mask(2, 3)}, {gt, gt}, {"s0", "s1"}, 2);
    const std::string table = mx::format_table(r);
    CHECK(table.find("Dice(%)") != std::string::npos);
    CHECK(table.find("Dice(%)") < table.find("Jaccard(%)"));
    CHECK(table.find("Jaccard(%)") < table.find("95HD"));
    CHECK(table.find("95HD") < table.find("ASD"));
    CHECK(table.find("n/a") != std::string::npos);  // undefined distances
    CHECK(std::count(table.begin(), table.end(), '\n') == 4);  // header + 2 samples + mean

    const std::string path = "test_metrics_report.jsonl";
    mx::write_jsonl(r, path);
    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    std::vector<nlohmann::json> lines;
    while (std::getline(in, line)) lines.push_back(nlohmann::json::parse(line));
    REQUIRE(lines.size() == 3);
    CHECK(lines[0].at("id") == "s0");
    CHECK(lines[0].at("dice_pct") == 100.0);
    CHECK(lines[0].at("hd95") == 0.0);
    CHECK(lines[1].at("hd95").is_null());
    CHECK(lines[1].at("pred_empty") == true);
    CHECK(lines[2].at("kind") == "summary");
    CHECK(lines[2].at("count") == 2);
    CHECK(lines[2].at("surface_undefined") == 1);
    CHECK(lines[2].at("mean_hd95") == 0.0);
}
