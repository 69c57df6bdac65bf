// SPDX-License-Identifier: Apache-2.0
#include "crossmatch/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include "crossmatch/imgutil.hpp"
#include "crossmatch/png_io.hpp"
#include "crossmatch/rng.hpp"
#include "crossmatch/sha256.hpp"

namespace fs = std::filesystem;

namespace crossmatch {

namespace {

constexpr uint64_t kSplitTag = 0x5311;
constexpr uint64_t kLabeledPoolTag = 1;
constexpr uint64_t kUnlabeledPoolTag = 2;

bool point_in_polygon(const std::vector<double>& py, const std::vector<double>& px, double y, double x) {
    bool inside = false;
    const size_t n = py.size();
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        if ((py[i] > y) != (py[j] > y) &&
            x < (px[j] - px[i]) * (y - py[i]) / (py[j] - py[i]) + px[i])
            inside = !inside;
    }
    return inside;
}

struct Shape2D {
    int cls = 1;
    double intensity = 0.0;
    bool is_ellipse = true;
    // ellipse params
    double cy = 0, cx = 0, ry = 0, rx = 0, theta = 0;
    // polygon params
    std::vector<double> vy, vx;

    bool contains(double y, double x) const {
        if (is_ellipse) {
            const double dy = y - cy, dx = x - cx;
            const double c = std::cos(theta), s = std::sin(theta);
            const double u = dx * c + dy * s, v = -dx * s + dy * c;
            return (u / rx) * (u / rx) + (v / ry) * (v / ry) <= 1.0;
        }
        return point_in_polygon(vy, vx, y, x);
    }
};

Shape2D draw_shape(Rng& rng, int h, int w, int num_classes) {
    Shape2D s;
    s.cls = static_cast<int>(rng.randint(1, num_classes - 1));
    const double jitter = rng.uniform(-0.06, 0.06);
    s.intensity = 0.10 + 0.25 * static_cast<double>(s.cls) / (num_classes - 1) + jitter;
    s.is_ellipse = rng.bernoulli(0.5);
    s.cy = rng.uniform(0.25, 0.75) * (h - 1);
    s.cx = rng.uniform(0.25, 0.75) * (w - 1);
    if (s.is_ellipse) {
        s.ry = rng.uniform(0.10, 0.22) * h;
        s.rx = rng.uniform(0.10, 0.22) * w;
        s.theta = rng.uniform(0.0, std::numbers::pi);
    } else {
        const long k = rng.randint(3, 5);
        const double base_r = rng.uniform(0.12, 0.24) * std::min(h, w);
        for (long i = 0; i < k; ++i) {
            const double ang = 2.0 * std::numbers::pi * i / k + rng.uniform(-0.3, 0.3);
            const double r = base_r * rng.uniform(0.55, 1.0);
            s.vy.push_back(s.cy + r * std::sin(ang));
            s.vx.push_back(s.cx + r * std::cos(ang));
        }
    }
    return s;
}

}  // namespace

std::vector<SampleRecord> synth_generate(const SynthSpec& spec) {
    check_config(spec.height >= 8 && spec.width >= 8, "synth spec dimensions too small");
    check_config(spec.num_classes >= 2, "synth spec needs >= 2 classes");
    std::vector<SampleRecord> out;
    out.reserve(spec.count);
    for (int i = 0; i < spec.count; ++i) {
        Rng rng(substream(spec.seed, static_cast<uint64_t>(i)));
        const double base = rng.uniform(0.10, 0.30);
        const long nshapes = rng.randint(spec.shapes_min, spec.shapes_max);

        Image clean(1, spec.height, spec.width, base);
        Mask mask(spec.height, spec.width, 0);
        for (long sidx = 0; sidx < nshapes; ++sidx) {
            const Shape2D s = draw_shape(rng, spec.height, spec.width, spec.num_classes);
            for (int y = 0; y < spec.height; ++y)
                for (int x = 0; x < spec.width; ++x)
                    if (s.contains(y, x)) {
                        mask.at(y, x) = s.cls;
                        clean.at(0, y, x) = base + s.intensity;
                    }
        }
        bool any_fg = false;
        for (auto v : mask.v) any_fg = any_fg || v != 0;
        check_internal(any_fg, "synthetic mask unexpectedly empty");

        Image img = gaussian_blur(clean, spec.blur_sigma);
        if (spec.noise_sigma > 0.0)
            for (auto& v : img.v) v += rng.normal(0.0, spec.noise_sigma);
        quantize16(img);

        char id[32];
        std::snprintf(id, sizeof(id), "synth_%05d", i);
        SampleRecord rec;
        rec.id = id;
        rec.image = std::move(img);
        rec.mask = std::move(mask);
        rec.labeled = true;
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<SampleRecord> load_folder(const std::string& images_dir, const std::string& masks_dir,
                                      int num_classes) {
    check_config(num_classes >= 2, "num_classes must be >= 2");
    std::vector<SampleRecord> out;
    if (!fs::is_directory(images_dir)) {
        std::fprintf(stderr, "warning: image directory %s does not exist or is empty\n",
                     images_dir.c_str());
        return out;
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(images_dir))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        std::fprintf(stderr, "warning: no PNG files in %s\n", images_dir.c_str());
        return out;
    }
    const bool have_masks = !masks_dir.empty() && fs::is_directory(masks_dir);
    for (const auto& p : files) {
        SampleRecord rec;
        rec.id = p.stem().string();
        rec.image = pngio::read_image(p.string());
        if (have_masks) {
            const fs::path mp = fs::path(masks_dir) / (rec.id + ".png");
            check_data(fs::exists(mp), "missing mask for labeled sample " + rec.id);
            Mask m = pngio::read_mask(mp.string());
            check_data(m.h == rec.image.h && m.w == rec.image.w,
                       "image/mask shape mismatch for " + rec.id);
            for (auto v : m.v)
                check_data(v >= 0 && v < num_classes, "class id out of range in mask " + rec.id);
            rec.mask = std::move(m);
            rec.labeled = true;
        }
        out.push_back(std::move(rec));
    }
    return out;
}

std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> make_split(
    const std::vector<SampleRecord>& records, const SplitSpec& spec) {
    check_config(spec.labeled_fraction > 0.0 && spec.labeled_fraction <= 1.0,
                 "labeled_fraction must be in (0,1]");
    const long n = static_cast<long>(records.size());
    const long n_lab = std::llround(spec.labeled_fraction * static_cast<double>(n));
    check_config(n_lab >= 1, "labeled_fraction selects zero samples");

    std::vector<long> idx(n);
    for (long i = 0; i < n; ++i) idx[i] = i;
    Rng rng(substream(spec.seed, kSplitTag));
    for (long i = n - 1; i > 0; --i) {
        const long j = rng.randint(0, i);
        std::swap(idx[i], idx[j]);
    }
    std::vector<bool> is_labeled(n, false);
    for (long i = 0; i < n_lab; ++i) is_labeled[idx[i]] = true;

    std::vector<SampleRecord> labeled, unlabeled;
    for (long i = 0; i < n; ++i) {
        SampleRecord rec = records[i];
        if (is_labeled[i]) {
            check_data(rec.mask.has_value(), "labeled split assigned to sample without mask: " + rec.id);
            rec.labeled = true;
            labeled.push_back(std::move(rec));
        } else {
            // Ground truth moves behind the quarantine accessor.
            if (rec.mask) {
                rec.quarantined_mask = std::move(rec.mask);
                rec.mask.reset();
            }
            rec.labeled = false;
            unlabeled.push_back(std::move(rec));
        }
    }
    return {std::move(labeled), std::move(unlabeled)};
}

BatchSchedule::BatchSchedule(long n_labeled, long n_unlabeled, int batch_size, long iterations,
                             uint64_t seed)
    : n_labeled_(n_labeled), n_unlabeled_(n_unlabeled), iterations_(iterations), seed_(seed) {
    check_config(batch_size >= 1, "batch_size must be >= 1");
    if (n_unlabeled > 0)
        check_config(batch_size >= 2 && batch_size % 2 == 0,
                     "batch_size must be even and >= 2 when unlabeled data is scheduled");
    check_config(n_labeled >= 1, "labeled pool is empty");
    check_config(iterations >= 0, "iterations must be >= 0");
    // with no unlabeled pool the whole batch draws from the labeled pool
    half_ = n_unlabeled > 0 ? batch_size / 2 : batch_size;
}

namespace {

long scheduled_index(uint64_t seed, uint64_t pool_tag, long pool_size, long draw) {
    const long epoch = draw / pool_size;
    const long pos = draw % pool_size;
    std::vector<long> perm(pool_size);
    for (long i = 0; i < pool_size; ++i) perm[i] = i;
    Rng rng(substream(seed, pool_tag, static_cast<uint64_t>(epoch)));
    for (long i = pool_size - 1; i > 0; --i) {
        const long j = rng.randint(0, i);
        std::swap(perm[i], perm[j]);
    }
    return perm[pos];
}

}  // namespace

BatchSchedule::Batch BatchSchedule::batch_at(long step) const {
    check_internal(step >= 0 && step < iterations_, "schedule step out of range");
    Batch b;
    for (int k = 0; k < half_; ++k)
        b.labeled.push_back(scheduled_index(seed_, kLabeledPoolTag, n_labeled_, step * half_ + k));
    if (n_unlabeled_ > 0)
        for (int k = 0; k < half_; ++k)
            b.unlabeled.push_back(
                scheduled_index(seed_, kUnlabeledPoolTag, n_unlabeled_, step * half_ + k));
    return b;
}

void save_dataset(const std::vector<SampleRecord>& records, const std::string& out_dir) {
    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "masks");
    for (const auto& rec : records) {
        pngio::write_image16((fs::path(out_dir) / "images" / (rec.id + ".png")).string(), rec.image);
        const Mask* m = rec.mask ? &*rec.mask : (rec.quarantined_mask ? &*rec.quarantined_mask : nullptr);
        if (m) pngio::write_mask8((fs::path(out_dir) / "masks" / (rec.id + ".png")).string(), *m);
    }
}

std::string dataset_fingerprint(const std::vector<SampleRecord>& records) {
    Sha256 h;
    auto put_u32 = [&h](uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
        h.update(b, 4);
    };
    for (const auto& rec : records) {
        h.update(rec.id.data(), rec.id.size());
        h.update("\0I", 2);
        put_u32(static_cast<uint32_t>(rec.image.h));
        put_u32(static_cast<uint32_t>(rec.image.w));
        for (double v : rec.image.v) {
            const uint16_t q = static_cast<uint16_t>(std::lround(clip01(v) * 65535.0));
            unsigned char b[2] = {static_cast<unsigned char>(q), static_cast<unsigned char>(q >> 8)};
            h.update(b, 2);
        }
        const Mask* m = rec.mask ? &*rec.mask : (rec.quarantined_mask ? &*rec.quarantined_mask : nullptr);
        if (m) {
            h.update("M", 1);
            put_u32(static_cast<uint32_t>(m->h));
            put_u32(static_cast<uint32_t>(m->w));
            for (int32_t v : m->v) put_u32(static_cast<uint32_t>(v));
        } else {
            h.update("-", 1);
        }
    }
    return h.hex_digest();
}

}  // namespace crossmatch
