// SPDX-License-Identifier: Apache-2.0
//
// Summarizes a dataset: per-class pixel fractions, intensity bands and
// labeled/unlabeled counts. Accepts either a folder pair or a synthesis spec.
//
//   dataset_stats --data <dir> [num_classes]     (<dir>/images + <dir>/masks)
//   dataset_stats --spec <spec.json>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "crossmatch/datasets.hpp"

using namespace crossmatch;

int main(int argc, char** argv) {
    try {
        if (argc < 3) {
            std::fprintf(stderr, "usage: dataset_stats --data <dir> [num_classes] | --spec <json>\n");
            return 2;
        }
        std::vector<SampleRecord> recs;
        int num_classes = 2;
        if (std::strcmp(argv[1], "--spec") == 0) {
            std::ifstream in(argv[2], std::ios::binary);
            if (!in) {
                std::fprintf(stderr, "error: cannot read %s\n", argv[2]);
                return 3;
            }
            std::ostringstream ss;
            ss << in.rdbuf();
            const SynthSpec spec = parse_synth_spec(ss.str());
            num_classes = spec.num_classes;
            recs = synth_generate(spec);
        } else if (std::strcmp(argv[1], "--data") == 0) {
            num_classes = argc > 3 ? std::atoi(argv[3]) : 2;
            const std::string dir = argv[2];
            recs = load_folder(dir + "/images", dir + "/masks", num_classes);
        } else {
            std::fprintf(stderr, "error: expected --data or --spec\n");
            return 2;
        }
        if (recs.empty()) {
            std::fprintf(stderr, "error: no samples\n");
            return 3;
        }

        long labeled = 0;
        long total_px = 0;
        std::vector<long> class_px(static_cast<size_t>(num_classes), 0);
        double lo = 1.0, hi = 0.0, mean = 0.0;
        for (const auto& r : recs) {
            labeled += r.mask.has_value() ? 1 : 0;
            for (double v : r.image.v) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
                mean += v;
            }
            total_px += static_cast<long>(r.image.v.size());
            const Mask* m = r.mask ? &*r.mask : (r.quarantined_mask ? &*r.quarantined_mask : nullptr);
            if (!m) continue;
            for (auto c : m->v) class_px.at(c) += 1;
        }
        mean /= static_cast<double>(total_px);

        std::printf("samples            %zu (%ld labeled)\n", recs.size(), labeled);
        std::printf("frame              %dx%d\n", recs.front().image.h, recs.front().image.w);
        std::printf("intensity          min %.4f  mean %.4f  max %.4f\n", lo, mean, hi);
        long mask_px = 0;
        for (long c : class_px) mask_px += c;
        for (int c = 0; c < num_classes; ++c)
            std::printf("class %-2d fraction  %.4f\n", c,
                        mask_px ? static_cast<double>(class_px[static_cast<size_t>(c)]) /
                                      static_cast<double>(mask_px)
                                : 0.0);
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
