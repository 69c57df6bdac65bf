// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crossmatch/array.hpp"
#include "crossmatch/config.hpp"

namespace crossmatch {

struct SampleRecord {
    std::string id;
    Image image;
    std::optional<Mask> mask;  // visible to the training path
    bool labeled = false;
    // Ground truth withheld from training after an unlabeled split assignment;
    // reachable only through eval_only_mask() for oracle evaluation.
    std::optional<Mask> quarantined_mask;

    const Mask& eval_only_mask() const {
        if (mask) return *mask;
        check_data(quarantined_mask.has_value(), "sample " + id + " has no ground truth");
        return *quarantined_mask;
    }
};

std::vector<SampleRecord> synth_generate(const SynthSpec& spec);

// Pairs <images_dir>/*.png with <masks_dir>/<same stem>.png. With a
// nonexistent/empty masks_dir every record is unlabeled.
std::vector<SampleRecord> load_folder(const std::string& images_dir, const std::string& masks_dir,
                                      int num_classes);

std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> make_split(
    const std::vector<SampleRecord>& records, const SplitSpec& spec);

// Stateless batch plan: batch_at(k) is a pure function of (sizes, seed, k),
// so resumed runs see exactly the schedule of an uninterrupted run.
class BatchSchedule {
public:
    BatchSchedule(long n_labeled, long n_unlabeled, int batch_size, long iterations, uint64_t seed);

    struct Batch {
        std::vector<long> labeled;
        std::vector<long> unlabeled;
    };
    Batch batch_at(long step) const;
    long iterations() const { return iterations_; }
    int half() const { return half_; }

private:
    long n_labeled_, n_unlabeled_, iterations_;
    int half_;
    uint64_t seed_;
};

void save_dataset(const std::vector<SampleRecord>& records, const std::string& out_dir);
std::string dataset_fingerprint(const std::vector<SampleRecord>& records);

}  // namespace crossmatch
