// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "crossmatch/config.hpp"
#include "crossmatch/rng.hpp"
#include "crossmatch/tensor.hpp"

namespace crossmatch {

struct FeaturePerturbSpec {
    PerturbKind kind = PerturbKind::none;
    double rate = 0.0;
    bool scale_correction = true;
};

// Encoder output: per-level skip features plus the bottleneck. Perturbation
// touches the bottleneck only; skips pass through untouched.
struct FeaturePyramid {
    std::vector<ad::Tensor> skips;  // finest resolution first
    ad::Tensor bottleneck;
};

// Applies the perturbation to a [B,C,h,w] feature map. The dropout pattern is
// constant w.r.t. differentiation, so the op is an exact affine map.
ad::Tensor perturb(const ad::Tensor& features, const FeaturePerturbSpec& spec, Rng& rng);

// Seed for block `block_index` of step `step_seed`; the batched and the
// one-block-at-a-time paths both draw from this, which is what makes them
// produce identical masks.
inline uint64_t block_seed(uint64_t step_seed, uint64_t block_index) {
    return substream(step_seed, 0xFEA7, block_index);
}

struct StackEntry {
    int block_index = 0;
    std::string stream;   // "w" or "s"
    std::string perturb;  // e.g. "channel_dropout:0.25"
};

struct StackedFeatures {
    FeaturePyramid features;  // batch axis holds k consecutive blocks
    std::vector<StackEntry> index;
    long per_block_batch = 0;
};

std::string perturb_label(const FeaturePerturbSpec& spec);

// Perturbs each designated source bottleneck with its own block seed and
// concatenates everything (skips included) along the batch axis.
StackedFeatures stack_for_decoder(const FeaturePyramid& h_w, const FeaturePyramid& h_s,
                                  const std::vector<std::pair<std::string, FeaturePerturbSpec>>& specs,
                                  uint64_t step_seed);

// Splits a [k*B, ...] tensor back into the blocks named by the index map.
std::vector<std::pair<StackEntry, ad::Tensor>> unstack(const ad::Tensor& stacked_out,
                                                       const StackedFeatures& sf);

}  // namespace crossmatch
