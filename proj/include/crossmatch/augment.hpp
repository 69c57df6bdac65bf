// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "crossmatch/array.hpp"
#include "crossmatch/config.hpp"
#include "crossmatch/rng.hpp"

namespace crossmatch {

enum class AugKind {
    flip_h,
    flip_v,
    rot90,
    crop_resize,
    brightness,
    contrast,
    gamma,
    gauss_blur,
    gauss_noise,
    cutmix,
};

// One applied operator with its realized parameters. Only gauss_noise uses
// `seed` (the per-pixel noise substream), everything else replays from params.
struct AugmentOp {
    AugKind kind;
    std::vector<double> params;
    uint64_t seed = 0;
};

// Ordered list of the ops that actually fired; skipped draws leave no entry.
struct AugmentTrace {
    std::vector<AugmentOp> ops;
};

// Box pasted from the partner view, needed to mix teacher maps the same way.
struct ViewMixInfo {
    bool active = false;
    int y0 = 0, x0 = 0, bh = 0, bw = 0;
};

struct WeakResult {
    Image image;
    std::optional<Mask> mask;
    AugmentTrace trace;
};

struct StrongResult {
    Image image;
    AugmentTrace trace;
    ViewMixInfo mix;
};

// Geometric jitter: flips (p=0.5 each), multiple-of-90-degree rotation,
// random zoom-crop with nearest resize. Mask transformed identically.
WeakResult weak_augment(const Image& image, const Mask* mask, const AugmentConfig& cfg, Rng& rng);

// Intensity jitter + optional CutMix with the partner's weak view; image-only.
StrongResult strong_augment(const Image& weak_image, const AugmentConfig& cfg, Rng& rng,
                            const Image* partner = nullptr);

struct UnlabeledViews {
    Image w, s1, s2;
    AugmentTrace trace_w, trace_s1, trace_s2;
    ViewMixInfo mix_s1, mix_s2;
};

UnlabeledViews make_unlabeled_views(const Image& x_u, const AugmentConfig& cfg, Rng& rng,
                                    const Image* partner_weak = nullptr);

// Deterministic re-application; bit-identical to the original output.
Image replay(const AugmentTrace& trace, const Image& input, const Image* partner = nullptr);
// Masks ride along with geometric ops only; an intensity op in the trace is a
// caller bug and raises an internal error.
Mask replay_mask(const AugmentTrace& trace, const Mask& input);

}  // namespace crossmatch
