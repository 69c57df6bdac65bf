// SPDX-License-Identifier: Apache-2.0
#include "crossmatch/featperturb.hpp"

#include <cmath>
#include <cstdio>

namespace crossmatch {

namespace {

// -lambda*alpha of SELU; dropped activations saturate here.
constexpr double kAlphaPrime = -1.7580993408473766;

void dims4(const ad::Tensor& t, long& b, long& c, long& h, long& w) {
    const auto& s = t.node()->shape;
    check_internal(s.size() == 4, "expected a [B,C,h,w] feature map");
    b = s[0];
    c = s[1];
    h = s[2];
    w = s[3];
}

}  // namespace

ad::Tensor perturb(const ad::Tensor& features, const FeaturePerturbSpec& spec, Rng& rng) {
    check_config(spec.rate >= 0.0 && spec.rate < 1.0, "perturb rate must be in [0,1)");
    if (spec.kind == PerturbKind::none || spec.rate == 0.0) return features;

    long b, c, h, w;
    dims4(features, b, c, h, w);
    const size_t n = features.node()->numel();
    const size_t plane = static_cast<size_t>(h) * w;
    std::vector<double> scale(n, 1.0), shift(n, 0.0);

    const double p = spec.rate, q = 1.0 - p;
    switch (spec.kind) {
        case PerturbKind::channel_dropout: {
            const double keep = spec.scale_correction ? 1.0 / q : 1.0;
            for (long bi = 0; bi < b; ++bi)
                for (long ci = 0; ci < c; ++ci) {
                    const double s = rng.bernoulli(p) ? 0.0 : keep;
                    const size_t base = (static_cast<size_t>(bi) * c + ci) * plane;
                    std::fill(scale.begin() + base, scale.begin() + base + plane, s);
                }
            break;
        }
        case PerturbKind::alpha_dropout:
        case PerturbKind::feature_alpha_dropout: {
            const double a =
                spec.scale_correction ? 1.0 / std::sqrt(q + kAlphaPrime * kAlphaPrime * p * q) : 1.0;
            const double bias = spec.scale_correction ? -a * kAlphaPrime * p : 0.0;
            const double drop_shift = a * kAlphaPrime + bias;
            if (spec.kind == PerturbKind::alpha_dropout) {
                for (size_t i = 0; i < n; ++i) {
                    if (rng.bernoulli(p)) {
                        scale[i] = 0.0;
                        shift[i] = drop_shift;
                    } else {
                        scale[i] = a;
                        shift[i] = bias;
                    }
                }
            } else {
                for (long bi = 0; bi < b; ++bi)
                    for (long ci = 0; ci < c; ++ci) {
                        const bool drop = rng.bernoulli(p);
                        const size_t base = (static_cast<size_t>(bi) * c + ci) * plane;
                        std::fill(scale.begin() + base, scale.begin() + base + plane, drop ? 0.0 : a);
                        std::fill(shift.begin() + base, shift.begin() + base + plane,
                                  drop ? drop_shift : bias);
                    }
            }
            break;
        }
        case PerturbKind::none:
            break;
    }
    return ad::scale_shift(features, std::move(scale), std::move(shift));
}

std::string perturb_label(const FeaturePerturbSpec& spec) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s:%g", perturb_kind_name(spec.kind).c_str(), spec.rate);
    return buf;
}

StackedFeatures stack_for_decoder(const FeaturePyramid& h_w, const FeaturePyramid& h_s,
                                  const std::vector<std::pair<std::string, FeaturePerturbSpec>>& specs,
                                  uint64_t step_seed) {
    check_internal(!specs.empty(), "stack_for_decoder needs at least one block");
    check_internal(h_w.skips.size() == h_s.skips.size(), "pyramid depth mismatch");
    check_internal(h_w.bottleneck.node()->shape == h_s.bottleneck.node()->shape,
                   "bottleneck shape mismatch");
    for (size_t l = 0; l < h_w.skips.size(); ++l)
        check_internal(h_w.skips[l].node()->shape == h_s.skips[l].node()->shape,
                       "skip shape mismatch");

    StackedFeatures out;
    out.per_block_batch = h_w.bottleneck.node()->shape[0];
    std::vector<ad::Tensor> bots;
    std::vector<std::vector<ad::Tensor>> skips(h_w.skips.size());
    for (size_t i = 0; i < specs.size(); ++i) {
        const auto& [stream, spec] = specs[i];
        check_internal(stream == "w" || stream == "s", "unknown feature stream " + stream);
        const FeaturePyramid& src = stream == "w" ? h_w : h_s;
        Rng rng(block_seed(step_seed, i));
        bots.push_back(perturb(src.bottleneck, spec, rng));
        for (size_t l = 0; l < src.skips.size(); ++l) skips[l].push_back(src.skips[l]);
        // blocks are identified by position; two blocks may legitimately share
        // a (stream, label) key, e.g. when both rates degenerate to zero
        out.index.push_back({static_cast<int>(i), stream, perturb_label(spec)});
    }
    out.features.bottleneck = ad::concat_batch(bots);
    for (auto& level : skips) out.features.skips.push_back(ad::concat_batch(level));
    return out;
}

std::vector<std::pair<StackEntry, ad::Tensor>> unstack(const ad::Tensor& stacked_out,
                                                       const StackedFeatures& sf) {
    const long k = static_cast<long>(sf.index.size());
    check_internal(k >= 1 && sf.per_block_batch >= 1, "empty stack index map");
    for (long i = 0; i < k; ++i)
        check_internal(sf.index[i].block_index == i, "stack index map out of order");
    check_internal(stacked_out.node()->shape[0] == k * sf.per_block_batch,
                   "stacked batch does not match index map");
    std::vector<std::pair<StackEntry, ad::Tensor>> blocks;
    for (long i = 0; i < k; ++i)
        blocks.push_back(
            {sf.index[i], ad::slice_batch(stacked_out, i * sf.per_block_batch, sf.per_block_batch)});
    return blocks;
}

}  // namespace crossmatch
