// SPDX-License-Identifier: Apache-2.0
#include "crossmatch/augment.hpp"

#include <cmath>

#include "crossmatch/imgutil.hpp"

namespace crossmatch {

namespace {

Image flip_h_img(const Image& in) {
    Image out(in.c, in.h, in.w);
    for (int c = 0; c < in.c; ++c)
        for (int y = 0; y < in.h; ++y)
            for (int x = 0; x < in.w; ++x) out.at(c, y, x) = in.at(c, y, in.w - 1 - x);
    return out;
}

Image flip_v_img(const Image& in) {
    Image out(in.c, in.h, in.w);
    for (int c = 0; c < in.c; ++c)
        for (int y = 0; y < in.h; ++y)
            for (int x = 0; x < in.w; ++x) out.at(c, y, x) = in.at(c, in.h - 1 - y, x);
    return out;
}

// k counterclockwise quarter turns; k in {1,3} requires a square image.
Image rot90_img(const Image& in, int k) {
    check_internal(k >= 1 && k <= 3, "rot90 k out of range");
    check_internal(k == 2 || in.h == in.w, "quarter turn on non-square image");
    Image out(in.c, in.h, in.w);
    for (int c = 0; c < in.c; ++c)
        for (int y = 0; y < in.h; ++y)
            for (int x = 0; x < in.w; ++x) {
                double v;
                if (k == 1)
                    v = in.at(c, x, in.w - 1 - y);
                else if (k == 2)
                    v = in.at(c, in.h - 1 - y, in.w - 1 - x);
                else
                    v = in.at(c, in.h - 1 - x, y);
                out.at(c, y, x) = v;
            }
    return out;
}

// params: {y0, x0, win_h, win_w, out_h, out_w}; nearest-neighbor resize so
// values are copied, never blended (keeps mask/image correspondence exact).
Image crop_resize_img(const Image& in, const std::vector<double>& p) {
    check_internal(p.size() == 6, "crop_resize params");
    const int y0 = static_cast<int>(p[0]), x0 = static_cast<int>(p[1]);
    const int wh = static_cast<int>(p[2]), ww = static_cast<int>(p[3]);
    const int oh = static_cast<int>(p[4]), ow = static_cast<int>(p[5]);
    check_internal(y0 >= 0 && x0 >= 0 && wh >= 1 && ww >= 1 && y0 + wh <= in.h && x0 + ww <= in.w,
                   "crop window outside image");
    Image out(in.c, oh, ow);
    for (int c = 0; c < in.c; ++c)
        for (int y = 0; y < oh; ++y) {
            const int sy = y0 + std::min(wh - 1, static_cast<int>((y + 0.5) * wh / oh));
            for (int x = 0; x < ow; ++x) {
                const int sx = x0 + std::min(ww - 1, static_cast<int>((x + 0.5) * ww / ow));
                out.at(c, y, x) = in.at(c, sy, sx);
            }
        }
    return out;
}

Mask apply_geom_mask(const AugmentOp& op, const Mask& in) {
    // Reuse the image kernels through a value-preserving cast; ids survive the
    // double round trip exactly (they are small integers).
    Image tmp(1, in.h, in.w);
    for (size_t i = 0; i < in.v.size(); ++i) tmp.v[i] = static_cast<double>(in.v[i]);
    Image moved;
    switch (op.kind) {
        case AugKind::flip_h: moved = flip_h_img(tmp); break;
        case AugKind::flip_v: moved = flip_v_img(tmp); break;
        case AugKind::rot90: moved = rot90_img(tmp, static_cast<int>(op.params.at(0))); break;
        case AugKind::crop_resize: moved = crop_resize_img(tmp, op.params); break;
        default: check_internal(false, "intensity op applied to a mask"); return in;
    }
    Mask out(moved.h, moved.w);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = static_cast<int32_t>(moved.v[i]);
    return out;
}

Image apply_op(const AugmentOp& op, const Image& in, const Image* partner) {
    switch (op.kind) {
        case AugKind::flip_h:
            return flip_h_img(in);
        case AugKind::flip_v:
            return flip_v_img(in);
        case AugKind::rot90:
            return rot90_img(in, static_cast<int>(op.params.at(0)));
        case AugKind::crop_resize:
            return crop_resize_img(in, op.params);
        case AugKind::brightness: {
            Image out = in;
            for (auto& v : out.v) v = clip01(v + op.params.at(0));
            return out;
        }
        case AugKind::contrast: {
            Image out = in;
            for (auto& v : out.v) v = clip01(0.5 + op.params.at(0) * (v - 0.5));
            return out;
        }
        case AugKind::gamma: {
            Image out = in;
            for (auto& v : out.v) v = clip01(std::pow(clip01(v), op.params.at(0)));
            return out;
        }
        case AugKind::gauss_blur: {
            Image out = gaussian_blur(in, op.params.at(0));
            clip01_inplace(out);
            return out;
        }
        case AugKind::gauss_noise: {
            Image out = in;
            Rng noise(op.seed);
            const double sigma = op.params.at(0);
            for (auto& v : out.v) v = clip01(v + noise.normal(0.0, sigma));
            return out;
        }
        case AugKind::cutmix: {
            check_internal(partner != nullptr, "cutmix replay without partner");
            check_internal(partner->c == in.c && partner->h == in.h && partner->w == in.w,
                           "cutmix partner shape mismatch");
            Image out = in;
            const int y0 = static_cast<int>(op.params.at(0)), x0 = static_cast<int>(op.params.at(1));
            const int bh = static_cast<int>(op.params.at(2)), bw = static_cast<int>(op.params.at(3));
            check_internal(y0 >= 0 && x0 >= 0 && y0 + bh <= in.h && x0 + bw <= in.w, "cutmix box");
            for (int c = 0; c < in.c; ++c)
                for (int y = y0; y < y0 + bh; ++y)
                    for (int x = x0; x < x0 + bw; ++x) out.at(c, y, x) = partner->at(c, y, x);
            return out;
        }
    }
    check_internal(false, "unhandled augment op");
    return in;
}

}  // namespace

WeakResult weak_augment(const Image& image, const Mask* mask, const AugmentConfig& cfg, Rng& rng) {
    check_data(image.h >= 1 && image.w >= 1, "empty image");
    const bool crop_configured = cfg.crop_h > 0 && cfg.crop_w > 0;
    check_config(!crop_configured || (cfg.crop_h <= image.h && cfg.crop_w <= image.w),
                 "crop size larger than image");

    WeakResult res;
    res.image = image;
    if (mask) {
        check_data(mask->h == image.h && mask->w == image.w, "image/mask shape mismatch");
        res.mask = *mask;
    }

    AugmentTrace& tr = res.trace;
    auto emit = [&](AugmentOp op) {
        res.image = apply_op(op, res.image, nullptr);
        if (res.mask) res.mask = apply_geom_mask(op, *res.mask);
        tr.ops.push_back(std::move(op));
    };

    if (rng.bernoulli(0.5)) emit({AugKind::flip_h, {}, 0});
    if (rng.bernoulli(0.5)) emit({AugKind::flip_v, {}, 0});
    // non-square frames only admit half turns
    const long k = image.h == image.w ? rng.randint(0, 3) : 2 * rng.randint(0, 1);
    if (k > 0) emit({AugKind::rot90, {static_cast<double>(k)}, 0});

    const int out_h = crop_configured ? cfg.crop_h : res.image.h;
    const int out_w = crop_configured ? cfg.crop_w : res.image.w;
    const bool size_change = out_h != res.image.h || out_w != res.image.w;
    // Mandatory when the configured size differs from the frame; otherwise a
    // 50% zoom-in jitter (identity stays reachable, per the op contract).
    if (size_change || rng.bernoulli(0.5)) {
        const double f_max = std::min(static_cast<double>(res.image.h) / out_h,
                                      static_cast<double>(res.image.w) / out_w);
        const double f = size_change ? rng.uniform(1.0, f_max) : rng.uniform(0.75, 1.0);
        const int wh = std::clamp(static_cast<int>(std::lround(f * out_h)), 1, res.image.h);
        const int ww = std::clamp(static_cast<int>(std::lround(f * out_w)), 1, res.image.w);
        const long y0 = rng.randint(0, res.image.h - wh);
        const long x0 = rng.randint(0, res.image.w - ww);
        if (wh != out_h || ww != out_w || y0 != 0 || x0 != 0)
            emit({AugKind::crop_resize,
                  {static_cast<double>(y0), static_cast<double>(x0), static_cast<double>(wh),
                   static_cast<double>(ww), static_cast<double>(out_h), static_cast<double>(out_w)},
                  0});
    }
    return res;
}

StrongResult strong_augment(const Image& weak_image, const AugmentConfig& cfg, Rng& rng,
                            const Image* partner) {
    StrongResult res;
    res.image = weak_image;
    auto emit = [&](AugmentOp op) {
        res.image = apply_op(op, res.image, partner);
        res.trace.ops.push_back(std::move(op));
    };

    if (rng.bernoulli(cfg.strong_prob))
        emit({AugKind::brightness, {rng.uniform(-cfg.brightness, cfg.brightness)}, 0});
    if (rng.bernoulli(cfg.strong_prob))
        emit({AugKind::contrast, {rng.uniform(cfg.contrast_lo, cfg.contrast_hi)}, 0});
    if (rng.bernoulli(cfg.strong_prob))
        emit({AugKind::gamma, {rng.uniform(cfg.gamma_lo, cfg.gamma_hi)}, 0});
    if (rng.bernoulli(cfg.strong_prob))
        emit({AugKind::gauss_blur, {rng.uniform(0.0, cfg.blur_sigma_max)}, 0});
    if (rng.bernoulli(cfg.strong_prob)) {
        const double sigma = rng.uniform(0.0, cfg.noise_sigma_max);
        emit({AugKind::gauss_noise, {sigma}, rng.next_u64()});
    }
    if (cfg.cutmix && partner && rng.bernoulli(cfg.strong_prob)) {
        const double lam = rng.uniform(0.0, 1.0);
        const int bh = static_cast<int>(std::lround(weak_image.h * std::sqrt(1.0 - lam)));
        const int bw = static_cast<int>(std::lround(weak_image.w * std::sqrt(1.0 - lam)));
        if (bh > 0 && bw > 0) {
            const long y0 = rng.randint(0, weak_image.h - bh);
            const long x0 = rng.randint(0, weak_image.w - bw);
            emit({AugKind::cutmix,
                  {static_cast<double>(y0), static_cast<double>(x0), static_cast<double>(bh),
                   static_cast<double>(bw)},
                  0});
            res.mix = {true, static_cast<int>(y0), static_cast<int>(x0), bh, bw};
        }
    }
    return res;
}

UnlabeledViews make_unlabeled_views(const Image& x_u, const AugmentConfig& cfg, Rng& rng,
                                    const Image* partner_weak) {
    UnlabeledViews v;
    WeakResult w = weak_augment(x_u, nullptr, cfg, rng);
    v.w = std::move(w.image);
    v.trace_w = std::move(w.trace);
    StrongResult s1 = strong_augment(v.w, cfg, rng, partner_weak);
    StrongResult s2 = strong_augment(v.w, cfg, rng, partner_weak);
    v.s1 = std::move(s1.image);
    v.trace_s1 = std::move(s1.trace);
    v.mix_s1 = s1.mix;
    v.s2 = std::move(s2.image);
    v.trace_s2 = std::move(s2.trace);
    v.mix_s2 = s2.mix;
    return v;
}

Image replay(const AugmentTrace& trace, const Image& input, const Image* partner) {
    Image out = input;
    for (const auto& op : trace.ops) out = apply_op(op, out, partner);
    return out;
}

Mask replay_mask(const AugmentTrace& trace, const Mask& input) {
    Mask out = input;
    for (const auto& op : trace.ops) out = apply_geom_mask(op, out);
    return out;
}

}  // namespace crossmatch
