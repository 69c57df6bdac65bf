// SPDX-License-Identifier: Apache-2.0
#include "crossmatch/model.hpp"

#include <cmath>

namespace crossmatch {

using ad::Tensor;

UNet::Conv UNet::make_conv(const std::string& name, long cout, long cin, int k, Rng& rng) {
    std::vector<double> w(static_cast<size_t>(cout) * cin * k * k);
    const double std = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    for (auto& v : w) v = rng.normal(0.0, std);
    Conv c;
    c.w = store_.create(name + ".w", {cout, cin, k, k}, std::move(w));
    c.b = store_.create(name + ".b", {cout}, std::vector<double>(cout, 0.0));
    return c;
}

UNet::Norm UNet::make_norm(const std::string& name, long c) {
    Norm n;
    n.gamma = store_.create(name + ".g", {c}, std::vector<double>(c, 1.0));
    n.beta = store_.create(name + ".be", {c}, std::vector<double>(c, 0.0));
    return n;
}

UNet::Block UNet::make_block(const std::string& name, long cin, long cout, Rng& rng) {
    Block b;
    b.c1 = make_conv(name + ".c1", cout, cin, 3, rng);
    b.n1 = make_norm(name + ".n1", cout);
    b.c2 = make_conv(name + ".c2", cout, cout, 3, rng);
    b.n2 = make_norm(name + ".n2", cout);
    return b;
}

UNet::UNet(const NetConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    check_config(cfg.depth >= 2, "net depth must be >= 2");
    check_config(cfg.num_classes >= 2, "num_classes must be >= 2");
    check_config(cfg.base_width >= 2, "base_width must be >= 2");
    if (cfg.normalization == Normalization::group)
        check_config(cfg.base_width % 4 == 0, "group norm needs base_width divisible by 4");

    Rng rng(substream(init_seed, 0x1217));
    long cin = cfg.in_channels;
    for (int l = 0; l < cfg.depth; ++l) {
        const long cout = static_cast<long>(cfg.base_width) << l;
        enc_.push_back(make_block("enc" + std::to_string(l), cin, cout, rng));
        cin = cout;
    }
    const long mid_c = static_cast<long>(cfg.base_width) << cfg.depth;
    mid_ = make_block("mid", cin, mid_c, rng);

    long dc = mid_c;
    for (int l = cfg.depth - 1; l >= 0; --l) {
        const long cout = static_cast<long>(cfg.base_width) << l;
        DecLevel d;
        d.up = make_conv("dec" + std::to_string(l) + ".up", cout, dc, 3, rng);
        d.up_norm = make_norm("dec" + std::to_string(l) + ".un", cout);
        d.block = make_block("dec" + std::to_string(l), 2 * cout, cout, rng);
        dec_.push_back(std::move(d));
        dc = cout;
    }
    head_ = make_conv("head", cfg.num_classes, cfg.base_width, 1, rng);
}

ad::Tensor UNet::apply_norm(const Tensor& x, const Norm& n) const {
    const long c = x.node()->shape[1];
    switch (cfg_.normalization) {
        case Normalization::group:
            return ad::group_norm(x, n.gamma, n.beta, static_cast<int>(std::min<long>(4, c)));
        case Normalization::instance:
            return ad::group_norm(x, n.gamma, n.beta, static_cast<int>(c));
        case Normalization::batch:
            return ad::batch_norm(x, n.gamma, n.beta);
    }
    check_internal(false, "unhandled normalization");
    return x;
}

ad::Tensor UNet::apply_block(const Tensor& x, const Block& b) const {
    Tensor h = ad::relu(apply_norm(ad::conv2d(x, b.c1.w, b.c1.b, 1, 1), b.n1));
    return ad::relu(apply_norm(ad::conv2d(h, b.c2.w, b.c2.b, 1, 1), b.n2));
}

FeaturePyramid UNet::encode(const Tensor& x) const {
    const auto& s = x.node()->shape;
    check_internal(s.size() == 4, "encode expects [B,C,H,W]");
    check_config(s[1] == cfg_.in_channels, "input channel count mismatch");
    const long div = 1L << cfg_.depth;
    check_config(s[2] % div == 0 && s[3] % div == 0,
                 "spatial dims must be divisible by 2^depth");

    FeaturePyramid p;
    Tensor h = x;
    for (const auto& block : enc_) {
        h = apply_block(h, block);
        p.skips.push_back(h);
        h = ad::maxpool2x2(h);
    }
    p.bottleneck = apply_block(h, mid_);
    return p;
}

ad::Tensor UNet::decode(const FeaturePyramid& pyramid) const {
    check_internal(pyramid.skips.size() == static_cast<size_t>(cfg_.depth),
                   "pyramid depth does not match net");
    Tensor h = pyramid.bottleneck;
    for (size_t i = 0; i < dec_.size(); ++i) {
        const auto& d = dec_[i];
        h = ad::upsample_nearest2x(h);
        h = ad::relu(apply_norm(ad::conv2d(h, d.up.w, d.up.b, 1, 1), d.up_norm));
        h = ad::concat_channels(h, pyramid.skips[dec_.size() - 1 - i]);
        h = apply_block(h, d.block);
    }
    return ad::conv2d(h, head_.w, head_.b, 1, 0);
}

ad::Tensor UNet::forward_supervised(const Tensor& x) const { return decode(encode(x)); }

namespace {

FeaturePyramid slice_pyramid(const FeaturePyramid& p, long start, long count) {
    FeaturePyramid out;
    for (const auto& s : p.skips) out.skips.push_back(ad::slice_batch(s, start, count));
    out.bottleneck = ad::slice_batch(p.bottleneck, start, count);
    return out;
}

FeaturePyramid concat_pyramids(const FeaturePyramid& a, const FeaturePyramid& b) {
    FeaturePyramid out;
    for (size_t i = 0; i < a.skips.size(); ++i)
        out.skips.push_back(ad::concat_batch({a.skips[i], b.skips[i]}));
    out.bottleneck = ad::concat_batch({a.bottleneck, b.bottleneck});
    return out;
}

}  // namespace

StreamNeeds StreamNeeds::from_loss(const LossConfig& loss) {
    StreamNeeds n;
    n.block_w_w = n.block_w_s = n.block_s_w = n.block_s_s = false;
    n.s1 = loss.ip_streams.count("s1") > 0;
    n.s2 = loss.ip_streams.count("s2") > 0;
    n.block_w_w = loss.tkd_students.count("p_w_w") > 0;
    n.block_w_s = loss.tkd_students.count("p_w_s") > 0;
    n.block_s_w = loss.tkd_students.count("p_s_w") > 0;
    n.block_s_s = loss.tkd_students.count("p_s_s") > 0;
    if (loss.dkd_terms.count("w")) n.block_w_w = n.block_s_w = true;
    if (loss.dkd_terms.count("s")) n.block_w_s = n.block_s_s = true;
    return n;
}

StreamSet UNet::forward_streams(const Tensor& x_w, const Tensor& x_s1, const Tensor& x_s2,
                                const PerturbConfig& pcfg, uint64_t step_seed, bool naive_mode,
                                ForwardCounters& counters, const StreamNeeds& needs) const {
    check_internal(x_w.node()->shape == x_s1.node()->shape &&
                       x_w.node()->shape == x_s2.node()->shape,
                   "view shapes differ");
    check_internal(needs.any(), "forward_streams: no stream requested");
    const long B = x_w.node()->shape[0];
    const FeaturePerturbSpec weak{pcfg.kind, pcfg.weak_rate, pcfg.scale_correction};
    const FeaturePerturbSpec strong{pcfg.kind, pcfg.strong_rate, pcfg.scale_correction};
    // canonical block order; disabled blocks drop out and the per-block seed
    // index follows the position in this filtered list
    struct BlockDef {
        const char* stream;
        FeaturePerturbSpec spec;
        Tensor StreamSet::*slot;
        bool on;
    };
    std::vector<BlockDef> blocks_def = {
        {"w", weak, &StreamSet::p_w_w, needs.block_w_w},
        {"w", strong, &StreamSet::p_w_s, needs.block_w_s},
        {"s", weak, &StreamSet::p_s_w, needs.block_s_w},
        {"s", strong, &StreamSet::p_s_s, needs.block_s_s},
    };
    std::vector<BlockDef> active;
    for (const BlockDef& b : blocks_def)
        if (b.on) active.push_back(b);

    StreamSet out;
    if (!naive_mode) {
        FeaturePyramid h_w, h_s;
        if (needs.s_encoder()) {
            const FeaturePyramid pair = encode(ad::concat_batch({x_w, x_s2}));
            h_w = slice_pyramid(pair, 0, B);
            h_s = slice_pyramid(pair, B, B);
        } else {
            h_w = encode(x_w);
        }
        ++counters.encoder_calls;

        out.p_w_n = decode(h_w);
        ++counters.decoder_calls;

        if (!active.empty()) {
            std::vector<std::pair<std::string, FeaturePerturbSpec>> specs;
            for (const BlockDef& b : active) specs.emplace_back(b.stream, b.spec);
            // h_s is only touched by s-blocks, which imply the s-encoder ran
            const StackedFeatures sf = stack_for_decoder(h_w, needs.s_encoder() ? h_s : h_w,
                                                         specs, step_seed);
            const Tensor stacked_logits = decode(sf.features);
            ++counters.decoder_calls;
            auto parts = unstack(stacked_logits, sf);
            for (size_t i = 0; i < active.size(); ++i) out.*(active[i].slot) = parts[i].second;
        }

        if (needs.s1 && needs.s2) {
            const FeaturePyramid h_s1 = encode(x_s1);
            ++counters.encoder_calls;
            const Tensor both = decode(concat_pyramids(h_s1, h_s));
            ++counters.decoder_calls;
            out.p_s1 = ad::slice_batch(both, 0, B);
            out.p_s2 = ad::slice_batch(both, B, B);
        } else if (needs.s1) {
            const FeaturePyramid h_s1 = encode(x_s1);
            ++counters.encoder_calls;
            out.p_s1 = decode(h_s1);
            ++counters.decoder_calls;
        } else if (needs.s2) {
            out.p_s2 = decode(h_s);
            ++counters.decoder_calls;
        }
        return out;
    }

    const FeaturePyramid h_w = encode(x_w);
    ++counters.encoder_calls;
    FeaturePyramid h_s;
    if (needs.s_encoder()) {
        h_s = encode(x_s2);
        ++counters.encoder_calls;
    }
    FeaturePyramid h_s1;
    if (needs.s1) {
        h_s1 = encode(x_s1);
        ++counters.encoder_calls;
    }

    out.p_w_n = decode(h_w);
    ++counters.decoder_calls;
    for (size_t i = 0; i < active.size(); ++i) {
        const FeaturePyramid& src = active[i].stream[0] == 'w' ? h_w : h_s;
        Rng rng(block_seed(step_seed, i));
        FeaturePyramid p;
        p.skips = src.skips;
        p.bottleneck = perturb(src.bottleneck, active[i].spec, rng);
        out.*(active[i].slot) = decode(p);
        ++counters.decoder_calls;
    }
    if (needs.s1) {
        out.p_s1 = decode(h_s1);
        ++counters.decoder_calls;
    }
    if (needs.s2) {
        out.p_s2 = decode(h_s);
        ++counters.decoder_calls;
    }
    return out;
}

ad::Tensor images_to_tensor(const std::vector<const Image*>& batch) {
    check_internal(!batch.empty(), "images_to_tensor: empty batch");
    const Image& first = *batch.front();
    std::vector<double> v;
    v.reserve(batch.size() * first.v.size());
    for (const Image* im : batch) {
        check_internal(im->c == first.c && im->h == first.h && im->w == first.w,
                       "images_to_tensor: mixed shapes");
        v.insert(v.end(), im->v.begin(), im->v.end());
    }
    return ad::Tensor::from_data({static_cast<long>(batch.size()), first.c, first.h, first.w},
                                 std::move(v), false);
}

}  // namespace crossmatch
