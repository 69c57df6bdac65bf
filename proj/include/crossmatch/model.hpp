// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "crossmatch/array.hpp"
#include "crossmatch/config.hpp"
#include "crossmatch/featperturb.hpp"
#include "crossmatch/nn.hpp"
#include "crossmatch/tensor.hpp"

namespace crossmatch {

// The seven logits maps of one semi-supervised step. Naming: p_<encoder
// stream>_<bottleneck perturbation>; n = unperturbed. p_s1/p_s2 are the two
// image-level strong views decoded without feature perturbation.
struct StreamSet {
    ad::Tensor p_w_n;
    ad::Tensor p_w_w, p_w_s, p_s_w, p_s_s;
    ad::Tensor p_s1, p_s2;
};

struct ForwardCounters {
    long encoder_calls = 0;
    long decoder_calls = 0;
};

// Stacks same-shaped [0,1] images into a constant [B,C,H,W] input tensor.
ad::Tensor images_to_tensor(const std::vector<const Image*>& batch);

// Which stream outputs a step actually consumes. Baseline methods request
// fewer streams and honestly skip the corresponding forward work. Per-block
// perturbation seeds follow positions in the enabled-block list, so the two
// execution modes of any one configuration still agree bitwise.
struct StreamNeeds {
    bool block_w_w = true, block_w_s = true, block_s_w = true, block_s_s = true;
    bool s1 = true, s2 = true;

    bool any_block() const { return block_w_w || block_w_s || block_s_w || block_s_s; }
    bool s_encoder() const { return block_s_w || block_s_s || s2; }
    bool any() const { return any_block() || s1 || s2; }

    // tkd students need their own block, dkd term j needs both j-blocks
    // (teacher p_w_j and student p_s_j), ip needs its strong views.
    static StreamNeeds from_loss(const LossConfig& loss);
};

// U-Net with a perturbation injection point at the bottleneck. One parameter
// set serves every stream; streams differ only in their inputs and in the
// perturbation applied between encode and decode.
class UNet {
public:
    UNet(const NetConfig& cfg, uint64_t init_seed);

    FeaturePyramid encode(const ad::Tensor& x) const;
    ad::Tensor decode(const FeaturePyramid& pyramid) const;
    ad::Tensor forward_supervised(const ad::Tensor& x) const;

    // Assembles all seven outputs. Batched mode: one encoder call on the
    // concatenated {x_w, x_s2} pair, one on x_s1, and at most three decoder
    // calls. naive_mode runs every stream separately (3 encodes, 7 decodes)
    // drawing the same per-block perturbation seeds, as an equivalence oracle.
    StreamSet forward_streams(const ad::Tensor& x_w, const ad::Tensor& x_s1,
                              const ad::Tensor& x_s2, const PerturbConfig& pcfg,
                              uint64_t step_seed, bool naive_mode,
                              ForwardCounters& counters,
                              const StreamNeeds& needs = StreamNeeds{}) const;

    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }
    const NetConfig& config() const { return cfg_; }

private:
    struct Conv {
        ad::Tensor w, b;
    };
    struct Norm {
        ad::Tensor gamma, beta;
    };
    struct Block {
        Conv c1, c2;
        Norm n1, n2;
    };
    struct DecLevel {
        Conv up;
        Norm up_norm;
        Block block;
    };

    Conv make_conv(const std::string& name, long cout, long cin, int k, Rng& rng);
    Norm make_norm(const std::string& name, long c);
    Block make_block(const std::string& name, long cin, long cout, Rng& rng);
    ad::Tensor apply_norm(const ad::Tensor& x, const Norm& n) const;
    ad::Tensor apply_block(const ad::Tensor& x, const Block& b) const;

    NetConfig cfg_;
    nn::ParamStore store_;
    std::vector<Block> enc_;
    Block mid_;
    std::vector<DecLevel> dec_;  // deepest level first
    Conv head_;
};

}  // namespace crossmatch
