// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "crossmatch/array.hpp"
#include "crossmatch/augment.hpp"
#include "crossmatch/config.hpp"
#include "crossmatch/model.hpp"
#include "crossmatch/tensor.hpp"

namespace crossmatch::losses {

// CutMix bookkeeping for the unlabeled half of a batch. When view sN of
// sample b pasted a box from its partner, the teacher map must be mixed with
// the partner's teacher map over the same box before masking/distilling.
// Empty vectors mean "no mixing anywhere".
struct UnlabeledMixing {
    std::vector<ViewMixInfo> s1, s2;
    std::vector<long> partner;
};

struct TermResult {
    ad::Tensor loss;
    std::map<std::string, double> coverage;  // fraction of pixels passing tau, per term
};

struct LossReport {
    double sup = 0.0, ip = 0.0, tkd = 0.0, dkd = 0.0, total = 0.0;
    std::map<std::string, double> mask_coverage;
};

ad::Tensor softmax_probs(const ad::Tensor& logits, double temperature = 1.0);

// Per-pixel {0,1} mask over [B,H,W]: 1 where max-channel probability >= tau.
std::vector<double> confidence_mask(const ad::Tensor& probs, double tau);
double coverage(const std::vector<double>& mask);

// 1 - mean over channels of (2*sum(p*t*m)+smooth)/(sum(p*m)+sum(t*m)+smooth).
// target_onehot and mask are constants; all-zero mask returns an exact zero.
ad::Tensor soft_dice_loss(const ad::Tensor& probs, const std::vector<double>& target_onehot,
                          const std::vector<double>& mask, double smooth);

// Mean of -log softmax(logits)[target] over masked pixels; empty mask -> 0.
ad::Tensor masked_ce_loss(const ad::Tensor& logits, const std::vector<int32_t>& target,
                          const std::vector<double>& mask);

// Symmetric temperature-scaled divergence, averaged over masked pixels:
// 0.5*KL(t||s) + 0.5*KL(s||t) on softmax(logits/T). Teacher is constant.
ad::Tensor kd_kl_loss(const std::vector<double>& teacher_logits, const ad::Tensor& student_logits,
                      double temperature, const std::vector<double>& mask);

// Discrepancy dispatcher: dice hardens the teacher to an argmax one-hot, ce
// uses the hard teacher label, kl compares soft maps. The teacher enters as
// raw values and can never receive gradient.
ad::Tensor h_loss(const std::vector<double>& teacher_logits, const ad::Tensor& student_logits,
                  const std::vector<double>& mask, const LossConfig& cfg);

// 0.5*CE + 0.5*soft-Dice against ground truth over every pixel; one mask per
// batch sample.
ad::Tensor supervised_loss(const ad::Tensor& logits, const std::vector<Mask>& gt,
                           const LossConfig& cfg);

// Teacher-distillation: teacher p_w_n, students chosen by cfg.tkd_students.
TermResult tkd_loss(const StreamSet& streams, const LossConfig& cfg, const UnlabeledMixing& mixing);
// Decoder-distillation: per enabled j, teacher p_w_j against student p_s_j.
TermResult dkd_loss(const StreamSet& streams, const LossConfig& cfg, const UnlabeledMixing& mixing);
// Image-perturbation consistency: Dice-form teacher p_w_n vs p_s1/p_s2.
TermResult ip_loss(const StreamSet& streams, const LossConfig& cfg, const UnlabeledMixing& mixing);

// total = sup + ip + (1-eta)*tkd + eta*dkd, plus the scalarized report.
std::pair<ad::Tensor, LossReport> total_loss(const ad::Tensor& sup, const TermResult& ip,
                                             const TermResult& tkd, const TermResult& dkd,
                                             double eta);

}  // namespace crossmatch::losses
